//! Run configuration: defaults, a TOML file, then dotted-key overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use geotransolver::data::DatasetConfig;
use geotransolver::geometry::MultiScaleSchedule;
use geotransolver::model::ModelConfig;
use geotransolver::training::TrainConfig;
use geotransolver::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
        }
    }
}

/// Everything a command needs, validated as a whole.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DatasetConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.data.validate()?;
        self.train.weights(self.model.streams.len())?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::String(_) => "string",
        Value::Integer(_) => "integer",
        Value::Float(_) => "float",
        Value::Boolean(_) => "boolean",
        Value::Datetime(_) => "datetime",
        Value::Array(_) => "array",
        Value::Table(_) => "table",
    }
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> Value {
    let raw = raw.trim();
    match toml::from_str::<Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

/// Writes `key = value` (dotted key) into `table`.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| {
        Error::Config(format!(
            "override `{assignment}` is not of the form key=value"
        ))
    })?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!(
            "override key `{}` is malformed",
            key.trim()
        )));
    }
    let mut node = table;
    for part in &path[..path.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        node = match entry {
            Value::Table(t) => t,
            _ => {
                return Err(Error::Config(format!(
                    "override key `{}` descends into a value",
                    key.trim()
                )))
            }
        };
    }
    node.insert(path[path.len() - 1].to_string(), parse_value(raw));
    Ok(())
}

/// Rejects keys absent from `defaults` and leaf values of the wrong type.
fn check_keys(user: &Table, defaults: &Table, prefix: &str) -> Result<()> {
    for (k, v) in user {
        let name = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        let Some(d) = defaults.get(k) else {
            return Err(Error::Config(format!("unknown key `{name}`")));
        };
        match (d, v) {
            (Value::Table(dt), Value::Table(ut)) => check_keys(ut, dt, &name)?,
            (Value::Float(_), Value::Integer(_)) => {}
            _ if type_name(d) == type_name(v) => {}
            _ => {
                return Err(Error::Config(format!(
                    "key `{name}` expects {}, got {}",
                    type_name(d),
                    type_name(v)
                )))
            }
        }
    }
    Ok(())
}

fn merge(base: &mut Table, user: Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(u)) => merge(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Replaces a preset name given for `model.schedule` with its scale list.
fn expand_schedule(user: &mut Table) -> Result<()> {
    if let Some(Value::Table(model)) = user.get_mut("model") {
        if let Some(Value::String(name)) = model.get("schedule") {
            let preset =
                MultiScaleSchedule::preset(name).map_err(|e| Error::Config(e.to_string()))?;
            let v = Value::try_from(preset).map_err(|e| Error::Config(e.to_string()))?;
            model.insert("schedule".into(), v);
        }
    }
    Ok(())
}

/// Defaults, then `text`, then each `key=value` override.
pub fn parse_config_str(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut user: Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    for o in overrides {
        apply_override(&mut user, o)?;
    }
    expand_schedule(&mut user)?;
    let mut merged =
        Table::try_from(RunConfig::default()).map_err(|e| Error::Config(e.to_string()))?;
    check_keys(&user, &merged, "")?;
    merge(&mut merged, user);
    let cfg: RunConfig = Value::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// [`parse_config_str`] on the contents of `path`, or on an empty file when
/// no path is given.
pub fn parse_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => fs::read_to_string(p)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
        None => String::new(),
    };
    parse_config_str(&text, overrides)
}

/// Writes `config.toml` and `VERSION` into `dir`.
pub fn echo_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::Config(format!("cannot write {}: {e}", p.display())))
    };
    write("config.toml", cfg.to_toml()?)?;
    write("VERSION", format!("{}\n", geotransolver::VERSION))
}
