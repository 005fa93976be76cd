use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::{Case, CaseSpec, PointTable, Split};

/// Reads a headed CSV point cloud. `x`, `y`, `z` and every name in
/// `required` must appear in the header.
pub fn load_csv_pointcloud(path: &Path, required: &[&str]) -> Result<PointTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Err(Error::Data(format!("{} is empty", path.display())));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    for name in ["x", "y", "z"].iter().chain(required) {
        if !header.iter().any(|h| h == name) {
            return Err(Error::Schema(name.to_string()));
        }
    }
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            detail: e.to_string(),
        })?;
        if record.len() != header.len() {
            return Err(Error::Parse {
                row,
                detail: format!("{} fields, header has {}", record.len(), header.len()),
            });
        }
        for (cell, name) in record.iter().zip(&header) {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                detail: format!("column `{name}`: `{cell}` is not a number"),
            })?;
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Data(format!(
            "{} has a header but no rows",
            path.display()
        )));
    }
    PointTable::new(header.clone(), Tensor::from_vec(rows, header.len(), data)?)
}

pub fn write_csv(path: &Path, table: &PointTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(table.columns())
        .map_err(|e| csv_io(path, e))?;
    let mut buf = Vec::with_capacity(table.columns().len());
    for i in 0..table.len() {
        buf.clear();
        buf.extend(table.data().row(i).iter().map(|v| v.to_string()));
        w.write_record(&buf).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

/// One `case` line of a dataset manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub spec: CaseSpec,
    pub split: Split,
    pub global: Vec<f64>,
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = String::from(
        "# id split kind axes speed onset surface_points volume_points r_outer seed global\n",
    );
    for e in entries {
        let s = &e.spec;
        writeln!(
            out,
            "case {} split={} kind={} axes={} speed={} onset={} surface_points={} volume_points={} r_outer={} seed={} global={}",
            s.id,
            e.split,
            s.kind,
            join(&s.axes),
            s.speed,
            join(&s.onset),
            s.surface_points,
            s.volume_points,
            s.r_outer,
            s.seed,
            join(&e.global)
        )
        .expect("string write");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let row = n + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |detail: String| Error::Parse { row, detail };
        let mut parts = line.split_whitespace();
        if parts.next() != Some("case") {
            return Err(bad(format!("expected `case`, got `{line}`")));
        }
        let id = parts
            .next()
            .ok_or_else(|| bad("missing case id".into()))?
            .to_string();
        let mut kv = BTreeMap::new();
        for p in parts {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| bad(format!("`{p}` is not key=value")))?;
            kv.insert(k, v);
        }
        let get = |k: &str| {
            kv.get(k)
                .copied()
                .ok_or_else(|| bad(format!("missing `{k}`")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| bad(format!("`{k}` is not a number")))
        };
        let int = |k: &str| -> Result<u64> {
            get(k)?
                .parse()
                .map_err(|_| bad(format!("`{k}` is not an integer")))
        };
        let list = |k: &str| -> Result<Vec<f64>> {
            let v = get(k)?;
            if v.is_empty() {
                return Ok(vec![]);
            }
            v.split(',')
                .map(|x| {
                    x.parse()
                        .map_err(|_| bad(format!("`{k}` has a non-numeric entry")))
                })
                .collect()
        };
        let triple = |k: &str| -> Result<[f64; 3]> {
            list(k)?
                .try_into()
                .map_err(|_| bad(format!("`{k}` needs three values")))
        };
        let spec = CaseSpec {
            id,
            kind: get("kind")?.parse()?,
            axes: triple("axes")?,
            speed: num("speed")?,
            onset: triple("onset")?,
            surface_points: int("surface_points")? as usize,
            volume_points: int("volume_points")? as usize,
            r_outer: num("r_outer")?,
            seed: int("seed")?,
        };
        out.push(ManifestEntry {
            split: get("split")?.parse()?,
            global: list("global")?,
            spec,
        });
    }
    Ok(out)
}

/// Writes `manifest.txt` plus `cases/<id>_<stream>.csv` under `dir`.
pub fn save_dataset(dir: &Path, cases: &[Case]) -> Result<()> {
    let case_dir = dir.join("cases");
    fs::create_dir_all(&case_dir).map_err(|e| Error::io(&case_dir, e))?;
    for c in cases {
        for (name, table) in &c.streams {
            write_csv(&case_dir.join(format!("{}_{name}.csv", c.id())), table)?;
        }
    }
    let entries: Vec<ManifestEntry> = cases
        .iter()
        .map(|c| ManifestEntry {
            spec: c.spec.clone(),
            split: c.split,
            global: c.global.clone(),
        })
        .collect();
    write_manifest(&dir.join("manifest.txt"), &entries)
}

/// Loads a dataset written by [`save_dataset`], reading the named streams.
pub fn load_dataset(dir: &Path, streams: &[&str]) -> Result<Vec<Case>> {
    let entries = read_manifest(&dir.join("manifest.txt"))?;
    if entries.is_empty() {
        return Err(Error::Data(format!("{} lists no cases", dir.display())));
    }
    entries
        .into_iter()
        .map(|e| {
            let mut tables = BTreeMap::new();
            for &s in streams {
                let path = dir.join("cases").join(format!("{}_{s}.csv", e.spec.id));
                tables.insert(s.to_string(), load_csv_pointcloud(&path, &[])?);
            }
            Ok(Case {
                spec: e.spec,
                split: e.split,
                global: e.global,
                streams: tables,
            })
        })
        .collect()
}
