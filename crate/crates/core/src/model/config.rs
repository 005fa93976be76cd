use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::context::PoolMode;
use crate::data::{StreamSchema, SURFACE};
use crate::error::{Error, Result};
use crate::gale::{GaleDims, SelfAttentionMode};
use crate::geometry::MultiScaleSchedule;

/// Architecture and sampling hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    /// Context token width.
    pub d_c: usize,
    /// Per-scale width of the geometry-to-token features.
    pub d_bq: usize,
    /// Global parameter width.
    pub d_p: usize,
    /// Geometry feature width.
    pub d_g: usize,
    /// Per-token feature width; narrower streams are zero-padded.
    pub d_x: usize,
    /// Hidden width of the encoder and context MLPs.
    pub hidden: usize,
    pub ffn_hidden: usize,
    pub gate_hidden: usize,
    #[serde(rename = "L")]
    pub layers: usize,
    #[serde(rename = "M_state")]
    pub m_state: usize,
    pub heads: usize,
    pub schedule: MultiScaleSchedule,
    pub streams: Vec<StreamSchema>,
    /// Stream whose points double as the geometry point set.
    pub geometry_stream: String,
    pub geometry_features: Vec<String>,
    pub augmentation_enabled: bool,
    pub pool: PoolMode,
    pub self_attention: SelfAttentionMode,
    pub attn_residual: bool,
    pub ln_eps: f64,
    /// Total token budget per forward pass, shared across streams.
    pub query_token_cap: usize,
    pub geom_token_cap: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            d_c: 32,
            d_bq: 16,
            d_p: 4,
            d_g: 3,
            d_x: 3,
            hidden: 32,
            ffn_hidden: 128,
            gate_hidden: 16,
            layers: 4,
            m_state: 8,
            heads: 1,
            schedule: MultiScaleSchedule::preset("2scale").expect("built-in preset"),
            streams: vec![StreamSchema::surface(), StreamSchema::volume()],
            geometry_stream: SURFACE.into(),
            geometry_features: vec!["nx".into(), "ny".into(), "nz".into()],
            augmentation_enabled: true,
            pool: PoolMode::Mean,
            self_attention: SelfAttentionMode::States,
            attn_residual: true,
            ln_eps: 1e-5,
            query_token_cap: 2048,
            geom_token_cap: 512,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layers < 1 {
            return bad("model.L must be >= 1".into());
        }
        let widths = [
            ("d_model", self.d_model),
            ("d_c", self.d_c),
            ("d_bq", self.d_bq),
            ("d_p", self.d_p),
            ("d_g", self.d_g),
            ("hidden", self.hidden),
            ("ffn_hidden", self.ffn_hidden),
            ("gate_hidden", self.gate_hidden),
            ("M_state", self.m_state),
            ("heads", self.heads),
            ("query_token_cap", self.query_token_cap),
            ("geom_token_cap", self.geom_token_cap),
        ];
        if let Some((name, _)) = widths.iter().find(|(_, v)| *v == 0) {
            return bad(format!("model.{name} must be >= 1"));
        }
        if self.streams.is_empty() {
            return bad("at least one stream is required".into());
        }
        let mut names = BTreeSet::new();
        for s in &self.streams {
            if !names.insert(s.name.as_str()) {
                return bad(format!("duplicate stream name `{}`", s.name));
            }
            if s.outputs.is_empty() {
                return bad(format!("stream `{}` has no outputs", s.name));
            }
            if s.features.len() > self.d_x {
                return bad(format!(
                    "stream `{}` has {} features but d_x = {}",
                    s.name,
                    s.features.len(),
                    self.d_x
                ));
            }
        }
        if self.geometry_features.len() != self.d_g {
            return bad(format!(
                "{} geometry features but d_g = {}",
                self.geometry_features.len(),
                self.d_g
            ));
        }
        self.gale_dims().validate()
    }

    pub fn gale_dims(&self) -> GaleDims {
        GaleDims {
            d_model: self.d_model,
            d_c: self.d_c,
            m_state: self.m_state,
            heads: self.heads,
            ffn_hidden: self.ffn_hidden,
            gate_hidden: self.gate_hidden,
            mode: self.self_attention,
            attn_residual: self.attn_residual,
            ln_eps: self.ln_eps,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The small configuration used for full-model gradient checks.
    pub fn tiny() -> Self {
        Self {
            d_model: 32,
            d_c: 16,
            d_bq: 4,
            hidden: 8,
            ffn_hidden: 16,
            gate_hidden: 4,
            layers: 2,
            m_state: 4,
            schedule: MultiScaleSchedule::from_pairs(&[(0.4, 4), (1.0, 6)])
                .expect("valid schedule"),
            ..Self::default()
        }
    }
}
