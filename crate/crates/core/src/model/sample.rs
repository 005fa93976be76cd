use rand::seq::index;
use rand::Rng;

use crate::context::{GeometrySample, LocalStream};
use crate::data::{pad_cols, Case, Normalizer};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::{ModelConfig, Sample};

/// A case converted to model inputs at full resolution, with normalised
/// stream features, global vector and targets.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedCase {
    pub id: String,
    pub streams: Vec<LocalStream>,
    /// Normalised targets, one tensor per stream.
    pub targets: Vec<Tensor<f64>>,
    /// Every candidate geometry point.
    pub geometry: GeometrySample,
}

/// `k` of `n` indices drawn without replacement, ascending; all of them
/// when `k ≥ n`.
pub fn subsample_indices<R: Rng>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut idx = index::sample(rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

impl PreparedCase {
    pub fn new(case: &Case, config: &ModelConfig, norm: &Normalizer) -> Result<Self> {
        let mut streams = Vec::with_capacity(config.streams.len());
        let mut targets = Vec::with_capacity(config.streams.len());
        for schema in &config.streams {
            let table = case.stream(&schema.name)?;
            let stats = norm.stream(&schema.name)?;
            let feats = stats.features.apply(&table.select(&schema.features)?)?;
            streams.push(LocalStream::new(
                &schema.name,
                table.positions()?,
                pad_cols(&feats, config.d_x),
            )?);
            targets.push(stats.targets.apply(&table.select(&schema.outputs)?)?);
        }
        let gtable = case.stream(&config.geometry_stream)?;
        let global = norm.global.apply_vec(&case.global)?;
        let geometry = GeometrySample::new(
            gtable.positions()?,
            gtable.select(&config.geometry_features)?,
            global,
        )?;
        if geometry.is_empty() {
            return Err(Error::Sample(format!(
                "case `{}` has no geometry points",
                case.id()
            )));
        }
        Ok(Self {
            id: case.id().to_string(),
            streams,
            targets,
            geometry,
        })
    }

    pub fn total_tokens(&self) -> usize {
        self.streams.iter().map(LocalStream::len).sum()
    }

    /// Geometry points capped at `config.geom_token_cap`.
    pub fn geometry_view<R: Rng>(&self, config: &ModelConfig, rng: &mut R) -> GeometrySample {
        let idx = subsample_indices(self.geometry.len(), config.geom_token_cap, rng);
        self.geometry.select(&idx)
    }

    /// Every query token with a capped geometry set.
    pub fn full_sample<R: Rng>(&self, config: &ModelConfig, rng: &mut R) -> Sample {
        Sample {
            streams: self.streams.clone(),
            geometry: self.geometry_view(config, rng),
        }
    }

    /// A training draw: `query_token_cap` tokens split across streams in
    /// proportion to their sizes, plus a capped geometry set. Returns the
    /// matching target rows.
    pub fn draw<R: Rng>(&self, config: &ModelConfig, rng: &mut R) -> (Sample, Vec<Tensor<f64>>) {
        let total = self.total_tokens();
        let cap = config.query_token_cap;
        let mut streams = Vec::with_capacity(self.streams.len());
        let mut targets = Vec::with_capacity(self.streams.len());
        for (s, t) in self.streams.iter().zip(&self.targets) {
            let k = if total <= cap {
                s.len()
            } else {
                ((cap as f64 * s.len() as f64 / total as f64).round() as usize).clamp(1, s.len())
            };
            let idx = subsample_indices(s.len(), k, rng);
            streams.push(s.select(&idx));
            targets.push(t.select_rows(&idx));
        }
        let geometry = self.geometry_view(config, rng);
        (Sample { streams, geometry }, targets)
    }
}
