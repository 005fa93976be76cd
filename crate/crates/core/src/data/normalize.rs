use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::{Case, StreamSchema};

/// Per-column affine standardisation `(x − mean) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Stats {
    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            scale: vec![1.0; width],
        }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    /// Population mean and standard deviation of every column; columns with
    /// zero spread keep a scale of one.
    pub fn fit<'a>(
        blocks: impl IntoIterator<Item = &'a Tensor<f64>>,
        width: usize,
    ) -> Result<Self> {
        let blocks: Vec<&Tensor<f64>> = blocks.into_iter().collect();
        if let Some(b) = blocks.iter().find(|b| b.cols() != width) {
            return Err(Error::dim(
                "Stats::fit",
                format!("block has {} columns, expected {width}", b.cols()),
            ));
        }
        let n: usize = blocks.iter().map(|b| b.rows()).sum();
        if n == 0 {
            return Err(Error::Data("cannot fit statistics on zero rows".into()));
        }
        let mut mean = vec![0.0; width];
        for b in &blocks {
            for i in 0..b.rows() {
                for (m, &v) in mean.iter_mut().zip(b.row(i)) {
                    *m += v;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; width];
        for b in &blocks {
            for i in 0..b.rows() {
                for ((s, &v), m) in var.iter_mut().zip(b.row(i)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let scale = var
            .iter()
            .zip(&mean)
            .map(|(&s, m)| {
                let sd = (s / n as f64).sqrt();
                if sd > 1e-12 * m.abs().max(1.0) {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    fn check(&self, cols: usize) -> Result<()> {
        if cols != self.width() {
            return Err(Error::dim(
                "normalizer",
                format!("{cols} columns, statistics cover {}", self.width()),
            ));
        }
        Ok(())
    }

    pub fn apply(&self, t: &Tensor<f64>) -> Result<Tensor<f64>> {
        self.check(t.cols())?;
        let mut out = t.clone();
        for i in 0..out.rows() {
            for ((v, m), s) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }

    pub fn invert(&self, t: &Tensor<f64>) -> Result<Tensor<f64>> {
        self.check(t.cols())?;
        let mut out = t.clone();
        for i in 0..out.rows() {
            for ((v, m), s) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = *v * s + m;
            }
        }
        Ok(out)
    }

    pub fn apply_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .apply(&Tensor::from_vec(1, v.len(), v.to_vec())?)?
            .into_data())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamStats {
    pub features: Stats,
    pub targets: Stats,
}

/// Statistics fitted on the training split only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub global: Stats,
    pub streams: BTreeMap<String, StreamStats>,
}

impl Normalizer {
    pub fn identity(global_width: usize, schema: &[StreamSchema]) -> Self {
        Self {
            global: Stats::identity(global_width),
            streams: schema
                .iter()
                .map(|s| {
                    (
                        s.name.clone(),
                        StreamStats {
                            features: Stats::identity(s.features.len()),
                            targets: Stats::identity(s.outputs.len()),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn fit(train: &[&Case], schema: &[StreamSchema]) -> Result<Self> {
        let Some(first) = train.first() else {
            return Err(Error::Data(
                "cannot fit a normalizer on an empty training split".into(),
            ));
        };
        let width = first.global.len();
        let globals = train
            .iter()
            .map(|c| Tensor::from_vec(1, c.global.len(), c.global.clone()))
            .collect::<Result<Vec<_>>>()?;
        let global = Stats::fit(&globals, width)?;
        let mut streams = BTreeMap::new();
        for s in schema {
            let mut feats = Vec::with_capacity(train.len());
            let mut targets = Vec::with_capacity(train.len());
            for c in train {
                let t = c.stream(&s.name)?;
                feats.push(t.select(&s.features)?);
                targets.push(t.select(&s.outputs)?);
            }
            streams.insert(
                s.name.clone(),
                StreamStats {
                    features: Stats::fit(&feats, s.features.len())?,
                    targets: Stats::fit(&targets, s.outputs.len())?,
                },
            );
        }
        Ok(Self { global, streams })
    }

    pub fn stream(&self, name: &str) -> Result<&StreamStats> {
        self.streams
            .get(name)
            .ok_or_else(|| Error::Data(format!("normalizer has no stream `{name}`")))
    }
}
