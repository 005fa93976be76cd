//! Losses, first-order optimisers and the training loop.

mod eval;
mod fit;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Tensor, Var};
use crate::scalar::Scalar;

pub use eval::{
    evaluate, evaluate_loss, field_groups, metric_report, predict_physical, tiny_gradcheck,
};
pub use fit::{fit, FitOutcome, LogRow};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Mse,
    RelativeL1,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Momentum SGD.
    #[default]
    Sgd,
    /// Per-parameter first and second moment estimates with bias correction.
    Adam,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    Cosine,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Samples accumulated per optimiser step.
    pub batch_size: usize,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm bound; 0 disables clipping.
    pub clip_norm: f64,
    pub loss: LossKind,
    /// One weight per stream; empty means all ones.
    pub stream_weights: Vec<f64>,
    /// Epochs between validation passes.
    pub eval_interval: usize,
    /// A loss above this multiple of the first step's loss counts as
    /// divergence.
    pub divergence_factor: f64,
    /// Wall-clock budget in seconds; 0 means none.
    pub time_limit_s: f64,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 1,
            lr: 0.01,
            lr_schedule: LrSchedule::Constant,
            optimizer: OptimizerKind::Sgd,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            clip_norm: 1.0,
            loss: LossKind::Mse,
            stream_weights: Vec::new(),
            eval_interval: 1,
            divergence_factor: 1e3,
            time_limit_s: 0.0,
            seed: 0,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.epochs < 1 {
            return bad("train.epochs must be >= 1");
        }
        if self.batch_size < 1 || self.eval_interval < 1 {
            return bad("train.batch_size and train.eval_interval must be >= 1");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("train.lr must be > 0");
        }
        if !(0.0..1.0).contains(&self.momentum)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
        {
            return bad("momentum and beta parameters must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) || self.weight_decay < 0.0 || self.clip_norm < 0.0 {
            return bad("adam_eps must be > 0; weight_decay and clip_norm must be >= 0");
        }
        if !(self.divergence_factor > 1.0) || self.time_limit_s < 0.0 {
            return bad("divergence_factor must exceed 1 and time_limit_s must be >= 0");
        }
        if self
            .stream_weights
            .iter()
            .any(|&w| !(w >= 0.0) || !w.is_finite())
        {
            return bad("stream weights must be finite and >= 0");
        }
        if !self.stream_weights.is_empty() && self.stream_weights.iter().all(|&w| w == 0.0) {
            return bad("stream weights must not all be zero");
        }
        Ok(())
    }

    pub fn weights(&self, streams: usize) -> Result<Vec<f64>> {
        if self.stream_weights.is_empty() {
            return Ok(vec![1.0; streams]);
        }
        if self.stream_weights.len() != streams {
            return Err(Error::Config(format!(
                "{} stream weights for {streams} streams",
                self.stream_weights.len()
            )));
        }
        Ok(self.stream_weights.clone())
    }
}

/// `Σ_m w_m · loss(pred_m, target_m)`.
pub fn compute_loss<T: Scalar>(
    g: &mut Graph<T>,
    preds: &[Var],
    targets: &[Tensor<f64>],
    kind: LossKind,
    weights: &[f64],
) -> Result<Var> {
    if preds.len() != targets.len() || preds.len() != weights.len() {
        return Err(Error::dim(
            "compute_loss",
            format!(
                "{} predictions, {} targets, {} weights",
                preds.len(),
                targets.len(),
                weights.len()
            ),
        ));
    }
    let mut total: Option<Var> = None;
    for ((&p, t), &w) in preds.iter().zip(targets).zip(weights) {
        if g.shape(p) != t.shape() {
            return Err(Error::dim(
                "compute_loss",
                format!("prediction {:?} vs target {:?}", g.shape(p), t.shape()),
            ));
        }
        if w == 0.0 {
            continue;
        }
        let tv = g.constant(t.cast());
        let diff = g.sub(p, tv)?;
        let term = match kind {
            LossKind::Mse => {
                let sq = g.square(diff);
                g.mean_all(sq)
            }
            LossKind::RelativeL1 => {
                let den: f64 = t.data().iter().map(|v| v.abs()).sum();
                let a = g.abs(diff);
                let s = g.sum_all(a);
                g.scale(s, T::lit(1.0 / den.max(f64::MIN_POSITIVE)))
            }
        };
        let term = g.scale(term, T::lit(w));
        total = Some(match total {
            None => term,
            Some(acc) => g.add(acc, term)?,
        });
    }
    match total {
        Some(v) => Ok(v),
        None => Ok(g.constant(Tensor::scalar(T::zero()))),
    }
}

/// Moment buffers carried between optimiser steps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState<T: Scalar> {
    pub step: u64,
    first: ParamStore<T>,
    second: ParamStore<T>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new() -> Self {
        Self {
            step: 0,
            first: ParamStore::new(),
            second: ParamStore::new(),
        }
    }
}

/// Scales `grads` so their global L2 norm is at most `max_norm`, returning
/// the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .flat_map(|(_, t)| t.data().iter())
        .map(|v| v.as_f64() * v.as_f64())
        .sum();
    let norm = sq.sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = T::lit(max_norm / norm);
        for (_, t) in grads.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// One in-place update of every parameter at learning rate `lr`.
pub fn optimizer_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &ParamStore<T>,
    state: &mut OptimizerState<T>,
    config: &TrainConfig,
    lr: f64,
) -> Result<()> {
    if let Some(name) = params.names().find(|n| !grads.contains(n)) {
        return Err(Error::Training(format!(
            "no gradient for parameter `{name}`"
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let wd = T::lit(config.weight_decay);
    let lr_t = T::lit(lr);
    for (name, p) in params.iter_mut() {
        let g = grads.get(name).expect("checked above");
        if g.shape() != p.shape() {
            return Err(Error::Training(format!(
                "gradient for `{name}` has shape {:?}",
                g.shape()
            )));
        }
        if !state.first.contains(name) {
            state
                .first
                .insert(name, Tensor::zeros(p.rows(), p.cols()))?;
            if config.optimizer == OptimizerKind::Adam {
                state
                    .second
                    .insert(name, Tensor::zeros(p.rows(), p.cols()))?;
            }
        }
        let m = state.first.get_mut(name).expect("inserted");
        match config.optimizer {
            OptimizerKind::Sgd => {
                let mu = T::lit(config.momentum);
                for ((pv, &gv), mv) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()) {
                    let gv = if config.weight_decay > 0.0 {
                        gv + wd * *pv
                    } else {
                        gv
                    };
                    *mv = mu * *mv + gv;
                    *pv -= lr_t * *mv;
                }
            }
            OptimizerKind::Adam => {
                let v = state.second.get_mut(name).expect("inserted");
                let (b1, b2) = (config.beta1, config.beta2);
                let c1 = T::lit(1.0 - b1.powi(t));
                let c2 = T::lit(1.0 - b2.powi(t));
                let (b1, b2, eps) = (T::lit(b1), T::lit(b2), T::lit(config.adam_eps));
                for (((pv, &gv), mv), vv) in p
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(m.data_mut())
                    .zip(v.data_mut())
                {
                    let gv = if config.weight_decay > 0.0 {
                        gv + wd * *pv
                    } else {
                        gv
                    };
                    *mv = b1 * *mv + (T::one() - b1) * gv;
                    *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                    let mhat = *mv / c1;
                    let vhat = *vv / c2;
                    *pv -= lr_t * mhat / (vhat.sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}

/// Learning rate at `step` of `total`.
pub fn scheduled_lr(config: &TrainConfig, step: usize, total: usize) -> f64 {
    match config.lr_schedule {
        LrSchedule::Constant => config.lr,
        LrSchedule::Cosine => {
            let frac = step as f64 / total.max(1) as f64;
            0.5 * config.lr * (1.0 + (std::f64::consts::PI * frac.min(1.0)).cos())
        }
    }
}
