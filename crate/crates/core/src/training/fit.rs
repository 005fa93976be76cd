use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Case, Normalizer};
use crate::error::{Error, Result};
use crate::metrics::fmt_opt;
use crate::model::{Checkpoint, Model, PreparedCase};
use crate::numerics::{Graph, ParamStore};
use crate::scalar::Scalar;

use super::{
    clip_global_norm, compute_loss, evaluate, evaluate_loss, field_groups, optimizer_step,
    scheduled_lr, OptimizerState, TrainConfig,
};

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub step: usize,
    /// Mean loss of the epoch's steps.
    pub train_loss: f64,
    pub lr: f64,
    pub val_loss: Option<f64>,
    /// Validation relative L1 per reported field.
    pub val_metrics: Vec<(String, Option<f64>)>,
}

#[derive(Clone, Debug)]
pub struct FitOutcome<T: Scalar> {
    pub log: Vec<LogRow>,
    /// Loss of every optimiser step, in order.
    pub step_losses: Vec<f64>,
    pub best_params: ParamStore<T>,
    pub best_epoch: usize,
    pub best_score: f64,
    pub steps: usize,
    /// Whether the wall-clock budget ended training early.
    pub timed_out: bool,
}

fn checkpoint<T: Scalar>(
    model: &Model,
    norm: &Normalizer,
    step: usize,
    params: &ParamStore<T>,
) -> Checkpoint {
    Checkpoint {
        config: model.config().clone(),
        normalizer: norm.clone(),
        step: step as u64,
        params: params.cast(),
    }
}

struct Log {
    path: PathBuf,
    writer: csv::Writer<fs::File>,
    metrics: Vec<String>,
}

impl Log {
    fn open(dir: &Path, metrics: Vec<String>) -> Result<Self> {
        let path = dir.join("train_log.csv");
        let mut writer = csv::Writer::from_path(&path).map_err(|e| Error::io(&path, e.into()))?;
        let mut h: Vec<String> = ["epoch", "step", "train_loss", "lr", "val_loss"]
            .map(String::from)
            .into();
        h.extend(metrics.iter().map(|n| format!("val_{n}_rel_l1")));
        writer
            .write_record(&h)
            .map_err(|e| Error::io(&path, e.into()))?;
        Ok(Self {
            path,
            writer,
            metrics,
        })
    }

    fn write(&mut self, row: &LogRow) -> Result<()> {
        let io = |e: csv::Error| Error::io(self.path.clone(), e.into());
        let mut r = vec![
            row.epoch.to_string(),
            row.step.to_string(),
            row.train_loss.to_string(),
            row.lr.to_string(),
            fmt_opt(row.val_loss),
        ];
        if row.val_metrics.is_empty() {
            r.extend(self.metrics.iter().map(|_| String::new()));
        } else {
            r.extend(row.val_metrics.iter().map(|(_, v)| fmt_opt(*v)));
        }
        self.writer.write_record(&r).map_err(io)?;
        self.writer
            .flush()
            .map_err(|e| Error::io(self.path.clone(), e))
    }
}

/// Trains `store` in place on `train`, scoring each evaluation epoch by the
/// validation loss (or the epoch's training loss when `val` is empty).
///
/// With `out_dir` set, writes `train_log.csv`, keeps `best.ckpt` for the
/// best score so far and `last.ckpt` at the end. A non-finite loss, or one
/// above `divergence_factor` times the first step's, writes
/// `last_good.ckpt` from the parameters of the previous step and returns
/// [`Error::Divergence`].
pub fn fit<T: Scalar>(
    model: &Model,
    store: &mut ParamStore<T>,
    train: &[Case],
    val: &[Case],
    norm: &Normalizer,
    config: &TrainConfig,
    out_dir: Option<&Path>,
    mut progress: impl FnMut(&LogRow),
) -> Result<FitOutcome<T>> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    model.check_params(store)?;
    let mcfg = model.config();
    let weights = config.weights(mcfg.streams.len())?;
    let prepared = train
        .iter()
        .map(|c| PreparedCase::new(c, mcfg, norm))
        .collect::<Result<Vec<_>>>()?;
    let val_prepared = val
        .iter()
        .map(|c| PreparedCase::new(c, mcfg, norm))
        .collect::<Result<Vec<_>>>()?;
    let mut log = match out_dir {
        Some(d) => {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            let names = if val.is_empty() {
                Vec::new()
            } else {
                mcfg.streams
                    .iter()
                    .flat_map(|s| field_groups(s).into_iter().map(|(n, _)| n))
                    .collect()
            };
            Some(Log::open(d, names)?)
        }
        None => None,
    };

    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let steps_per_epoch = prepared.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let mut state = OptimizerState::new();
    let mut outcome = FitOutcome {
        log: Vec::new(),
        step_losses: Vec::new(),
        best_params: store.clone(),
        best_epoch: 0,
        best_score: f64::INFINITY,
        steps: 0,
        timed_out: false,
    };
    let mut last_good = store.clone();
    let mut initial_loss: Option<f64> = None;

    'epochs: for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_steps = 0;
        let mut lr = config.lr;
        for batch in order.chunks(config.batch_size) {
            let mut grads: Option<ParamStore<T>> = None;
            let mut loss = 0.0;
            for &i in batch {
                let (sample, targets) = prepared[i].draw(mcfg, &mut rng);
                let mut g = Graph::with_params(&*store);
                let pass = model.forward(&mut g, &sample)?;
                let l = compute_loss(&mut g, &pass.outputs, &targets, config.loss, &weights)?;
                loss += g.value(l).get(0, 0).as_f64();
                let gr = g.backward(l)?.for_store(store);
                match grads.as_mut() {
                    None => grads = Some(gr),
                    Some(acc) => {
                        for ((_, a), (_, b)) in acc.iter_mut().zip(gr.iter()) {
                            a.add_assign(b);
                        }
                    }
                }
            }
            let n = batch.len() as f64;
            loss /= n;
            let mut grads = grads.expect("non-empty batch");
            let diverged = !loss.is_finite()
                || initial_loss
                    .is_some_and(|l0| loss > config.divergence_factor * l0.max(f64::MIN_POSITIVE));
            if diverged {
                if let Some(d) = out_dir {
                    checkpoint(model, norm, outcome.steps, &last_good)
                        .save(&d.join("last_good.ckpt"))?;
                }
                return Err(Error::Divergence {
                    step: outcome.steps,
                    loss,
                });
            }
            initial_loss.get_or_insert(loss);
            if batch.len() > 1 {
                let s = T::lit(1.0 / n);
                for (_, t) in grads.iter_mut() {
                    t.data_mut().iter_mut().for_each(|v| *v *= s);
                }
            }
            clip_global_norm(&mut grads, config.clip_norm);
            last_good.clone_from(store);
            lr = scheduled_lr(config, outcome.steps, total_steps);
            optimizer_step(store, &grads, &mut state, config, lr)?;
            outcome.steps += 1;
            outcome.step_losses.push(loss);
            epoch_loss += loss;
            epoch_steps += 1;
            if config.time_limit_s > 0.0 && started.elapsed().as_secs_f64() > config.time_limit_s {
                outcome.timed_out = true;
            }
            if outcome.timed_out {
                break;
            }
        }
        let train_loss = epoch_loss / epoch_steps.max(1) as f64;
        let last = epoch == config.epochs || outcome.timed_out;
        let mut row = LogRow {
            epoch,
            step: outcome.steps,
            train_loss,
            lr,
            val_loss: None,
            val_metrics: Vec::new(),
        };
        if epoch % config.eval_interval == 0 || last {
            let score = if val.is_empty() {
                train_loss
            } else {
                let v = evaluate_loss(model, store, &val_prepared, config, config.seed)?;
                let report = evaluate(model, store, val, norm, config.seed)?;
                row.val_loss = Some(v);
                row.val_metrics = report
                    .fields
                    .iter()
                    .map(|f| (f.name.clone(), f.relative_l1))
                    .collect();
                v
            };
            if score < outcome.best_score {
                outcome.best_score = score;
                outcome.best_epoch = epoch;
                outcome.best_params.clone_from(store);
                if let Some(d) = out_dir {
                    checkpoint(model, norm, outcome.steps, store).save(&d.join("best.ckpt"))?;
                }
            }
        }
        if let Some(l) = log.as_mut() {
            l.write(&row)?;
        }
        progress(&row);
        outcome.log.push(row);
        if outcome.timed_out {
            break 'epochs;
        }
    }
    if let Some(d) = out_dir {
        checkpoint(model, norm, outcome.steps, store).save(&d.join("last.ckpt"))?;
    }
    Ok(outcome)
}
