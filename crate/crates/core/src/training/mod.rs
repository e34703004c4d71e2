//! Deterministic, resumable optimization of the detector.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chartgen::Raster;
use crate::geometry::Shape;
use crate::matching::{check_capacity, total_loss_on_tape, LossBreakdown, MatchError};
use crate::model::{forward_on_tape, Bound, Branches, ModelConfig, ModelError, Parameters};
use crate::numeric::{Array, NumericError, Tape};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Total number of optimization steps of the run.
    pub steps: u64,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Seeds parameter initialization and the sample order.
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    /// Log every this many steps; 0 disables logging.
    pub log_every: u64,
    /// Checkpoint every this many steps; 0 disables checkpoints.
    pub checkpoint_every: u64,
    /// Rescale gradients whose global L2 norm exceeds this; 0 disables.
    pub grad_clip_norm: f64,
    /// Steps from this one on use `learning_rate * lr_drop_factor`; 0
    /// disables the drop.
    pub lr_drop_step: u64,
    pub lr_drop_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            dataset: None,
            log_every: 100,
            checkpoint_every: 0,
            grad_clip_norm: 0.0,
            lr_drop_step: 0,
            lr_drop_factor: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.steps < 1 {
            return Err(TrainError::Config("steps must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.grad_clip_norm >= 0.0 && self.grad_clip_norm.is_finite()) {
            return Err(TrainError::Config(format!(
                "grad_clip_norm must be non-negative, got {}",
                self.grad_clip_norm
            )));
        }
        if !(self.lr_drop_factor > 0.0 && self.lr_drop_factor <= 1.0) {
            return Err(TrainError::Config(format!(
                "lr_drop_factor must lie in (0, 1], got {}",
                self.lr_drop_factor
            )));
        }
        Ok(())
    }

    /// Learning rate of the update made at `step` (0-based).
    pub fn learning_rate_at(&self, step: u64) -> f64 {
        if self.lr_drop_step > 0 && step >= self.lr_drop_step {
            self.learning_rate * self.lr_drop_factor
        } else {
            self.learning_rate
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("sample {index}: {source}")]
    Capacity { index: usize, source: MatchError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("non-finite loss at step {step}: {loss:?}")]
    Diverged { step: u64, loss: LossBreakdown },
    #[error("checkpoint callback failed: {0}")]
    Checkpoint(String),
}

/// A training image with its ground-truth shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub raster: Raster,
    pub shapes: Vec<Shape>,
}

/// Parameters plus everything needed to continue a run bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: Parameters,
    /// Completed optimization steps.
    pub step: u64,
    /// First-moment estimates, keyed like the parameters (Adam only).
    pub moment1: BTreeMap<String, Array>,
    /// Second-moment estimates (Adam only).
    pub moment2: BTreeMap<String, Array>,
}

impl TrainState {
    pub fn new(params: Parameters) -> Self {
        Self {
            params,
            step: 0,
            moment1: BTreeMap::new(),
            moment2: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: u64,
    pub one2one_loss: f64,
    pub one2many_loss: f64,
    pub total: f64,
    pub cls_loss: f64,
    pub shape_loss: f64,
}

impl LogEntry {
    pub fn new(step: u64, loss: &LossBreakdown) -> Self {
        Self {
            step,
            one2one_loss: loss.one2one_loss,
            one2many_loss: loss.one2many_loss,
            total: loss.total,
            cls_loss: loss.cls_loss,
            shape_loss: loss.shape_loss,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("log entry serializes")
    }
}

/// Loss and parameter gradients for one sample at the current parameters.
pub fn loss_and_gradients(
    params: &Parameters,
    sample: &Sample,
    config: &ModelConfig,
) -> Result<(LossBreakdown, BTreeMap<String, Array>), TrainError> {
    check_capacity(sample.shapes.len(), config)?;
    let mut tape = Tape::new();
    let bound = Bound::new(&mut tape, params);
    let branches = if config.one_to_many_enabled() {
        Branches::Both
    } else {
        Branches::OneToOneOnly
    };
    let out = forward_on_tape(&mut tape, &bound, config, &sample.raster, branches)?;
    let loss = total_loss_on_tape(&mut tape, out.one2one, out.one2many, &sample.shapes, config, None)?;
    let grads = tape.backward(loss.total)?.params(&tape);
    Ok((loss.breakdown, grads))
}

/// Global L2 norm over every gradient entry.
pub fn gradient_norm(grads: &BTreeMap<String, Array>) -> f64 {
    grads
        .values()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

fn apply_update(state: &mut TrainState, grads: &BTreeMap<String, Array>, train: &TrainConfig) {
    let lr = train.learning_rate_at(state.step);
    let norm = gradient_norm(grads);
    let clip = if train.grad_clip_norm > 0.0 && norm > train.grad_clip_norm {
        train.grad_clip_norm / norm
    } else {
        1.0
    };
    let t = (state.step + 1) as i32;
    let (c1, c2) = (1.0 - ADAM_BETA1.powi(t), 1.0 - ADAM_BETA2.powi(t));
    for (name, g) in grads {
        let Some(p) = state.params.get_mut(name) else { continue };
        match train.optimizer {
            OptimizerKind::Sgd => {
                for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                    let step = lr * (d * clip);
                    if step != 0.0 {
                        *w -= step;
                    }
                }
            }
            OptimizerKind::Adam => {
                let m = state
                    .moment1
                    .entry(name.clone())
                    .or_insert_with(|| Array::zeros(g.shape()));
                let v = state
                    .moment2
                    .entry(name.clone())
                    .or_insert_with(|| Array::zeros(g.shape()));
                let iter = p
                    .data_mut()
                    .iter_mut()
                    .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
                    .zip(g.data());
                for ((w, (m, v)), &d) in iter {
                    let d = d * clip;
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * d;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * d * d;
                    let step = lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                    if step != 0.0 {
                        *w -= step;
                    }
                }
            }
        }
    }
}

/// One forward/backward/update on `sample`. Returns the loss at the
/// parameters before the update.
pub fn train_step(
    state: &mut TrainState,
    sample: &Sample,
    model: &ModelConfig,
    train: &TrainConfig,
) -> Result<LossBreakdown, TrainError> {
    let (loss, grads) = loss_and_gradients(&state.params, sample, model)?;
    if !loss.is_finite() {
        return Err(TrainError::Diverged { step: state.step, loss });
    }
    apply_update(state, &grads, train);
    state.step += 1;
    Ok(loss)
}

/// Visiting order of pass `epoch` over `len` samples.
pub fn epoch_order(seed: u64, len: usize, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order
}

/// Index of the sample visited at `step`.
pub fn sample_index(seed: u64, len: usize, step: u64) -> usize {
    epoch_order(seed, len, step / len as u64)[(step % len as u64) as usize]
}

/// Runs from `state.step` up to `train.steps`. `on_log` sees every logged
/// entry; `on_checkpoint` sees the state after every checkpoint step.
pub fn fit(
    state: &mut TrainState,
    dataset: &[Sample],
    model: &ModelConfig,
    train: &TrainConfig,
    mut on_log: impl FnMut(&LogEntry),
    mut on_checkpoint: impl FnMut(&TrainState) -> Result<(), String>,
) -> Result<Vec<LogEntry>, TrainError> {
    if state.step >= train.steps {
        return Ok(Vec::new());
    }
    train.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    for (index, s) in dataset.iter().enumerate() {
        check_capacity(s.shapes.len(), model).map_err(|source| TrainError::Capacity { index, source })?;
    }
    let mut log = Vec::new();
    let mut order: Option<(u64, Vec<usize>)> = None;
    while state.step < train.steps {
        let step = state.step;
        let len = dataset.len() as u64;
        let epoch = step / len;
        if order.as_ref().is_none_or(|(e, _)| *e != epoch) {
            order = Some((epoch, epoch_order(train.seed, dataset.len(), epoch)));
        }
        let index = order.as_ref().expect("order set").1[(step % len) as usize];
        let loss = train_step(state, &dataset[index], model, train)?;
        let last = state.step == train.steps;
        if train.log_every > 0 && (step % train.log_every == 0 || last) {
            let entry = LogEntry::new(step, &loss);
            on_log(&entry);
            log.push(entry);
        }
        if train.checkpoint_every > 0 && state.step % train.checkpoint_every == 0 {
            on_checkpoint(state).map_err(TrainError::Checkpoint)?;
        }
    }
    Ok(log)
}
