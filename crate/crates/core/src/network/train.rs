use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use super::model::{draw_noise, evaluate_with_noise, grad_and_correct, Example, LossParts, LossWeights};
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::posterior::PriorParams;
use crate::sampling::RngState;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Fraction of all steps over which the step size ramps up linearly.
    pub warmup_fraction: f64,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            batch_size: 32,
            epochs: 100,
            seed: 0,
            warmup_fraction: 0.0,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || !(self.clip_norm > 0.0) {
            return Err(Error::arg("learning rate, batch size and clip norm must be positive"));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::arg(format!("warmup fraction {} outside [0, 1)", self.warmup_fraction)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Means over the epoch's training batches.
    pub train: LossParts,
    pub train_acc: f64,
    pub val: LossParts,
    pub val_acc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation loss; the initial
    /// parameters when no epoch ran.
    pub params: ModelParams,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    /// Set when training stopped on a non-finite loss or gradient; `params`
    /// then holds the last good parameters.
    pub aborted: Option<String>,
}

// RNG streams under the training seed.
const STREAM_BATCHES: u64 = 0;
const STREAM_VALIDATION: u64 = 1;
/// Stream conventionally used to initialize parameters for a training seed.
pub const STREAM_INIT: u64 = 2;

/// Mini-batch gradient descent with norm clipping and linear warm-up.
/// Validation uses one fixed noise draw per example for every epoch, so
/// epochs are compared on equal footing.
pub fn train(
    train_set: &[Example],
    val_set: &[Example],
    initial: ModelParams,
    prior: &PriorParams,
    config: &TrainConfig,
    weights: LossWeights,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::arg("training and validation sets must be non-empty"));
    }
    let d = initial.d;
    let mut rng = RngState::new(config.seed, STREAM_BATCHES);
    let val_noise = draw_noise(val_set, d, &mut RngState::new(config.seed, STREAM_VALIDATION));

    let steps_per_epoch = train_set.len().div_ceil(config.batch_size);
    let warmup_steps = (config.warmup_fraction * (steps_per_epoch * config.epochs) as f64).ceil() as usize;
    let mut params = initial.clone();
    let mut best = (f64::INFINITY, 0usize, initial);
    let mut log = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0usize;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sums = LossParts::default();
        let mut correct = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let noise = draw_noise(&batch, d, &mut rng);
            let (parts, batch_correct, mut g) = match grad_and_correct(&batch, &params, weights, prior, &noise) {
                Ok(v) => v,
                Err(Error::Numerical(msg)) => return Ok(abort(best, log, epoch, msg)),
                Err(e) => return Err(e),
            };
            correct += batch_correct;
            let share = batch.len() as f64 / train_set.len() as f64;
            sums.total += share * parts.total;
            sums.task += share * parts.task;
            sums.dirichlet += share * parts.dirichlet;
            sums.gaussian += share * parts.gaussian;

            let norm = g.norm();
            if norm > config.clip_norm {
                g.add_scaled(&g.clone(), config.clip_norm / norm - 1.0);
            }
            step += 1;
            let lr = if step <= warmup_steps {
                config.learning_rate * step as f64 / warmup_steps as f64
            } else {
                config.learning_rate
            };
            params.add_scaled(&g, -lr);
            if let Some((name, idx)) = params.first_non_finite() {
                return Ok(abort(best, log, epoch, format!("non-finite parameter {name}[{idx}]")));
            }
        }
        let (val, val_correct) = match evaluate_with_noise(val_set, &params, weights, prior, &val_noise) {
            Ok(v) => v,
            Err(Error::Numerical(msg)) => return Ok(abort(best, log, epoch, msg)),
            Err(e) => return Err(e),
        };
        log.push(EpochLog {
            epoch,
            train: sums,
            train_acc: correct as f64 / train_set.len() as f64,
            val,
            val_acc: val_correct as f64 / val_set.len() as f64,
        });
        if val.total < best.0 {
            best = (val.total, epoch, params.clone());
        }
    }
    Ok(TrainOutcome {
        params: best.2,
        best_epoch: best.1,
        log,
        aborted: None,
    })
}

fn abort(
    best: (f64, usize, ModelParams),
    log: Vec<EpochLog>,
    epoch: usize,
    msg: String,
) -> TrainOutcome {
    TrainOutcome {
        params: best.2,
        best_epoch: best.1,
        log,
        aborted: Some(format!("epoch {epoch}: {msg}")),
    }
}

pub const TRAINING_LOG_HEADER: &str = "epoch,L,L_T,L_D,L_G,train_acc,val_acc";

/// Per-epoch CSV with training-loss means and both accuracies.
pub fn training_log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from(TRAINING_LOG_HEADER);
    out.push('\n');
    for e in log {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            e.epoch, e.train.total, e.train.task, e.train.dirichlet, e.train.gaussian, e.train_acc, e.val_acc
        )
        .unwrap();
    }
    out
}

pub fn write_training_log(path: impl AsRef<Path>, log: &[EpochLog]) -> Result<()> {
    fs::write(path, training_log_csv(log))?;
    Ok(())
}
