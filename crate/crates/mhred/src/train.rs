//! Mini-batch training: Adam with bias correction, global-norm gradient
//! clipping, seeded example-level shuffling, and validation-loss early
//! stopping that restores the best parameters seen.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Batch, Model};
use crate::tensor::{Graph, SharedTensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0004,
            clip_norm: 5.0,
            batch_size: 32,
            max_epochs: 50,
            patience: 3,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is degenerate but well defined (parameters stay
    /// fixed), so only negative rates are rejected.
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be finite and >= 0".into()));
        }
        if self.clip_norm <= 0.0 || !self.clip_norm.is_finite() {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1)")));
            }
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Per-parameter Adam moment estimates plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &[(String, SharedTensor)]) -> Self {
        let m = params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect();
        let v = params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect();
        Self { m, v, t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

fn grads_of(params: &[(String, SharedTensor)]) -> Result<Vec<Vec<f64>>> {
    params
        .iter()
        .map(|(name, p)| {
            p.borrow()
                .grad()
                .map(<[f64]>::to_vec)
                .ok_or_else(|| Error::Contract(format!("parameter {name} has no gradient")))
        })
        .collect()
}

/// Scales every gradient by `clip_norm / g` when the global L2 norm `g`
/// exceeds `clip_norm`; returns the factor applied (1.0 when unclipped).
pub fn clip_gradients(params: &[(String, SharedTensor)], clip_norm: f64) -> Result<f64> {
    let grads = grads_of(params)?;
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|&v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm <= clip_norm {
        return Ok(1.0);
    }
    let factor = clip_norm / norm;
    for (_, p) in params {
        let mut t = p.borrow_mut();
        if let Some(g) = t.grad_mut() {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }
    Ok(factor)
}

/// One bias-corrected Adam update over all parameters; gradients are
/// consumed and zeroed.
pub fn adam_step(
    params: &[(String, SharedTensor)],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::Contract(format!(
            "optimizer state covers {} parameters, model has {}",
            state.m.len(),
            params.len()
        )));
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for (i, (name, p)) in params.iter().enumerate() {
        let mut tensor = p.borrow_mut();
        if tensor.grad().is_none() {
            return Err(Error::Contract(format!("parameter {name} has no gradient")));
        }
        if state.m[i].len() != tensor.numel() {
            return Err(Error::Contract(format!(
                "optimizer state shape mismatch for parameter {name}"
            )));
        }
        let grad = tensor.grad().unwrap().to_vec();
        let data = tensor.data_mut();
        for (j, &g) in grad.iter().enumerate() {
            let m = &mut state.m[i][j];
            let v = &mut state.v[i][j];
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            data[j] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        tensor.zero_grad();
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub lr: f64,
    pub clipped_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_loss: f64,
}

fn snapshot(params: &[(String, SharedTensor)]) -> Vec<Vec<f64>> {
    params.iter().map(|(_, p)| p.borrow().data().to_vec()).collect()
}

fn restore(params: &[(String, SharedTensor)], saved: &[Vec<f64>]) {
    for ((_, p), data) in params.iter().zip(saved) {
        p.borrow_mut().data_mut().copy_from_slice(data);
    }
}

fn token_weighted_loss(model: &Model, batches: &[Batch]) -> Result<(f64, f64)> {
    let mut total = 0.0;
    let mut tokens = 0.0;
    for batch in batches {
        let mut g = Graph::new();
        let decoded = model.batch_loss(&mut g, batch)?;
        total += g.scalar(decoded.loss) * decoded.token_count;
        tokens += decoded.token_count;
    }
    Ok((total, tokens))
}

/// Trains until validation loss stops improving for `patience` epochs or
/// `max_epochs` is reached, then restores the best parameters seen.
///
/// `train` and `valid` hold one example per batch so shuffling happens at
/// example level; each epoch reshuffles with the run's seeded stream and
/// merges consecutive examples into `batch_size` training batches.
pub fn fit(
    model: &Model,
    train: &[Batch],
    valid: &[Batch],
    cfg: &TrainConfig,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Contract("train and valid splits must be nonempty".into()));
    }
    for (split, batches) in [("train", train), ("valid", valid)] {
        if let Some(bad) = batches.iter().find(|b| b.batch_size() != 1) {
            return Err(Error::Contract(format!(
                "{split} split must hold one example per batch, found {}",
                bad.batch_size()
            )));
        }
    }
    let valid_batches: Vec<Batch> = valid
        .chunks(cfg.batch_size)
        .map(|c| Batch::merge(c.iter()))
        .collect::<Result<_>>()?;

    let params = model.named_params();
    let mut adam = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut indices: Vec<usize> = (0..train.len()).collect();

    let mut history = Vec::new();
    let mut best: Option<(usize, f64, Vec<Vec<f64>>)> = None;
    let mut epochs_since_best = 0;

    for epoch in 1..=cfg.max_epochs {
        indices.shuffle(&mut rng);
        let mut train_total = 0.0;
        let mut train_tokens = 0.0;
        let mut clipped = 0usize;
        let mut steps = 0usize;
        for (batch_idx, chunk) in indices.chunks(cfg.batch_size).enumerate() {
            let batch = Batch::merge(chunk.iter().map(|&i| &train[i]))?;
            model.zero_grads();
            let mut g = Graph::new();
            let decoded = model.batch_loss(&mut g, &batch)?;
            let loss = g.scalar(decoded.loss);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    value: loss,
                });
            }
            g.backward(decoded.loss)?;
            if clip_gradients(&params, cfg.clip_norm)? < 1.0 {
                clipped += 1;
            }
            adam_step(&params, &mut adam, cfg)?;
            train_total += loss * decoded.token_count;
            train_tokens += decoded.token_count;
            steps += 1;
        }

        let (valid_total, valid_tokens) = token_weighted_loss(model, &valid_batches)?;
        let valid_loss = valid_total / valid_tokens;
        if !valid_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: 0,
                value: valid_loss,
            });
        }
        history.push(EpochRecord {
            epoch,
            train_loss: train_total / train_tokens,
            valid_loss,
            lr: cfg.learning_rate,
            clipped_fraction: clipped as f64 / steps as f64,
        });

        let improved = best.as_ref().is_none_or(|(_, b, _)| valid_loss < *b);
        if improved {
            best = Some((epoch, valid_loss, snapshot(&params)));
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= cfg.patience {
                break;
            }
        }
    }

    let (best_epoch, best_valid_loss, saved) = best.expect("at least one epoch ran");
    restore(&params, &saved);
    Ok(FitOutcome {
        history,
        best_epoch,
        best_valid_loss,
    })
}

/// Writes the fit history as one JSON record per line.
pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for record in history {
        serde_json::to_writer(&mut w, record)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
