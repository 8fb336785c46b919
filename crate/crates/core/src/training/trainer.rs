//! Toy-scale gradient-descent trainer.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HieroError, Result};
use crate::io::{FeatureSequence, NarrationSet};
use crate::model::forward::ForwardOptions;
use crate::model::params::ModelParams;
use crate::training::losses::{loss_and_gradient, loss_only, LossConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub warmup_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 15, batch: 8, lr: 1e-5, warmup_epochs: 5, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(HieroError::InvalidArgument("batch size must be >= 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(HieroError::InvalidArgument(format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Linear warmup from 0 over `warmup` steps, then cosine decay to 0 at `total`.
pub fn learning_rate(base: f64, step: usize, warmup: usize, total: usize) -> f64 {
    if step < warmup {
        return base * step as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup);
    if span == 0 {
        return base;
    }
    let progress = (step - warmup) as f64 / span as f64;
    base * 0.5 * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the batch losses seen during the epoch, before each update.
    pub loss: f64,
    pub vna: f64,
    pub ft: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    /// Mean batch loss over the dataset in fixed order, before training.
    pub initial_loss: f64,
    /// The same after training.
    pub final_loss: f64,
}

/// Mean total loss over fixed consecutive batches.
pub fn dataset_loss(
    params: &ModelParams,
    data: &[(FeatureSequence, NarrationSet)],
    batch: usize,
    fopts: &ForwardOptions,
    cfg: &LossConfig,
) -> Result<f64> {
    let batches: Vec<Vec<(&FeatureSequence, &NarrationSet)>> =
        data.chunks(batch.max(1)).map(|c| c.iter().map(|(s, n)| (s, n)).collect()).collect();
    let losses = crate::par::map_slice(&batches, |b| loss_only(params, b, fopts, cfg, None).map(|l| l.0));
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / batches.len() as f64)
}

/// Plain gradient descent with warmup + cosine schedule. Each epoch visits
/// the dataset in a seeded shuffled order. When `log` is given, one JSON
/// line per epoch is written to it.
pub fn train_toy(
    mut params: ModelParams,
    data: &[(FeatureSequence, NarrationSet)],
    cfg: &TrainConfig,
    fopts: &ForwardOptions,
    loss_cfg: &LossConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    loss_cfg.validate()?;
    if data.is_empty() {
        return Err(HieroError::EmptyBatch);
    }
    let initial_loss = dataset_loss(&params, data, cfg.batch, fopts, loss_cfg)?;
    let per_epoch = data.len().div_ceil(cfg.batch);
    let total = per_epoch * cfg.epochs;
    let warmup = per_epoch * cfg.warmup_epochs;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut vna, mut ft, mut lr) = (0.0, 0.0, 0.0, 0.0);
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<(&FeatureSequence, &NarrationSet)> = chunk.iter().map(|&i| (&data[i].0, &data[i].1)).collect();
            let (lv, _) = loss_and_gradient(&params, &batch, fopts, loss_cfg, None)?;
            if !lv.value.is_finite() {
                return Err(HieroError::Diverged { epoch, loss: lv.value });
            }
            lr = learning_rate(cfg.lr, step, warmup, total);
            if lr != 0.0 {
                let mut flat = params.to_flat();
                flat.iter_mut().zip(&lv.gradient).for_each(|(p, g)| *p -= lr * g);
                params.load_flat(&flat)?;
            }
            sum += lv.value;
            vna += lv.vna;
            ft += lv.ft;
            step += 1;
        }
        let n = per_epoch as f64;
        let rec = EpochRecord { epoch, loss: sum / n, vna: vna / n, ft: ft / n, lr };
        log::info!("epoch {epoch}: loss {:.6} (vna {:.6}, ft {:.6}) lr {lr:.3e}", rec.loss, rec.vna, rec.ft);
        if let Some(w) = log.as_deref_mut() {
            let line = serde_json::to_string(&rec).expect("epoch records serialize");
            writeln!(w, "{line}").map_err(|e| HieroError::io("<loss log>", e))?;
        }
        history.push(rec);
    }
    let final_loss = dataset_loss(&params, data, cfg.batch, fopts, loss_cfg)?;
    if !final_loss.is_finite() {
        return Err(HieroError::Diverged { epoch: cfg.epochs, loss: final_loss });
    }
    Ok(TrainOutcome { params, history, initial_loss, final_loss })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        assert_eq!(learning_rate(1.0, 0, 5, 15), 0.0);
        assert!((learning_rate(1.0, 2, 4, 12) - 0.5).abs() < 1e-15);
        assert_eq!(learning_rate(1.0, 4, 4, 12), 1.0);
        assert!(learning_rate(1.0, 12, 4, 12).abs() < 1e-15);
        assert!((learning_rate(2.0, 8, 4, 12) - 1.0).abs() < 1e-12);
        assert_eq!(learning_rate(1.0, 0, 0, 0), 1.0);
    }
}
