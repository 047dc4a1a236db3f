//! Mini-batch SGD (with optional momentum) on softmax cross-entropy.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::Model;
use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::{cross_entropy, softmax};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Anneal the learning rate to 0 along a half cosine over all steps.
    pub cosine_decay: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 12,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            cosine_decay: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if self.batch_size > dataset_len {
            return Err(Error::InvalidArgument(format!(
                "batch_size {} exceeds dataset size {dataset_len}",
                self.batch_size
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    /// Mean loss over the last epoch.
    pub final_loss: f64,
    pub train_accuracy: f64,
}

/// Trains a copy of `model` on `data`.
pub fn train(model: &Model, data: &LabeledDataset, cfg: &TrainConfig) -> Result<(Model, TrainReport)> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    cfg.validate(data.len())?;
    if data.classes() != model.classes() {
        return Err(Error::InvalidArgument(format!(
            "dataset has {} classes, model has {}",
            data.classes(),
            model.classes()
        )));
    }
    let mut model = model.clone();
    let mut velocity = model.zero_grads();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut final_loss = f64::NAN;
    let total_steps = (cfg.epochs * data.len().div_ceil(cfg.batch_size)) as f64;
    let mut step_no = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = model.zero_grads();
            let mut batch_loss = 0.0;
            for &idx in batch {
                let trace = model.forward(&data.image(idx))?;
                let label = data.labels()[idx];
                let logits = trace.logits().data();
                batch_loss += cross_entropy(logits, label);
                let mut g = softmax(logits);
                g[label] -= 1.0;
                let top = model.layers().len() - 1;
                model.backprop(&trace, top, 0, g, Some(&mut grads));
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "epoch {epoch}, batch {batch_no}: loss is {batch_loss} (lr {}, momentum {})",
                    cfg.learning_rate, cfg.momentum
                )));
            }
            epoch_loss += batch_loss;
            let lr = if cfg.cosine_decay {
                let t = step_no as f64 / total_steps;
                cfg.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            } else {
                cfg.learning_rate
            };
            step_no += 1;
            let step = lr / batch.len() as f64;
            for ((p_layer, v_layer), g_layer) in model
                .params_mut()
                .iter_mut()
                .zip(velocity.iter_mut())
                .zip(&grads)
            {
                for ((p, v), g) in p_layer.iter_mut().zip(v_layer.iter_mut()).zip(g_layer) {
                    for ((pi, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                        *vi = cfg.momentum * *vi - step * gi;
                        *pi += *vi;
                    }
                }
            }
        }
        final_loss = epoch_loss / data.len() as f64;
        log::debug!("epoch {epoch}: mean loss {final_loss:.5}");
    }
    if model.params().iter().flatten().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Divergence("non-finite parameters after training".into()));
    }
    let train_accuracy = accuracy(&model, data)?;
    Ok((
        model,
        TrainReport {
            epochs: cfg.epochs,
            final_loss,
            train_accuracy,
        },
    ))
}

/// Argmax predictions for every sample.
pub fn predictions(model: &Model, data: &LabeledDataset) -> Result<Vec<usize>> {
    (0..data.len())
        .into_par_iter()
        .map(|i| model.predict(&data.image(i)))
        .collect()
}

pub fn accuracy(model: &Model, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty dataset".into()));
    }
    let preds = predictions(model, data)?;
    let correct = preds
        .iter()
        .zip(data.labels())
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / data.len() as f64)
}
