//! Deterministic mini-batch training with best-on-validation-loss retention.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{adam_step, lr_schedule, sgd_step, AdamState, PlateauState};
use super::{weighted_cross_entropy, ModelState};
use crate::dataset::batches;
use crate::error::{Error, Result};
use crate::metrics::{auroc_macro, categorical_accuracy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(Error::param("optimizer", format!("unknown optimizer {other:?}"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
        })
    }
}

/// Optimisation settings. The dropout rate belongs to the model's [`super::Arch`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub base_lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub plateau_min_delta: f64,
    /// Per-class loss weights; empty means all ones.
    pub class_weights: Vec<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Sgd,
            base_lr: 0.001,
            momentum: 0.9,
            epochs: 40,
            batch_size: 8,
            plateau_patience: 5,
            plateau_factor: 0.2,
            plateau_min_delta: 1e-5,
            class_weights: Vec::new(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_classes: usize) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::param("base_lr", format!("{} must be positive", self.base_lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param("momentum", format!("{} outside [0, 1)", self.momentum)));
        }
        if self.epochs == 0 {
            return Err(Error::param("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be at least 1"));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor <= 1.0) {
            return Err(Error::param("plateau_factor", format!("{} outside (0, 1]", self.plateau_factor)));
        }
        if !self.class_weights.is_empty() {
            if self.class_weights.len() != n_classes {
                return Err(Error::param(
                    "class_weights",
                    format!("{} weights for {n_classes} classes", self.class_weights.len()),
                ));
            }
            if self.class_weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
                return Err(Error::param("class_weights", "weights must be positive"));
            }
        }
        Ok(())
    }

    fn weights(&self, n_classes: usize) -> Vec<f64> {
        if self.class_weights.is_empty() {
            vec![1.0; n_classes]
        } else {
            self.class_weights.clone()
        }
    }
}

/// Random access to labelled network inputs, so large sets can be rendered lazily.
pub trait SampleSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn label(&self, index: usize) -> usize;

    /// Writes input `index` (`[c, h, w]` layout) into `out`.
    fn fill_input(&self, index: usize, out: &mut [f32]) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct InMemorySamples {
    pub input_len: usize,
    pub inputs: Vec<f32>,
    pub labels: Vec<usize>,
}

impl SampleSource for InMemorySamples {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    fn fill_input(&self, index: usize, out: &mut [f32]) -> Result<()> {
        out.copy_from_slice(&self.inputs[index * self.input_len..(index + 1) * self.input_len]);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    /// Absent when the validation set holds fewer than two classes.
    pub val_auroc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainHistory {
    /// One JSON object per line, one line per epoch.
    pub fn to_jsonl(&self) -> String {
        self.records.iter().map(|r| serde_json::to_string(r).expect("epoch records serialise") + "\n").collect()
    }
}

/// Eval-mode probabilities for every sample, batched.
pub fn predict_all(model: &ModelState<f32>, data: &dyn SampleSource, batch_size: usize) -> Result<Array2<f64>> {
    let k = model.arch().n_classes;
    let len = model.arch().input_len();
    let mut probs = Array2::zeros((data.len(), k));
    let mut buf = vec![0.0f32; batch_size.max(1) * len];
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        for (slot, &i) in chunk.iter().enumerate() {
            data.fill_input(i, &mut buf[slot * len..(slot + 1) * len])?;
        }
        let p = model.predict(&buf[..chunk.len() * len], chunk.len())?;
        for (slot, &i) in chunk.iter().enumerate() {
            for c in 0..k {
                probs[[i, c]] = p[slot * k + c] as f64;
            }
        }
    }
    Ok(probs)
}

fn labels_of(data: &dyn SampleSource) -> Vec<usize> {
    (0..data.len()).map(|i| data.label(i)).collect()
}

/// Trains for `config.epochs` epochs and returns the history with the
/// parameters of the epoch whose (class-weighted) validation loss was lowest,
/// the earliest such epoch on ties.
pub fn train(
    mut model: ModelState<f32>,
    train_set: &dyn SampleSource,
    val_set: &dyn SampleSource,
    config: &TrainConfig,
) -> Result<(TrainHistory, ModelState<f32>)> {
    let k = model.arch().n_classes;
    config.validate(k)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Empty("training and validation sets must both be non-empty".into()));
    }
    let weights = config.weights(k);
    let len = model.arch().input_len();
    let train_labels = labels_of(train_set);
    let val_labels = labels_of(val_set);
    if let Some(&bad) = train_labels.iter().chain(&val_labels).find(|&&l| l >= k) {
        return Err(Error::UnknownClass(format!("label {bad} for a {k}-class model")));
    }

    let mut plateau = PlateauState::new(config.plateau_patience, config.plateau_factor, config.plateau_min_delta);
    let mut velocity = Vec::new();
    let mut adam = AdamState::default();
    let mut step = 0u64;
    let mut buf = vec![0.0f32; config.batch_size * len];
    let mut records = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, ModelState<f32>)> = None;
    let mut last_val = None;

    for epoch in 0..config.epochs {
        let lr = lr_schedule(epoch, config.base_lr, config.epochs, &mut plateau, last_val);
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xD5_0F_0A_75);
        dropout_rng.set_stream(epoch as u64);
        let (mut loss_sum, mut weight_sum) = (0.0, 0.0);
        for batch in batches(train_set.len(), config.batch_size, config.seed, epoch as u64)? {
            let n = batch.len();
            for (slot, &i) in batch.iter().enumerate() {
                train_set.fill_input(i, &mut buf[slot * len..(slot + 1) * len])?;
            }
            let targets: Vec<usize> = batch.iter().map(|&i| train_labels[i]).collect();
            let diverged = |reason: String| Error::Diverged {
                epoch,
                reason,
                last_good: best.as_ref().map(|b| Box::new(b.2.clone())),
            };
            let cache = match model.forward(&buf[..n * len], n, Some(&mut dropout_rng)) {
                Ok(c) => c,
                Err(Error::NonFinite(what)) => return Err(diverged(format!("non-finite {what}"))),
                Err(e) => return Err(e),
            };
            let (loss, grad) = weighted_cross_entropy(&cache.probs, k, &targets, &weights)?;
            if !loss.is_finite() {
                return Err(diverged("non-finite training loss".into()));
            }
            let w: f64 = targets.iter().map(|&t| weights[t]).sum();
            loss_sum += loss * w;
            weight_sum += w;
            let grads = model.backward(&cache, &grad)?;
            let params = model.params_mut();
            let stepped = match config.optimizer {
                OptimizerKind::Sgd => sgd_step(params, &grads, lr, config.momentum, &mut velocity),
                OptimizerKind::Adam => {
                    step += 1;
                    adam_step(params, &grads, lr, step, &mut adam)
                }
            };
            if let Err(Error::NonFinite(what)) = stepped {
                return Err(diverged(format!("non-finite {what}")));
            }
            stepped?;
        }

        let probs = predict_all(&model, val_set, config.batch_size)?;
        let flat: Vec<f64> = probs.iter().copied().collect();
        let (val_loss, _) = weighted_cross_entropy(&flat, k, &val_labels, &weights)?;
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / weight_sum,
            val_loss,
            val_accuracy: categorical_accuracy(&val_labels, &probs)?,
            val_auroc: auroc_macro(&val_labels, &probs).ok().map(|r| r.macro_auroc),
        };
        log::info!(
            "epoch {epoch}: lr {lr:.3e} train_loss {:.4} val_loss {val_loss:.4} val_acc {:.3}",
            record.train_loss,
            record.val_accuracy
        );
        records.push(record);
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: "non-finite validation loss".into(),
                last_good: best.map(|b| Box::new(b.2)),
            });
        }
        if best.as_ref().is_none_or(|b| val_loss < b.1) {
            best = Some((epoch, val_loss, model.clone()));
        }
        last_val = Some(val_loss);
    }
    let (best_epoch, _, best_model) = best.expect("at least one epoch ran");
    Ok((TrainHistory { records, best_epoch }, best_model))
}
