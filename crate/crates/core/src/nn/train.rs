//! Minibatch SGD for baselines and masked finetuning.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::{backward, forward, sgd_step, softmax_cross_entropy, Dropout, Masking};
use super::infer::argmax;
use super::network::{NetName, Network};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

const EVAL_BATCH: usize = 128;

/// Hyperparameters. The loss is always softmax cross-entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f32,
    pub epochs: u32,
    pub batch_size: usize,
    pub seed: u64,
    /// Dropout on fc hidden outputs; only used by baseline training.
    pub dropout: f32,
    /// Learning rate multiplier applied after every epoch.
    pub lr_decay: f32,
    /// Finetuning stops after this many epochs without a validation gain.
    pub patience: u32,
    /// Trains on the first `n` shuffled training samples only.
    pub max_train_samples: Option<usize>,
    #[serde(default)]
    pub verbose: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            epochs: 10,
            batch_size: 64,
            seed: 0,
            dropout: 0.5,
            lr_decay: 0.95,
            patience: 3,
            max_train_samples: None,
            verbose: false,
        }
    }
}

impl TrainConfig {
    /// Baseline settings per reference network.
    pub fn for_net(name: NetName) -> Self {
        match name {
            NetName::Mlp3 => Self {
                lr: 0.1,
                epochs: 40,
                ..Self::default()
            },
            NetName::LeNet4 => Self {
                lr: 0.05,
                epochs: 8,
                lr_decay: 0.85,
                ..Self::default()
            },
            NetName::ConvNet5 => Self {
                lr: 0.05,
                epochs: 40,
                lr_decay: 0.92,
                ..Self::default()
            },
        }
    }

    /// Finetuning budget derived from a baseline: 20% of its epochs (at least
    /// one) at a tenth of its learning rate, without dropout.
    pub fn finetune_from(&self) -> Self {
        Self {
            lr: self.lr * 0.1,
            epochs: ((self.epochs as f64 * 0.2).round() as u32).max(1),
            dropout: 0.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Argument(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Argument(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch size must be positive".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Argument(format!("lr decay {} outside (0, 1]", self.lr_decay)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub lr: f32,
    pub train_loss: f64,
    pub validation_accuracy: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub winner_rates: Vec<Option<f64>>,
    /// Masked validation accuracy before any finetuning step.
    pub initial_validation_accuracy: f64,
    pub epochs: Vec<EpochRecord>,
    /// 0 when no epoch beat the untouched masked network.
    pub best_epoch: u32,
    pub best_validation_accuracy: f64,
}

/// Copies the images at `indices` into one contiguous buffer.
pub fn gather(dataset: &Dataset, indices: &[usize], out: &mut Vec<f32>) {
    out.clear();
    for &i in indices {
        out.extend_from_slice(dataset.image(i));
    }
}

fn check_compatible(net: &Network, dataset: &Dataset) -> Result<()> {
    if dataset.image_shape() != net.input_shape() {
        return Err(Error::Shape(format!(
            "dataset images are {:?}, network {} expects {:?}",
            dataset.image_shape(),
            net.name(),
            net.input_shape()
        )));
    }
    if dataset.classes() > net.output_len() {
        return Err(Error::Shape(format!(
            "{} classes but only {} outputs",
            dataset.classes(),
            net.output_len()
        )));
    }
    Ok(())
}

/// Top-1 accuracy over a split.
pub fn evaluate(net: &Network, dataset: &Dataset, split: Split, use_masks: bool) -> Result<f64> {
    check_compatible(net, dataset)?;
    let indices = dataset.indices(split);
    if indices.is_empty() {
        return Err(Error::Argument(format!("{split:?} split is empty")));
    }
    let masking = if use_masks { Masking::Dynamic } else { Masking::Off };
    let classes = net.output_len();
    let mut buf = Vec::new();
    let mut correct = 0usize;
    for chunk in indices.chunks(EVAL_BATCH) {
        gather(dataset, chunk, &mut buf);
        let cache = forward::<ChaCha8Rng>(net, &buf, chunk.len(), masking, None)?;
        for (row, &i) in cache.logits.chunks_exact(classes).zip(chunk) {
            if argmax(row) == dataset.label(i) {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / indices.len() as f64)
}

fn run_epoch(
    net: &mut Network,
    dataset: &Dataset,
    order: &[usize],
    config: &TrainConfig,
    lr: f32,
    masked: bool,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut buf = Vec::new();
    let mut labels = Vec::with_capacity(config.batch_size);
    let mut total_loss = 0.0;
    let mut batches = 0usize;
    for chunk in order.chunks(config.batch_size) {
        gather(dataset, chunk, &mut buf);
        labels.clear();
        labels.extend(chunk.iter().map(|&i| dataset.label(i)));
        let dropout = (!masked && config.dropout > 0.0).then(|| Dropout {
            rate: config.dropout,
            rng: &mut *rng,
        });
        let masking = if masked { Masking::Dynamic } else { Masking::Off };
        let cache = forward(net, &buf, chunk.len(), masking, dropout)?;
        let (loss, dl) = softmax_cross_entropy(&cache.logits, &labels, net.output_len())?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("training loss diverged ({loss}); lower the learning rate")));
        }
        let grads = backward(net, &cache, &dl)?;
        sgd_step(net, &grads, lr)?;
        total_loss += loss;
        batches += 1;
    }
    Ok(total_loss / batches as f64)
}

fn epoch_order(dataset: &Dataset, config: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order = dataset.indices(Split::Train).to_vec();
    order.shuffle(rng);
    if let Some(n) = config.max_train_samples {
        order.truncate(n.max(1));
    }
    order
}

/// Standard SGD training without WTA masks, with dropout on fc hidden layers.
pub fn train_baseline(net: &mut Network, dataset: &Dataset, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    check_compatible(net, dataset)?;
    if dataset.indices(Split::Train).is_empty() {
        return Err(Error::Argument("training split is empty".into()));
    }
    let mut rng = stream_rng(config.seed, Stream::Train);
    let has_validation = !dataset.indices(Split::Validation).is_empty();
    let mut lr = config.lr;
    let mut epochs = Vec::new();
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let order = epoch_order(dataset, config, &mut rng);
        let train_loss = run_epoch(net, dataset, &order, config, lr, false, &mut rng)?;
        let validation_accuracy = if has_validation {
            evaluate(net, dataset, Split::Validation, false)?
        } else {
            f64::NAN
        };
        net.meta.epochs_completed += 1;
        let record = EpochRecord {
            epoch,
            lr,
            train_loss,
            validation_accuracy,
            seconds: start.elapsed().as_secs_f64(),
        };
        if config.verbose {
            eprintln!(
                "epoch {epoch}: loss {:.4}, validation {:.4} ({:.1}s)",
                record.train_loss, record.validation_accuracy, record.seconds
            );
        }
        epochs.push(record);
        lr *= config.lr_decay;
    }
    net.meta.seed = config.seed;
    Ok(TrainReport { epochs })
}

/// Finetunes a trained network under WTA masks with the given per-layer
/// winner rates: masked forward, mask-reusing backward, plain SGD, no
/// dropout. Keeps the weights with the best masked validation accuracy.
pub fn finetune_dasnet(
    net: &mut Network,
    dataset: &Dataset,
    winner_rates: &[Option<f64>],
    config: &TrainConfig,
) -> Result<FinetuneReport> {
    config.validate()?;
    check_compatible(net, dataset)?;
    if !net.is_trained() {
        return Err(Error::State(format!("network {} has not been trained", net.name())));
    }
    net.set_winner_rates(winner_rates)?;
    let split = if dataset.indices(Split::Validation).is_empty() {
        Split::Train
    } else {
        Split::Validation
    };
    let initial = evaluate(net, dataset, split, true)?;
    let mut best = (0u32, initial, net.clone());
    let mut rng = stream_rng(config.seed, Stream::Finetune);
    let mut lr = config.lr;
    let mut epochs = Vec::new();
    let mut stale = 0;
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let order = epoch_order(dataset, config, &mut rng);
        let train_loss = run_epoch(net, dataset, &order, config, lr, true, &mut rng)?;
        let acc = evaluate(net, dataset, split, true)?;
        net.meta.epochs_completed += 1;
        let record = EpochRecord {
            epoch,
            lr,
            train_loss,
            validation_accuracy: acc,
            seconds: start.elapsed().as_secs_f64(),
        };
        if config.verbose {
            eprintln!(
                "finetune epoch {epoch}: loss {:.4}, masked validation {acc:.4} ({:.1}s)",
                train_loss, record.seconds
            );
        }
        epochs.push(record);
        lr *= config.lr_decay;
        if acc > best.1 {
            best = (epoch, acc, net.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    let epochs_run = net.meta.epochs_completed;
    *net = best.2;
    net.meta.epochs_completed = epochs_run;
    Ok(FinetuneReport {
        winner_rates: winner_rates.to_vec(),
        initial_validation_accuracy: initial,
        epochs,
        best_epoch: best.0,
        best_validation_accuracy: best.1,
    })
}
