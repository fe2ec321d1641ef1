//! Mini-batch training loop with validation tracking and early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::dataset::{Sample, ToyDataset};
use super::network::{BuildError, NetworkParams};
use super::optim::Optimizer;
use crate::hpspace::{OptimizerKind, Point};

pub const DEFAULT_MAX_EPOCHS: usize = 500;
/// Epochs after which a validation accuracy that never reached
/// [`ACCURACY_FLOOR`] stops training.
pub const GRACE_EPOCHS: usize = 50;
pub const ACCURACY_FLOOR: f64 = 20.0;
/// Epochs without an improvement larger than [`STAGNATION_DELTA`]
/// percentage points before training stops.
pub const STAGNATION_WINDOW: usize = 50;
pub const STAGNATION_DELTA: f64 = 0.1;

const SGD_DECAY_PERIOD: usize = 100;
const SGD_MIN_LR: f64 = 1e-6;

/// Statistics of one completed epoch; accuracies in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub best_validation_accuracy: f64,
    /// Test accuracy of the weights from `best_epoch`.
    pub test_accuracy: f64,
    pub best_epoch: usize,
    pub epochs: Vec<EpochStats>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error("loss became non-finite at epoch {epoch}")]
    Diverged { epoch: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainSettings {
    pub seed: u64,
    pub max_epochs: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            seed: 0,
            max_epochs: DEFAULT_MAX_EPOCHS,
        }
    }
}

/// Learning rate to use after `epoch` completes. Only SGD is managed
/// externally: divided by 10 every 100 epochs while above 1e-6.
pub fn lr_schedule(kind: OptimizerKind, epoch: usize, lr: f64) -> f64 {
    if kind == OptimizerKind::Sgd && epoch > 0 && epoch.is_multiple_of(SGD_DECAY_PERIOD) && lr > SGD_MIN_LR {
        lr / 10.0
    } else {
        lr
    }
}

/// Whether training should stop after the last epoch of `log`.
pub fn early_stop(log: &[EpochStats]) -> bool {
    let Some(last) = log.last() else {
        return false;
    };
    if last.epoch >= GRACE_EPOCHS && log.iter().all(|e| e.validation_accuracy < ACCURACY_FLOOR) {
        return true;
    }
    let mut best = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    for e in log {
        if e.validation_accuracy > best + STAGNATION_DELTA {
            best = e.validation_accuracy;
            best_epoch = e.epoch;
        }
    }
    last.epoch - best_epoch >= STAGNATION_WINDOW
}

fn accuracy(net: &NetworkParams, samples: &[Sample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let inputs: Vec<&[f64]> = samples.iter().map(|s| s.pixels.as_slice()).collect();
    let predicted = net.predict_batch(&inputs);
    let correct = predicted.iter().zip(samples).filter(|(&p, s)| p == s.label).count();
    100.0 * correct as f64 / samples.len() as f64
}

/// Train the network described by `p` on `data`, keeping the weights of the
/// best validation epoch and measuring the test split once with them.
pub fn train(p: &Point, data: &ToyDataset, settings: &TrainSettings) -> Result<TrainReport, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut net = NetworkParams::build(p, data.image_side, data.channels, data.num_classes, &mut rng)?;
    let mut optimizer = Optimizer::new(&p.optimizer, net.num_params());
    let batch_size = (p.batch_size as usize).clamp(1, data.train.len().max(1));

    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut grad = vec![0.0; net.num_params()];
    let mut best_theta = net.theta.clone();
    let mut best_val = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut epochs = Vec::new();

    for epoch in 1..=settings.max_epochs.max(1) {
        order.shuffle(&mut rng);
        let lr = optimizer.learning_rate();
        let mut correct = 0;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<(&[f64], usize)> = chunk
                .iter()
                .map(|&i| (data.train[i].pixels.as_slice(), data.train[i].label))
                .collect();
            grad.iter_mut().for_each(|g| *g = 0.0);
            let stats = net.loss_and_gradient(&batch, &mut grad, Some(&mut rng));
            if !stats.loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::Diverged { epoch });
            }
            correct += stats.correct;
            optimizer.step(&mut net.theta, &grad);
        }
        if net.theta.iter().any(|t| !t.is_finite()) {
            return Err(TrainError::Diverged { epoch });
        }

        let validation_accuracy = accuracy(&net, &data.validation);
        if validation_accuracy > best_val {
            best_val = validation_accuracy;
            best_epoch = epoch;
            best_theta.copy_from_slice(&net.theta);
        }
        epochs.push(EpochStats {
            epoch,
            train_accuracy: 100.0 * correct as f64 / data.train.len().max(1) as f64,
            validation_accuracy,
            learning_rate: lr,
        });
        optimizer.set_learning_rate(lr_schedule(optimizer.kind(), epoch, lr));
        if early_stop(&epochs) {
            break;
        }
    }

    net.theta = best_theta;
    Ok(TrainReport {
        best_validation_accuracy: best_val,
        test_accuracy: accuracy(&net, &data.test),
        best_epoch,
        epochs,
    })
}
