//! Evaluators mapping a point to an objective value.
//!
//! Three kinds exist: an external command speaking the file/stdout protocol,
//! closed-form test functions, and a built-in trainer that builds, trains
//! and tests a small network on generated data. Training objectives are
//! `100 - test accuracy` so that every evaluator is minimized.

pub mod analytic;
pub mod dataset;
pub mod external;
pub mod network;
pub mod optim;
pub mod train;

use std::fmt;

pub use analytic::AnalyticFunction;
pub use dataset::{BuiltinDataset, Sample, ToyDataset};
pub use external::ExternalCommand;
pub use network::NetworkParams;
pub use train::{early_stop, lr_schedule, train, EpochStats, TrainReport, TrainSettings};

use crate::hpspace::{architecture_feasible, Point, SpaceSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EvalStatus {
    Ok,
    Infeasible,
    EvalFailed,
}

impl fmt::Display for EvalStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalStatus::Ok => "ok",
            EvalStatus::Infeasible => "infeasible",
            EvalStatus::EvalFailed => "failed",
        })
    }
}

/// Result of one blackbox call.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub objective: f64,
    pub status: EvalStatus,
    pub epoch_log: Vec<EpochStats>,
    pub message: Option<String>,
}

impl Evaluation {
    pub fn ok(objective: f64) -> Self {
        Evaluation {
            objective,
            status: EvalStatus::Ok,
            epoch_log: Vec::new(),
            message: None,
        }
    }

    /// Infeasible and failed evaluations always carry `+inf`.
    pub fn failed(status: EvalStatus, message: impl Into<String>) -> Self {
        Evaluation {
            objective: f64::INFINITY,
            status,
            epoch_log: Vec::new(),
            message: Some(message.into()),
        }
    }
}

/// Evaluated point as stored in the run history.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub point: Point,
    pub objective: f64,
    pub status: EvalStatus,
    /// 1-based blackbox call number.
    pub eval_index: usize,
    /// Seconds spent in the blackbox.
    pub wall_time: f64,
    pub epoch_log: Vec<EpochStats>,
}

/// Anything that can score a point.
pub trait Blackbox: Sync {
    fn evaluate(&self, point: &Point) -> Evaluation;

    /// Whether concurrent calls are safe.
    fn reentrant(&self) -> bool {
        true
    }
}

/// Blackbox backed by a closure returning the objective.
pub struct FnBlackbox<F>(pub F);

impl<F> Blackbox for FnBlackbox<F>
where
    F: Fn(&Point) -> f64 + Sync,
{
    fn evaluate(&self, point: &Point) -> Evaluation {
        let v = (self.0)(point);
        if v.is_nan() {
            Evaluation::failed(EvalStatus::EvalFailed, "objective is NaN")
        } else {
            Evaluation::ok(v)
        }
    }
}

/// Built-in trainer on a generated data set.
#[derive(Debug, Clone)]
pub struct ToyTrainer {
    pub dataset: ToyDataset,
    pub settings: TrainSettings,
}

impl ToyTrainer {
    pub fn new(dataset: ToyDataset, settings: TrainSettings) -> Self {
        ToyTrainer { dataset, settings }
    }

    pub fn evaluate(&self, p: &Point) -> Evaluation {
        let feasibility = architecture_feasible(p, self.dataset.image_side);
        if !feasibility.feasible {
            let message = match feasibility.blocked_layer {
                Some(layer) => format!("image collapses at convolutional layer {}", layer + 1),
                None => "architecture has no input features".to_string(),
            };
            return Evaluation::failed(EvalStatus::Infeasible, message);
        }
        match train(p, &self.dataset, &self.settings) {
            Ok(report) => Evaluation {
                objective: 100.0 - report.test_accuracy,
                status: EvalStatus::Ok,
                epoch_log: report.epochs,
                message: None,
            },
            Err(e) => Evaluation::failed(EvalStatus::EvalFailed, e.to_string()),
        }
    }
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Evaluator {
    External(ExternalCommand),
    Analytic {
        function: AnalyticFunction,
        space: SpaceSpec,
    },
    ToyTrainer(ToyTrainer),
}

impl Blackbox for Evaluator {
    fn evaluate(&self, point: &Point) -> Evaluation {
        match self {
            Evaluator::External(cmd) => cmd.evaluate(point),
            Evaluator::Analytic { function, space } => Evaluation::ok(function.value(point, space)),
            Evaluator::ToyTrainer(trainer) => trainer.evaluate(point),
        }
    }

    fn reentrant(&self) -> bool {
        match self {
            Evaluator::External(cmd) => cmd.reentrant,
            _ => true,
        }
    }
}
