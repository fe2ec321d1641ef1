//! Mixed-variable mesh adaptive direct search for neural network
//! hyperparameters.
//!
//! A point is a block-structured vector: a convolutional block, a fully
//! connected block and an optimizer block, each led by a categorical header
//! that fixes how many associated variables follow, plus a few scalars. The
//! engine polls the mesh around the incumbent in its current search space
//! and moves between spaces through categorical neighbors.

pub mod blackbox;
pub mod categorical;
pub mod hpspace;
pub mod mads;
pub mod paramfile;

pub use blackbox::{Blackbox, EvalRecord, EvalStatus, Evaluation, Evaluator, FnBlackbox};
pub use categorical::{admissible_neighbors, extended_poll, neighbor_set, Neighbor, NeighborKind, NeighborSet};
pub use hpspace::{
    architecture_feasible, default_point, dimension, format_flat, validate, Activation, ConvLayer, Keyword,
    OptimizerBlock, OptimizerKind, Point, SpaceSpec,
};
pub use mads::{minimize, Cache, Engine, EngineOptions, IterationOutcome, MeshState, RunResult, StopReason};
pub use paramfile::{parse, Dataset, ParseErrors, RunConfig};
