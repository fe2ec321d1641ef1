//! Mesh adaptive direct search over block-structured points.
//!
//! Each iteration tries a speculative search candidate, then polls the mesh
//! around the incumbent, then (on poll failure) scans the categorical
//! neighbors. The mesh is anisotropic: every non-categorical coordinate of
//! the current search space carries its own mesh and poll size.

use std::collections::HashMap;
use std::fmt;
use std::thread;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::blackbox::{Blackbox, EvalRecord, EvalStatus};
use crate::categorical::{extended_poll, NeighborKind};
use crate::hpspace::{validate, HyperparameterDef, Point, Slot, SpaceSpec, Violation};

pub const DEFAULT_MIN_POLL_SIZE: f64 = 1e-6;

/// Poll size a coordinate starts with: a tenth of its range, at least 1 for
/// integer-valued coordinates.
pub fn initial_poll_size(def: &HyperparameterDef) -> f64 {
    let width = def.upper - def.lower;
    let size = width / 10.0;
    if def.kind.is_integral() {
        size.max(1.0)
    } else if size > 0.0 {
        size
    } else {
        1.0
    }
}

/// Mesh and poll sizes of every non-categorical coordinate of a point.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshState {
    /// Coordinates in encoding order; categorical headers are excluded.
    pub slots: Vec<Slot>,
    pub mesh_size: Vec<f64>,
    pub poll_size: Vec<f64>,
    pub initial_poll_size: Vec<f64>,
    /// Consecutive successful iterations.
    pub success_streak: usize,
}

impl MeshState {
    pub fn new(p: &Point, spec: &SpaceSpec) -> Self {
        let slots: Vec<Slot> = p.layout().into_iter().filter(|s| !s.is_categorical()).collect();
        let initial: Vec<f64> = slots.iter().map(|&s| initial_poll_size(spec.def_for(s))).collect();
        let mut mesh = MeshState {
            slots,
            mesh_size: vec![0.0; initial.len()],
            poll_size: initial.clone(),
            initial_poll_size: initial,
            success_streak: 0,
        };
        mesh.refresh_mesh_size();
        mesh
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    fn refresh_mesh_size(&mut self) {
        for (m, &p) in self.mesh_size.iter_mut().zip(&self.poll_size) {
            *m = p.min(p * p);
        }
    }

    /// Coarsen on success (capped at the initial poll size), refine on failure.
    pub fn update(&mut self, success: bool) {
        for (p, &cap) in self.poll_size.iter_mut().zip(&self.initial_poll_size) {
            *p = if success { (2.0 * *p).min(cap) } else { *p / 2.0 };
        }
        self.success_streak = if success { self.success_streak + 1 } else { 0 };
        self.refresh_mesh_size();
    }

    /// Whether each coordinate may move under `spec`.
    pub fn free_mask(&self, spec: &SpaceSpec) -> Vec<bool> {
        self.slots.iter().map(|&s| spec.def_for(s).is_free()).collect()
    }

    /// Largest poll size among the free coordinates.
    pub fn max_free_poll_size(&self, spec: &SpaceSpec) -> Option<f64> {
        self.free_mask(spec)
            .into_iter()
            .zip(&self.poll_size)
            .filter(|(free, _)| *free)
            .map(|(_, &p)| p)
            .reduce(f64::max)
    }

    /// Mesh for `target`, a neighbor of the point this mesh belongs to.
    /// Coordinates that survive the structural change keep their sizes; new
    /// ones (and the optimizer's parameters after a switch) start fresh.
    pub fn remap(&self, kind: NeighborKind, target: &Point, spec: &SpaceSpec) -> MeshState {
        let index: HashMap<Slot, usize> = self.slots.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let mut next = MeshState::new(target, spec);
        for (i, &slot) in next.slots.iter().enumerate() {
            let source = match (kind, slot) {
                (NeighborKind::FcAdd, Slot::Fc { layer }) => layer.checked_sub(1).map(|l| Slot::Fc { layer: l }),
                (NeighborKind::FcSub, Slot::Fc { layer }) => Some(Slot::Fc { layer: layer + 1 }),
                (NeighborKind::OptimizerCycle, Slot::OptParam(_)) => None,
                _ => Some(slot),
            };
            if let Some(&j) = source.and_then(|s| index.get(&s)) {
                next.poll_size[i] = self.poll_size[j];
            }
        }
        next.success_streak = self.success_streak;
        next.refresh_mesh_size();
        next
    }
}

/// Result of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum IterationOutcome {
    SearchSuccess(Point),
    PollSuccess(Point),
    ExtendedPollSuccess { point: Point, kind: NeighborKind },
    Failure,
}

impl IterationOutcome {
    pub fn is_success(&self) -> bool {
        !matches!(self, IterationOutcome::Failure)
    }

    pub fn improving_point(&self) -> Option<&Point> {
        match self {
            IterationOutcome::SearchSuccess(p) | IterationOutcome::PollSuccess(p) => Some(p),
            IterationOutcome::ExtendedPollSuccess { point, .. } => Some(point),
            IterationOutcome::Failure => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            IterationOutcome::SearchSuccess(_) => "search success",
            IterationOutcome::PollSuccess(_) => "poll success",
            IterationOutcome::ExtendedPollSuccess { .. } => "extended poll success",
            IterationOutcome::Failure => "failure",
        }
    }
}

/// Mesh after an iteration whose structure did not change.
pub fn update_mesh(mesh: &MeshState, outcome: &IterationOutcome) -> MeshState {
    let mut next = mesh.clone();
    next.update(outcome.is_success());
    next
}

fn cache_key(values: &[f64]) -> Vec<u64> {
    // -0.0 and 0.0 denote the same point.
    values.iter().map(|&v| if v == 0.0 { 0 } else { v.to_bits() }).collect()
}

/// Every evaluation of a run, indexed by flat encoding. Since the headers
/// lead their blocks, the encoding identifies the search space as well.
#[derive(Debug, Clone, Default)]
pub struct Cache {
    index: HashMap<Vec<u64>, usize>,
    records: Vec<EvalRecord>,
}

impl Cache {
    pub fn new() -> Self {
        Cache::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.contains_encoding(&p.encode())
    }

    pub fn contains_encoding(&self, values: &[f64]) -> bool {
        self.index.contains_key(&cache_key(values))
    }

    pub fn get(&self, p: &Point) -> Option<&EvalRecord> {
        self.index.get(&cache_key(&p.encode())).map(|&i| &self.records[i])
    }

    /// Store a record; a point already present is left untouched.
    pub fn insert(&mut self, record: EvalRecord) -> bool {
        let key = cache_key(&record.point.encode());
        if self.index.contains_key(&key) {
            return false;
        }
        self.index.insert(key, self.records.len());
        self.records.push(record);
        true
    }

    /// Records in evaluation order.
    pub fn records(&self) -> &[EvalRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<EvalRecord> {
        self.records
    }
}

/// Snap a coordinate to an admissible value: integers rounded, then clipped.
fn admissible(value: f64, def: &HyperparameterDef) -> f64 {
    let v = if def.kind.is_integral() { value.round() } else { value };
    v.clamp(def.lower, def.upper)
}

fn point_with(incumbent: &Point, base: &[f64], values: &[f64], positions: &[usize]) -> Option<Point> {
    let mut flat = base.to_vec();
    for (&pos, &v) in positions.iter().zip(values) {
        flat[pos] = v;
    }
    Point::decode(&flat, incumbent.n_conv(), incumbent.n_fc()).ok()
}

/// Flat positions of the mesh coordinates in the point's encoding.
fn mesh_positions(p: &Point) -> Vec<usize> {
    p.layout()
        .into_iter()
        .enumerate()
        .filter(|(_, s)| !s.is_categorical())
        .map(|(i, _)| i)
        .collect()
}

/// Directions `±h_j` where `h_j` are the columns of the Householder matrix
/// of a random unit vector, each scaled to unit infinity norm.
pub fn householder_directions(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    if n == 0 {
        return Vec::new();
    }
    let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    } else {
        v[0] = 1.0;
    }
    let mut columns: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut h: Vec<f64> = (0..n).map(|i| -2.0 * v[i] * v[j]).collect();
            h[j] += 1.0;
            let scale = h.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            h.iter_mut().for_each(|x| *x /= scale);
            h
        })
        .collect();
    let negated: Vec<Vec<f64>> = columns.iter().map(|h| h.iter().map(|x| -x).collect()).collect();
    columns.extend(negated);
    columns
}

/// Mesh points around the incumbent along a fresh positive spanning set.
///
/// Only free coordinates move. Candidates equal to the incumbent, to an
/// earlier candidate, or already in `cache` are dropped.
pub fn generate_poll_set(
    incumbent: &Point,
    mesh: &MeshState,
    spec: &SpaceSpec,
    rng_seed: u64,
    cache: &Cache,
) -> Vec<Point> {
    let base = incumbent.encode();
    let positions = mesh_positions(incumbent);
    debug_assert_eq!(positions.len(), mesh.len());
    let free: Vec<usize> = mesh
        .free_mask(spec)
        .iter()
        .enumerate()
        .filter(|(_, f)| **f)
        .map(|(i, _)| i)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    let mut seen: Vec<Vec<u64>> = vec![cache_key(&base)];
    let mut out = Vec::new();
    for dir in householder_directions(free.len(), &mut rng) {
        let mut values: Vec<f64> = positions.iter().map(|&p| base[p]).collect();
        for (&i, &d) in free.iter().zip(&dir) {
            let (poll, mesh_size) = (mesh.poll_size[i], mesh.mesh_size[i]);
            let reach = (poll / mesh_size + 1e-9).floor();
            let step = (poll * d / mesh_size).round().clamp(-reach, reach);
            values[i] = admissible(values[i] + step * mesh_size, spec.def_for(mesh.slots[i]));
        }
        let Some(candidate) = point_with(incumbent, &base, &values, &positions) else {
            continue;
        };
        let key = cache_key(&candidate.encode());
        if seen.contains(&key) || cache.contains(&candidate) {
            continue;
        }
        seen.push(key);
        out.push(candidate);
    }
    out
}

/// Speculative candidate `incumbent + 2 d` along the last successful
/// displacement `d` (mesh coordinates only), snapped to the mesh.
pub fn search_step(
    incumbent: &Point,
    last_success_direction: Option<&[f64]>,
    mesh: &MeshState,
    spec: &SpaceSpec,
) -> Option<Point> {
    let direction = last_success_direction?;
    if direction.len() != mesh.len() {
        return None;
    }
    let base = incumbent.encode();
    let positions = mesh_positions(incumbent);
    let free = mesh.free_mask(spec);
    let values: Vec<f64> = positions
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            if !free[i] {
                return base[p];
            }
            let steps = (2.0 * direction[i] / mesh.mesh_size[i]).round();
            admissible(base[p] + steps * mesh.mesh_size[i], spec.def_for(mesh.slots[i]))
        })
        .collect();
    let candidate = point_with(incumbent, &base, &values, &positions)?;
    (candidate != *incumbent).then_some(candidate)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineOptions {
    pub max_evaluations: usize,
    pub seed: u64,
    pub min_poll_size: f64,
    /// Whether to try the speculative search candidate.
    pub search: bool,
    /// Poll candidates evaluated concurrently per batch when the blackbox is
    /// reentrant; 1 evaluates one at a time.
    pub parallel_batch: usize,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            max_evaluations: 100,
            seed: 0,
            min_poll_size: DEFAULT_MIN_POLL_SIZE,
            search: true,
            parallel_batch: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Budget,
    MeshConverged,
    /// No free coordinate and no unevaluated neighbor remains.
    Exhausted,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Budget => "evaluation budget reached",
            StopReason::MeshConverged => "poll size below tolerance",
            StopReason::Exhausted => "no unevaluated candidate left",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub outcome: IterationOutcome,
    /// Poll and mesh sizes after the update of this iteration.
    pub poll_size: Vec<f64>,
    pub mesh_size: Vec<f64>,
    pub evaluations: usize,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    /// Best successfully evaluated point, if any.
    pub best: Option<EvalRecord>,
    pub history: Vec<EvalRecord>,
    pub iterations: Vec<IterationRecord>,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunError {
    #[error("evaluation budget must be at least 1")]
    NoBudget,
    #[error("initial point violates the search space: {}", list(.0))]
    InvalidInitialPoint(Vec<Violation>),
    #[error("evaluation of the initial point failed: {0}")]
    InitialEvaluationFailed(String),
}

fn list(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// Per-evaluation callback: the new record and the incumbent objective
/// after it.
pub trait Observer {
    fn on_evaluation(&mut self, record: &EvalRecord, incumbent: f64);
}

impl<F: FnMut(&EvalRecord, f64)> Observer for F {
    fn on_evaluation(&mut self, record: &EvalRecord, incumbent: f64) {
        self(record, incumbent)
    }
}

pub struct Engine<'a, B: Blackbox + ?Sized> {
    blackbox: &'a B,
    spec: &'a SpaceSpec,
    options: EngineOptions,
}

struct RunState<'o> {
    cache: Cache,
    incumbent: Point,
    incumbent_value: f64,
    best: Option<usize>,
    observer: &'o mut dyn Observer,
}

impl<'a, B: Blackbox + ?Sized> Engine<'a, B> {
    pub fn new(blackbox: &'a B, spec: &'a SpaceSpec, options: EngineOptions) -> Self {
        Engine {
            blackbox,
            spec,
            options,
        }
    }

    pub fn options(&self) -> &EngineOptions {
        &self.options
    }

    fn evaluate_one(&self, p: &Point, eval_index: usize) -> EvalRecord {
        let start = Instant::now();
        let e = self.blackbox.evaluate(p);
        let (objective, status) = match e.status {
            EvalStatus::Ok if e.objective.is_nan() => (f64::INFINITY, EvalStatus::EvalFailed),
            EvalStatus::Ok => (e.objective, EvalStatus::Ok),
            s => (f64::INFINITY, s),
        };
        if let Some(message) = &e.message {
            if status != EvalStatus::Ok {
                log::warn!("evaluation {eval_index} {status}: {message}");
            }
        }
        EvalRecord {
            point: p.clone(),
            objective,
            status,
            eval_index,
            wall_time: start.elapsed().as_secs_f64(),
            epoch_log: e.epoch_log,
        }
    }

    /// Evaluate as many of `points` as the budget allows; returns records in
    /// input order.
    fn evaluate_batch(&self, points: &[Point], first_index: usize) -> Vec<EvalRecord> {
        let parallel = self.options.parallel_batch > 1 && self.blackbox.reentrant() && points.len() > 1;
        if !parallel {
            return points
                .iter()
                .enumerate()
                .map(|(i, p)| self.evaluate_one(p, first_index + i))
                .collect();
        }
        thread::scope(|scope| {
            let handles: Vec<_> = points
                .iter()
                .enumerate()
                .map(|(i, p)| scope.spawn(move || self.evaluate_one(p, first_index + i)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("evaluation thread panicked"))
                .collect()
        })
    }

    fn remaining(&self, state: &RunState) -> usize {
        self.options.max_evaluations.saturating_sub(state.cache.len())
    }

    /// Record an evaluation; returns whether it improved the incumbent.
    fn accept(&self, state: &mut RunState, record: EvalRecord) -> bool {
        let improved = record.status == EvalStatus::Ok && record.objective < state.incumbent_value;
        if improved {
            state.incumbent = record.point.clone();
            state.incumbent_value = record.objective;
            state.best = Some(state.cache.len());
        }
        state.observer.on_evaluation(&record, state.incumbent_value);
        state.cache.insert(record);
        improved
    }

    /// Opportunistic scan of `candidates` in order.
    fn scan(&self, state: &mut RunState, candidates: Vec<Point>) -> (Option<Point>, usize) {
        let width = if self.blackbox.reentrant() {
            self.options.parallel_batch.max(1)
        } else {
            1
        };
        let mut evaluated = 0;
        let mut pending = candidates.as_slice();
        while !pending.is_empty() {
            let take = width.min(pending.len()).min(self.remaining(state));
            if take == 0 {
                break;
            }
            let (chunk, rest) = pending.split_at(take);
            pending = rest;
            let mut winner = None;
            for record in self.evaluate_batch(chunk, state.cache.len() + 1) {
                evaluated += 1;
                let point = record.point.clone();
                if self.accept(state, record) && winner.is_none() {
                    winner = Some(point);
                }
            }
            if winner.is_some() {
                // Later chunk members may have improved further.
                return (Some(state.incumbent.clone()), evaluated);
            }
        }
        (None, evaluated)
    }

    /// Run from `initial` until the budget or the mesh tolerance is reached.
    pub fn run(&self, initial: Point, observer: &mut dyn Observer) -> Result<RunResult, RunError> {
        if self.options.max_evaluations == 0 {
            return Err(RunError::NoBudget);
        }
        let violations = validate(&initial, self.spec);
        if !violations.is_empty() {
            return Err(RunError::InvalidInitialPoint(violations));
        }

        let mut state = RunState {
            cache: Cache::new(),
            incumbent: initial.clone(),
            incumbent_value: f64::INFINITY,
            best: None,
            observer,
        };
        let first = self.evaluate_one(&initial, 1);
        match first.status {
            EvalStatus::EvalFailed => {
                return Err(RunError::InitialEvaluationFailed(format!(
                    "blackbox failed on {initial}"
                )))
            }
            EvalStatus::Infeasible => log::warn!("initial point is infeasible; continuing from it"),
            EvalStatus::Ok => {}
        }
        self.accept(&mut state, first);

        let mut mesh = MeshState::new(&initial, self.spec);
        let mut last_direction: Option<Vec<f64>> = None;
        let mut iterations = Vec::new();

        let stop_reason = loop {
            if self.remaining(&state) == 0 {
                break StopReason::Budget;
            }
            let max_poll = mesh.max_free_poll_size(self.spec);
            if max_poll.is_some_and(|m| m < self.options.min_poll_size) {
                break StopReason::MeshConverged;
            }
            let k = iterations.len() as u64;
            let before = state.cache.len();
            let old = state.incumbent.clone();

            let mut outcome = IterationOutcome::Failure;
            if self.options.search {
                if let Some(c) = search_step(&old, last_direction.as_deref(), &mesh, self.spec) {
                    if !state.cache.contains(&c) {
                        if let (Some(p), _) = self.scan(&mut state, vec![c]) {
                            outcome = IterationOutcome::SearchSuccess(p);
                        }
                    }
                }
            }
            if !outcome.is_success() {
                let seed = self.options.seed ^ (k + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                let poll = generate_poll_set(&old, &mesh, self.spec, seed, &state.cache);
                if let (Some(p), _) = self.scan(&mut state, poll) {
                    outcome = IterationOutcome::PollSuccess(p);
                }
            }
            if !outcome.is_success() && self.remaining(&state) > 0 {
                let value = state.incumbent_value;
                let found = extended_poll(
                    &old,
                    value,
                    |p| {
                        if let Some(r) = state.cache.get(p) {
                            return Some(r.objective);
                        }
                        if self.remaining(&state) == 0 {
                            return None;
                        }
                        let record = self.evaluate_one(p, state.cache.len() + 1);
                        let objective = record.objective;
                        self.accept(&mut state, record);
                        Some(objective)
                    },
                    self.spec,
                );
                if let Some((neighbor, _)) = found {
                    outcome = IterationOutcome::ExtendedPollSuccess {
                        point: neighbor.point,
                        kind: neighbor.kind,
                    };
                }
            }

            match &outcome {
                IterationOutcome::ExtendedPollSuccess { point, kind } => {
                    mesh = mesh.remap(*kind, point, self.spec);
                    mesh.update(true);
                    last_direction = None;
                }
                IterationOutcome::SearchSuccess(p) | IterationOutcome::PollSuccess(p) => {
                    let (a, b) = (old.encode(), p.encode());
                    last_direction = Some(mesh_positions(&old).iter().map(|&i| b[i] - a[i]).collect());
                    mesh.update(true);
                }
                IterationOutcome::Failure => {
                    last_direction = None;
                    mesh.update(false);
                }
            }
            let evaluations = state.cache.len() - before;
            iterations.push(IterationRecord {
                outcome,
                poll_size: mesh.poll_size.clone(),
                mesh_size: mesh.mesh_size.clone(),
                evaluations,
            });
            if evaluations == 0 && mesh.max_free_poll_size(self.spec).is_none() {
                break StopReason::Exhausted;
            }
        };

        let best = state.best.map(|i| state.cache.records()[i].clone());
        Ok(RunResult {
            best,
            history: state.cache.into_records(),
            iterations,
            stop_reason,
        })
    }
}

/// Convenience wrapper without an observer.
pub fn minimize<B: Blackbox + ?Sized>(
    blackbox: &B,
    spec: &SpaceSpec,
    initial: Point,
    options: EngineOptions,
) -> Result<RunResult, RunError> {
    Engine::new(blackbox, spec, options).run(initial, &mut |_: &EvalRecord, _: f64| {})
}
