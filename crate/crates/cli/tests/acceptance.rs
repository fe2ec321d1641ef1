//! Acceptance suite: one PASS/FAIL line per criterion, each with a runtime
//! limit. Pass a substring (for example `AC4`) to run a subset.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use mads_core::blackbox::network::NetworkParams;
use mads_core::blackbox::optim::{regularized_gradient, regularized_loss};
use mads_core::blackbox::{train, BuiltinDataset, EvalStatus, Evaluator, ToyDataset, ToyTrainer, TrainSettings};
use mads_core::categorical::{conv_neighbors, fc_neighbors, optimizer_neighbor};
use mads_core::hpspace::{
    architecture_feasible, default_point, Activation, ConvLayer, Keyword, OptimizerBlock, OptimizerKind, Point,
    SpaceSpec,
};
use mads_core::mads::{minimize, update_mesh, EngineOptions, IterationOutcome, MeshState};
use mads_core::paramfile::{parse, Dataset, ParseErrorKind, RemainingPolicy};
use mads_core::{admissible_neighbors, Blackbox, FnBlackbox, NeighborKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($msg)+));
        }
    };
}

fn params(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../params").join(name)
}

fn conv_block(p: &Point) -> Vec<f64> {
    p.encode()[..1 + 5 * p.n_conv()].to_vec()
}

fn fc_block(p: &Point) -> Vec<f64> {
    let start = 1 + 5 * p.n_conv();
    p.encode()[start..start + 1 + p.n_fc()].to_vec()
}

fn neighbor_golden() -> Outcome {
    let spec = SpaceSpec::default();
    let mut p = default_point(&spec);
    p.conv = vec![ConvLayer::new(16, 5, 1, 1, false), ConvLayer::new(7, 3, 1, 1, true)];
    p.fc = vec![1200, 512, 20];

    let conv = conv_neighbors(&p, &spec);
    let expected_conv: [(NeighborKind, Vec<f64>); 2] = [
        (
            NeighborKind::ConvAdd,
            vec![3., 16., 5., 1., 1., 0., 7., 3., 1., 1., 1., 7., 3., 1., 1., 1.],
        ),
        (NeighborKind::ConvSub, vec![1., 16., 5., 1., 1., 0.]),
    ];
    ensure!(conv.len() == 2, "expected 2 conv neighbors, got {}", conv.len());
    for (n, (kind, block)) in conv.iter().zip(&expected_conv) {
        ensure!(
            n.kind == *kind && conv_block(&n.point) == *block,
            "{} neighbor {}",
            kind,
            n.point
        );
        ensure!(fc_block(&n.point) == fc_block(&p), "{kind} changed the fc block");
    }

    let fc = fc_neighbors(&p, &spec);
    let expected_fc: [(NeighborKind, Vec<f64>); 2] = [
        (NeighborKind::FcAdd, vec![4., 1200., 1200., 512., 20.]),
        (NeighborKind::FcSub, vec![2., 512., 20.]),
    ];
    ensure!(fc.len() == 2, "expected 2 fc neighbors, got {}", fc.len());
    for (n, (kind, block)) in fc.iter().zip(&expected_fc) {
        ensure!(
            n.kind == *kind && fc_block(&n.point) == *block,
            "{} neighbor {}",
            kind,
            n.point
        );
        ensure!(conv_block(&n.point) == conv_block(&p), "{kind} changed the conv block");
    }

    let defaults = [
        Keyword::OptParam1,
        Keyword::OptParam2,
        Keyword::OptParam3,
        Keyword::OptParam4,
    ]
    .map(|k| k.table_default().0);
    let mut q = p.clone();
    q.optimizer = OptimizerBlock {
        kind: OptimizerKind::Sgd,
        params: [0.2, 0.95, 1e-4, 0.03],
    };
    let mut codes = vec![q.optimizer.kind.code()];
    for _ in 0..4 {
        q = optimizer_neighbor(&q, &spec);
        codes.push(q.optimizer.kind.code());
        ensure!(
            q.optimizer.params == defaults,
            "parameters {:?} are not the defaults",
            q.optimizer.params
        );
        ensure!(
            conv_block(&q) == conv_block(&p) && fc_block(&q) == fc_block(&p),
            "optimizer cycle moved a block"
        );
    }
    ensure!(codes == [1, 2, 3, 4, 1], "optimizer cycle {codes:?}");
    Ok("conv, fc and optimizer neighbors match exactly".into())
}

fn dimension_formula() -> Outcome {
    let d = default_point(&SpaceSpec::default());
    ensure!(
        d.encode().len() == 22,
        "default point has {} variables",
        d.encode().len()
    );
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let (n1, n2) = (rng.random_range(0..=40usize), rng.random_range(0..=60usize));
        let mut p = d.clone();
        p.conv = (0..n1)
            .map(|_| {
                ConvLayer::new(
                    rng.random_range(1..50),
                    rng.random_range(1..8),
                    1,
                    0,
                    rng.random_bool(0.5),
                )
            })
            .collect();
        p.fc = (0..n2).map(|_| rng.random_range(1..1000)).collect();
        let len = p.encode().len();
        ensure!(len == 5 * n1 + n2 + 10, "({n1}, {n2}) encodes to {len} values");
        ensure!(
            p.dimension() == len,
            "dimension() disagrees with the encoding for ({n1}, {n2})"
        );
    }
    Ok("22 variables by default; 5n1+n2+10 on 200 random shapes".into())
}

fn mesh_invariants() -> Outcome {
    let spec = SpaceSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut updates = 0;
    for sequence in 0..1000 {
        let mut p = default_point(&spec);
        p.conv = vec![ConvLayer::new(6, 5, 1, 0, false); rng.random_range(0..4)];
        p.fc = vec![128; rng.random_range(0..4)];
        let mut mesh = MeshState::new(&p, &spec);
        for _ in 0..rng.random_range(1..120) {
            match rng.random_range(0..4) {
                0 => mesh = update_mesh(&mesh, &IterationOutcome::Failure),
                1 => mesh = update_mesh(&mesh, &IterationOutcome::PollSuccess(p.clone())),
                2 => mesh = update_mesh(&mesh, &IterationOutcome::SearchSuccess(p.clone())),
                _ => {
                    let neighbors: Vec<_> = admissible_neighbors(&p, &spec).iter().cloned().collect();
                    let n = &neighbors[rng.random_range(0..neighbors.len())];
                    mesh = mesh.remap(n.kind, &n.point, &spec);
                    mesh.update(true);
                    p = n.point.clone();
                }
            }
            updates += 1;
            let fresh = MeshState::new(&p, &spec);
            ensure!(
                mesh.len() == fresh.len(),
                "sequence {sequence}: mesh does not match the point"
            );
            for i in 0..mesh.len() {
                let (m, d, cap) = (mesh.mesh_size[i], mesh.poll_size[i], fresh.initial_poll_size[i]);
                ensure!(m <= d, "sequence {sequence}: mesh {m} above poll {d}");
                ensure!(d <= cap, "sequence {sequence}: poll {d} above cap {cap}");
            }
        }
    }
    Ok(format!("1000 sequences, {updates} updates"))
}

/// Space where only the given real keywords move in [0, 1], starting at 0.
fn real_space(keys: &[Keyword]) -> SpaceSpec {
    let mut spec = SpaceSpec::default()
        .all_fixed()
        .with_default(Keyword::NumConLayers, 0.0)
        .with_default(Keyword::NumFcLayers, 0.0);
    for &k in keys {
        spec = spec.with_bounds(k, 0.0, 1.0).with_default(k, 0.0).with_fixed(k, false);
    }
    spec
}

const MIXED: [(f64, f64, f64); 3] = [(0.2, 0.253, 0.701), (0.0, 0.347, 0.612), (0.5, 0.05, 0.8)];

fn convergence() -> Outcome {
    let keys = [
        Keyword::OptParam1,
        Keyword::OptParam2,
        Keyword::OptParam3,
        Keyword::OptParam4,
        Keyword::DropoutRate,
    ];
    let spec = real_space(&keys);
    let target = [0.62, 0.27, 0.81, 0.44, 0.35];
    let quadratic = FnBlackbox(move |p: &Point| {
        let o = p.optimizer.params;
        let x = [o[0], o[1], o[2], o[3], p.dropout_rate];
        x.iter()
            .zip(&target)
            .enumerate()
            .map(|(i, (a, b))| (i + 1) as f64 * (a - b).powi(2))
            .sum()
    });
    let opts = EngineOptions {
        max_evaluations: 750,
        seed: 7,
        ..Default::default()
    };
    let r = minimize(&quadratic, &spec, default_point(&spec), opts).map_err(|e| e.to_string())?;
    let best = r.best.map(|b| b.objective).unwrap_or(f64::INFINITY);
    ensure!(r.history.len() <= 750, "budget exceeded");
    ensure!(best < 1e-3, "5-D quadratic best {best}");

    let mut oracle = f64::INFINITY;
    for (offset, a, b) in MIXED {
        for i in 0..=100 {
            for j in 0..=100 {
                let (x, y) = (i as f64 / 100.0, j as f64 / 100.0);
                oracle = oracle.min(offset + (x - a).powi(2) + (y - b).powi(2));
            }
        }
    }
    let mixed = FnBlackbox(|p: &Point| {
        let (offset, a, b) = MIXED[p.optimizer.kind.code() as usize - 1];
        let [x, y, ..] = p.optimizer.params;
        offset + (x - a).powi(2) + (y - b).powi(2)
    });
    let spec = real_space(&keys[..2])
        .with_default(Keyword::OptParam1, 0.1)
        .with_default(Keyword::OptParam2, 0.9)
        .with_bounds(Keyword::OptimizerChoice, 1.0, 3.0)
        .with_fixed(Keyword::OptimizerChoice, false);
    let opts = EngineOptions {
        max_evaluations: 500,
        ..Default::default()
    };
    let r = minimize(&mixed, &spec, default_point(&spec), opts).map_err(|e| e.to_string())?;
    let mixed_best = r.best.map(|b| b.objective).unwrap_or(f64::INFINITY);
    ensure!(
        mixed_best <= oracle + 1e-2,
        "mixed best {mixed_best} vs oracle {oracle}"
    );
    Ok(format!(
        "quadratic {best:.2e}; mixed {mixed_best:.5} vs oracle {oracle:.5}"
    ))
}

fn feasibility() -> Outcome {
    let mut p = default_point(&SpaceSpec::default());
    p.conv = vec![ConvLayer::new(6, 5, 1, 0, false); 7];
    ensure!(
        !architecture_feasible(&p, 28).feasible,
        "seven 5x5 layers accepted on 28x28"
    );
    let trainer = Evaluator::ToyTrainer(ToyTrainer::new(
        ToyDataset::generate(10, 28, 1),
        TrainSettings::default(),
    ));
    let start = Instant::now();
    let e = trainer.evaluate(&p);
    ensure!(e.status == EvalStatus::Infeasible, "evaluator returned {}", e.status);
    ensure!(
        e.epoch_log.is_empty() && start.elapsed() < Duration::from_millis(200),
        "training ran before rejection"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    while checked < 100 {
        let side = rng.random_range(4..29usize);
        let mut q = p.clone();
        q.conv = (0..rng.random_range(1..5))
            .map(|_| {
                ConvLayer::new(
                    rng.random_range(1..4),
                    rng.random_range(1..7),
                    rng.random_range(1..4),
                    rng.random_range(0..3),
                    rng.random_bool(0.4),
                )
            })
            .collect();
        q.fc = vec![4];
        let verdict = architecture_feasible(&q, side);
        if !verdict.feasible {
            continue;
        }
        let net = NetworkParams::build(&q, side, 1, 3, &mut rng).map_err(|e| format!("{q}: {e}"))?;
        let sizes = net.forward(&vec![0.25; side * side], None).feature_sizes(&net);
        ensure!(
            sizes == verdict.sizes,
            "{q} on {side}: forward {sizes:?}, predicted {:?}",
            verdict.sizes
        );
        checked += 1;
    }
    Ok("collapse rejected without training; 100 architectures agree".into())
}

fn training_semantics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let side = 6;
    let mut worst: f64 = 0.0;
    for (trial, kind) in [
        OptimizerKind::Sgd,
        OptimizerKind::Adam,
        OptimizerKind::Adagrad,
        OptimizerKind::RmsProp,
    ]
    .into_iter()
    .cycle()
    .take(10)
    .enumerate()
    {
        let mut p = default_point(&SpaceSpec::default());
        p.conv = vec![ConvLayer::new(3, 3, 1, 1, trial % 3 == 0)];
        p.fc = vec![6];
        p.activation = if trial % 2 == 0 {
            Activation::Tanh
        } else {
            Activation::Sigmoid
        };
        p.dropout_rate = 0.0;
        p.optimizer = OptimizerBlock {
            kind,
            params: [0.1, 0.9, 0.5, rng.random_range(0.0..0.1)],
        };
        let wd = p.optimizer.params[3];
        let mut net = NetworkParams::build(&p, side, 1, 4, &mut rng).map_err(|e| e.to_string())?;
        net.theta.iter_mut().for_each(|t| *t = rng.random_range(-1.0..1.0));
        let inputs: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..side * side).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let batch: Vec<(&[f64], usize)> = inputs.iter().enumerate().map(|(i, x)| (x.as_slice(), i % 4)).collect();

        let mut grad = vec![0.0; net.num_params()];
        net.loss_and_gradient(&batch, &mut grad, None);
        let analytic = regularized_gradient(&grad, &net.theta, wd);
        let h = 1e-5;
        let mut probe = net.clone();
        let numeric: Vec<f64> = (0..net.num_params())
            .map(|i| {
                let x = net.theta[i];
                probe.theta[i] = x + h;
                let up = regularized_loss(probe.loss(&batch), &probe.theta, wd);
                probe.theta[i] = x - h;
                let down = regularized_loss(probe.loss(&batch), &probe.theta, wd);
                probe.theta[i] = x;
                (up - down) / (2.0 * h)
            })
            .collect();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let err = norm(&diff) / norm(&analytic).max(norm(&numeric));
        ensure!(err < 1e-4, "trial {trial} ({kind:?}): relative error {err:.2e}");
        worst = worst.max(err);
    }

    let data = BuiltinDataset::ToyMnist.generate();
    let mut p = default_point(&SpaceSpec::new(data.image_side, 1));
    p.conv.clear();
    p.fc = vec![16];
    p.optimizer = OptimizerBlock {
        kind: OptimizerKind::Sgd,
        params: [0.1, 0.0, 0.0, 0.0],
    };
    let report = train(
        &p,
        &data,
        &TrainSettings {
            seed: 0,
            max_epochs: 101,
        },
    )
    .map_err(|e| e.to_string())?;
    let lrs: Vec<f64> = report.epochs.iter().map(|e| e.learning_rate).collect();
    ensure!(lrs.len() == 101, "SGD run stopped after {} epochs", lrs.len());
    ensure!(
        lrs[..100].iter().all(|&lr| lr == 0.1) && lrs[100] == 0.1 / 10.0,
        "learning rates {:?}",
        &lrs[98..]
    );

    let mut p = default_point(&SpaceSpec::new(data.image_side, 1));
    p.optimizer = OptimizerBlock {
        kind: OptimizerKind::Sgd,
        params: [0.0, 0.0, 0.0, 0.0],
    };
    let report = train(&p, &data, &TrainSettings::default()).map_err(|e| e.to_string())?;
    let first = report.epochs[0].validation_accuracy;
    ensure!(first < 20.0, "lr=0 validation accuracy {first}");
    ensure!(
        report.epochs.iter().all(|e| e.validation_accuracy == first),
        "lr=0 accuracy moved"
    );
    ensure!(
        report.epochs.len() == 50,
        "lr=0 run stopped after {} epochs",
        report.epochs.len()
    );
    Ok(format!(
        "gradient error <= {worst:.1e}; SGD 0.1 -> 0.01 at epoch 100; lr=0 stops at 50"
    ))
}

fn parameter_files() -> Outcome {
    let read = |name: &str| fs::read_to_string(params(name)).map_err(|e| format!("{name}: {e}"));
    let first = parse(&read("mnist_first_example.txt")?).map_err(|e| e.to_string())?;
    let d = first.space.def(Keyword::NumConLayers);
    ensure!(d.fixed && d.default == 5.0, "first example: NUM_CON_LAYERS {d:?}");
    let d = first.space.def(Keyword::DropoutRate);
    ensure!((d.lower, d.upper) == (0.3, 0.8), "first example: dropout bounds {d:?}");
    ensure!(
        first.remaining_hps == RemainingPolicy::Fixed,
        "first example: REMAINING_HPS"
    );
    ensure!(
        first.space.def(Keyword::BatchSize).fixed,
        "first example: remaining keywords not fixed"
    );
    ensure!(
        first.dataset == Dataset::Builtin(BuiltinDataset::Mnist),
        "first example: dataset"
    );

    let fc = parse(&read("mnist_fc_optim.txt")?).map_err(|e| e.to_string())?;
    let d = fc.space.def(Keyword::SizeFcLayer);
    ensure!(d.upper == 2000.0 && !d.fixed, "fc example: SIZE_FC_LAYER {d:?}");
    ensure!(fc.remaining_hps == RemainingPolicy::Fixed, "fc example: REMAINING_HPS");
    let movable: Vec<Keyword> = Keyword::ALL.into_iter().filter(|&k| !fc.space.def(k).fixed).collect();
    ensure!(
        movable == [Keyword::NumFcLayers, Keyword::SizeFcLayer],
        "fc example: free keywords {movable:?}"
    );

    let default = parse(&read("cifar10_default.txt")?).map_err(|e| e.to_string())?;
    ensure!(
        default.remaining_hps == RemainingPolicy::Var,
        "default example: REMAINING_HPS"
    );
    ensure!(
        Keyword::ALL.iter().all(|&k| !default.space.def(k).fixed),
        "default example: a keyword is fixed"
    );
    ensure!(default.initial_point().dimension() == 22, "default example: dimension");

    let malformed = "DATASET MNIST\nMAX_BB_EVAL many\nKERNELS 3 9 1\nDROPOUT 0.5\nSTRIDES 1 1 3 VAR x\n";
    let errors = match parse(malformed) {
        Ok(_) => return Err("malformed file accepted".into()),
        Err(e) => e.0,
    };
    let lines: Vec<Option<usize>> = errors.iter().map(|e| e.line).collect();
    ensure!(lines == [Some(2), Some(3), Some(4), Some(5)], "error lines {lines:?}");
    ensure!(
        matches!(errors[2].kind, ParseErrorKind::UnknownKeyword(_)),
        "line 4: {}",
        errors[2]
    );
    Ok("three example files; 4 of 4 errors reported".into())
}

fn toy_run(dir: &Path) -> Result<(f64, f64, Duration), String> {
    let text = fs::read_to_string(params("toy_quick.txt")).map_err(|e| e.to_string())?;
    let mut config = parse(&text).map_err(|e| e.to_string())?;
    config.output_dir = dir.to_path_buf();
    let start = Instant::now();
    let result = mads_cli::run(&config, &mut std::io::sink()).map_err(|e| format!("{e:#}"))?;
    let elapsed = start.elapsed();
    let initial = result.history.first().map(|h| h.objective).unwrap_or(f64::INFINITY);
    let best = result.best.map(|b| b.objective).unwrap_or(f64::INFINITY);
    Ok((initial, best, elapsed))
}

fn end_to_end() -> Outcome {
    let limit = Duration::from_secs(300);
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    let (initial, best, first_time) = toy_run(&a)?;
    ensure!(first_time < limit, "run took {first_time:?}");
    ensure!(best < initial, "best {best} does not improve on the initial {initial}");

    let history = fs::read_to_string(a.join("history.txt")).map_err(|e| e.to_string())?;
    ensure!(
        history.lines().count() == 30,
        "history.txt has {} lines",
        history.lines().count()
    );
    let stats = fs::read_to_string(a.join("stats.txt")).map_err(|e| e.to_string())?;
    let values: Vec<f64> = stats
        .lines()
        .map(|l| l.rsplit(' ').next().unwrap_or("").parse().unwrap_or(f64::NAN))
        .collect();
    ensure!(
        !values.is_empty() && values.windows(2).all(|w| w[1] < w[0]),
        "stats objectives {values:?}"
    );

    let (_, _, second_time) = toy_run(&b)?;
    ensure!(second_time < limit, "rerun took {second_time:?}");
    let mut files: Vec<PathBuf> = vec!["history.txt".into(), "stats.txt".into(), "run_info.txt".into()];
    for entry in fs::read_dir(a.join("epochs")).map_err(|e| e.to_string())? {
        files.push(Path::new("epochs").join(entry.map_err(|e| e.to_string())?.file_name()));
    }
    for f in &files {
        let (x, y) = (fs::read(a.join(f)), fs::read(b.join(f)));
        ensure!(
            matches!((&x, &y), (Ok(x), Ok(y)) if x == y),
            "{} differs between runs",
            f.display()
        );
    }
    Ok(format!(
        "objective {initial} -> {best}; {:.0} s and {:.0} s; {} files identical",
        first_time.as_secs_f64(),
        second_time.as_secs_f64(),
        files.len()
    ))
}

struct Criterion {
    id: &'static str,
    name: &'static str,
    limit: Duration,
    check: fn() -> Outcome,
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let criteria = [
        Criterion {
            id: "AC1",
            name: "neighbor golden tests",
            limit: secs(1),
            check: neighbor_golden,
        },
        Criterion {
            id: "AC2",
            name: "dimension formula",
            limit: secs(1),
            check: dimension_formula,
        },
        Criterion {
            id: "AC3",
            name: "mesh invariants",
            limit: secs(5),
            check: mesh_invariants,
        },
        Criterion {
            id: "AC4",
            name: "convergence",
            limit: secs(30),
            check: convergence,
        },
        Criterion {
            id: "AC5",
            name: "feasibility",
            limit: secs(10),
            check: feasibility,
        },
        Criterion {
            id: "AC6",
            name: "training semantics",
            limit: secs(30),
            check: training_semantics,
        },
        Criterion {
            id: "AC7",
            name: "parameter files",
            limit: secs(1),
            check: parameter_files,
        },
        // Each of the two runs is held to 5 minutes inside the check.
        Criterion {
            id: "AC8",
            name: "end-to-end toy run",
            limit: secs(600),
            check: end_to_end,
        },
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for c in criteria
        .iter()
        .filter(|c| filters.is_empty() || filters.iter().any(|f| c.id.contains(f.as_str())))
    {
        let start = Instant::now();
        let outcome = (c.check)();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > c.limit => Err(format!("{detail}; over the {:?} limit", c.limit)),
            other => other,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("[{tag}] {} {} ({:.2} s): {detail}", c.id, c.name, elapsed.as_secs_f64());
        failed += usize::from(outcome.is_err());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
