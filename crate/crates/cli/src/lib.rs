//! Command-line driver: argument handling, run orchestration and the run
//! output files.
//!
//! A run directory receives
//! - `history.txt`: one line per blackbox call, the flat encoding followed by
//!   the objective;
//! - `stats.txt`: the history lines that improved the best objective;
//! - `run_info.txt`: the configuration, the column layout and the result;
//! - `epochs/eval_NNNN.csv`: per-epoch accuracies of trained evaluations.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mads_core::blackbox::EpochStats;
use mads_core::hpspace::{architecture_feasible, format_flat, Keyword};
use mads_core::mads::{Engine, RunResult};
use mads_core::paramfile::{self, Dataset, RunConfig};
use mads_core::{neighbor_set, EvalRecord, EvalStatus};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const PROGRAM: &str = "mads-hpo";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Invocation {
    Run(PathBuf),
    Info,
    Help,
    Version,
    Usage,
    Neighbors(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Interpret the arguments after the program name.
pub fn parse_args<I, S>(args: I) -> Result<Invocation, UsageError>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args: Vec<String> = args.into_iter().map(Into::into).collect();
    let flag = |mode: Invocation| match args.len() {
        1 => Ok(mode),
        _ => Err(UsageError(format!("{} takes no argument", args[0]))),
    };
    match args.first().map(String::as_str) {
        None => Err(UsageError("missing parameters file".into())),
        Some("-i") => flag(Invocation::Info),
        Some("-h") | Some("--help") => flag(Invocation::Help),
        Some("-v") | Some("--version") => flag(Invocation::Version),
        Some("-u") => flag(Invocation::Usage),
        Some("-n") => match &args[1..] {
            [file] => Ok(Invocation::Neighbors(PathBuf::from(file))),
            [] => Err(UsageError("-n needs a parameters file".into())),
            _ => Err(UsageError("too many arguments".into())),
        },
        Some(f) if f.starts_with('-') => Err(UsageError(format!("unknown option {f}"))),
        Some(file) => match args.len() {
            1 => Ok(Invocation::Run(PathBuf::from(file))),
            _ => Err(UsageError("too many arguments".into())),
        },
    }
}

pub fn usage() -> String {
    [
        ("Run", "parameters_file"),
        ("Info", "-i"),
        ("Help", "-h"),
        ("Version", "-v"),
        ("Usage", "-u"),
        ("Neighbors", "-n parameters_file"),
    ]
    .iter()
    .map(|(what, args)| format!("{what:<12}: {PROGRAM} {args}\n"))
    .collect()
}

pub fn version() -> String {
    format!("{PROGRAM} {VERSION}\n")
}

pub fn info() -> String {
    let rule = "-".repeat(50);
    format!(
        "\n{rule}\n  {PROGRAM} - version {VERSION}\n  mesh adaptive direct search for network hyperparameters\n{rule}\n\n{}",
        usage()
    )
}

pub fn help() -> String {
    let mut s = String::new();
    s.push_str(&usage());
    s.push_str(
        "\nParameters file: one keyword per line, `#` starts a comment.\n\
         \n  KEYWORD  INITIAL_VALUE  LB  UB  FIXED/VAR\n\
         \n`-` keeps the default for a slot; trailing slots may be omitted.\n\
         \nMandatory:\n  DATASET            MNIST FASHION EMNIST KMNIST CIFAR10 CIFAR100 STL10 TOYMNIST\n\
         \x20                    SPHERE QUADRATIC CUSTOM\n  MAX_BB_EVAL        blackbox call budget\n\
         \nHyperparameters (default [lower; upper]):\n",
    );
    for k in Keyword::ALL {
        let (d, lo, hi) = k.table_default();
        let _ = writeln!(s, "  {:<20} {d} [{lo}; {hi}]", k.as_str());
    }
    s.push_str(
        "\nOther keywords:\n  REMAINING_HPS      FIXED or VAR for unmentioned hyperparameters (VAR)\n\
         \x20 NUMBER_OF_CLASSES  class count, CUSTOM only\n\
         \x20 EXTERNAL_COMMAND   program and arguments, CUSTOM only; receives the point file path\n\
         \x20 EXTERNAL_TIMEOUT   seconds per external evaluation (86400)\n\
         \x20 PARALLEL_EVAL      poll candidates evaluated concurrently (1)\n\
         \x20 MAX_EPOCHS         training epoch cap for built-in data (500)\n\
         \x20 SEED               random seed (0)\n\
         \x20 OUTPUT_DIR         directory for history.txt and stats.txt (.)\n",
    );
    s
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    paramfile::parse(&text).map_err(|e| anyhow::anyhow!("invalid parameters file {}:\n{e}", path.display()))
}

/// Neighbors of the initial point, one per line: tag then flat encoding.
pub fn neighbors_text(config: &RunConfig) -> String {
    neighbor_set(&config.initial_point(), &config.space)
        .iter()
        .map(|n| format!("{} {}\n", n.kind, n.point))
        .collect()
}

/// `history.txt` line of a record.
pub fn history_line(record: &EvalRecord) -> String {
    format!("{} {}", format_flat(&record.point.encode()), record.objective)
}

fn epoch_csv(log: &[EpochStats]) -> String {
    let mut s = String::from("epoch,train_accuracy,validation_accuracy,learning_rate\n");
    for e in log {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            e.epoch, e.train_accuracy, e.validation_accuracy, e.learning_rate
        );
    }
    s
}

/// Incremental writer of the run files; every evaluation is flushed as soon
/// as it is recorded.
pub struct OutputWriter {
    dir: PathBuf,
    history: BufWriter<File>,
    stats: BufWriter<File>,
    best: f64,
}

impl OutputWriter {
    pub fn create(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(OutputWriter {
            dir: dir.to_path_buf(),
            history: BufWriter::new(File::create(dir.join("history.txt"))?),
            stats: BufWriter::new(File::create(dir.join("stats.txt"))?),
            best: f64::INFINITY,
        })
    }

    pub fn record(&mut self, record: &EvalRecord) -> io::Result<()> {
        let line = history_line(record);
        writeln!(self.history, "{line}")?;
        self.history.flush()?;
        if record.status == EvalStatus::Ok && record.objective < self.best {
            self.best = record.objective;
            writeln!(self.stats, "{line}")?;
            self.stats.flush()?;
        }
        if !record.epoch_log.is_empty() {
            let epochs = self.dir.join("epochs");
            fs::create_dir_all(&epochs)?;
            fs::write(
                epochs.join(format!("eval_{:04}.csv", record.eval_index)),
                epoch_csv(&record.epoch_log),
            )?;
        }
        Ok(())
    }
}

/// Write `history.txt`, `stats.txt` and epoch logs for a finished history.
pub fn write_outputs(history: &[EvalRecord], dir: &Path) -> io::Result<()> {
    let mut w = OutputWriter::create(dir)?;
    history.iter().try_for_each(|r| w.record(r))
}

fn run_info(config: &RunConfig, result: &RunResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "dataset {}", config.dataset.token());
    let _ = writeln!(s, "budget {}", config.max_bb_eval);
    let _ = writeln!(s, "seed {}", config.seed);
    let _ = writeln!(s, "evaluations {}", result.history.len());
    let _ = writeln!(s, "stop {}", result.stop_reason);
    match &result.best {
        Some(b) => {
            let _ = writeln!(s, "best_objective {}", b.objective);
            let _ = writeln!(s, "best_point {}", b.point);
            if matches!(config.dataset, Dataset::Builtin(_)) {
                let _ = writeln!(s, "best_test_accuracy {}", 100.0 - b.objective);
            }
        }
        None => s.push_str("best_objective none\n"),
    }
    s.push_str(
        "\nhistory.txt and stats.txt: flat encoding, then the objective (minimized).\n\
         Encoding order: NUM_CON_LAYERS, five values per convolutional layer \
         (channels, kernel, stride, padding, pooling), NUM_FC_LAYERS, one size per \
         fully connected layer, BATCH_SIZE, OPTIMIZER_CHOICE, OPT_PARAM_1..4, \
         DROPOUT_RATE, ACTIVATION_FUNCTION.\n\
         For built-in data sets the objective is 100 minus the test accuracy in percent.\n\
         Failed or infeasible evaluations have objective inf.\n",
    );
    s
}

/// Run the optimization described by `config`, streaming progress to `out`.
pub fn run(config: &RunConfig, out: &mut dyn Write) -> Result<RunResult> {
    let initial = config.initial_point();
    writeln!(
        out,
        "dataset {}, budget {}, seed {}",
        config.dataset.token(),
        config.max_bb_eval,
        config.seed
    )?;
    writeln!(out, "initial point ({} variables): {initial}", initial.dimension())?;
    if matches!(config.dataset, Dataset::Builtin(_)) {
        let f = architecture_feasible(&initial, config.space.input_image_size);
        if !f.feasible {
            log::warn!("initial architecture collapses the image; the run continues from it");
        }
    }

    let evaluator = config.evaluator();
    let mut writer = OutputWriter::create(&config.output_dir)
        .with_context(|| format!("cannot write to {}", config.output_dir.display()))?;
    let mut io_error: Option<io::Error> = None;
    let mut observer = |record: &EvalRecord, best: f64| {
        let _ = writeln!(
            out,
            "eval {:>5}  f = {:<12}  best = {:<12}  {}",
            record.eval_index, record.objective, best, record.status
        );
        if io_error.is_none() {
            io_error = writer.record(record).err();
        }
    };
    let result = Engine::new(&evaluator, &config.space, config.engine_options()).run(initial, &mut observer)?;
    if let Some(e) = io_error {
        return Err(e).context("cannot write run outputs");
    }
    fs::write(config.output_dir.join("run_info.txt"), run_info(config, &result))
        .context("cannot write run_info.txt")?;

    writeln!(
        out,
        "stopped: {} after {} evaluations",
        result.stop_reason,
        result.history.len()
    )?;
    match &result.best {
        Some(b) => writeln!(out, "best objective {} at {}", b.objective, b.point)?,
        None => writeln!(out, "no feasible point found")?,
    }
    Ok(result)
}

/// Entry point with explicit streams; returns the exit status.
pub fn main_with<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let invocation = match parse_args(args) {
        Ok(inv) => inv,
        Err(e) => {
            let _ = write!(err, "{PROGRAM}: {e}\n\n{}", usage());
            return EXIT_USAGE;
        }
    };
    let result = match invocation {
        Invocation::Info => out.write_all(info().as_bytes()).map_err(Into::into),
        Invocation::Help => out.write_all(help().as_bytes()).map_err(Into::into),
        Invocation::Version => out.write_all(version().as_bytes()).map_err(Into::into),
        Invocation::Usage => out.write_all(usage().as_bytes()).map_err(Into::into),
        Invocation::Neighbors(path) => {
            load_config(&path).and_then(|c| out.write_all(neighbors_text(&c).as_bytes()).map_err(Into::into))
        }
        Invocation::Run(path) => load_config(&path).and_then(|c| run(&c, out).map(|_| ())),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "{PROGRAM}: {e:#}");
            EXIT_RUNTIME
        }
    }
}
