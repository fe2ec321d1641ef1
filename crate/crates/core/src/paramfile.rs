//! Parameter file front end.
//!
//! Grammar, one entry per line, `#` starting a comment:
//!
//! ```text
//! DATASET           <token>
//! MAX_BB_EVAL       <count>
//! <HP KEYWORD>      <init> [<lower> [<upper>]] [FIXED|VAR]
//! REMAINING_HPS     FIXED|VAR
//! ```
//!
//! A `-` in a value slot keeps the reference default for that slot. A
//! mentioned hyperparameter is variable unless flagged `FIXED`; unmentioned
//! ones follow `REMAINING_HPS` (default `VAR`).
//!
//! Extension keywords: `SEED`, `OUTPUT_DIR`, `EXTERNAL_COMMAND`,
//! `EXTERNAL_TIMEOUT` (seconds), `PARALLEL_EVAL` (concurrent evaluations per
//! poll batch, which also declares an external command reentrant) and
//! `MAX_EPOCHS`.

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::time::Duration;

use crate::blackbox::dataset::TOY_IMAGE_SIDE;
use crate::blackbox::{AnalyticFunction, BuiltinDataset, Evaluator, ExternalCommand, ToyTrainer, TrainSettings};
use crate::hpspace::{default_point, Keyword, Point, SpaceSpec};
use crate::mads::EngineOptions;

pub const DEFAULT_MAX_EPOCHS: usize = crate::blackbox::train::DEFAULT_MAX_EPOCHS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dataset {
    Builtin(BuiltinDataset),
    Analytic(AnalyticFunction),
    /// User data behind `EXTERNAL_COMMAND`.
    Custom,
}

impl Dataset {
    pub fn token(self) -> &'static str {
        match self {
            Dataset::Builtin(d) => d.token(),
            Dataset::Analytic(f) => f.token(),
            Dataset::Custom => "CUSTOM",
        }
    }

    pub fn from_token(token: &str) -> Option<Self> {
        if token == "CUSTOM" {
            return Some(Dataset::Custom);
        }
        BuiltinDataset::from_token(token)
            .map(Dataset::Builtin)
            .or_else(|| AnalyticFunction::from_token(token).map(Dataset::Analytic))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemainingPolicy {
    Fixed,
    Var,
}

impl RemainingPolicy {
    fn token(self) -> &'static str {
        match self {
            RemainingPolicy::Fixed => "FIXED",
            RemainingPolicy::Var => "VAR",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: Dataset,
    pub num_classes: Option<usize>,
    pub max_bb_eval: usize,
    pub space: SpaceSpec,
    pub remaining_hps: RemainingPolicy,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub external_command: Option<String>,
    pub external_timeout: Option<Duration>,
    pub parallel_eval: usize,
    pub max_epochs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParseErrorKind {
    UnknownKeyword(String),
    Duplicate {
        keyword: String,
        first_line: usize,
    },
    MissingValue {
        keyword: String,
    },
    TooManyValues {
        keyword: String,
    },
    NotANumber {
        keyword: String,
        token: String,
    },
    NotAnInteger {
        keyword: String,
        value: f64,
    },
    InvalidToken {
        keyword: String,
        token: String,
        expected: &'static str,
    },
    BoundsReversed {
        keyword: Keyword,
        lower: f64,
        upper: f64,
    },
    InitialOutOfBounds {
        keyword: Keyword,
        value: f64,
        lower: f64,
        upper: f64,
    },
    OutsideDomain {
        keyword: Keyword,
        value: f64,
        lower: f64,
        upper: f64,
    },
    MissingMandatory(&'static str),
    CustomRequires(&'static str),
    RequiresCustom(&'static str),
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use ParseErrorKind::*;
        match self {
            UnknownKeyword(k) => write!(f, "unknown keyword `{k}`"),
            Duplicate { keyword, first_line } => write!(f, "{keyword} already given on line {first_line}"),
            MissingValue { keyword } => write!(f, "{keyword} needs a value"),
            TooManyValues { keyword } => write!(f, "{keyword} takes at most an initial value, two bounds and a flag"),
            NotANumber { keyword, token } => write!(f, "{keyword}: `{token}` is not a number"),
            NotAnInteger { keyword, value } => write!(f, "{keyword}: {value} is not an integer"),
            InvalidToken {
                keyword,
                token,
                expected,
            } => write!(f, "{keyword}: `{token}` is not {expected}"),
            BoundsReversed { keyword, lower, upper } => {
                write!(f, "{keyword}: lower bound {lower} exceeds upper bound {upper}")
            }
            InitialOutOfBounds {
                keyword,
                value,
                lower,
                upper,
            } => write!(f, "{keyword}: initial value {value} outside [{lower}; {upper}]"),
            OutsideDomain {
                keyword,
                value,
                lower,
                upper,
            } => write!(f, "{keyword}: {value} outside the admissible range [{lower}; {upper}]"),
            MissingMandatory(k) => write!(f, "mandatory keyword {k} is missing"),
            CustomRequires(k) => write!(f, "DATASET CUSTOM requires {k}"),
            RequiresCustom(k) => write!(f, "{k} is only allowed with DATASET CUSTOM"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    /// 1-based line, absent for whole-file errors.
    pub line: Option<usize>,
    pub kind: ParseErrorKind,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.kind),
            None => write!(f, "{}", self.kind),
        }
    }
}

/// Every problem found in a parameter file.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseErrors(pub Vec<ParseError>);

impl fmt::Display for ParseErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ParseErrors {}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Flag {
    Fixed,
    Var,
}

#[derive(Debug, Default)]
struct HpEntry {
    values: [Option<f64>; 3],
    flag: Option<Flag>,
}

struct Parser {
    errors: Vec<ParseError>,
    seen: HashMap<String, usize>,
    line: usize,
}

impl Parser {
    fn error(&mut self, kind: ParseErrorKind) {
        self.errors.push(ParseError {
            line: Some(self.line),
            kind,
        });
    }

    fn single<'t>(&mut self, keyword: &str, tokens: &[&'t str]) -> Option<&'t str> {
        match tokens {
            [] => {
                self.error(ParseErrorKind::MissingValue {
                    keyword: keyword.into(),
                });
                None
            }
            [t] => Some(t),
            _ => {
                self.error(ParseErrorKind::TooManyValues {
                    keyword: keyword.into(),
                });
                None
            }
        }
    }

    fn number(&mut self, keyword: &str, token: &str) -> Option<f64> {
        match token.parse::<f64>() {
            Ok(v) if v.is_finite() => Some(v),
            _ => {
                self.error(ParseErrorKind::NotANumber {
                    keyword: keyword.into(),
                    token: token.into(),
                });
                None
            }
        }
    }

    fn count(&mut self, keyword: &str, tokens: &[&str], min: u64) -> Option<u64> {
        let token = self.single(keyword, tokens)?;
        let value = self.number(keyword, token)?;
        if value.fract() != 0.0 {
            self.error(ParseErrorKind::NotAnInteger {
                keyword: keyword.into(),
                value,
            });
            return None;
        }
        if value < min as f64 || value > u64::MAX as f64 {
            self.error(ParseErrorKind::InvalidToken {
                keyword: keyword.into(),
                token: token.into(),
                expected: if min == 0 {
                    "a non-negative integer"
                } else {
                    "a positive integer"
                },
            });
            return None;
        }
        Some(value as u64)
    }

    fn hp_entry(&mut self, keyword: Keyword, tokens: &[&str]) -> Option<HpEntry> {
        let name = keyword.as_str();
        if tokens.is_empty() {
            self.error(ParseErrorKind::MissingValue { keyword: name.into() });
            return None;
        }
        let mut entry = HpEntry::default();
        let mut slot = 0;
        let mut ok = true;
        for (i, &token) in tokens.iter().enumerate() {
            let flag = match token {
                "FIXED" => Some(Flag::Fixed),
                "VAR" => Some(Flag::Var),
                _ => None,
            };
            if let Some(flag) = flag {
                if i + 1 != tokens.len() {
                    self.error(ParseErrorKind::TooManyValues { keyword: name.into() });
                    return None;
                }
                entry.flag = Some(flag);
                continue;
            }
            if slot == 3 {
                self.error(ParseErrorKind::TooManyValues { keyword: name.into() });
                return None;
            }
            if token != "-" {
                match self.number(name, token) {
                    Some(v) if keyword.kind().is_integral() && v.fract() != 0.0 => {
                        self.error(ParseErrorKind::NotAnInteger {
                            keyword: name.into(),
                            value: v,
                        });
                        ok = false;
                    }
                    Some(v) => entry.values[slot] = Some(v),
                    None => ok = false,
                }
            }
            slot += 1;
        }
        ok.then_some(entry)
    }

    /// Apply an entry to the spec, checking bounds and domain.
    fn apply(&mut self, spec: &mut SpaceSpec, keyword: Keyword, entry: &HpEntry) {
        let def = *spec.def(keyword);
        let [init, lower, upper] = entry.values;
        let (init, lower, upper) = (
            init.unwrap_or(def.default),
            lower.unwrap_or(def.lower),
            upper.unwrap_or(def.upper),
        );
        let (dlo, dhi) = keyword.domain();
        let mut ok = true;
        for v in [init, lower, upper] {
            if v < dlo || v > dhi {
                self.error(ParseErrorKind::OutsideDomain {
                    keyword,
                    value: v,
                    lower: dlo,
                    upper: dhi,
                });
                ok = false;
                break;
            }
        }
        if lower > upper {
            self.error(ParseErrorKind::BoundsReversed { keyword, lower, upper });
            ok = false;
        } else if init < lower || init > upper {
            self.error(ParseErrorKind::InitialOutOfBounds {
                keyword,
                value: init,
                lower,
                upper,
            });
            ok = false;
        }
        if ok {
            let def = spec.def_mut(keyword);
            def.default = init;
            def.lower = lower;
            def.upper = upper;
            def.fixed = entry.flag == Some(Flag::Fixed);
        }
    }
}

/// Strip a trailing `#` comment.
fn content(line: &str) -> &str {
    line.split_once('#').map_or(line, |(head, _)| head)
}

/// Parse a parameter file, reporting every error found.
pub fn parse(text: &str) -> Result<RunConfig, ParseErrors> {
    let mut p = Parser {
        errors: Vec::new(),
        seen: HashMap::new(),
        line: 0,
    };
    let mut dataset = None;
    let mut num_classes = None;
    let mut max_bb_eval = None;
    let mut remaining = RemainingPolicy::Var;
    let mut seed = 0;
    let mut output_dir = PathBuf::from(".");
    let mut external_command = None;
    let mut external_timeout = None;
    let mut parallel_eval = 1;
    let mut max_epochs = DEFAULT_MAX_EPOCHS;
    let mut entries: Vec<(Keyword, HpEntry)> = Vec::new();

    for (index, raw) in text.lines().enumerate() {
        p.line = index + 1;
        let body = content(raw).trim();
        let mut split = body.splitn(2, char::is_whitespace);
        let Some(keyword) = split.next().filter(|k| !k.is_empty()) else {
            continue;
        };
        let rest = split.next().unwrap_or("").trim();
        let tokens: Vec<&str> = rest.split_whitespace().collect();

        if let Some(&first_line) = p.seen.get(keyword) {
            p.error(ParseErrorKind::Duplicate {
                keyword: keyword.into(),
                first_line,
            });
            continue;
        }
        p.seen.insert(keyword.to_string(), p.line);

        match keyword {
            "DATASET" => {
                if let Some(token) = p.single(keyword, &tokens) {
                    match Dataset::from_token(token) {
                        Some(d) => dataset = Some(d),
                        None => p.error(ParseErrorKind::InvalidToken {
                            keyword: keyword.into(),
                            token: token.into(),
                            expected: "a known data set",
                        }),
                    }
                }
            }
            "NUMBER_OF_CLASSES" => num_classes = p.count(keyword, &tokens, 2).map(|v| v as usize),
            "MAX_BB_EVAL" => max_bb_eval = p.count(keyword, &tokens, 1).map(|v| v as usize),
            "REMAINING_HPS" => {
                if let Some(token) = p.single(keyword, &tokens) {
                    match token {
                        "FIXED" => remaining = RemainingPolicy::Fixed,
                        "VAR" => remaining = RemainingPolicy::Var,
                        _ => p.error(ParseErrorKind::InvalidToken {
                            keyword: keyword.into(),
                            token: token.into(),
                            expected: "FIXED or VAR",
                        }),
                    }
                }
            }
            "SEED" => seed = p.count(keyword, &tokens, 0).unwrap_or(seed),
            "OUTPUT_DIR" => {
                if rest.is_empty() {
                    p.error(ParseErrorKind::MissingValue {
                        keyword: keyword.into(),
                    });
                } else {
                    output_dir = PathBuf::from(rest);
                }
            }
            "EXTERNAL_COMMAND" => {
                if rest.is_empty() {
                    p.error(ParseErrorKind::MissingValue {
                        keyword: keyword.into(),
                    });
                } else {
                    external_command = Some(rest.to_string());
                }
            }
            "EXTERNAL_TIMEOUT" => {
                if let Some(token) = p.single(keyword, &tokens) {
                    match p.number(keyword, token) {
                        Some(v) if v > 0.0 => external_timeout = Some(Duration::from_secs_f64(v)),
                        Some(_) => p.error(ParseErrorKind::InvalidToken {
                            keyword: keyword.into(),
                            token: token.into(),
                            expected: "a positive number of seconds",
                        }),
                        None => {}
                    }
                }
            }
            "PARALLEL_EVAL" => parallel_eval = p.count(keyword, &tokens, 1).map_or(parallel_eval, |v| v as usize),
            "MAX_EPOCHS" => max_epochs = p.count(keyword, &tokens, 1).map_or(max_epochs, |v| v as usize),
            other => match other.parse::<Keyword>() {
                Ok(k) => {
                    if let Some(entry) = p.hp_entry(k, &tokens) {
                        entries.push((k, entry));
                    }
                }
                Err(_) => p.error(ParseErrorKind::UnknownKeyword(other.into())),
            },
        }
    }

    let mut space = match dataset {
        Some(Dataset::Builtin(_)) => SpaceSpec::new(TOY_IMAGE_SIDE, 1),
        _ => SpaceSpec::default(),
    };
    if remaining == RemainingPolicy::Fixed {
        space = space.all_fixed();
    }
    for (keyword, entry) in &entries {
        p.line = p.seen[keyword.as_str()];
        p.apply(&mut space, *keyword, entry);
    }

    let mut whole_file = |kind| {
        p.errors.push(ParseError { line: None, kind });
    };
    if dataset.is_none() && !p.seen.contains_key("DATASET") {
        whole_file(ParseErrorKind::MissingMandatory("DATASET"));
    }
    if max_bb_eval.is_none() && !p.seen.contains_key("MAX_BB_EVAL") {
        whole_file(ParseErrorKind::MissingMandatory("MAX_BB_EVAL"));
    }
    let custom = dataset == Some(Dataset::Custom);
    if custom {
        if !p.seen.contains_key("NUMBER_OF_CLASSES") {
            whole_file(ParseErrorKind::CustomRequires("NUMBER_OF_CLASSES"));
        }
        if !p.seen.contains_key("EXTERNAL_COMMAND") {
            whole_file(ParseErrorKind::CustomRequires("EXTERNAL_COMMAND"));
        }
    } else if dataset.is_some() {
        for k in ["NUMBER_OF_CLASSES", "EXTERNAL_COMMAND"] {
            if p.seen.contains_key(k) {
                whole_file(ParseErrorKind::RequiresCustom(k));
            }
        }
    }

    if !p.errors.is_empty() {
        p.errors.sort_by_key(|e| e.line.unwrap_or(usize::MAX));
        return Err(ParseErrors(p.errors));
    }
    Ok(RunConfig {
        dataset: dataset.expect("checked above"),
        num_classes,
        max_bb_eval: max_bb_eval.expect("checked above"),
        space,
        remaining_hps: remaining,
        seed,
        output_dir,
        external_command,
        external_timeout,
        parallel_eval,
        max_epochs,
    })
}

impl RunConfig {
    /// Normalized parameter file with every hyperparameter spelled out.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| out.push_str(&format!("{k:<20} {v}\n"));
        line("DATASET", self.dataset.token().into());
        if let Some(n) = self.num_classes {
            line("NUMBER_OF_CLASSES", n.to_string());
        }
        line("MAX_BB_EVAL", self.max_bb_eval.to_string());
        line("REMAINING_HPS", self.remaining_hps.token().into());
        for def in self.space.defs() {
            let flag = if def.fixed { "FIXED" } else { "VAR" };
            line(
                def.keyword.as_str(),
                format!("{} {} {} {flag}", def.default, def.lower, def.upper),
            );
        }
        line("SEED", self.seed.to_string());
        line("OUTPUT_DIR", self.output_dir.display().to_string());
        if let Some(cmd) = &self.external_command {
            line("EXTERNAL_COMMAND", cmd.clone());
        }
        if let Some(t) = self.external_timeout {
            line("EXTERNAL_TIMEOUT", t.as_secs_f64().to_string());
        }
        line("PARALLEL_EVAL", self.parallel_eval.to_string());
        line("MAX_EPOCHS", self.max_epochs.to_string());
        out
    }

    /// Starting point: every keyword at its initial value, per-layer values
    /// replicated over the layers.
    pub fn initial_point(&self) -> Point {
        default_point(&self.space)
    }

    pub fn evaluator(&self) -> Evaluator {
        match self.dataset {
            Dataset::Builtin(d) => Evaluator::ToyTrainer(ToyTrainer::new(
                d.generate(),
                TrainSettings {
                    seed: self.seed,
                    max_epochs: self.max_epochs,
                },
            )),
            Dataset::Analytic(function) => Evaluator::Analytic {
                function,
                space: self.space.clone(),
            },
            Dataset::Custom => {
                let line = self.external_command.as_deref().unwrap_or_default();
                let mut cmd = ExternalCommand::from_command_line(line).expect("validated at parse time");
                if let Some(t) = self.external_timeout {
                    cmd.timeout = t;
                }
                cmd.reentrant = self.parallel_eval > 1;
                Evaluator::External(cmd)
            }
        }
    }

    pub fn engine_options(&self) -> EngineOptions {
        EngineOptions {
            max_evaluations: self.max_bb_eval,
            seed: self.seed,
            parallel_batch: self.parallel_eval,
            ..EngineOptions::default()
        }
    }
}
