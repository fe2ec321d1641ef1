//! Subprocess evaluation protocol.
//!
//! The point's flat encoding is written as one line of space-separated
//! decimal values to a temporary file. The command is run with that file's
//! path appended as its last argument, and the first whitespace-delimited
//! token of its standard output is read as the objective. A nonzero exit
//! status, an unparseable token or a timeout fails the evaluation.

use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use super::{EvalStatus, Evaluation};
use crate::hpspace::{format_flat, Point};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(24 * 3600);

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalCommand {
    pub program: String,
    /// Arguments placed before the point file path.
    pub args: Vec<String>,
    pub timeout: Duration,
    /// Declared by the user: the command may run concurrently with itself.
    pub reentrant: bool,
}

impl ExternalCommand {
    /// Split a command line on whitespace: program first, then fixed arguments.
    pub fn from_command_line(line: &str) -> Option<Self> {
        let mut tokens = line.split_whitespace().map(str::to_string);
        let program = tokens.next()?;
        Some(ExternalCommand {
            program,
            args: tokens.collect(),
            timeout: DEFAULT_TIMEOUT,
            reentrant: false,
        })
    }

    pub fn command_line(&self) -> String {
        std::iter::once(self.program.as_str())
            .chain(self.args.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn evaluate(&self, p: &Point) -> Evaluation {
        match self.run(p) {
            Ok(value) => Evaluation::ok(value),
            Err(message) => {
                log::warn!("external evaluation failed: {message}");
                Evaluation::failed(EvalStatus::EvalFailed, message)
            }
        }
    }

    fn run(&self, p: &Point) -> Result<f64, String> {
        let mut file = tempfile::Builder::new()
            .prefix("point-")
            .suffix(".txt")
            .tempfile()
            .map_err(|e| format!("cannot create point file: {e}"))?;
        writeln!(file, "{}", format_flat(&p.encode())).map_err(|e| format!("cannot write point file: {e}"))?;
        file.flush().map_err(|e| e.to_string())?;

        let mut child = Command::new(&self.program)
            .args(&self.args)
            .arg(file.path())
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| format!("cannot start `{}`: {e}", self.program))?;

        let mut stdout = child.stdout.take().expect("piped stdout");
        let reader = thread::spawn(move || {
            let mut out = String::new();
            stdout.read_to_string(&mut out).map(|_| out)
        });

        let start = Instant::now();
        let mut pause = Duration::from_millis(1);
        let status = loop {
            match child.try_wait().map_err(|e| e.to_string())? {
                Some(status) => break status,
                None if start.elapsed() >= self.timeout => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(format!("timed out after {:?}", self.timeout));
                }
                None => {
                    thread::sleep(pause);
                    pause = (pause * 2).min(Duration::from_millis(50));
                }
            }
        };
        let output = reader
            .join()
            .map_err(|_| "stdout reader panicked".to_string())?
            .map_err(|e| format!("cannot read output: {e}"))?;

        if !status.success() {
            return Err(format!("command exited with {status}"));
        }
        let token = output.split_whitespace().next().ok_or("empty output")?;
        match token.parse::<f64>() {
            Ok(v) if !v.is_nan() => Ok(v),
            _ => Err(format!("unparseable objective `{token}`")),
        }
    }
}
