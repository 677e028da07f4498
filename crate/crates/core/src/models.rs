//! Models `Y = f(X)` behind a batch evaluation contract: an `n x d` matrix in,
//! `n` outputs out.

use std::fmt;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::Mutex;

use ndarray::{ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Rows per parallel chunk for builtin models.
const PAR_CHUNK: usize = 4096;

/// Anything that maps a batch of input points to scalar outputs.
pub trait Model: Sync {
    /// Required input dimension, if the model fixes one.
    fn arity(&self) -> Option<usize>;

    fn evaluate(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>>;
}

impl<M: Model + ?Sized> Model for &M {
    fn arity(&self) -> Option<usize> {
        (**self).arity()
    }

    fn evaluate(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        (**self).evaluate(x)
    }
}

/// Builtin test functions and the external-process adapter.
#[derive(Debug, Clone)]
pub enum ModelSpec {
    /// `beta0 + beta . x`
    Linear { beta0: f64, beta: Vec<f64> },
    /// `sin x1 + a sin^2 x2 + b x3^4 sin x1`
    Ishigami { a: f64, b: f64 },
    /// `x1 + x2 x3`
    Interaction,
    /// `x[index]` (0-based)
    Projection { index: usize },
    External(ExternalModel),
}

impl ModelSpec {
    pub fn ishigami() -> Self {
        ModelSpec::Ishigami { a: 7.0, b: 0.1 }
    }

    /// Checks the model against the input dimension of a run.
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            ModelSpec::Projection { index } if *index >= dim => {
                Err(Error::Config(format!("projection index {index} out of range for {dim} inputs")))
            }
            ModelSpec::External(e) if e.command.trim().is_empty() => Err(Error::Config("external model command is empty".into())),
            _ => match self.arity() {
                Some(a) if a != dim => Err(Error::Dimension { expected: a, got: dim }),
                _ => Ok(()),
            },
        }
    }

    fn point(&self, x: ArrayView1<'_, f64>) -> f64 {
        match self {
            ModelSpec::Linear { beta0, beta } => beta0 + beta.iter().zip(x.iter()).map(|(b, v)| b * v).sum::<f64>(),
            ModelSpec::Ishigami { a, b } => {
                let s1 = x[0].sin();
                let s2 = x[1].sin();
                s1 + a * s2 * s2 + b * x[2].powi(4) * s1
            }
            ModelSpec::Interaction => x[0] + x[1] * x[2],
            ModelSpec::Projection { index } => x[*index],
            ModelSpec::External(_) => unreachable!("external models are evaluated in batches"),
        }
    }
}

impl Model for ModelSpec {
    fn arity(&self) -> Option<usize> {
        match self {
            ModelSpec::Linear { beta, .. } => Some(beta.len()),
            ModelSpec::Ishigami { .. } | ModelSpec::Interaction => Some(3),
            ModelSpec::Projection { .. } | ModelSpec::External(_) => None,
        }
    }

    fn evaluate(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if let ModelSpec::External(e) = self {
            return e.evaluate(x);
        }
        self.validate(x.ncols())?;
        let out: Vec<f64> = if x.nrows() >= 2 * PAR_CHUNK {
            x.axis_chunks_iter(Axis(0), PAR_CHUNK)
                .into_par_iter()
                .flat_map_iter(|chunk| chunk.rows().into_iter().map(|r| self.point(r)).collect::<Vec<_>>())
                .collect()
        } else {
            x.rows().into_iter().map(|r| self.point(r)).collect()
        };
        check_finite(&out)?;
        Ok(out)
    }
}

pub(crate) fn check_finite(out: &[f64]) -> Result<()> {
    match out.iter().position(|v| !v.is_finite()) {
        Some(row) => Err(Error::ModelEvaluation { row, message: format!("non-finite output {}", out[row]) }),
        None => Ok(()),
    }
}

/// A simulator run as a child process.
///
/// The batch is written to the child's stdin as CSV with a header
/// `x1,...,xd`; the child prints one output value per line on stdout.
/// Batches are serialized: one child process runs at a time.
pub struct ExternalModel {
    pub command: String,
    pub workdir: Option<PathBuf>,
    in_flight: Mutex<()>,
}

impl ExternalModel {
    pub fn new(command: impl Into<String>, workdir: Option<PathBuf>) -> Self {
        Self { command: command.into(), workdir, in_flight: Mutex::new(()) }
    }

    pub fn evaluate(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if self.command.trim().is_empty() {
            return Err(Error::Config("external model command is empty".into()));
        }
        let payload = encode_batch(x);
        let _guard = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());

        let mut cmd = Command::new("sh");
        cmd.arg("-c").arg(&self.command).stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::piped());
        if let Some(dir) = &self.workdir {
            cmd.current_dir(dir);
        }
        let mut child = cmd.spawn().map_err(|e| external(format!("cannot launch `{}`: {e}", self.command), String::new()))?;

        // Feed stdin from a separate thread so a child that streams output early cannot deadlock us.
        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = std::thread::spawn(move || {
            // A child that exits without reading is reported through its exit status.
            let _ = stdin.write_all(payload.as_bytes());
        });
        let mut stderr = child.stderr.take().expect("piped stderr");
        let err_reader = std::thread::spawn(move || {
            let mut buf = String::new();
            let _ = stderr.read_to_string(&mut buf);
            buf
        });
        let mut stdout = String::new();
        child.stdout.take().expect("piped stdout").read_to_string(&mut stdout)?;
        let status = child.wait()?;
        let _ = writer.join();
        let stderr = err_reader.join().unwrap_or_default();

        if !status.success() {
            return Err(external(format!("`{}` exited with {status}", self.command), stderr));
        }
        let values = decode_outputs(&stdout).map_err(|m| external(m, stderr.clone()))?;
        if values.len() != x.nrows() {
            return Err(external(format!("expected {} output lines, got {}", x.nrows(), values.len()), stderr));
        }
        check_finite(&values)?;
        Ok(values)
    }
}

impl Clone for ExternalModel {
    fn clone(&self) -> Self {
        Self::new(self.command.clone(), self.workdir.clone())
    }
}

impl fmt::Debug for ExternalModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExternalModel").field("command", &self.command).field("workdir", &self.workdir).finish()
    }
}

fn external(message: String, stderr: String) -> Error {
    Error::ExternalModel { message, stderr }
}

/// CSV encoding of a batch: header `x1,...,xd`, one newline-terminated row per point.
pub fn encode_batch(x: ArrayView2<'_, f64>) -> String {
    use std::fmt::Write as _;
    let mut s = String::with_capacity(x.len() * 24 + 16);
    let header: Vec<String> = (1..=x.ncols()).map(|i| format!("x{i}")).collect();
    s.push_str(&header.join(","));
    s.push('\n');
    for row in x.rows() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                s.push(',');
            }
            // `{:?}` is the shortest representation that round-trips exactly.
            let _ = write!(s, "{v:?}");
        }
        s.push('\n');
    }
    s
}

fn decode_outputs(stdout: &str) -> std::result::Result<Vec<f64>, String> {
    stdout
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| l.trim().parse::<f64>().map_err(|_| format!("malformed output line {}: {l:?}", i + 1)))
        .collect()
}
