//! Gaussian process (kriging) surrogate: deterministic trend plus a
//! stationary anisotropic Matérn 5/2 process.
//!
//! Lengthscales are fitted by maximizing the profile log-likelihood with the
//! trend coefficients and the process variance concentrated out. A small
//! nugget, fixed as a fraction of the output variance, keeps the training
//! covariance factorizable.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::design::sobol_design;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::rng::Seed;

const SQRT5: f64 = 2.236_067_977_499_79;
const FORMAT_TAG: &str = "shapvar-kriging";
const FORMAT_VERSION: u32 = 1;

/// Matérn 5/2 correlation at lag `h` for lengthscale `theta`.
pub fn matern52(h: f64, theta: f64) -> f64 {
    let t = h.abs() / theta;
    (1.0 + SQRT5 * t + 5.0 / 3.0 * t * t) * (-SQRT5 * t).exp()
}

/// `d log k / d log theta` for the Matérn 5/2 factor at scaled lag `t = h / theta`.
fn matern52_log_derivative(t: f64) -> f64 {
    5.0 / 3.0 * t * t * (1.0 + SQRT5 * t) / (1.0 + SQRT5 * t + 5.0 / 3.0 * t * t)
}

/// Product of Matérn 5/2 factors over dimensions, with a single exponential.
fn correlation(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>, theta: &[f64]) -> f64 {
    let mut poly = 1.0;
    let mut sum_t = 0.0;
    for ((x, y), th) in a.iter().zip(b.iter()).zip(theta) {
        let t = (x - y).abs() / th;
        poly *= 1.0 + SQRT5 * t + 5.0 / 3.0 * t * t;
        sum_t += t;
    }
    poly * (-SQRT5 * sum_t).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trend {
    Constant,
    /// Constant plus all first-order terms.
    Linear,
}

impl Trend {
    fn width(self, d: usize) -> usize {
        match self {
            Trend::Constant => 1,
            Trend::Linear => d + 1,
        }
    }

    fn basis(self, x: ArrayView1<'_, f64>) -> DVector<f64> {
        match self {
            Trend::Constant => DVector::from_element(1, 1.0),
            Trend::Linear => DVector::from_iterator(x.len() + 1, std::iter::once(1.0).chain(x.iter().copied())),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Trend::Constant => "constant",
            Trend::Linear => "linear",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "constant" => Some(Trend::Constant),
            "linear" => Some(Trend::Linear),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KrigingConfig {
    pub trend: Trend,
    /// Absolute nugget variance; `None` means `1e-8 * Var(y)`.
    pub nugget: Option<f64>,
    pub restarts: usize,
    /// Per-dimension lengthscale bounds; `None` means `[1e-2, 1e2]` times each input's range.
    pub bounds: Option<Vec<(f64, f64)>>,
    /// Scrambles the space-filling restart points.
    pub seed: Seed,
}

impl Default for KrigingConfig {
    fn default() -> Self {
        Self { trend: Trend::Linear, nugget: None, restarts: 10, bounds: None, seed: Seed(0) }
    }
}

/// Start and end of one local likelihood search.
#[derive(Debug, Clone)]
pub struct Restart {
    pub initial_lengthscales: Vec<f64>,
    /// `-inf` when the initial covariance could not be factorized.
    pub initial_log_likelihood: f64,
    pub final_log_likelihood: f64,
}

/// A fitted surrogate.
#[derive(Debug, Clone)]
pub struct KrigingModel {
    inputs: Array2<f64>,
    outputs: Vec<f64>,
    trend: Trend,
    lengthscales: Vec<f64>,
    /// Nugget as a fraction of the process variance.
    nugget_ratio: f64,
    coefficients: DVector<f64>,
    process_variance: f64,
    log_likelihood: f64,
    /// Lower Cholesky factor of the training correlation matrix.
    factor: DMatrix<f64>,
    /// `R^-1 (y - F b)`.
    weights: DVector<f64>,
    /// `L^-1 F`.
    whitened_trend: DMatrix<f64>,
    /// Cholesky factor of `F' R^-1 F`.
    trend_factor: DMatrix<f64>,
    restarts: Vec<Restart>,
}

/// Profile likelihood pieces for one lengthscale vector.
struct Profile {
    log_likelihood: f64,
    factor: DMatrix<f64>,
    coefficients: DVector<f64>,
    process_variance: f64,
    weights: DVector<f64>,
    whitened_trend: DMatrix<f64>,
    trend_factor: DMatrix<f64>,
}

struct Problem<'a> {
    x: ArrayView2<'a, f64>,
    y: DVector<f64>,
    trend_matrix: DMatrix<f64>,
    nugget_ratio: f64,
}

impl<'a> Problem<'a> {
    fn new(x: ArrayView2<'a, f64>, y: &[f64], trend: Trend, nugget_ratio: f64) -> Self {
        let p = trend.width(x.ncols());
        let mut trend_matrix = DMatrix::zeros(x.nrows(), p);
        for (i, row) in x.rows().into_iter().enumerate() {
            trend_matrix.set_row(i, &trend.basis(row).transpose());
        }
        Self { x, y: DVector::from_column_slice(y), trend_matrix, nugget_ratio }
    }

    fn correlation_matrix(&self, theta: &[f64]) -> DMatrix<f64> {
        let n = self.x.nrows();
        let mut r = DMatrix::identity(n, n) * (1.0 + self.nugget_ratio);
        for i in 0..n {
            for j in 0..i {
                let c = correlation(self.x.row(i), self.x.row(j), theta);
                r[(i, j)] = c;
                r[(j, i)] = c;
            }
        }
        r
    }

    fn profile(&self, theta: &[f64]) -> Option<Profile> {
        let n = self.x.nrows() as f64;
        let r = self.correlation_matrix(theta);
        let chol = r.cholesky()?;
        let factor = chol.l();
        let whitened_trend = factor.solve_lower_triangular(&self.trend_matrix)?;
        let whitened_y = factor.solve_lower_triangular(&self.y)?;
        let gram = whitened_trend.transpose() * &whitened_trend;
        let gram_chol = gram.cholesky()?;
        let coefficients = gram_chol.solve(&(whitened_trend.transpose() * &whitened_y));
        let residual = whitened_y - &whitened_trend * &coefficients;
        let process_variance = residual.norm_squared() / n;
        if !(process_variance > 0.0) {
            return None;
        }
        let log_det: f64 = factor.diagonal().iter().map(|v| v.ln()).sum();
        let log_likelihood = -0.5 * n * process_variance.ln() - log_det;
        let weights = factor.transpose().solve_upper_triangular(&residual)?;
        Some(Profile {
            log_likelihood,
            factor,
            coefficients,
            process_variance,
            weights,
            whitened_trend,
            trend_factor: gram_chol.l(),
        })
    }

    /// Gradient of the profile log-likelihood with respect to `log theta`.
    fn gradient(&self, theta: &[f64], prof: &Profile) -> DVector<f64> {
        let n = self.x.nrows();
        let d = theta.len();
        let l_inv = prof.factor.solve_lower_triangular(&DMatrix::identity(n, n)).expect("nonsingular factor");
        let r_inv = l_inv.transpose() * &l_inv;
        let alpha = &prof.weights;
        let mut grad = DVector::zeros(d);
        for i in 0..n {
            for j in 0..i {
                let (xi, xj) = (self.x.row(i), self.x.row(j));
                let c = correlation(xi, xj, theta);
                // Off-diagonal pairs count twice in both the quadratic form and the trace.
                let quad = 2.0 * alpha[i] * alpha[j] / prof.process_variance;
                let trace = 2.0 * r_inv[(i, j)];
                for k in 0..d {
                    let t = (xi[k] - xj[k]).abs() / theta[k];
                    let dr = c * matern52_log_derivative(t);
                    grad[k] += 0.5 * dr * (quad - trace);
                }
            }
        }
        grad
    }
}

impl KrigingModel {
    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn process_variance(&self) -> f64 {
        self.process_variance
    }

    /// Nugget on the variance scale.
    pub fn nugget(&self) -> f64 {
        self.nugget_ratio * self.process_variance
    }

    pub fn trend(&self) -> Trend {
        self.trend
    }

    pub fn coefficients(&self) -> &[f64] {
        self.coefficients.as_slice()
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    pub fn restarts(&self) -> &[Restart] {
        &self.restarts
    }

    pub fn training_inputs(&self) -> &Array2<f64> {
        &self.inputs
    }

    pub fn training_outputs(&self) -> &[f64] {
        &self.outputs
    }

    fn assemble(inputs: Array2<f64>, outputs: Vec<f64>, trend: Trend, lengthscales: Vec<f64>, nugget_ratio: f64) -> Result<Self> {
        let problem = Problem::new(inputs.view(), &outputs, trend, nugget_ratio);
        let prof = problem.profile(&lengthscales).ok_or_else(|| {
            Error::IllConditioned(format!("training covariance not factorizable at lengthscales {lengthscales:?}"))
        })?;
        Ok(Self {
            inputs,
            outputs,
            trend,
            lengthscales,
            nugget_ratio,
            coefficients: prof.coefficients,
            process_variance: prof.process_variance,
            log_likelihood: prof.log_likelihood,
            factor: prof.factor,
            weights: prof.weights,
            whitened_trend: prof.whitened_trend,
            trend_factor: prof.trend_factor,
            restarts: Vec::new(),
        })
    }

    fn cross_correlation(&self, x: ArrayView1<'_, f64>) -> DVector<f64> {
        DVector::from_iterator(self.inputs.nrows(), self.inputs.rows().into_iter().map(|t| correlation(x, t, &self.lengthscales)))
    }

    fn mean_at(&self, x: ArrayView1<'_, f64>) -> f64 {
        let trend = self.trend.basis(x).dot(&self.coefficients);
        let process: f64 = self
            .inputs
            .rows()
            .into_iter()
            .zip(self.weights.iter())
            .map(|(t, w)| w * correlation(x, t, &self.lengthscales))
            .sum();
        trend + process
    }

    fn predict_at(&self, x: ArrayView1<'_, f64>) -> (f64, f64) {
        let r = self.cross_correlation(x);
        let mean = self.mean_at(x);
        let v = self.factor.solve_lower_triangular(&r).expect("nonsingular factor");
        let u = self.trend.basis(x) - self.whitened_trend.transpose() * &v;
        let w = self.trend_factor.solve_lower_triangular(&u).expect("nonsingular trend factor");
        let raw = self.process_variance * (1.0 - v.norm_squared() + w.norm_squared());
        if raw < 0.0 {
            log::debug!("clamped negative kriging variance {raw:e} to zero");
        }
        (mean, raw.max(0.0))
    }

    /// Predictive mean and variance (including trend-estimation inflation) for each row.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_dim(x.ncols())?;
        Ok(x.axis_iter(Axis(0)).into_par_iter().map(|row| self.predict_at(row)).unzip())
    }

    /// Predictive mean only; this is what the sensitivity estimators consume.
    pub fn predict_mean(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        self.check_dim(x.ncols())?;
        Ok(x.axis_iter(Axis(0)).into_par_iter().map(|row| self.mean_at(row)).collect())
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got });
        }
        Ok(())
    }

    /// Writes the surrogate as versioned plain text.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, "{FORMAT_TAG} {FORMAT_VERSION}");
        let _ = writeln!(s, "dim {}", self.dim());
        let _ = writeln!(s, "points {}", self.inputs.nrows());
        let _ = writeln!(s, "trend {}", self.trend.name());
        let _ = writeln!(s, "lengthscales {}", join(&self.lengthscales));
        let _ = writeln!(s, "nugget_ratio {:?}", self.nugget_ratio);
        let _ = writeln!(s, "nugget {:?}", self.nugget());
        let _ = writeln!(s, "process_variance {:?}", self.process_variance);
        let _ = writeln!(s, "coefficients {}", join(self.coefficients.as_slice()));
        let _ = writeln!(s, "data");
        for (row, y) in self.inputs.rows().into_iter().zip(&self.outputs) {
            let _ = writeln!(s, "{} {y:?}", join(&row.to_vec()));
        }
        s
    }

    /// Reads a surrogate written by [`KrigingModel::to_text`]. The factorization
    /// is rebuilt from the stored data, so predictions match the original exactly.
    pub fn from_text(text: &str) -> Result<Self> {
        let fmt_err = |m: &str| Error::Format(m.to_string());
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| fmt_err("empty file"))?;
        match header.split_whitespace().collect::<Vec<_>>()[..] {
            [FORMAT_TAG, v] if v.parse::<u32>() == Ok(FORMAT_VERSION) => {}
            _ => return Err(fmt_err(&format!("unsupported header {header:?}"))),
        }
        let mut field = |key: &str| -> Result<Vec<String>> {
            let line = lines.next().ok_or_else(|| fmt_err(&format!("missing `{key}`")))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(fmt_err(&format!("expected `{key}`, found {line:?}")));
            }
            Ok(parts.map(str::to_string).collect())
        };
        let nums = |v: Vec<String>| -> Result<Vec<f64>> {
            v.iter().map(|s| s.parse::<f64>().map_err(|_| Error::Format(format!("bad number {s:?}")))).collect()
        };
        let one_usize = |v: Vec<String>| -> Result<usize> {
            v.first().and_then(|s| s.parse().ok()).ok_or_else(|| Error::Format("bad count".into()))
        };
        let dim = one_usize(field("dim")?)?;
        let points = one_usize(field("points")?)?;
        let trend = field("trend")?.first().and_then(|s| Trend::parse(s)).ok_or_else(|| fmt_err("bad trend"))?;
        let lengthscales = nums(field("lengthscales")?)?;
        let nugget_ratio = nums(field("nugget_ratio")?)?.first().copied().ok_or_else(|| fmt_err("bad nugget_ratio"))?;
        let _nugget = field("nugget")?;
        let _variance = field("process_variance")?;
        let _coefficients = field("coefficients")?;
        field("data")?;
        if lengthscales.len() != dim {
            return Err(fmt_err("lengthscale count does not match dim"));
        }
        let mut flat = Vec::with_capacity(points * dim);
        let mut outputs = Vec::with_capacity(points);
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let row = nums(line.split_whitespace().map(str::to_string).collect())?;
            if row.len() != dim + 1 {
                return Err(fmt_err(&format!("data row has {} values, expected {}", row.len(), dim + 1)));
            }
            flat.extend_from_slice(&row[..dim]);
            outputs.push(row[dim]);
        }
        if outputs.len() != points {
            return Err(fmt_err(&format!("expected {points} data rows, found {}", outputs.len())));
        }
        let inputs = Array2::from_shape_vec((points, dim), flat).expect("shape");
        Self::assemble(inputs, outputs, trend, lengthscales, nugget_ratio)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// The predictive mean as a batch model.
impl Model for KrigingModel {
    fn arity(&self) -> Option<usize> {
        Some(self.dim())
    }

    fn evaluate(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        self.predict_mean(x)
    }
}

/// Wraps a fitted surrogate for use by the sensitivity estimators.
pub fn as_model(model: &KrigingModel) -> &dyn Model {
    model
}

/// Fits a surrogate to `(x, y)` by maximum likelihood.
pub fn fit(x: ArrayView2<'_, f64>, y: &[f64], cfg: &KrigingConfig) -> Result<KrigingModel> {
    let (n, d) = x.dim();
    if y.len() != n {
        return Err(Error::Dimension { expected: n, got: y.len() });
    }
    if d == 0 {
        return Err(Error::Config("kriging needs at least one input".into()));
    }
    let p = cfg.trend.width(d);
    if n < p + 1 {
        return Err(Error::Config(format!("{n} points are too few for a {} trend in {d} dimensions", cfg.trend.name())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Config("training data contains non-finite values".into()));
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    let var_y = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    if !(var_y > 0.0) {
        return Err(Error::DegenerateOutput("training outputs are constant".into()));
    }
    let nugget_ratio = match cfg.nugget {
        None => 1e-8,
        Some(v) if v >= 0.0 => v / var_y,
        Some(v) => return Err(Error::Config(format!("nugget {v} must be nonnegative"))),
    };
    if nugget_ratio == 0.0 {
        check_distinct_rows(x)?;
    }
    let bounds = log_bounds(x, cfg.bounds.as_deref())?;
    let problem = Problem::new(x, y, cfg.trend, nugget_ratio);

    // First start at the centre of the box, the rest space-filling.
    let restarts = cfg.restarts.max(1);
    let design = sobol_design(restarts - 1, d, cfg.seed)?;
    let starts: Vec<DVector<f64>> = std::iter::once(DVector::from_iterator(d, bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi))))
        .chain(design.rows().into_iter().map(|u| {
            DVector::from_iterator(d, u.iter().zip(&bounds).map(|(&u, &(lo, hi))| lo + (hi - lo) * u))
        }))
        .collect();
    let searches: Vec<(Restart, Option<Vec<f64>>)> =
        starts.into_par_iter().map(|z0| local_search(&problem, &bounds, z0)).collect();

    let best = searches
        .iter()
        .enumerate()
        .filter_map(|(i, (r, th))| th.as_ref().map(|_| (i, r.final_log_likelihood)))
        .fold(None, |acc: Option<(usize, f64)>, (i, ll)| match acc {
            Some((_, best)) if best >= ll => acc,
            _ => Some((i, ll)),
        });
    let Some((best, _)) = best else {
        return Err(if searches.iter().all(|(r, _)| r.initial_log_likelihood == f64::NEG_INFINITY) {
            Error::IllConditioned("no restart produced a factorizable covariance".into())
        } else {
            Error::FitFailure("every likelihood search failed".into())
        });
    };
    let theta = searches[best].1.clone().expect("best restart succeeded");
    let mut model = KrigingModel::assemble(x.to_owned(), y.to_vec(), cfg.trend, theta, nugget_ratio)?;
    model.restarts = searches.into_iter().map(|(r, _)| r).collect();
    Ok(model)
}

fn check_distinct_rows(x: ArrayView2<'_, f64>) -> Result<()> {
    for i in 0..x.nrows() {
        for j in 0..i {
            if x.row(i).iter().zip(x.row(j).iter()).all(|(a, b)| (a - b).abs() <= 1e-12) {
                return Err(Error::IllConditioned(format!("rows {j} and {i} coincide and the nugget is zero")));
            }
        }
    }
    Ok(())
}

/// Bounds on `log theta` per dimension.
fn log_bounds(x: ArrayView2<'_, f64>, bounds: Option<&[(f64, f64)]>) -> Result<Vec<(f64, f64)>> {
    let d = x.ncols();
    match bounds {
        Some(b) => {
            if b.len() != d {
                return Err(Error::Dimension { expected: d, got: b.len() });
            }
            b.iter()
                .map(|&(lo, hi)| {
                    if lo > 0.0 && lo < hi && hi.is_finite() {
                        Ok((lo.ln(), hi.ln()))
                    } else {
                        Err(Error::Config(format!("lengthscale bounds [{lo}, {hi}] must satisfy 0 < lo < hi")))
                    }
                })
                .collect()
        }
        None => x
            .columns()
            .into_iter()
            .map(|c| {
                let (lo, hi) = c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
                let range = if hi > lo { hi - lo } else { 1.0 };
                Ok(((1e-2 * range).ln(), (1e2 * range).ln()))
            })
            .collect(),
    }
}

/// Negative profile log-likelihood at `z = log theta`, with the pieces the gradient needs.
fn objective(problem: &Problem<'_>, z: &DVector<f64>) -> Option<(f64, Profile)> {
    let theta: Vec<f64> = z.iter().map(|v| v.exp()).collect();
    let prof = problem.profile(&theta)?;
    Some((-prof.log_likelihood, prof))
}

fn objective_gradient(problem: &Problem<'_>, z: &DVector<f64>, prof: &Profile) -> DVector<f64> {
    let theta: Vec<f64> = z.iter().map(|v| v.exp()).collect();
    -problem.gradient(&theta, prof)
}

/// Coordinates pinned at a bound with the gradient pushing outward.
fn active_set(z: &DVector<f64>, g: &DVector<f64>, bounds: &[(f64, f64)]) -> Vec<bool> {
    z.iter().zip(g.iter()).zip(bounds).map(|((&z, &g), &(lo, hi))| (z <= lo && g > 0.0) || (z >= hi && g < 0.0)).collect()
}

fn project(z: DVector<f64>, bounds: &[(f64, f64)]) -> DVector<f64> {
    DVector::from_iterator(z.len(), z.iter().zip(bounds).map(|(&v, &(lo, hi))| v.clamp(lo, hi)))
}

/// Projected BFGS with Armijo backtracking inside the log-lengthscale box.
/// Every accepted step lowers the objective.
fn local_search(problem: &Problem<'_>, bounds: &[(f64, f64)], z0: DVector<f64>) -> (Restart, Option<Vec<f64>>) {
    const MAX_ITER: usize = 200;
    let initial_lengthscales: Vec<f64> = z0.iter().map(|v| v.exp()).collect();
    let Some((mut f, prof0)) = objective(problem, &z0) else {
        let r = Restart { initial_lengthscales, initial_log_likelihood: f64::NEG_INFINITY, final_log_likelihood: f64::NEG_INFINITY };
        return (r, None);
    };
    let initial_log_likelihood = -f;
    let mut g = objective_gradient(problem, &z0, &prof0);
    let d = z0.len();
    let mut z = z0;
    let mut h = DMatrix::identity(d, d);
    let mut active = active_set(&z, &g, bounds);
    for _ in 0..MAX_ITER {
        let mut pg = g.clone();
        for (k, &a) in active.iter().enumerate() {
            if a {
                pg[k] = 0.0;
            }
        }
        if pg.amax() < 1e-6 * (1.0 + f.abs()) {
            break;
        }
        let mut dir = -(&h * &pg);
        for (k, &a) in active.iter().enumerate() {
            if a {
                dir[k] = 0.0;
            }
        }
        if pg.dot(&dir) >= 0.0 {
            h = DMatrix::identity(d, d);
            dir = -pg.clone();
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial = project(&z + &dir * step, bounds);
            let moved = &trial - &z;
            if moved.amax() == 0.0 {
                break;
            }
            if let Some((ft, prof)) = objective(problem, &trial) {
                if ft <= f + 1e-4 * g.dot(&moved) {
                    let gt = objective_gradient(problem, &trial, &prof);
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((z_new, f_new, g_new)) = accepted else { break };
        let s = &z_new - &z;
        let yv = &g_new - &g;
        let sy = s.dot(&yv);
        let improvement = f - f_new;
        z = z_new;
        f = f_new;
        g = g_new;
        let now_active = active_set(&z, &g, bounds);
        if now_active != active {
            h = DMatrix::identity(d, d);
            active = now_active;
        } else if sy > 1e-12 {
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(d, d);
            let left = &eye - &s * yv.transpose() * rho;
            let right = &eye - &yv * s.transpose() * rho;
            h = left * h * right + &s * s.transpose() * rho;
        }
        if improvement <= 1e-10 * (1.0 + f.abs()) {
            break;
        }
    }
    let theta = z.iter().map(|v| v.exp()).collect();
    (Restart { initial_lengthscales, initial_log_likelihood, final_log_likelihood: -f }, Some(theta))
}

/// Profile log-likelihood at given lengthscales (constants dropped).
pub fn profile_log_likelihood(x: ArrayView2<'_, f64>, y: &[f64], trend: Trend, nugget_ratio: f64, theta: &[f64]) -> Option<f64> {
    Problem::new(x, y, trend, nugget_ratio).profile(theta).map(|p| p.log_likelihood)
}

/// Analytic gradient of [`profile_log_likelihood`] with respect to `log theta`.
pub fn profile_log_likelihood_gradient(x: ArrayView2<'_, f64>, y: &[f64], trend: Trend, nugget_ratio: f64, theta: &[f64]) -> Option<Vec<f64>> {
    let problem = Problem::new(x, y, trend, nugget_ratio);
    let prof = problem.profile(theta)?;
    Some(problem.gradient(theta, &prof).as_slice().to_vec())
}

/// Predictivity coefficient `1 - SSE / SST` on a test sample.
pub fn q2(model: &dyn Model, x_test: ArrayView2<'_, f64>, y_test: &[f64]) -> Result<f64> {
    if y_test.len() != x_test.nrows() {
        return Err(Error::Dimension { expected: x_test.nrows(), got: y_test.len() });
    }
    let pred = model.evaluate(x_test)?;
    q2_from_predictions(&pred, y_test)
}

pub fn q2_from_predictions(pred: &[f64], y_test: &[f64]) -> Result<f64> {
    if y_test.len() < 2 || pred.len() != y_test.len() {
        return Err(Error::Config("Q2 needs at least two test points and one prediction per point".into()));
    }
    let mean = y_test.iter().sum::<f64>() / y_test.len() as f64;
    let sst: f64 = y_test.iter().map(|y| (y - mean).powi(2)).sum();
    if !(sst > 0.0) {
        return Err(Error::DegenerateOutput("test outputs are constant".into()));
    }
    let sse: f64 = y_test.iter().zip(pred).map(|(y, p)| (y - p).powi(2)).sum();
    Ok(1.0 - sse / sst)
}
