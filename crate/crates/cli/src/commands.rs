//! Experiment drivers behind the CLI verbs.

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use anyhow::Context;
use shapvar_core::analytic::{self, AnalyticIndices, LinearGaussianProblem};
use shapvar_core::kriging::{self, KrigingModel};
use shapvar_core::ndarray::ArrayView2;
use shapvar_core::shapley::{self, FixedInputCheck};
use shapvar_core::{joint_design, Joint, Model, SensitivityResult, Seed};

use crate::config::{RunConfig, RunRecord};
use crate::output::{num, opt_num, path_for, Table};
use crate::CliError;

/// Counts the rows a model is asked to evaluate.
pub struct CountingModel<'a> {
    inner: &'a dyn Model,
    rows: AtomicU64,
}

impl<'a> CountingModel<'a> {
    pub fn new(inner: &'a dyn Model) -> Self {
        Self { inner, rows: AtomicU64::new(0) }
    }

    pub fn count(&self) -> u64 {
        self.rows.load(Ordering::Relaxed)
    }
}

impl Model for CountingModel<'_> {
    fn arity(&self) -> Option<usize> {
        self.inner.arity()
    }

    fn evaluate(&self, x: ArrayView2<'_, f64>) -> shapvar_core::Result<Vec<f64>> {
        self.rows.fetch_add(x.nrows() as u64, Ordering::Relaxed);
        self.inner.evaluate(x)
    }
}

/// A fitted surrogate and its validation.
pub struct SurrogateFit {
    pub model: KrigingModel,
    pub q2: Option<f64>,
    /// Calls to the true model: design plus test sample.
    pub model_evaluations: u64,
    pub path: PathBuf,
}

/// Fits the `[surrogate]` block on a Sobol' design and saves it next to the outputs.
pub fn fit_surrogate(cfg: &RunConfig) -> Result<SurrogateFit, CliError> {
    let kcfg = cfg.kriging_config()?.ok_or_else(|| CliError::Config("surrogate: section required".into()))?;
    let block = cfg.surrogate.as_ref().expect("checked above");
    let joint = cfg.joint()?;
    let model = cfg.model()?;
    let seed = Seed(cfg.estimator.seed);
    let x = joint_design(&joint, block.design_size, seed)?;
    let y = model.evaluate(x.view()).context("evaluating the learning design")?;
    let gp = kriging::fit(x.view(), &y, &kcfg).context("fitting the surrogate")?;
    let q2 = if block.test_size >= 2 {
        let xt = joint.sample(block.test_size, seed.child(1));
        let yt = model.evaluate(xt.view()).context("evaluating the test sample")?;
        Some(kriging::q2(&gp, xt.view(), &yt)?)
    } else {
        None
    };
    let path = path_for(&cfg.output.prefix, "surrogate.txt")?;
    gp.save(&path).with_context(|| format!("saving {}", path.display()))?;
    log::info!("surrogate fitted: lengthscales {:?}, Q2 {:?}", gp.lengthscales(), q2);
    Ok(SurrogateFit { model: gp, q2, model_evaluations: (block.design_size + block.test_size) as u64, path })
}

/// Closed-form indices when the configuration has one.
pub fn oracle(cfg: &RunConfig) -> Option<AnalyticIndices> {
    let Ok(Joint::Gaussian(g)) = cfg.joint() else { return None };
    let d = cfg.dim();
    let linear = |beta0: f64, beta: Vec<f64>| {
        LinearGaussianProblem::new(beta0, beta, g.clone()).and_then(|p| analytic::linear_gaussian_indices(&p)).ok()
    };
    match cfg.model.kind.as_str() {
        "linear" => linear(cfg.model.beta0.unwrap_or(0.0), cfg.model.beta.clone()?),
        "projection" => {
            let mut beta = vec![0.0; d];
            beta[cfg.model.index? - 1] = 1.0;
            linear(0.0, beta)
        }
        "interaction" => {
            let cov = g.covariance();
            let centred = g.mean().iter().all(|m| *m == 0.0);
            let pattern = cov[(0, 1)] == 0.0 && cov[(1, 2)] == 0.0;
            if !centred || !pattern {
                return None;
            }
            let s = g.std_devs();
            let rho = cov[(0, 2)] / (s[0] * s[2]);
            analytic::shapley_interaction_3d(s[0], s[1], s[2], rho).ok()
        }
        _ => None,
    }
}

pub const INDEX_HEADER: [&str; 8] = [
    "input",
    "name",
    "shapley",
    "shapley_ci",
    "first_order_full",
    "first_order_full_ci",
    "total_independent",
    "total_independent_ci",
];

fn index_row(i: usize, name: &str, r: &SensitivityResult) -> Vec<String> {
    vec![
        (i + 1).to_string(),
        name.to_string(),
        num(r.shapley[i]),
        num(r.shapley_ci[i]),
        num(r.first_order[i]),
        num(r.first_order_ci[i]),
        num(r.total[i]),
        num(r.total_ci[i]),
    ]
}

pub fn indices_table(names: &[String], r: &SensitivityResult) -> Table {
    let mut t = Table::new(INDEX_HEADER);
    for (i, name) in names.iter().enumerate() {
        t.push(index_row(i, name, r));
    }
    t
}

fn write_manifest(cfg: &RunConfig, command: &str, evaluations: u64, started: Instant) -> Result<PathBuf, CliError> {
    let mut resolved = cfg.clone();
    resolved.run = Some(RunRecord {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        evaluations,
        wall_time_s: started.elapsed().as_secs_f64(),
    });
    let path = path_for(&cfg.output.prefix, "manifest.toml")?;
    std::fs::write(&path, resolved.to_toml()).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

pub struct Analysis {
    pub result: SensitivityResult,
    pub surrogate: Option<SurrogateFit>,
    pub indices_path: PathBuf,
    pub manifest_path: PathBuf,
}

/// Single analysis; with a `[surrogate]` block the estimator runs on the fitted surrogate.
pub fn analyze(cfg: &RunConfig) -> Result<Analysis, CliError> {
    let started = Instant::now();
    let joint = cfg.joint()?;
    let est = cfg.estimator_config()?;
    log::info!("{:?} method, {} model evaluations", est.method, est.cost(joint.dim())?);
    let (result, surrogate) = match &cfg.surrogate {
        Some(_) => {
            let fit = fit_surrogate(cfg)?;
            let r = shapley::shapley(&fit.model, &joint, &est).context("estimating Shapley effects on the surrogate")?;
            (r, Some(fit))
        }
        None => {
            let model = cfg.model()?;
            (shapley::shapley(model.as_ref(), &joint, &est).context("estimating Shapley effects")?, None)
        }
    };
    let indices_path = path_for(&cfg.output.prefix, "indices.csv")?;
    indices_table(&cfg.input_names(), &result).write(&indices_path)?;
    let manifest_path = write_manifest(cfg, "analyze", result.evaluations, started)?;
    Ok(Analysis { result, surrogate, indices_path, manifest_path })
}

/// Copy of the configuration at one sweep value.
pub fn sweep_point(cfg: &RunConfig, value: f64) -> RunConfig {
    let sweep = cfg.sweep.as_ref().expect("sweep block");
    let mut c = match sweep.parameter.as_str() {
        "rho" => cfg.with_correlation(sweep.rho_pair.expect("validated"), value),
        _ => cfg.clone(),
    };
    match sweep.parameter.as_str() {
        "no" => c.estimator.no = value as usize,
        "m" => c.estimator.m = value as usize,
        _ => {}
    }
    c.sweep = None;
    c
}

const SWEEP_EXACT: [&str; 3] = ["exact_shapley", "exact_first_order_full", "exact_total_independent"];

pub struct Sweep {
    pub points: Vec<(f64, SensitivityResult, Option<AnalyticIndices>)>,
    pub path: PathBuf,
}

/// Convergence or correlation sweep written as a long-format table.
pub fn converge(cfg: &RunConfig) -> Result<Sweep, CliError> {
    let started = Instant::now();
    let sweep = cfg.sweep.as_ref().ok_or_else(|| CliError::Config("sweep: section required for converge".into()))?;
    if cfg.surrogate.is_some() {
        return Err(CliError::Config("surrogate: not supported in sweeps; fit once and use model.kind = \"surrogate\"".into()));
    }
    let names = cfg.input_names();
    let mut header = vec!["parameter", "value"];
    header.extend(INDEX_HEADER);
    header.extend(SWEEP_EXACT);
    let mut table = Table::new(header);
    let mut points = Vec::new();
    let mut evaluations = 0;
    for &value in &sweep.values {
        let point = sweep_point(cfg, value);
        point.validate()?;
        log::info!("sweep {} = {value}", sweep.parameter);
        let model = point.model()?;
        let r = shapley::shapley(model.as_ref(), &point.joint()?, &point.estimator_config()?)
            .with_context(|| format!("{} = {value}", sweep.parameter))?;
        evaluations += r.evaluations;
        let exact = oracle(&point);
        for (i, name) in names.iter().enumerate() {
            let mut row = vec![sweep.parameter.clone(), num(value)];
            row.extend(index_row(i, name, &r));
            row.push(opt_num(exact.as_ref().map(|e| e.shapley[i])));
            row.push(opt_num(exact.as_ref().map(|e| e.first_order[i])));
            row.push(opt_num(exact.as_ref().map(|e| e.total[i])));
            table.push(row);
        }
        points.push((value, r, exact));
    }
    let path = path_for(&cfg.output.prefix, "sweep.csv")?;
    table.write(&path)?;
    write_manifest(cfg, "converge", evaluations, started)?;
    Ok(Sweep { points, path })
}

/// Closed-form indices, optionally over a correlation sweep.
pub fn analytic(cfg: &RunConfig) -> Result<(Table, PathBuf), CliError> {
    let no_oracle = || {
        CliError::Config(
            "model: no closed form; analytic needs a linear or projection model with gaussian inputs, or the centred interaction model with only inputs 1 and 3 correlated"
                .into(),
        )
    };
    let names = cfg.input_names();
    let cols = ["input", "name", "shapley", "first_order_full", "total_independent"];
    let row = |i: usize, e: &AnalyticIndices| {
        vec![(i + 1).to_string(), names[i].clone(), num(e.shapley[i]), num(e.first_order[i]), num(e.total[i])]
    };
    let table = match &cfg.sweep {
        Some(s) if s.parameter == "rho" => {
            let mut header = vec!["parameter", "value"];
            header.extend(cols);
            let mut t = Table::new(header);
            for &value in &s.values {
                let e = oracle(&sweep_point(cfg, value)).ok_or_else(no_oracle)?;
                for i in 0..names.len() {
                    let mut r = vec!["rho".to_string(), num(value)];
                    r.extend(row(i, &e));
                    t.push(r);
                }
            }
            t
        }
        Some(_) => return Err(CliError::Config("sweep.parameter: analytic only sweeps rho".into())),
        None => {
            let e = oracle(cfg).ok_or_else(no_oracle)?;
            let mut t = Table::new(cols);
            for i in 0..names.len() {
                t.push(row(i, &e));
            }
            t
        }
    };
    let path = path_for(&cfg.output.prefix, "analytic.csv")?;
    table.write(&path)?;
    Ok((table, path))
}

fn fix_table(cfg: &RunConfig, check: &FixedInputCheck, shapley_sum: Option<f64>) -> Result<Table, CliError> {
    let (fixed, _) = cfg.fixed_inputs()?;
    let names = cfg.input_names();
    let mut t = Table::new(["fixed_inputs", "variance_all", "variance_fixed", "relative_decrease", "shapley_sum"]);
    t.push(vec![
        fixed.iter().map(|i| names[i].clone()).collect::<Vec<_>>().join(";"),
        num(check.variance_all),
        num(check.variance_fixed),
        num(check.relative_decrease),
        opt_num(shapley_sum),
    ]);
    Ok(t)
}

/// Factors-fixing check on the configured model (or its surrogate).
pub fn fix_check(cfg: &RunConfig) -> Result<(FixedInputCheck, PathBuf), CliError> {
    let started = Instant::now();
    let (fixed, values) = cfg.fixed_inputs()?;
    let samples = cfg.fix.as_ref().expect("checked").samples;
    let joint = cfg.joint()?;
    let seed = Seed(cfg.estimator.seed);
    let check = match &cfg.surrogate {
        Some(_) => {
            let fit = fit_surrogate(cfg)?;
            shapley::fixed_input_variance(&fit.model, &joint, &fixed, &values, samples, seed)?
        }
        None => shapley::fixed_input_variance(cfg.model()?.as_ref(), &joint, &fixed, &values, samples, seed)?,
    };
    let path = path_for(&cfg.output.prefix, "fixcheck.csv")?;
    fix_table(cfg, &check, None)?.write(&path)?;
    write_manifest(cfg, "fix-check", check.evaluations, started)?;
    Ok((check, path))
}

pub struct WeldReport {
    pub config: RunConfig,
    pub result: SensitivityResult,
    pub q2: Option<f64>,
    /// Surrogate rows evaluated by the Shapley estimator.
    pub surrogate_evaluations: u64,
    pub fix: FixedInputCheck,
    /// Sum of the Shapley effects of the fixed inputs.
    pub fixed_shapley_sum: f64,
}

/// The weld workflow: design, surrogate, random-permutation Shapley effects,
/// then a factors-fixing check on the weak coefficients.
pub fn demo_weld(cfg: &RunConfig) -> Result<WeldReport, CliError> {
    let started = Instant::now();
    let joint = cfg.joint()?;
    let est = cfg.estimator_config()?;
    let fit = fit_surrogate(cfg)?;
    let counted = CountingModel::new(&fit.model);
    let result = shapley::shapley(&counted, &joint, &est).context("estimating Shapley effects on the surrogate")?;
    let surrogate_evaluations = counted.count();

    let (fixed, values) = cfg.fixed_inputs()?;
    let samples = cfg.fix.as_ref().expect("demo config has a fix block").samples;
    let fix = shapley::fixed_input_variance(&fit.model, &joint, &fixed, &values, samples, Seed(cfg.estimator.seed))?;
    let fixed_shapley_sum = fixed.iter().map(|i| result.shapley[i]).sum();

    indices_table(&cfg.input_names(), &result).write(&path_for(&cfg.output.prefix, "indices.csv")?)?;
    fix_table(cfg, &fix, Some(fixed_shapley_sum))?.write(&path_for(&cfg.output.prefix, "fixcheck.csv")?)?;
    write_manifest(cfg, "demo weld", result.evaluations, started)?;
    Ok(WeldReport { config: cfg.clone(), result, q2: fit.q2, surrogate_evaluations, fix, fixed_shapley_sum })
}
