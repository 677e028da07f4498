//! Run configuration: a TOML file with flat sections.
//!
//! Positions in the file (model projection index, sweep pair, fixed inputs)
//! are 1-based; everything is converted to 0-based before reaching the library.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shapvar_core::inputs::{CopulaJoint, GaussianJoint, Joint, Marginal};
use shapvar_core::kriging::{KrigingConfig, KrigingModel, Trend};
use shapvar_core::models::{ExternalModel, Model, ModelSpec};
use shapvar_core::nalgebra::DMatrix;
use shapvar_core::{EstimatorConfig, IndexSet, Method, Seed};

use crate::weld::WeldModel;
use crate::CliError;

/// Largest accepted correlation magnitude in a sweep.
pub const RHO_LIMIT: f64 = 0.9999;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelBlock,
    pub distribution: DistributionBlock,
    pub estimator: EstimatorBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surrogate: Option<SurrogateBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fix: Option<FixBlock>,
    #[serde(default)]
    pub output: OutputBlock,
    /// Written into manifests; ignored on input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunRecord>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    /// linear | ishigami | interaction | projection | external | surrogate | weld
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workdir: Option<PathBuf>,
    /// Saved surrogate for `kind = "surrogate"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionBlock {
    /// gaussian | copula
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<Vec<f64>>,
    /// Full correlation matrix (latent for copulas); identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marginals: Option<Vec<MarginalBlock>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginalBlock {
    /// uniform | normal
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorBlock {
    /// exact | random
    pub method: String,
    #[serde(default = "default_ni")]
    pub ni: usize,
    #[serde(default = "default_one")]
    pub no: usize,
    pub nv: usize,
    #[serde(default)]
    pub m: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_ni() -> usize {
    3
}

fn default_one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    /// no | m | rho
    pub parameter: String,
    pub values: Vec<f64>,
    /// The two inputs whose correlation a `rho` sweep sets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_pair: Option<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateBlock {
    pub design_size: usize,
    #[serde(default = "default_trend")]
    pub trend: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nugget: Option<f64>,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    /// Random test sample for Q2; 0 skips validation.
    #[serde(default)]
    pub test_size: usize,
}

fn default_trend() -> String {
    "linear".into()
}

fn default_restarts() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixBlock {
    pub inputs: Vec<usize>,
    /// Physical values; marginal means when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub prefix: PathBuf,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { prefix: PathBuf::from("shapvar") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub version: String,
    pub evaluations: u64,
    pub wall_time_s: f64,
}

fn bad(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {msg}"))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    pub fn dim(&self) -> usize {
        let d = &self.distribution;
        d.mean
            .as_ref()
            .map(Vec::len)
            .or(d.marginals.as_ref().map(Vec::len))
            .or(d.correlation.as_ref().map(Vec::len))
            .unwrap_or(0)
    }

    pub fn input_names(&self) -> Vec<String> {
        match &self.distribution.names {
            Some(n) => n.clone(),
            None => (1..=self.dim()).map(|i| format!("X{i}")).collect(),
        }
    }

    /// Checks cross-block consistency; every error names the offending key.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.estimator.seed > i64::MAX as u64 {
            return Err(bad("estimator.seed", "must fit in a signed 64-bit integer"));
        }
        let d = self.dim();
        if d == 0 {
            return Err(bad("distribution", "no inputs: give `mean` (gaussian) or `marginals` (copula)"));
        }
        self.joint()?;
        self.estimator_config()?;
        self.validate_model(d)?;
        if let Some(names) = &self.distribution.names {
            if names.len() != d {
                return Err(bad("distribution.names", format!("{} names for {d} inputs", names.len())));
            }
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(bad("sweep.values", "grid is empty"));
            }
            match s.parameter.as_str() {
                "no" | "m" => {
                    if s.values.iter().any(|v| !(*v >= 1.0 && v.fract() == 0.0)) {
                        return Err(bad("sweep.values", "loop sizes must be positive integers"));
                    }
                    if s.parameter == "m" && self.estimator.method != "random" {
                        return Err(bad("sweep.parameter", "an `m` sweep needs estimator.method = \"random\""));
                    }
                }
                "rho" => {
                    let [i, j] = s.rho_pair.ok_or_else(|| bad("sweep.rho_pair", "required for a rho sweep"))?;
                    if i == j || i == 0 || j == 0 || i > d || j > d {
                        return Err(bad("sweep.rho_pair", format!("[{i}, {j}] is not a pair of distinct inputs in 1..={d}")));
                    }
                    if s.values.iter().any(|v| !v.is_finite() || v.abs() > 1.0) {
                        return Err(bad("sweep.values", "correlations must lie in [-1, 1]"));
                    }
                }
                other => return Err(bad("sweep.parameter", format!("unknown parameter {other:?} (no | m | rho)"))),
            }
        }
        if let Some(s) = &self.surrogate {
            self.kriging_config()?;
            if s.design_size < d + 2 {
                return Err(bad("surrogate.design_size", format!("{} points are too few for {d} inputs", s.design_size)));
            }
            if s.test_size == 1 {
                return Err(bad("surrogate.test_size", "Q2 needs at least two test points"));
            }
        }
        if let Some(f) = &self.fix {
            self.fixed_inputs()?;
            if f.samples < 2 {
                return Err(bad("fix.samples", "need at least two samples"));
            }
        }
        Ok(())
    }

    fn validate_model(&self, d: usize) -> Result<(), CliError> {
        let m = &self.model;
        match m.kind.as_str() {
            "linear" => {
                let beta = m.beta.as_ref().ok_or_else(|| bad("model.beta", "required for a linear model"))?;
                if beta.len() != d {
                    return Err(bad("model.beta", format!("{} coefficients for {d} inputs", beta.len())));
                }
            }
            "ishigami" | "interaction" if d != 3 => return Err(bad("model.kind", format!("{} needs 3 inputs, got {d}", m.kind))),
            "ishigami" | "interaction" => {}
            "projection" => match m.index {
                Some(i) if (1..=d).contains(&i) => {}
                _ => return Err(bad("model.index", format!("must be a 1-based input position in 1..={d}"))),
            },
            "external" => {
                if m.command.as_deref().map_or(true, |c| c.trim().is_empty()) {
                    return Err(bad("model.command", "required for an external model"));
                }
            }
            "surrogate" => {
                if m.path.is_none() {
                    return Err(bad("model.path", "required for a surrogate model"));
                }
            }
            "weld" if d != crate::weld::DIM => return Err(bad("model.kind", format!("weld needs {} inputs, got {d}", crate::weld::DIM))),
            "weld" => {}
            other => {
                return Err(bad("model.kind", format!("unknown model {other:?} (linear | ishigami | interaction | projection | external | surrogate | weld)")))
            }
        }
        Ok(())
    }

    fn correlation_matrix(&self, d: usize) -> Result<DMatrix<f64>, CliError> {
        match &self.distribution.correlation {
            None => Ok(DMatrix::identity(d, d)),
            Some(rows) => {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(bad("distribution.correlation", format!("must be a {d} x {d} matrix")));
                }
                if (0..d).any(|i| rows[i][i] != 1.0) {
                    return Err(bad("distribution.correlation", "diagonal entries must be 1"));
                }
                Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
            }
        }
    }

    pub fn joint(&self) -> Result<Joint, CliError> {
        let dist = &self.distribution;
        let d = self.dim();
        let corr = self.correlation_matrix(d)?;
        match dist.kind.as_str() {
            "gaussian" => {
                let mean = dist.mean.clone().ok_or_else(|| bad("distribution.mean", "required for a gaussian distribution"))?;
                let std = dist.std.clone().unwrap_or_else(|| vec![1.0; d]);
                if std.len() != d {
                    return Err(bad("distribution.std", format!("{} values for {d} inputs", std.len())));
                }
                if std.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                    return Err(bad("distribution.std", "standard deviations must be positive"));
                }
                if dist.marginals.is_some() {
                    return Err(bad("distribution.marginals", "only valid for kind = \"copula\""));
                }
                GaussianJoint::from_correlation(mean, &std, &corr)
                    .map(Joint::from)
                    .map_err(|e| bad("distribution.correlation", e))
            }
            "copula" => {
                let marginals = dist.marginals.as_ref().ok_or_else(|| bad("distribution.marginals", "required for a copula"))?;
                if dist.mean.is_some() || dist.std.is_some() {
                    return Err(bad("distribution", "mean and std are set by the copula marginals"));
                }
                let marginals = marginals
                    .iter()
                    .enumerate()
                    .map(|(i, m)| match (m.kind.as_str(), m.lower, m.upper) {
                        ("uniform", Some(lower), Some(upper)) => Ok(Marginal::Uniform { lower, upper }),
                        ("uniform", _, _) => Err(bad(&format!("distribution.marginals[{}]", i + 1), "uniform needs lower and upper")),
                        ("normal", None, None) => Ok(Marginal::StandardNormal),
                        (other, _, _) => Err(bad(&format!("distribution.marginals[{}]", i + 1), format!("unknown marginal {other:?} (uniform | normal)"))),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                CopulaJoint::new(corr, marginals).map(Joint::from).map_err(|e| bad("distribution", e))
            }
            other => Err(bad("distribution.kind", format!("unknown distribution {other:?} (gaussian | copula)"))),
        }
    }

    pub fn estimator_config(&self) -> Result<EstimatorConfig, CliError> {
        let e = &self.estimator;
        let method = match e.method.as_str() {
            "exact" => Method::Exact,
            "random" => Method::Random,
            other => return Err(bad("estimator.method", format!("unknown method {other:?} (exact | random)"))),
        };
        let cfg = EstimatorConfig { method, ni: e.ni, no: e.no, nv: e.nv, m: e.m, seed: Seed(e.seed) };
        cfg.validate().map_err(|err| bad("estimator", err))?;
        if method == Method::Exact && self.dim() > shapvar_core::shapley::MAX_EXACT_DIM {
            return Err(bad("estimator.method", format!("exact enumeration is limited to {} inputs", shapvar_core::shapley::MAX_EXACT_DIM)));
        }
        Ok(cfg)
    }

    pub fn kriging_config(&self) -> Result<Option<KrigingConfig>, CliError> {
        let Some(s) = &self.surrogate else { return Ok(None) };
        let trend = match s.trend.as_str() {
            "linear" => Trend::Linear,
            "constant" => Trend::Constant,
            other => return Err(bad("surrogate.trend", format!("unknown trend {other:?} (linear | constant)"))),
        };
        if let Some(n) = s.nugget {
            if !(n >= 0.0 && n.is_finite()) {
                return Err(bad("surrogate.nugget", "must be nonnegative"));
            }
        }
        if s.restarts == 0 {
            return Err(bad("surrogate.restarts", "must be at least 1"));
        }
        Ok(Some(KrigingConfig { trend, nugget: s.nugget, restarts: s.restarts, bounds: None, seed: Seed(self.estimator.seed) }))
    }

    /// Fixed inputs (0-based) and their values.
    pub fn fixed_inputs(&self) -> Result<(IndexSet, Vec<f64>), CliError> {
        let f = self.fix.as_ref().ok_or_else(|| bad("fix", "section required"))?;
        let d = self.dim();
        if f.inputs.iter().any(|&i| i == 0 || i > d) {
            return Err(bad("fix.inputs", format!("positions are 1-based in 1..={d}")));
        }
        let set = IndexSet::new(f.inputs.iter().map(|i| i - 1), d).map_err(|e| bad("fix.inputs", e))?;
        if set.is_empty() || set.len() >= d {
            return Err(bad("fix.inputs", "must be a nonempty proper subset of the inputs"));
        }
        let values = match &f.values {
            Some(v) if v.len() != f.inputs.len() => return Err(bad("fix.values", format!("{} values for {} inputs", v.len(), f.inputs.len()))),
            Some(v) => {
                // Reorder to increasing position.
                let mut pairs: Vec<(usize, f64)> = f.inputs.iter().copied().zip(v.iter().copied()).collect();
                pairs.sort_by_key(|p| p.0);
                pairs.into_iter().map(|p| p.1).collect()
            }
            None => {
                let means = self.joint()?.marginal_means();
                set.iter().map(|i| means[i]).collect()
            }
        };
        Ok((set, values))
    }

    /// Builds the model; a `surrogate` model is loaded from disk.
    pub fn model(&self) -> Result<Box<dyn Model>, CliError> {
        let m = &self.model;
        Ok(match m.kind.as_str() {
            "linear" => Box::new(ModelSpec::Linear { beta0: m.beta0.unwrap_or(0.0), beta: m.beta.clone().unwrap_or_default() }),
            "ishigami" => Box::new(ModelSpec::Ishigami { a: m.a.unwrap_or(7.0), b: m.b.unwrap_or(0.1) }),
            "interaction" => Box::new(ModelSpec::Interaction),
            "projection" => Box::new(ModelSpec::Projection { index: m.index.unwrap_or(1) - 1 }),
            "external" => Box::new(ModelSpec::External(ExternalModel::new(m.command.clone().unwrap_or_default(), m.workdir.clone()))),
            "surrogate" => {
                let path = m.path.as_ref().expect("validated");
                let gp = KrigingModel::load(path).map_err(|e| bad("model.path", format!("{}: {e}", path.display())))?;
                if gp.dim() != self.dim() {
                    return Err(bad("model.path", format!("surrogate has {} inputs, distribution has {}", gp.dim(), self.dim())));
                }
                Box::new(gp)
            }
            "weld" => Box::new(WeldModel),
            _ => unreachable!("validated"),
        })
    }

    /// Copy with one correlation entry replaced (clamped to `RHO_LIMIT`).
    /// `pair` holds distinct 1-based positions, as in `sweep.rho_pair`.
    pub fn with_correlation(&self, pair: [usize; 2], rho: f64) -> Self {
        let d = self.dim();
        assert!(
            pair[0] != pair[1] && (1..=d).contains(&pair[0]) && (1..=d).contains(&pair[1]),
            "rho pair {pair:?} is not two distinct positions in 1..={d}"
        );
        let mut rows = self.distribution.correlation.clone().unwrap_or_else(|| {
            (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
        });
        let r = if rho.abs() > RHO_LIMIT {
            log::warn!("correlation {rho} clamped to {}", RHO_LIMIT.copysign(rho));
            RHO_LIMIT.copysign(rho)
        } else {
            rho
        };
        let (i, j) = (pair[0] - 1, pair[1] - 1);
        rows[i][j] = r;
        rows[j][i] = r;
        let mut out = self.clone();
        out.distribution.correlation = Some(rows);
        out
    }
}
