//! Weld inspection demo: eleven Gaussian inputs (four elastic coefficients
//! and seven grain orientations) with correlated orientations.
//!
//! The response is a synthetic polynomial standing in for the wave
//! propagation code, so index values are illustrative only. The three
//! coefficients C13, C33 and C55 enter additively with small weights, which
//! makes them the natural candidates for a factors-fixing check.

use shapvar_core::ndarray::ArrayView2;
use shapvar_core::{Model, Result};

use crate::config::{DistributionBlock, EstimatorBlock, FixBlock, ModelBlock, OutputBlock, RunConfig, SurrogateBlock};

pub const DIM: usize = 11;

pub const NAMES: [&str; DIM] = ["C11", "C13", "C33", "C55", "Or1", "Or2", "Or3", "Or4", "Or5", "Or6", "Or7"];

/// Nominal means: elastic coefficients in GPa, orientations in degrees.
pub const MEAN: [f64; DIM] = [250.0, 130.0, 210.0, 110.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0];
pub const STD: [f64; DIM] = [12.5, 6.5, 10.5, 5.5, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0];

/// Correlation between the seven orientations.
pub const ORIENTATION_CORRELATION: [[f64; 7]; 7] = [
    [1.00, 0.80, 0.74, 0.69, 0.31, 0.23, 0.20],
    [0.80, 1.00, 0.64, 0.53, 0.59, 0.51, 0.46],
    [0.74, 0.64, 1.00, 0.25, 0.60, 0.57, 0.54],
    [0.69, 0.53, 0.25, 1.00, -0.25, -0.35, -0.33],
    [0.31, 0.59, 0.60, -0.25, 1.00, 0.96, 0.84],
    [0.23, 0.51, 0.57, -0.35, 0.96, 1.00, 0.95],
    [0.20, 0.46, 0.54, -0.33, 0.84, 0.95, 1.00],
];

/// Linear weights on the standardized inputs.
const LINEAR: [f64; DIM] = [0.9, 0.35, 0.4, 0.35, 1.0, 0.3, 0.9, 0.7, 0.35, 0.3, 0.5];

/// Positions of the three weak coefficients, 0-based.
pub const WEAK_INPUTS: [usize; 3] = [1, 2, 3];

/// `y = sum_i w_i z_i + 0.25 z_Or1^2 + 0.3 z_Or3 z_Or5 + 0.2 z_C11 z_Or4 - 0.15 z_Or7^2`
/// with `z_i = (x_i - mean_i) / std_i`.
#[derive(Debug, Clone, Copy, Default)]
pub struct WeldModel;

impl WeldModel {
    pub fn point(x: &[f64]) -> f64 {
        let z: Vec<f64> = x.iter().zip(MEAN.iter().zip(&STD)).map(|(v, (m, s))| (v - m) / s).collect();
        let linear: f64 = z.iter().zip(&LINEAR).map(|(z, w)| z * w).sum();
        linear + 0.25 * z[4] * z[4] + 0.3 * z[6] * z[8] + 0.2 * z[0] * z[7] - 0.15 * z[10] * z[10]
    }
}

impl Model for WeldModel {
    fn arity(&self) -> Option<usize> {
        Some(DIM)
    }

    fn evaluate(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if x.ncols() != DIM {
            return Err(shapvar_core::Error::Dimension { expected: DIM, got: x.ncols() });
        }
        Ok(x.rows().into_iter().map(|r| Self::point(&r.to_vec())).collect())
    }
}

/// Full 11 x 11 input correlation: coefficients independent of everything.
pub fn correlation() -> Vec<Vec<f64>> {
    (0..DIM)
        .map(|i| {
            (0..DIM)
                .map(|j| match (i.checked_sub(4), j.checked_sub(4)) {
                    (Some(a), Some(b)) => ORIENTATION_CORRELATION[a][b],
                    _ if i == j => 1.0,
                    _ => 0.0,
                })
                .collect()
        })
        .collect()
}

/// Demo configuration: 500-point Sobol' design, kriging surrogate, random
/// permutations with `m = 10^4`, `Ni = 3`, `No = 1`, `Nv = 10^4`, then the
/// three weak coefficients fixed at their means.
pub fn demo_config(seed: u64) -> RunConfig {
    RunConfig {
        model: ModelBlock { kind: "weld".into(), ..Default::default() },
        distribution: DistributionBlock {
            kind: "gaussian".into(),
            names: Some(NAMES.iter().map(|s| s.to_string()).collect()),
            mean: Some(MEAN.to_vec()),
            std: Some(STD.to_vec()),
            correlation: Some(correlation()),
            marginals: None,
        },
        estimator: EstimatorBlock { method: "random".into(), ni: 3, no: 1, nv: 10_000, m: 10_000, seed },
        sweep: None,
        surrogate: Some(SurrogateBlock { design_size: 500, trend: "linear".into(), nugget: None, restarts: 4, test_size: 2000 }),
        fix: Some(FixBlock { inputs: WEAK_INPUTS.iter().map(|i| i + 1).collect(), values: None, samples: 10_000 }),
        output: OutputBlock { prefix: "weld".into() },
        run: None,
    }
}
