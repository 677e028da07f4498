//! Closed-form indices for linear models of Gaussian inputs and for the
//! `X1 + X2 X3` interaction model.
//!
//! The general route enumerates every subset `u` once, computes the closed
//! variance `tau2(u) = Var(E[Y | X_u]) = b' S_{.u} S_uu^-1 S_{u.} b` from the
//! conditioning formulas, and combines the subsets with the Shapley weights.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::inputs::GaussianJoint;

/// Subset enumeration is `O(2^d d^3)`; beyond this it is refused.
pub const MAX_ENUMERATION_DIM: usize = 15;
const MAX_CONDITION: f64 = 1e12;

/// `Y = beta0 + beta' X` with `X ~ N(mu, Sigma)`.
#[derive(Debug, Clone)]
pub struct LinearGaussianProblem {
    pub beta0: f64,
    pub beta: Vec<f64>,
    pub joint: GaussianJoint,
}

impl LinearGaussianProblem {
    pub fn new(beta0: f64, beta: Vec<f64>, joint: GaussianJoint) -> Result<Self> {
        if beta.len() != joint.dim() {
            return Err(Error::Dimension { expected: joint.dim(), got: beta.len() });
        }
        Ok(Self { beta0, beta, joint })
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    /// `Var(Y) = beta' Sigma beta`.
    pub fn variance(&self) -> f64 {
        let b = DVector::from_column_slice(&self.beta);
        (b.transpose() * self.joint.covariance() * &b)[(0, 0)]
    }
}

/// Exact indices, normalized by `variance`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticIndices {
    pub shapley: Vec<f64>,
    pub first_order: Vec<f64>,
    pub total: Vec<f64>,
    pub variance: f64,
}

/// `tau2(u)` for every subset mask `u` of `{0, ..., d-1}`.
pub fn closed_variances(p: &LinearGaussianProblem) -> Result<Vec<f64>> {
    let d = p.dim();
    if d > MAX_ENUMERATION_DIM {
        return Err(Error::Size(format!("subset enumeration needs d <= {MAX_ENUMERATION_DIM}, got {d}")));
    }
    let sigma = p.joint.covariance();
    let beta = DVector::from_column_slice(&p.beta);
    // Cov(X_k, Y) for every k.
    let cov_y = sigma * &beta;
    let variance = p.variance();
    let mut tau2 = vec![0.0; 1 << d];
    for mask in 1..(1usize << d) {
        if mask == (1 << d) - 1 {
            tau2[mask] = variance;
            continue;
        }
        let u: Vec<usize> = (0..d).filter(|i| mask >> i & 1 == 1).collect();
        let block = DMatrix::from_fn(u.len(), u.len(), |a, b| sigma[(u[a], u[b])]);
        let w = DVector::from_iterator(u.len(), u.iter().map(|&k| cov_y[k]));
        tau2[mask] = w.dot(&spd_solve(block, &w)?);
    }
    Ok(tau2)
}

/// Solves `A x = b` for symmetric positive-definite `A` through its
/// eigendecomposition, refusing near-singular blocks.
fn spd_solve(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let eig = SymmetricEigen::new(a);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) || max / min > MAX_CONDITION {
        return Err(Error::InvalidDistribution(format!(
            "singular conditioning block (eigenvalues in [{min:e}, {max:e}])"
        )));
    }
    let qtb = eig.eigenvectors.transpose() * b;
    let scaled = qtb.component_div(&eig.eigenvalues);
    Ok(&eig.eigenvectors * scaled)
}

/// Shapley allocation of a cost table indexed by subset mask:
/// `sum_{u not containing i} |u|! (d - |u| - 1)! / d! (c(u + i) - c(u))`.
pub fn shapley_from_costs(costs: &[f64], d: usize) -> Vec<f64> {
    assert_eq!(costs.len(), 1 << d, "cost table must have 2^d entries");
    // weight[k] = k! (d-k-1)! / d! = 1 / (d * C(d-1, k))
    let weight: Vec<f64> = (0..d).map(|k| 1.0 / (d as f64 * binomial(d - 1, k))).collect();
    (0..d)
        .map(|i| {
            let bit = 1usize << i;
            (0..(1usize << d))
                .filter(|u| u & bit == 0)
                .map(|u| weight[u.count_ones() as usize] * (costs[u | bit] - costs[u]))
                .sum()
        })
        .collect()
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Exact Shapley effects of a linear Gaussian model.
pub fn shapley_linear_gaussian(p: &LinearGaussianProblem) -> Result<Vec<f64>> {
    Ok(linear_gaussian_indices(p)?.shapley)
}

/// Exact full first-order and independent total indices of a linear Gaussian model.
pub fn sobol_linear_gaussian(p: &LinearGaussianProblem) -> Result<(Vec<f64>, Vec<f64>)> {
    let r = linear_gaussian_indices(p)?;
    Ok((r.first_order, r.total))
}

/// All three index families from one subset enumeration.
pub fn linear_gaussian_indices(p: &LinearGaussianProblem) -> Result<AnalyticIndices> {
    let d = p.dim();
    let variance = p.variance();
    if !(variance > 0.0) {
        return Err(Error::DegenerateOutput(format!("Var(Y) = {variance:e}")));
    }
    let tau2 = closed_variances(p)?;
    let full = (1usize << d) - 1;
    let shapley = shapley_from_costs(&tau2, d).into_iter().map(|s| s / variance).collect();
    let first_order = (0..d).map(|j| tau2[1 << j] / variance).collect();
    let total = (0..d).map(|j| (variance - tau2[full & !(1 << j)]) / variance).collect();
    Ok(AnalyticIndices { shapley, first_order, total, variance })
}

/// Two correlated Gaussian inputs, `Y = b1 X1 + b2 X2`, `corr = rho`.
/// Valid for `|rho| <= 1`, including perfect correlation.
pub fn two_input_linear(beta: [f64; 2], sigma: [f64; 2], rho: f64) -> AnalyticIndices {
    let a = [(beta[0] * sigma[0]).powi(2), (beta[1] * sigma[1]).powi(2)];
    let c = beta[0] * beta[1] * sigma[0] * sigma[1];
    let variance = a[0] + 2.0 * rho * c + a[1];
    let r2 = rho * rho;
    let sh = |i: usize, k: usize| (a[i] * (1.0 - r2 / 2.0) + rho * c + a[k] * r2 / 2.0) / variance;
    let s = |i: usize, k: usize| (a[i] + 2.0 * rho * c + r2 * a[k]) / variance;
    let st = |i: usize| a[i] * (1.0 - r2) / variance;
    AnalyticIndices {
        shapley: vec![sh(0, 1), sh(1, 0)],
        first_order: vec![s(0, 1), s(1, 0)],
        total: vec![st(0), st(1)],
        variance,
    }
}

/// Three Gaussian inputs, `X1` independent of the pair `(X2, X3)` whose
/// correlation is `rho`; `Y = b . X`.
pub fn three_input_linear(beta: [f64; 3], sigma: [f64; 3], rho: f64) -> AnalyticIndices {
    let a: Vec<f64> = (0..3).map(|i| (beta[i] * sigma[i]).powi(2)).collect();
    let c = beta[1] * beta[2] * sigma[1] * sigma[2];
    let variance = a[0] + a[1] + a[2] + 2.0 * rho * c;
    let r2 = rho * rho;
    let shapley = vec![
        a[0] / variance,
        (a[1] + rho * c + r2 / 2.0 * (a[2] - a[1])) / variance,
        (a[2] + rho * c + r2 / 2.0 * (a[1] - a[2])) / variance,
    ];
    let first_order = vec![
        a[0] / variance,
        (a[1] + 2.0 * rho * c + r2 * a[2]) / variance,
        (a[2] + 2.0 * rho * c + r2 * a[1]) / variance,
    ];
    let total = vec![a[0] / variance, a[1] * (1.0 - r2) / variance, a[2] * (1.0 - r2) / variance];
    AnalyticIndices { shapley, first_order, total, variance }
}

/// `Y = X1 + X2 X3`, centred Gaussian inputs, `corr(X1, X3) = rho`, `X2` independent.
pub fn shapley_interaction_3d(sigma1: f64, sigma2: f64, sigma3: f64, rho: f64) -> Result<AnalyticIndices> {
    if !(sigma1 > 0.0 && sigma2 > 0.0 && sigma3 > 0.0) {
        return Err(Error::Config("standard deviations must be positive".into()));
    }
    if !(rho.abs() <= 1.0) {
        return Err(Error::Config(format!("correlation {rho} outside [-1, 1]")));
    }
    let s1 = sigma1 * sigma1;
    let s23 = (sigma2 * sigma3).powi(2);
    let r2 = rho * rho;
    let variance = s1 + s23;
    let shapley = vec![
        (s1 * (1.0 - r2 / 2.0) + s23 * r2 / 6.0) / variance,
        s23 * (3.0 + r2) / 6.0 / variance,
        (r2 * s1 / 2.0 + s23 * (3.0 - 2.0 * r2) / 6.0) / variance,
    ];
    let first_order = vec![s1 / variance, 0.0, r2 * s1 / variance];
    let total = vec![(1.0 - r2) * s1 / variance, s23 / variance, (1.0 - r2) * s23 / variance];
    Ok(AnalyticIndices { shapley, first_order, total, variance })
}

/// Ordering of `S_j`, `Sh_j` and `S_Tj` in the two-input linear Gaussian model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SandwichOrder {
    /// `S_j = Sh_j = S_Tj`.
    Coincident,
    /// `S_j <= Sh_j <= S_Tj`.
    Forward,
    /// `S_Tj <= Sh_j <= S_j`.
    Reversed,
}

/// Both inputs share the same ordering: `Sh_j - S_j = S_Tj - Sh_j = -e / Var(Y)`
/// with `e = rho (rho (b1^2 s1^2 + b2^2 s2^2) / 2 + b1 b2 s1 s2)`.
pub fn sandwich_direction(beta1: f64, beta2: f64, sigma1: f64, sigma2: f64, rho: f64) -> SandwichOrder {
    let spread = rho * (rho * ((beta1 * sigma1).powi(2) + (beta2 * sigma2).powi(2)) / 2.0 + beta1 * beta2 * sigma1 * sigma2);
    if spread == 0.0 {
        SandwichOrder::Coincident
    } else if spread < 0.0 {
        SandwichOrder::Forward
    } else {
        SandwichOrder::Reversed
    }
}
