//! Reference values computed without the library: dense Gaussian elimination,
//! closed Sobol' indices `Var(E[Y | X_u])`, and Shapley effects as plain
//! averages over every ordering of the inputs.

#![allow(dead_code)]

use std::collections::HashMap;

pub type Matrix = Vec<Vec<f64>>;

pub fn covariance(sigma: &[f64], corr: &Matrix) -> Matrix {
    let d = sigma.len();
    (0..d).map(|i| (0..d).map(|j| sigma[i] * sigma[j] * corr[i][j]).collect()).collect()
}

/// Correlation matrix with a single off-diagonal pair set.
pub fn pair_correlation(d: usize, i: usize, j: usize, rho: f64) -> Matrix {
    let mut c: Matrix = (0..d).map(|a| (0..d).map(|b| if a == b { 1.0 } else { 0.0 }).collect()).collect();
    c[i][j] = rho;
    c[j][i] = rho;
    c
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Matrix, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// `Var(E[c . X | X_u])` for a centred Gaussian vector with covariance `cov`.
pub fn explained_variance(cov: &Matrix, c: &[f64], u: &[usize]) -> f64 {
    if u.is_empty() {
        return 0.0;
    }
    let d = cov.len();
    let w: Vec<f64> = u.iter().map(|&i| (0..d).map(|k| cov[i][k] * c[k]).sum()).collect();
    let block: Matrix = u.iter().map(|&i| u.iter().map(|&j| cov[i][j]).collect()).collect();
    let x = solve(block, w.clone());
    w.iter().zip(&x).map(|(a, b)| a * b).sum()
}

fn orderings(d: usize) -> Vec<Vec<usize>> {
    if d == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in orderings(d - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, d - 1);
            out.push(q);
        }
    }
    out
}

pub struct Reference {
    pub shapley: Vec<f64>,
    pub first_order: Vec<f64>,
    pub total: Vec<f64>,
    pub variance: f64,
}

/// Indices from a closed-index function `closed(u) = Var(E[Y | X_u])`.
pub fn from_closed(d: usize, closed: impl Fn(&[usize]) -> f64) -> Reference {
    let mut memo: HashMap<Vec<usize>, f64> = HashMap::new();
    let mut value = |mut u: Vec<usize>| -> f64 {
        u.sort_unstable();
        *memo.entry(u.clone()).or_insert_with(|| closed(&u))
    };
    let all: Vec<usize> = (0..d).collect();
    let variance = value(all.clone());
    let perms = orderings(d);
    let mut shapley = vec![0.0; d];
    for p in &perms {
        for k in 0..d {
            let before = value(p[..k].to_vec());
            let after = value(p[..=k].to_vec());
            shapley[p[k]] += (after - before) / perms.len() as f64;
        }
    }
    let first_order = (0..d).map(|i| value(vec![i]) / variance).collect();
    let total = (0..d)
        .map(|i| 1.0 - value(all.iter().copied().filter(|&j| j != i).collect()) / variance)
        .collect();
    Reference { shapley: shapley.iter().map(|s| s / variance).collect(), first_order, total, variance }
}

pub fn linear_gaussian(beta: &[f64], cov: &Matrix) -> Reference {
    from_closed(beta.len(), |u| explained_variance(cov, beta, u))
}

/// `Y = X1 + X2 X3`, centred Gaussian inputs, `X2` independent of `(X1, X3)`.
///
/// `E[Y | X_u] = E[X1 | X_u'] + 1{2 in u} X2 E[X3 | X_u']` with `u' = u \ {2}`,
/// and the two terms are uncorrelated.
pub fn interaction(sigma: [f64; 3], rho13: f64) -> Reference {
    let mut corr = pair_correlation(3, 0, 2, rho13);
    corr[0][1] = 0.0;
    let cov = covariance(&sigma, &corr);
    from_closed(3, |u| {
        let rest: Vec<usize> = u.iter().copied().filter(|&i| i != 1).collect();
        let first = explained_variance(&cov, &[1.0, 0.0, 0.0], &rest);
        if u.contains(&1) {
            first + sigma[1] * sigma[1] * explained_variance(&cov, &[0.0, 0.0, 1.0], &rest)
        } else {
            first
        }
    })
}
