//! Permutation estimators of Shapley effects, with the full first-order and
//! independent total Sobol' indices read off the first and last permutation
//! positions.
//!
//! The cost of a set `J` is `c(J) = E[Var(Y | X_{-J})]`, unnormalized: the
//! expected variance left when everything outside `J` is known. `c(empty) = 0`
//! and `c(all) = Var(Y)`. Shapley values computed with this cost coincide with
//! those of the closed-index cost `Var(E[Y | X_J])`.
//!
//! Each permutation is walked position by position; at position `j` the cost
//! of the prefix `{pi(1), ..., pi(j)}` is estimated by a double loop: `No`
//! outer draws of `X_{-prefix}` from its marginal, and for each `Ni` exact
//! conditional draws of `X_prefix`, whose unbiased sample variance is averaged.
//! The increment over the previous prefix is credited to `pi(j)`. The last
//! position is closed with the `Nv`-sample variance, so the effects sum to one.

use std::collections::HashMap;

use itertools::Itertools;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inputs::{ConditionalSampler, IndexSet, Joint};
use crate::models::Model;
use crate::rng::{Purpose, Seed};

/// Rows generated and evaluated per batch. Independent of thread count.
const BATCH_ROWS: usize = 1 << 15;
/// Largest dimension for exhaustive permutation enumeration.
pub const MAX_EXACT_DIM: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Exact,
    Random,
}

/// Loop sizes and seed for the permutation estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub method: Method,
    /// Inner loop: conditional draws per conditional variance.
    pub ni: usize,
    /// Outer loop: draws of the conditioning inputs.
    pub no: usize,
    /// Sample size of the output variance estimate.
    pub nv: usize,
    /// Number of random permutations (random method only).
    pub m: usize,
    pub seed: Seed,
}

impl EstimatorConfig {
    /// Exact method with the recommended `Ni = 3`.
    pub fn exact(no: usize, nv: usize, seed: u64) -> Self {
        Self { method: Method::Exact, ni: 3, no, nv, m: 0, seed: Seed(seed) }
    }

    /// Random method with the recommended `Ni = 3`, `No = 1`.
    pub fn random(m: usize, nv: usize, seed: u64) -> Self {
        Self { method: Method::Random, ni: 3, no: 1, nv, m, seed: Seed(seed) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ni < 2 {
            return Err(Error::Config(format!("ni = {} but the inner sample variance needs ni >= 2", self.ni)));
        }
        if self.no < 1 {
            return Err(Error::Config("no must be >= 1".into()));
        }
        if self.nv < 2 {
            return Err(Error::Config(format!("nv = {} but the variance sample needs nv >= 2", self.nv)));
        }
        if self.method == Method::Random && self.m < 1 {
            return Err(Error::Config("m must be >= 1 for the random method".into()));
        }
        Ok(())
    }

    /// Model evaluations the estimator will spend on a `dim`-input problem.
    pub fn cost(&self, dim: usize) -> Result<u64> {
        let perms = match self.method {
            Method::Exact => factorial(dim)?,
            Method::Random => self.m as u64,
        };
        [self.ni as u64, self.no as u64, perms, dim.saturating_sub(1) as u64]
            .into_iter()
            .try_fold(1u64, u64::checked_mul)
            .and_then(|c| c.checked_add(self.nv as u64))
            .ok_or_else(|| Error::Size("evaluation count overflows u64".into()))
    }
}

/// Estimated indices for every input, with 95% (two standard deviation) half-widths.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityResult {
    pub shapley: Vec<f64>,
    pub shapley_ci: Vec<f64>,
    /// Full first-order indices `S_i = Var(E[Y|X_i]) / Var(Y)`.
    pub first_order: Vec<f64>,
    pub first_order_ci: Vec<f64>,
    /// Independent total indices `S_Ti = E[Var(Y|X_-i)] / Var(Y)`.
    pub total: Vec<f64>,
    pub total_ci: Vec<f64>,
    pub variance: f64,
    pub mean: f64,
    pub evaluations: u64,
}

impl SensitivityResult {
    pub fn dim(&self) -> usize {
        self.shapley.len()
    }

    /// Shapley values on the variance scale, `Sh_i * Var(Y)`.
    pub fn shapley_unnormalized(&self) -> Vec<f64> {
        self.shapley.iter().map(|s| s * self.variance).collect()
    }
}

/// Output variance sample and the spread of the variance estimator itself.
#[derive(Debug, Clone, Copy)]
struct VarianceSample {
    variance: f64,
    mean: f64,
    /// Estimated variance of `variance`, from the fourth central moment.
    variance_of_variance: f64,
}

/// Unbiased sample variance and mean of `Y` over `nv` i.i.d. joint draws.
pub fn estimate_variance(model: &dyn Model, joint: &Joint, nv: usize, seed: Seed) -> Result<(f64, f64)> {
    let v = variance_sample(model, joint, nv, seed)?;
    Ok((v.variance, v.mean))
}

fn variance_sample(model: &dyn Model, joint: &Joint, nv: usize, seed: Seed) -> Result<VarianceSample> {
    if nv < 2 {
        return Err(Error::Config(format!("nv = {nv} but the variance sample needs nv >= 2")));
    }
    let d = joint.dim();
    let mut rng = seed.stream(Purpose::Variance, 0);
    let mut ys = Vec::with_capacity(nv);
    let mut done = 0;
    while done < nv {
        let n = (nv - done).min(BATCH_ROWS);
        let mut x = Array2::zeros((n, d));
        for mut row in x.rows_mut() {
            let row = row.as_slice_mut().expect("standard layout");
            joint.latent().draw_into(&mut rng, row);
            joint.to_physical(row);
        }
        ys.extend(model.evaluate(x.view())?);
        done += n;
    }
    let n = nv as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let m2 = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>();
    let m4 = ys.iter().map(|y| (y - mean).powi(4)).sum::<f64>() / n;
    let variance = m2 / (n - 1.0);
    if !(variance > 1e-12 * mean * mean) {
        return Err(Error::DegenerateOutput(format!("output variance {variance:e} with mean {mean:e}")));
    }
    let variance_of_variance = ((m4 - variance * variance) / n).max(0.0);
    Ok(VarianceSample { variance, mean, variance_of_variance })
}

/// Output variance with every input varying against the variance with `fixed`
/// pinned at `values` and the rest drawn from their conditional law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedInputCheck {
    pub variance_all: f64,
    pub variance_fixed: f64,
    /// `1 - variance_fixed / variance_all`.
    pub relative_decrease: f64,
    pub evaluations: u64,
}

/// Factors-fixing check: how much output variance is lost by freezing `fixed`.
/// Both variances use `n` draws; `values` are physical, in increasing position order.
pub fn fixed_input_variance(model: &dyn Model, joint: &Joint, fixed: &IndexSet, values: &[f64], n: usize, seed: Seed) -> Result<FixedInputCheck> {
    let d = joint.dim();
    if fixed.is_empty() || fixed.len() >= d {
        return Err(Error::IndexSet(format!("fixed set must be a nonempty proper subset of {d} inputs")));
    }
    if values.len() != fixed.len() {
        return Err(Error::Dimension { expected: fixed.len(), got: values.len() });
    }
    let all = variance_sample(model, joint, n, seed)?;
    let free = fixed.complement(d);
    let draws = joint.sample_conditional(&free, values, n, seed)?;
    let mut x = Array2::zeros((n, d));
    for (mut row, src) in x.rows_mut().into_iter().zip(draws.rows()) {
        for (f, v) in free.iter().zip(src.iter()) {
            row[f] = *v;
        }
        for (f, v) in fixed.iter().zip(values) {
            row[f] = *v;
        }
    }
    let ys = model.evaluate(x.view())?;
    let mean = ys.iter().sum::<f64>() / n as f64;
    let variance_fixed = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    Ok(FixedInputCheck {
        variance_all: all.variance,
        variance_fixed,
        relative_decrease: 1.0 - variance_fixed / all.variance,
        evaluations: 2 * n as u64,
    })
}

/// Estimates `E[Var(Y | X_{-prefix})]` (unnormalized) with `no` outer and `ni`
/// inner draws. `prefix` empty gives 0; the full set gives the plain variance.
pub fn prefix_cost(model: &dyn Model, joint: &Joint, prefix: &IndexSet, ni: usize, no: usize, seed: Seed) -> Result<f64> {
    if ni < 2 || no < 1 {
        return Err(Error::Config(format!("prefix cost needs ni >= 2 and no >= 1, got ni = {ni}, no = {no}")));
    }
    if prefix.is_empty() {
        return Ok(0.0);
    }
    let d = joint.dim();
    let sampler = joint.latent().conditional_sampler(prefix)?;
    let per_batch = (BATCH_ROWS / ni).max(1);
    let mut total = 0.0;
    let mut l0 = 0;
    while l0 < no {
        let l1 = (l0 + per_batch).min(no);
        let rows: Vec<f64> = (l0..l1)
            .into_par_iter()
            .flat_map_iter(|l| {
                let mut rng = seed.stream(Purpose::Cost, l as u64);
                let mut block = vec![0.0; ni * d];
                draw_cell(joint, &sampler, &mut rng, &mut block);
                block
            })
            .collect();
        let x = Array2::from_shape_vec(((l1 - l0) * ni, d), rows).expect("shape");
        let y = model.evaluate(x.view())?;
        total += y.chunks_exact(ni).map(sample_variance).sum::<f64>();
        l0 = l1;
    }
    Ok(total / no as f64)
}

/// One outer draw of the conditioning inputs followed by `block.len() / d`
/// conditional draws of the free inputs, written as physical rows.
fn draw_cell<R: rand::Rng + ?Sized>(joint: &Joint, sampler: &ConditionalSampler, rng: &mut R, block: &mut [f64]) {
    let d = joint.dim();
    let mut latent = vec![0.0; d];
    joint.latent().draw_into(rng, &mut latent);
    for row in block.chunks_exact_mut(d) {
        sampler.draw_in_place(rng, &mut latent);
        row.copy_from_slice(&latent);
        joint.to_physical(row);
    }
}

fn sample_variance(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Permutations needed by the exact method: all `d!`, in lexicographic order.
fn all_permutations(d: usize) -> Vec<Vec<usize>> {
    (0..d).permutations(d).collect()
}

/// `m` uniform permutations, each shuffled on its own stream.
fn random_permutations(d: usize, m: usize, seed: Seed) -> Vec<Vec<usize>> {
    (0..m)
        .map(|p| {
            let mut perm: Vec<usize> = (0..d).collect();
            perm.shuffle(&mut seed.stream(Purpose::Permutation, p as u64));
            perm
        })
        .collect()
}

/// Outer-loop statistics of one (permutation, position) cost estimate.
#[derive(Debug, Clone, Copy, Default)]
struct CellStats {
    sum: f64,
    sum_sq: f64,
}

impl CellStats {
    fn mean(&self, no: usize) -> f64 {
        self.sum / no as f64
    }

    /// Variance of the cell mean across the outer loop (NaN when `no < 2`).
    fn variance_of_mean(&self, no: usize) -> f64 {
        if no < 2 {
            return f64::NAN;
        }
        let n = no as f64;
        let mean = self.sum / n;
        ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0) / n
    }
}

/// Runs the double loop for every (permutation, position < d) cell.
/// Returns the statistics laid out as `stats[p * (d - 1) + j]`.
fn run_cells(model: &dyn Model, joint: &Joint, perms: &[Vec<usize>], ni: usize, no: usize, seed: Seed) -> Result<Vec<CellStats>> {
    let d = joint.dim();
    let positions = d - 1;
    let mut samplers: HashMap<u64, ConditionalSampler> = HashMap::new();
    for perm in perms {
        for j in 1..d {
            let prefix = IndexSet::from_sorted_unchecked(perm[..j].iter().copied().sorted().collect());
            if let std::collections::hash_map::Entry::Vacant(e) = samplers.entry(prefix.mask()) {
                e.insert(joint.latent().conditional_sampler(&prefix)?);
            }
        }
    }
    let prefix_masks: Vec<Vec<u64>> =
        perms.iter().map(|perm| (1..d).map(|j| perm[..j].iter().fold(0u64, |m, &i| m | 1 << i)).collect()).collect();

    let units = (perms.len() as u64)
        .checked_mul(no as u64)
        .ok_or_else(|| Error::Size("permutation x outer loop count overflows u64".into()))?;
    let rows_per_unit = positions * ni;
    let units_per_batch = (BATCH_ROWS / rows_per_unit).max(1) as u64;
    let mut stats = vec![CellStats::default(); perms.len() * positions];

    let mut u0 = 0u64;
    while u0 < units {
        let u1 = (u0 + units_per_batch).min(units);
        let rows: Vec<f64> = (u0..u1)
            .into_par_iter()
            .flat_map_iter(|u| {
                let p = (u / no as u64) as usize;
                let mut rng = seed.stream(Purpose::Cost, u);
                let mut block = vec![0.0; rows_per_unit * d];
                for (j, chunk) in block.chunks_exact_mut(ni * d).enumerate() {
                    draw_cell(joint, &samplers[&prefix_masks[p][j]], &mut rng, chunk);
                }
                block
            })
            .collect();
        let n_rows = (u1 - u0) as usize * rows_per_unit;
        let x = Array2::from_shape_vec((n_rows, d), rows).expect("shape");
        let y = model.evaluate(x.view())?;
        for (k, unit_y) in y.chunks_exact(rows_per_unit).enumerate() {
            let p = ((u0 + k as u64) / no as u64) as usize;
            for (j, cell_y) in unit_y.chunks_exact(ni).enumerate() {
                let s2 = sample_variance(cell_y);
                let cell = &mut stats[p * positions + j];
                cell.sum += s2;
                cell.sum_sq += s2 * s2;
            }
        }
        u0 = u1;
    }
    Ok(stats)
}

/// Shapley effects by enumerating all `d!` permutations.
pub fn shapley_exact(model: &dyn Model, joint: &Joint, cfg: &EstimatorConfig) -> Result<SensitivityResult> {
    if cfg.method != Method::Exact {
        return Err(Error::Config("shapley_exact requires method = exact".into()));
    }
    let d = joint.dim();
    if d > MAX_EXACT_DIM {
        return Err(Error::Size(format!("{d}! permutations is too many for the exact method (d <= {MAX_EXACT_DIM})")));
    }
    estimate(model, joint, cfg, all_permutations(d))
}

/// Shapley effects from `m` random permutations drawn with replacement.
pub fn shapley_random(model: &dyn Model, joint: &Joint, cfg: &EstimatorConfig) -> Result<SensitivityResult> {
    if cfg.method != Method::Random {
        return Err(Error::Config("shapley_random requires method = random".into()));
    }
    if joint.dim() > 64 {
        return Err(Error::Size("at most 64 inputs are supported".into()));
    }
    cfg.validate()?;
    estimate(model, joint, cfg, random_permutations(joint.dim(), cfg.m, cfg.seed))
}

/// Dispatches on `cfg.method`.
pub fn shapley(model: &dyn Model, joint: &Joint, cfg: &EstimatorConfig) -> Result<SensitivityResult> {
    match cfg.method {
        Method::Exact => shapley_exact(model, joint, cfg),
        Method::Random => shapley_random(model, joint, cfg),
    }
}

fn estimate(model: &dyn Model, joint: &Joint, cfg: &EstimatorConfig, perms: Vec<Vec<usize>>) -> Result<SensitivityResult> {
    cfg.validate()?;
    let d = joint.dim();
    if let Some(a) = model.arity() {
        if a != d {
            return Err(Error::Dimension { expected: a, got: d });
        }
    }
    let evaluations = cfg.cost(d)?;
    let vs = variance_sample(model, joint, cfg.nv, cfg.seed)?;
    let v = vs.variance;
    if d == 1 {
        let one = vec![1.0];
        let zero = vec![0.0];
        return Ok(SensitivityResult {
            shapley: one.clone(),
            shapley_ci: zero.clone(),
            first_order: one.clone(),
            first_order_ci: zero.clone(),
            total: one,
            total_ci: zero,
            variance: v,
            mean: vs.mean,
            evaluations,
        });
    }

    let stats = run_cells(model, joint, &perms, cfg.ni, cfg.no, cfg.seed)?;
    let positions = d - 1;
    let n_perms = perms.len();
    let cost = |p: usize, j: usize| -> f64 {
        // Cost of the prefix of length j (0 ..= d).
        match j {
            0 => 0.0,
            j if j == d => v,
            j => stats[p * positions + j - 1].mean(cfg.no),
        }
    };
    let cost_var = |p: usize, j: usize| -> f64 {
        if j == 0 || j == d {
            0.0
        } else {
            stats[p * positions + j - 1].variance_of_mean(cfg.no)
        }
    };

    // Per-input increments, in permutation order.
    let mut increments: Vec<Vec<f64>> = vec![Vec::with_capacity(n_perms); d];
    // Exact-method CI parts: increment variance excluding the shared variance
    // estimate, and how often each input closes a permutation.
    let mut cell_var = vec![0.0; d];
    let mut closes = vec![0usize; d];
    // By-products: first-position costs (total index) and (d-1)-prefix costs (first order).
    let mut first_cells: Vec<Vec<(f64, f64)>> = vec![Vec::new(); d];
    let mut last_cells: Vec<Vec<(f64, f64)>> = vec![Vec::new(); d];

    for (p, perm) in perms.iter().enumerate() {
        for (pos, &input) in perm.iter().enumerate() {
            let j = pos + 1;
            increments[input].push(cost(p, j) - cost(p, j - 1));
            cell_var[input] += cost_var(p, j) + cost_var(p, j - 1);
            if j == d {
                closes[input] += 1;
            }
        }
        first_cells[perm[0]].push((cost(p, 1), cost_var(p, 1)));
        last_cells[perm[d - 1]].push((cost(p, d - 1), cost_var(p, d - 1)));
    }

    let np = n_perms as f64;
    let shapley: Vec<f64> = increments.iter().map(|inc| inc.iter().sum::<f64>() / np / v).collect();
    let shapley_ci: Vec<f64> = match cfg.method {
        Method::Random => increments.iter().map(|inc| 2.0 * std_dev(inc) / (inc.len() as f64).sqrt() / v).collect(),
        Method::Exact => (0..d)
            .map(|i| {
                // Sh_i = A_i / V + w_i with A_i independent of V.
                let w = closes[i] as f64 / np;
                let a = shapley[i] * v - w * v;
                let var_a = cell_var[i] / (np * np);
                2.0 * (var_a / (v * v) + a * a * vs.variance_of_variance / v.powi(4)).sqrt()
            })
            .collect(),
    };

    let by_product = |cells: &[(f64, f64)]| -> (f64, f64) {
        if cells.is_empty() {
            return (f64::NAN, f64::NAN);
        }
        let k = cells.len() as f64;
        let c = cells.iter().map(|x| x.0).sum::<f64>() / k;
        let var_c = match cfg.method {
            Method::Exact => cells.iter().map(|x| x.1).sum::<f64>() / (k * k),
            Method::Random => {
                let vals: Vec<f64> = cells.iter().map(|x| x.0).collect();
                std_dev(&vals).powi(2) / k
            }
        };
        let delta = match cfg.method {
            Method::Exact => c * c * vs.variance_of_variance / v.powi(4),
            Method::Random => 0.0,
        };
        (c, 2.0 * (var_c / (v * v) + delta).sqrt())
    };
    let (total, total_ci): (Vec<f64>, Vec<f64>) = first_cells
        .iter()
        .map(|cells| {
            let (c, ci) = by_product(cells);
            (c / v, ci)
        })
        .unzip();
    let (first_order, first_order_ci): (Vec<f64>, Vec<f64>) = last_cells
        .iter()
        .map(|cells| {
            let (c, ci) = by_product(cells);
            (1.0 - c / v, ci)
        })
        .unzip();

    Ok(SensitivityResult {
        shapley,
        shapley_ci,
        first_order,
        first_order_ci,
        total,
        total_ci,
        variance: v,
        mean: vs.mean,
        evaluations,
    })
}

fn std_dev(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return f64::NAN;
    }
    sample_variance(x).sqrt()
}

fn factorial(d: usize) -> Result<u64> {
    (1..=d as u64).try_fold(1u64, u64::checked_mul).ok_or_else(|| Error::Size(format!("{d}! overflows u64")))
}

/// Number of random permutations with the same cost as the exact method with
/// `no_exact` outer draws: `no_exact * d!`.
pub fn equivalent_m(no_exact: usize, d: usize) -> Result<usize> {
    if d > MAX_EXACT_DIM {
        return Err(Error::Size(format!("equivalent_m is defined for d <= {MAX_EXACT_DIM}, got {d}")));
    }
    factorial(d)?
        .checked_mul(no_exact as u64)
        .and_then(|m| usize::try_from(m).ok())
        .ok_or_else(|| Error::Size("equivalent m overflows".into()))
}
