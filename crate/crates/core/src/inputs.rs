//! Joint input distributions with dependence.
//!
//! Every supported law has a latent Gaussian representation: a [`GaussianJoint`]
//! is its own latent law, and a [`CopulaJoint`] pushes a correlated standard
//! normal vector through per-coordinate marginal quantiles. Conditioning is
//! always done on the latent Gaussian, where it is exact.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::rng::{Purpose, Seed};

const SYMMETRY_TOL: f64 = 1e-10;

/// Sorted set of distinct 0-based input positions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct IndexSet {
    indices: Vec<usize>,
}

impl IndexSet {
    /// Builds a set over `dim` inputs. Duplicates and out-of-range positions are rejected.
    pub fn new(indices: impl IntoIterator<Item = usize>, dim: usize) -> Result<Self> {
        let mut indices: Vec<usize> = indices.into_iter().collect();
        indices.sort_unstable();
        if let Some(w) = indices.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::IndexSet(format!("duplicate position {}", w[0])));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= dim) {
            return Err(Error::IndexSet(format!("position {bad} out of range for {dim} inputs")));
        }
        Ok(Self { indices })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn full(dim: usize) -> Self {
        Self { indices: (0..dim).collect() }
    }

    pub(crate) fn from_sorted_unchecked(indices: Vec<usize>) -> Self {
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        Self { indices }
    }

    /// Set with bit `i` of `mask` meaning position `i` is present.
    pub fn from_mask(mask: u64) -> Self {
        Self { indices: (0..64).filter(|i| mask >> i & 1 == 1).collect() }
    }

    pub fn mask(&self) -> u64 {
        self.indices.iter().fold(0, |m, &i| m | 1 << i)
    }

    pub fn complement(&self, dim: usize) -> Self {
        Self { indices: (0..dim).filter(|i| !self.contains(*i)).collect() }
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().copied()
    }

    fn check_proper(&self, dim: usize, what: &str) -> Result<()> {
        if self.is_empty() || self.len() >= dim {
            return Err(Error::IndexSet(format!("{what} must be a nonempty proper subset of the {dim} inputs")));
        }
        if self.indices.last().is_some_and(|&i| i >= dim) {
            return Err(Error::IndexSet(format!("{what} has positions beyond {dim} inputs")));
        }
        Ok(())
    }
}

/// Multivariate normal law N(mean, covariance).
#[derive(Debug, Clone)]
pub struct GaussianJoint {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    /// Lower Cholesky factor of `covariance`.
    factor: DMatrix<f64>,
}

impl GaussianJoint {
    pub fn new(mean: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let dim = mean.len();
        if covariance.nrows() != dim || covariance.ncols() != dim {
            return Err(Error::InvalidDistribution(format!(
                "mean has {dim} entries but covariance is {}x{}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidDistribution("non-finite mean or covariance entry".into()));
        }
        check_symmetric(&covariance, "covariance")?;
        let factor = lower_cholesky(&covariance)
            .ok_or_else(|| Error::InvalidDistribution("covariance is not positive-definite".into()))?;
        Ok(Self { mean: DVector::from_vec(mean), covariance, factor })
    }

    /// Builds a covariance matrix from row-major entries.
    pub fn from_row_major(mean: Vec<f64>, covariance: &[f64]) -> Result<Self> {
        let dim = mean.len();
        if covariance.len() != dim * dim {
            return Err(Error::Dimension { expected: dim * dim, got: covariance.len() });
        }
        Self::new(mean, DMatrix::from_row_slice(dim, dim, covariance))
    }

    /// Covariance `diag(std) * correlation * diag(std)`.
    pub fn from_correlation(mean: Vec<f64>, std: &[f64], correlation: &DMatrix<f64>) -> Result<Self> {
        let dim = mean.len();
        if std.len() != dim {
            return Err(Error::Dimension { expected: dim, got: std.len() });
        }
        if correlation.nrows() != dim || correlation.ncols() != dim {
            return Err(Error::Dimension { expected: dim, got: correlation.nrows() });
        }
        let cov = DMatrix::from_fn(dim, dim, |i, j| std[i] * std[j] * correlation[(i, j)]);
        Self::new(mean, cov)
    }

    pub fn standard(dim: usize) -> Self {
        Self::new(vec![0.0; dim], DMatrix::identity(dim, dim)).expect("identity is positive-definite")
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn std_devs(&self) -> Vec<f64> {
        self.covariance.diagonal().iter().map(|v| v.sqrt()).collect()
    }

    /// `n` i.i.d. draws, one per row.
    pub fn sample(&self, n: usize, seed: Seed) -> Array2<f64> {
        let mut rng = seed.stream(Purpose::Joint, 0);
        let mut out = Array2::zeros((n, self.dim()));
        for mut row in out.rows_mut() {
            self.draw_into(&mut rng, row.as_slice_mut().expect("standard layout"));
        }
        out
    }

    /// One draw written into `out`.
    pub fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let d = self.dim();
        let mut eps = [0.0f64; 64];
        let eps: &mut [f64] = if d <= 64 { &mut eps[..d] } else { &mut vec![0.0; d][..] };
        for e in eps.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        for i in 0..d {
            let mut acc = self.mean[i];
            for (j, e) in eps.iter().enumerate().take(i + 1) {
                acc += self.factor[(i, j)] * e;
            }
            out[i] = acc;
        }
    }

    /// Exact law of the coordinates outside `given`, conditional on `X_given = values`.
    ///
    /// Mean `mu_f + S_fg S_gg^-1 (x_g - mu_g)`, covariance `S_ff - S_fg S_gg^-1 S_gf`.
    pub fn conditional(&self, given: &IndexSet, values: &[f64]) -> Result<GaussianJoint> {
        given.check_proper(self.dim(), "conditioning set")?;
        if values.len() != given.len() {
            return Err(Error::Dimension { expected: given.len(), got: values.len() });
        }
        let free = given.complement(self.dim());
        let sampler = ConditionalSampler::new(self, &free)?;
        let mean = sampler.conditional_mean(values);
        GaussianJoint::new(mean, sampler.covariance.clone())
    }

    /// Precomputes conditional sampling of `free` given the rest.
    pub fn conditional_sampler(&self, free: &IndexSet) -> Result<ConditionalSampler> {
        ConditionalSampler::new(self, free)
    }

    /// Maps standard-normal scores to a draw: `mean + L z`.
    pub fn from_scores(&self, z: &[f64], out: &mut [f64]) {
        for i in 0..self.dim() {
            out[i] = self.mean[i] + (0..=i).map(|j| self.factor[(i, j)] * z[j]).sum::<f64>();
        }
    }
}

/// Conditional sampler for the coordinates in `free`, given the others.
#[derive(Debug, Clone)]
pub struct ConditionalSampler {
    free: IndexSet,
    given: IndexSet,
    free_mean: DVector<f64>,
    given_mean: DVector<f64>,
    /// Regression coefficients `S_fg S_gg^-1`, |free| x |given|.
    gain: DMatrix<f64>,
    covariance: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl ConditionalSampler {
    fn new(joint: &GaussianJoint, free: &IndexSet) -> Result<Self> {
        let dim = joint.dim();
        if free.is_empty() || free.as_slice().last().is_some_and(|&i| i >= dim) {
            return Err(Error::IndexSet(format!("free set must be nonempty within {dim} inputs")));
        }
        let given = free.complement(dim);
        let cov = &joint.covariance;
        let pick = |rows: &IndexSet, cols: &IndexSet| {
            DMatrix::from_fn(rows.len(), cols.len(), |a, b| cov[(rows.as_slice()[a], cols.as_slice()[b])])
        };
        let s_ff = pick(free, free);
        let (gain, schur) = if given.is_empty() {
            (DMatrix::zeros(free.len(), 0), s_ff)
        } else {
            let s_gg = pick(&given, &given);
            let s_gf = pick(&given, free);
            let chol = s_gg
                .cholesky()
                .ok_or_else(|| Error::InvalidDistribution("singular conditioning block".into()))?;
            let gain = chol.solve(&s_gf).transpose();
            let mut schur = s_ff - &gain * s_gf;
            schur = (&schur + schur.transpose()) * 0.5;
            (gain, schur)
        };
        let factor = lower_cholesky(&schur)
            .ok_or_else(|| Error::InvalidDistribution("conditional covariance is not positive-definite".into()))?;
        let free_mean = DVector::from_iterator(free.len(), free.iter().map(|i| joint.mean[i]));
        let given_mean = DVector::from_iterator(given.len(), given.iter().map(|i| joint.mean[i]));
        Ok(Self { free: free.clone(), given, free_mean, given_mean, gain, covariance: schur, factor })
    }

    pub fn free(&self) -> &IndexSet {
        &self.free
    }

    pub fn given(&self) -> &IndexSet {
        &self.given
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn conditional_mean(&self, given_values: &[f64]) -> Vec<f64> {
        (0..self.free.len())
            .map(|a| {
                self.free_mean[a]
                    + (0..self.given.len())
                        .map(|b| self.gain[(a, b)] * (given_values[b] - self.given_mean[b]))
                        .sum::<f64>()
            })
            .collect()
    }

    /// Fills the free coordinates of the full-length vector `point`, reading the
    /// given coordinates from the same vector.
    pub fn draw_in_place<R: Rng + ?Sized>(&self, rng: &mut R, point: &mut [f64]) {
        let nf = self.free.len();
        let mut eps = [0.0f64; 64];
        let eps: &mut [f64] = if nf <= 64 { &mut eps[..nf] } else { &mut vec![0.0; nf][..] };
        for e in eps.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        let g = self.given.as_slice();
        for (a, &fi) in self.free.as_slice().iter().enumerate() {
            let mut acc = self.free_mean[a];
            for (b, &gi) in g.iter().enumerate() {
                acc += self.gain[(a, b)] * (point[gi] - self.given_mean[b]);
            }
            for (c, e) in eps.iter().enumerate().take(a + 1) {
                acc += self.factor[(a, c)] * e;
            }
            point[fi] = acc;
        }
    }
}

/// Marginal law of one copula coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Marginal {
    Uniform { lower: f64, upper: f64 },
    StandardNormal,
}

impl Marginal {
    fn validate(&self) -> Result<()> {
        match *self {
            Marginal::Uniform { lower, upper } if !(lower.is_finite() && upper.is_finite() && lower < upper) => {
                Err(Error::InvalidDistribution(format!("uniform bounds [{lower}, {upper}] are not increasing")))
            }
            _ => Ok(()),
        }
    }

    /// Pushes a latent standard-normal score to this marginal.
    pub fn from_latent(&self, z: f64) -> f64 {
        match *self {
            Marginal::Uniform { lower, upper } => lower + (upper - lower) * std_normal().cdf(z),
            Marginal::StandardNormal => z,
        }
    }

    /// Latent score of a physical value; fails outside the support.
    pub fn to_latent(&self, input: usize, x: f64) -> Result<f64> {
        match *self {
            Marginal::Uniform { lower, upper } => {
                if !(lower..=upper).contains(&x) {
                    return Err(Error::Domain { input, value: x });
                }
                let u = ((x - lower) / (upper - lower)).clamp(1e-300, 1.0 - f64::EPSILON);
                Ok(std_normal().inverse_cdf(u))
            }
            Marginal::StandardNormal if x.is_finite() => Ok(x),
            Marginal::StandardNormal => Err(Error::Domain { input, value: x }),
        }
    }

    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            Marginal::Uniform { lower, upper } => lower + (upper - lower) * u,
            Marginal::StandardNormal => std_normal().inverse_cdf(u),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Marginal::Uniform { lower, upper } => ((x - lower) / (upper - lower)).clamp(0.0, 1.0),
            Marginal::StandardNormal => std_normal().cdf(x),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Marginal::Uniform { lower, upper } => 0.5 * (lower + upper),
            Marginal::StandardNormal => 0.0,
        }
    }
}

/// Gaussian copula: latent `N(0, correlation)` mapped through marginal quantiles.
#[derive(Debug, Clone)]
pub struct CopulaJoint {
    marginals: Vec<Marginal>,
    latent: GaussianJoint,
}

impl CopulaJoint {
    pub fn new(correlation: DMatrix<f64>, marginals: Vec<Marginal>) -> Result<Self> {
        let dim = marginals.len();
        if correlation.nrows() != dim || correlation.ncols() != dim {
            return Err(Error::InvalidDistribution(format!(
                "{dim} marginals but correlation is {}x{}",
                correlation.nrows(),
                correlation.ncols()
            )));
        }
        if let Some(i) = (0..dim).find(|&i| (correlation[(i, i)] - 1.0).abs() > SYMMETRY_TOL) {
            return Err(Error::InvalidDistribution(format!("correlation diagonal entry {i} is not 1")));
        }
        for m in &marginals {
            m.validate()?;
        }
        let latent = GaussianJoint::new(vec![0.0; dim], correlation)?;
        Ok(Self { marginals, latent })
    }

    pub fn correlation(&self) -> &DMatrix<f64> {
        self.latent.covariance()
    }

    pub fn marginals(&self) -> &[Marginal] {
        &self.marginals
    }

    pub fn latent(&self) -> &GaussianJoint {
        &self.latent
    }
}

/// Any supported joint input law.
#[derive(Debug, Clone)]
pub enum Joint {
    Gaussian(GaussianJoint),
    Copula(CopulaJoint),
}

impl From<GaussianJoint> for Joint {
    fn from(g: GaussianJoint) -> Self {
        Joint::Gaussian(g)
    }
}

impl From<CopulaJoint> for Joint {
    fn from(c: CopulaJoint) -> Self {
        Joint::Copula(c)
    }
}

impl Joint {
    pub fn dim(&self) -> usize {
        self.latent().dim()
    }

    /// The Gaussian law on which conditioning happens.
    pub fn latent(&self) -> &GaussianJoint {
        match self {
            Joint::Gaussian(g) => g,
            Joint::Copula(c) => &c.latent,
        }
    }

    /// Maps a latent point to physical coordinates, in place.
    pub fn to_physical(&self, point: &mut [f64]) {
        if let Joint::Copula(c) = self {
            for (x, m) in point.iter_mut().zip(&c.marginals) {
                *x = m.from_latent(*x);
            }
        }
    }

    /// Latent value of physical coordinate `input`.
    pub fn to_latent(&self, input: usize, x: f64) -> Result<f64> {
        match self {
            Joint::Gaussian(_) if x.is_finite() => Ok(x),
            Joint::Gaussian(_) => Err(Error::Domain { input, value: x }),
            Joint::Copula(c) => c.marginals[input].to_latent(input, x),
        }
    }

    /// Mean of each physical marginal.
    pub fn marginal_means(&self) -> Vec<f64> {
        match self {
            Joint::Gaussian(g) => g.mean.iter().copied().collect(),
            Joint::Copula(c) => c.marginals.iter().map(Marginal::mean).collect(),
        }
    }

    /// `n` i.i.d. draws of the physical inputs, one per row. Bit-identical for a fixed seed.
    pub fn sample(&self, n: usize, seed: Seed) -> Array2<f64> {
        let mut out = self.latent().sample(n, seed);
        for mut row in out.rows_mut() {
            self.to_physical(row.as_slice_mut().expect("standard layout"));
        }
        out
    }

    /// Draws `n` samples of the `free` coordinates given physical values of the
    /// complementary coordinates (in increasing position order).
    pub fn sample_conditional(&self, free: &IndexSet, given_values: &[f64], n: usize, seed: Seed) -> Result<Array2<f64>> {
        free.check_proper(self.dim(), "free set")?;
        let sampler = self.latent().conditional_sampler(free)?;
        let given = sampler.given().clone();
        if given_values.len() != given.len() {
            return Err(Error::Dimension { expected: given.len(), got: given_values.len() });
        }
        let mut point = vec![0.0; self.dim()];
        for (&g, &x) in given.as_slice().iter().zip(given_values) {
            point[g] = self.to_latent(g, x)?;
        }
        let mut rng = seed.stream(Purpose::Conditional, 0);
        let mut out = Array2::zeros((n, free.len()));
        for mut row in out.rows_mut() {
            sampler.draw_in_place(&mut rng, &mut point);
            let mut phys = point.clone();
            self.to_physical(&mut phys);
            for (dst, f) in row.iter_mut().zip(free.iter()) {
                *dst = phys[f];
            }
        }
        Ok(out)
    }

    /// Maps points of the open unit hypercube to the joint law: independent
    /// normal scores, correlated by the latent factor, then pushed through the marginals.
    pub fn from_unit_cube(&self, unit: &Array2<f64>) -> Result<Array2<f64>> {
        let d = self.dim();
        if unit.ncols() != d {
            return Err(Error::Dimension { expected: d, got: unit.ncols() });
        }
        let normal = std_normal();
        let mut out = Array2::zeros(unit.raw_dim());
        let mut z = vec![0.0; d];
        for (src, mut dst) in unit.rows().into_iter().zip(out.rows_mut()) {
            for (zi, &u) in z.iter_mut().zip(src.iter()) {
                if !(u > 0.0 && u < 1.0) {
                    return Err(Error::Config(format!("design value {u} is not in the open unit interval")));
                }
                *zi = normal.inverse_cdf(u);
            }
            let dst = dst.as_slice_mut().expect("standard layout");
            self.latent().from_scores(&z, dst);
            self.to_physical(dst);
        }
        Ok(out)
    }
}

pub(crate) fn std_normal() -> Normal {
    Normal::standard()
}

fn check_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL {
                return Err(Error::InvalidDistribution(format!("{what} is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Lower Cholesky factor, or `None` if the matrix is not positive-definite.
pub(crate) fn lower_cholesky(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.clone().cholesky().map(|c| c.unpack())
}
