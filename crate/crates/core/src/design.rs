//! Space-filling learning designs.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::inputs::Joint;
use crate::rng::Seed;

/// Points per design supported by the Sobol' generator.
pub const MAX_DESIGN_POINTS: usize = 1 << 16;
pub const MAX_DESIGN_DIM: usize = sobol_burley::NUM_DIMENSIONS as usize;

/// `n` points of an Owen-scrambled Sobol' sequence in the open unit cube `(0, 1)^d`.
pub fn sobol_design(n: usize, d: usize, seed: Seed) -> Result<Array2<f64>> {
    if n > MAX_DESIGN_POINTS || d > MAX_DESIGN_DIM {
        return Err(Error::Size(format!(
            "Sobol' designs support up to {MAX_DESIGN_POINTS} points in {MAX_DESIGN_DIM} dimensions, got {n} x {d}"
        )));
    }
    // The scrambling seed is 32 bits; fold the master seed.
    let scramble = (seed.0 ^ (seed.0 >> 32)) as u32;
    let eps = f64::from(f32::EPSILON) / 4.0;
    Ok(Array2::from_shape_fn((n, d), |(i, j)| {
        f64::from(sobol_burley::sample(i as u32, j as u32, scramble)).clamp(eps, 1.0 - eps)
    }))
}

/// Sobol' design pushed through the joint law's quantile transform.
pub fn joint_design(joint: &Joint, n: usize, seed: Seed) -> Result<Array2<f64>> {
    joint.from_unit_cube(&sobol_design(n, joint.dim(), seed)?)
}
