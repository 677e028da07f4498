//! Shapley effects for global sensitivity analysis with dependent inputs.
//!
//! Inputs live in a latent Gaussian space: either a plain multivariate normal
//! or a Gaussian copula over non-Gaussian marginals. Conditional sampling is
//! exact in that space, which is what the permutation estimators need.

pub mod analytic;
pub mod design;
pub mod error;
pub mod inputs;
pub mod kriging;
pub mod models;
pub mod rng;
pub mod shapley;

pub use analytic::{AnalyticIndices, LinearGaussianProblem, SandwichOrder};
pub use design::{joint_design, sobol_design};
pub use error::{Error, Result};
pub use inputs::{CopulaJoint, GaussianJoint, IndexSet, Joint, Marginal};
pub use kriging::{KrigingConfig, KrigingModel, Trend};
pub use models::{ExternalModel, Model, ModelSpec};
pub use rng::Seed;
pub use shapley::{EstimatorConfig, FixedInputCheck, Method, SensitivityResult};

pub use ndarray;
pub use nalgebra;
