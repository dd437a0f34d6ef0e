//! Numerical kernels shared by the rest of the crate: dense Cholesky,
//! normal quantiles, scrambled Sobol base samples, Gamma log-densities and a
//! bounded quasi-Newton minimizer.

mod gamma;
mod linalg;
mod minimize;
pub mod normal;
mod sobol;
mod sobol_data;

use thiserror::Error;

pub use gamma::gamma_log_density;
pub(crate) use gamma::gamma_log_density_dlog;
pub use linalg::{cholesky_with_jitter, dot, LowerTriangularFactor, JITTER_LADDER};
pub use minimize::{bounded_minimize, project, BoxBounds, MinimizeOptions, MinimizeResult, SimplexConstraint};
pub use normal::inverse_normal_cdf;
pub use sobol::{nested_uniform_scramble, scrambled_sobol, sobol_normal_matrix, BaseSampleMatrix, Sobol};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum NumericsError {
    #[error("matrix of dimension {dimension} is not positive definite at any jitter level")]
    NotFactorizable { dimension: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("objective is not finite at {at:?}")]
    NonFiniteObjective { at: Vec<f64> },
}

/// SplitMix64 finalizer over `seed ⊕ stream`; used to derive independent
/// child seeds from a parent seed.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
