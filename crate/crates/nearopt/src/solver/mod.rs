//! Numerical kernels shared by the testing code.

mod expm;
mod frank_wolfe;
mod perron;
mod special;

use thiserror::Error;

use crate::sets::SetError;

pub use expm::expm;
pub use frank_wolfe::{maximize_concave, ConcaveObjective, FwConfig, OptResult};
pub use perron::{perron_irreducible, perron_positive, spectral_norm_nonneg, Perron, SpectralNorm};
pub use special::{gaussian_tail, gaussian_tail_inv};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("objective or gradient is not finite (check set margins)")]
    NonFiniteObjective,
    #[error("block {block}: {source}")]
    Set { block: usize, source: SetError },
    #[error(transparent)]
    Lp(#[from] SetError),
    #[error("matrix has no positive entry")]
    ZeroMatrix,
    #[error("no convergence after {iters} iterations (gap {gap:e})")]
    NonConvergence { gap: f64, iters: usize },
    #[error("domain error: {0}")]
    Domain(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BisectError<E> {
    #[error("predicate fails at the lower end of the bracket")]
    NotFeasibleAtLo,
    #[error(transparent)]
    Inner(E),
}

/// Largest `r` in `[lo, hi]` accepted by a monotone predicate (true up to
/// some threshold, false beyond), to within `tol`. Always returns a point
/// where the predicate held.
pub fn bisect_max_param<E>(
    mut feasible: impl FnMut(f64) -> Result<bool, E>,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<f64, BisectError<E>> {
    assert!(tol > 0.0 && hi >= lo, "bisection needs tol > 0 and hi >= lo");
    if !feasible(lo).map_err(BisectError::Inner)? {
        return Err(BisectError::NotFeasibleAtLo);
    }
    if feasible(hi).map_err(BisectError::Inner)? {
        return Ok(hi);
    }
    let (mut a, mut b) = (lo, hi);
    while b - a > tol {
        let mid = 0.5 * (a + b);
        if feasible(mid).map_err(BisectError::Inner)? {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(a)
}
