//! Spectral norms and Perron vectors of nonnegative matrices by power
//! iteration from the all-ones vector.

use nalgebra::{DMatrix, DVector};

use super::SolverError;

const REL_STOP: f64 = 1e-12;
const VEC_STOP: f64 = 1e-11;
const MAX_POWER_ITERS: usize = 2_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralNorm {
    pub sigma: f64,
    /// Left singular vector, `E h = sigma g`.
    pub g: DVector<f64>,
    /// Right singular vector, `Eᵀ g = sigma h`.
    pub h: DVector<f64>,
}

/// `‖E‖₂,₂` with nonnegative singular vectors.
pub fn spectral_norm_nonneg(e: &DMatrix<f64>) -> Result<SpectralNorm, SolverError> {
    if e.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(SolverError::Domain("matrix must be finite and nonnegative".into()));
    }
    if e.iter().all(|v| *v == 0.0) {
        return Err(SolverError::ZeroMatrix);
    }
    let n = e.ncols();
    let mut h = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lam = 0.0;
    for _ in 0..MAX_POWER_ITERS {
        let u = e * &h;
        let w = e.tr_mul(&u);
        let new_lam = w.norm();
        let new_h = w / new_lam;
        let dv = (&new_h - &h).amax();
        let dl = (new_lam - lam).abs();
        h = new_h;
        lam = new_lam;
        if dl <= REL_STOP * lam && dv <= VEC_STOP {
            break;
        }
    }
    let u = e * &h;
    let sigma = u.norm();
    let g = u / sigma;
    Ok(SpectralNorm { sigma, g, h })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perron {
    pub rho: f64,
    pub g: DVector<f64>,
}

/// Perron root and positive eigenvector of a nonnegative matrix with zero
/// diagonal and strictly positive off-diagonal entries.
pub fn perron_positive(a: &DMatrix<f64>) -> Result<Perron, SolverError> {
    let n = a.nrows();
    if n < 2 || !a.is_square() {
        return Err(SolverError::Domain("need a square matrix of size >= 2".into()));
    }
    for i in 0..n {
        for j in 0..n {
            let v = a[(i, j)];
            if !v.is_finite() || (i != j && v <= 0.0) || (i == j && v != 0.0) {
                return Err(SolverError::Domain(
                    "off-diagonal entries must be positive and the diagonal zero".into(),
                ));
            }
        }
    }
    perron_irreducible(a)
}

fn strongly_connected(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let w = if forward { a[(i, j)] } else { a[(j, i)] };
                if w > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Perron root and positive eigenvector of an irreducible nonnegative
/// square matrix. Iterates on `A + cI` so that periodic matrices (e.g. the
/// 2×2 antidiagonal case) still converge.
pub fn perron_irreducible(a: &DMatrix<f64>) -> Result<Perron, SolverError> {
    let n = a.nrows();
    if !a.is_square() || a.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(SolverError::Domain("matrix must be square, finite and nonnegative".into()));
    }
    if n == 1 {
        return Ok(Perron {
            rho: a[(0, 0)],
            g: DVector::from_element(1, 1.0),
        });
    }
    if !strongly_connected(a) {
        return Err(SolverError::Domain("matrix is reducible".into()));
    }
    let rows: Vec<f64> = a.row_iter().map(|r| r.sum()).collect();
    let lo = rows.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = rows.iter().copied().fold(0.0, f64::max);
    // The Perron root lies between the extreme row sums.
    let shift = 0.5 * (lo + hi).max(f64::MIN_POSITIVE);
    let mut g = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lam = 0.0;
    for _ in 0..MAX_POWER_ITERS {
        let w = a * &g + &g * shift;
        let new_lam = w.norm();
        let new_g = w / new_lam;
        let dv = (&new_g - &g).amax();
        let dl = (new_lam - lam).abs();
        g = new_g;
        lam = new_lam;
        if dl <= REL_STOP * lam && dv <= VEC_STOP {
            break;
        }
    }
    let ag = a * &g;
    let rho = g.dot(&ag) / g.dot(&g);
    if g.iter().any(|v| *v <= 0.0) {
        return Err(SolverError::NonConvergence { gap: f64::NAN, iters: MAX_POWER_ITERS });
    }
    Ok(Perron { rho, g })
}
