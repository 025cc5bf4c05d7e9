//! Upper tail of the standard normal distribution and its inverse.

use std::f64::consts::{PI, SQRT_2};

use statrs::function::erf::erfc_inv;

use super::SolverError;

/// `Erf(t) = P(N(0,1) >= t)`.
pub fn gaussian_tail(t: f64) -> f64 {
    0.5 * libm::erfc(t / SQRT_2)
}

fn density(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * PI).sqrt()
}

/// Inverse of [`gaussian_tail`] on `(0, 1)`.
pub fn gaussian_tail_inv(s: f64) -> Result<f64, SolverError> {
    if !(s > 0.0 && s < 1.0) {
        return Err(SolverError::Domain(format!("tail probability {s} outside (0,1)")));
    }
    let mut t = SQRT_2 * erfc_inv(2.0 * s);
    // Newton polish on the tail equation; the library inverse is already
    // close, two steps reach rounding level.
    for _ in 0..2 {
        let p = density(t);
        if p <= 0.0 {
            break;
        }
        t += (gaussian_tail(t) - s) / p;
    }
    Ok(t)
}
