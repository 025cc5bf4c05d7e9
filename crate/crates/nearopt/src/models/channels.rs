//! Discretized observation channels for a latent variable on `[a_0, a_n]`
//! seen through additive noise or through `max(ξ, η)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma, Laplace};

use super::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Noise {
    /// Degenerate noise at a fixed value.
    Point { at: f64 },
    Laplace { loc: f64, scale: f64 },
    /// Shifted Gamma with the given shape and scale.
    Gamma { loc: f64, shape: f64, scale: f64 },
    /// Equal-weight mixture of Laplace laws given as `(loc, scale)`.
    LaplaceMix { parts: Vec<(f64, f64)> },
}

fn laplace(loc: f64, scale: f64) -> Result<Laplace, ModelError> {
    Laplace::new(loc, scale).map_err(|e| ModelError::Invalid(e.to_string()))
}

impl Noise {
    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            Noise::Point { at } if at.is_finite() => Ok(()),
            Noise::Point { .. } => Err(ModelError::Invalid("point noise must be finite".into())),
            Noise::Laplace { loc, scale } => laplace(*loc, *scale).map(|_| ()),
            Noise::Gamma { shape, scale, .. } => Gamma::new(*shape, 1.0 / scale)
                .map(|_| ())
                .map_err(|e| ModelError::Invalid(e.to_string())),
            Noise::LaplaceMix { parts } if parts.is_empty() => Err(ModelError::Invalid("empty mixture".into())),
            Noise::LaplaceMix { parts } => parts.iter().try_for_each(|(l, s)| laplace(*l, *s).map(|_| ())),
        }
    }

    /// `P(η ≤ x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Noise::Point { at } => {
                if x >= *at {
                    1.0
                } else {
                    0.0
                }
            }
            Noise::Laplace { loc, scale } => laplace(*loc, *scale).map_or(f64::NAN, |d| d.cdf(x)),
            Noise::Gamma { loc, shape, scale } => {
                if x <= *loc {
                    0.0
                } else {
                    Gamma::new(*shape, 1.0 / scale).map_or(f64::NAN, |d| d.cdf(x - loc))
                }
            }
            Noise::LaplaceMix { parts } => {
                parts
                    .iter()
                    .map(|(l, s)| laplace(*l, *s).map_or(f64::NAN, |d| d.cdf(x)))
                    .sum::<f64>()
                    / parts.len() as f64
            }
        }
    }

    /// `p`-quantile, by bisection on the cdf where no closed form is at hand.
    pub fn quantile(&self, p: f64) -> f64 {
        match self {
            Noise::Point { at } => *at,
            Noise::Laplace { loc, scale } => laplace(*loc, *scale).map_or(f64::NAN, |d| d.inverse_cdf(p)),
            _ => {
                let (mut lo, mut hi) = (-1.0, 1.0);
                while self.cdf(lo) > p {
                    lo *= 2.0;
                }
                while self.cdf(hi) < p {
                    hi *= 2.0;
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.cdf(mid) < p {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-14 * (1.0 + hi.abs()) {
                        break;
                    }
                }
                hi
            }
        }
    }
}

/// `n` equal bins on `[lo, hi]`, returned as the `n + 1` edges.
pub fn uniform_edges(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect()
}

fn check_edges(edges: &[f64]) -> Result<(), ModelError> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(ModelError::Invalid("bin edges must be strictly increasing with at least one bin".into()));
    }
    Ok(())
}

/// Channel for `ζ = ξ + η` with `ξ` at the bin centres. The observation
/// range `[a_0 + q(δ), a_n + q(1−δ)]` is cut into `interior` equal bins and
/// two tail bins are added, giving `interior + 2` outcomes.
pub fn deconvolution_channel(
    edges: &[f64],
    noise: &Noise,
    delta: f64,
    interior: usize,
) -> Result<DMatrix<f64>, ModelError> {
    check_edges(edges)?;
    noise.validate()?;
    if !(delta > 0.0 && delta < 0.5) || interior == 0 {
        return Err(ModelError::Invalid("need delta in (0, 1/2) and at least one interior bin".into()));
    }
    let n = edges.len() - 1;
    let b_lo = edges[0] + noise.quantile(delta);
    let b_hi = edges[n] + noise.quantile(1.0 - delta);
    if !(b_lo < b_hi) {
        return Err(ModelError::Invalid("observation range is empty".into()));
    }
    let mut cuts = vec![f64::NEG_INFINITY];
    cuts.extend(uniform_edges(b_lo, b_hi, interior));
    cuts.push(f64::INFINITY);
    let centres: Vec<f64> = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let m = cuts.len() - 1;
    let mut a = DMatrix::zeros(m, n);
    for (j, c) in centres.iter().enumerate() {
        let f: Vec<f64> = cuts.iter().map(|b| noise.cdf(b - c)).collect();
        for i in 0..m {
            a[(i, j)] = (f[i + 1] - f[i]).max(0.0);
        }
    }
    Ok(a)
}

/// Channel for `ζ = max(ξ, η)` reported on the latent bins plus one bin
/// above `a_n`.
pub fn trimmed_channel(edges: &[f64], noise: &Noise) -> Result<DMatrix<f64>, ModelError> {
    check_edges(edges)?;
    noise.validate()?;
    let n = edges.len() - 1;
    let f: Vec<f64> = edges.iter().map(|e| noise.cdf(*e)).collect();
    let mut a = DMatrix::zeros(n + 1, n);
    for j in 0..n {
        a[(j, j)] = f[j + 1];
        for i in j + 1..n {
            a[(i, j)] = f[i + 1] - f[i];
        }
        a[(n, j)] = 1.0 - f[n];
    }
    Ok(a)
}

/// Raises entries below `floor` to it and renormalizes the columns.
pub fn floor_channel(a: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let mut out = a.map(|v| v.max(floor));
    for mut c in out.column_iter_mut() {
        let s = c.sum();
        c /= s;
    }
    out
}
