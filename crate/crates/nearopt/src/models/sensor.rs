//! Detecting a signal `r·e[i]` of unknown location in a sensor network
//! observed through `A` with a convex nuisance, under Gaussian or Poisson
//! noise.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::pairtest::{solve_pair, PairProblem, PairSolution, ParamSet};
use crate::schemes::{ProductScheme, SchemeFactor};
use crate::sets::PolytopeSpec;
use crate::solver::{bisect_max_param, gaussian_tail_inv, BisectError, FwConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensorCase {
    Gaussian,
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSpec {
    /// Sensing matrix, `m × n`, stored row-major in JSON.
    #[serde(with = "rows")]
    pub a: DMatrix<f64>,
    pub nuisance: PolytopeSpec,
    pub signatures: Vec<Vec<f64>>,
    /// Cap on the signal amplitude.
    pub r_max: f64,
    #[serde(default = "one")]
    pub sigma: f64,
    pub eps: f64,
}

fn one() -> f64 {
    1.0
}

pub(crate) mod rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let nc = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != nc) {
            return Err(serde::de::Error::custom("matrix rows have different lengths"));
        }
        Ok(DMatrix::from_fn(rows.len(), nc, |i, j| rows[i][j]))
    }
}

impl DetectionSpec {
    pub fn validate(&self, case: SensorCase) -> Result<(), ModelError> {
        let (m, n) = self.a.shape();
        if self.nuisance.dim != n {
            return Err(ModelError::Invalid("nuisance dimension must match the columns of A".into()));
        }
        if self.signatures.is_empty() || self.signatures.iter().any(|e| e.len() != n) {
            return Err(ModelError::Invalid(format!("signatures must be vectors of length {n}")));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) || !(self.sigma > 0.0) || !(self.r_max > 0.0) {
            return Err(ModelError::Invalid("need eps in (0, 1), sigma > 0 and r_max > 0".into()));
        }
        for (i, e) in self.signatures.iter().enumerate() {
            let ae = &self.a * DVector::from_column_slice(e);
            if ae.iter().all(|v| v.abs() == 0.0) {
                return Err(ModelError::Invalid(format!("signature {i} is invisible: A e[{i}] = 0")));
            }
        }
        if case == SensorCase::Poisson {
            if self.a.iter().any(|v| *v < 0.0) || (0..m).any(|r| self.a.row(r).iter().all(|v| *v == 0.0)) {
                return Err(ModelError::Invalid("Poisson sensing needs A >= 0 without zero rows".into()));
            }
            if self.signatures.iter().flatten().any(|v| *v < 0.0) {
                return Err(ModelError::Invalid("Poisson signatures must be nonnegative".into()));
            }
        }
        Ok(())
    }

    fn signal(&self, i: usize) -> DVector<f64> {
        &self.a * DVector::from_column_slice(&self.signatures[i])
    }
}

/// Rate-optimality factor of the assembled test: `n` alternatives at risk
/// `eps`.
pub fn rate_factor(eps: f64, n: usize, case: SensorCase) -> Result<f64, ModelError> {
    if !(eps > 0.0 && eps < 0.25) || n == 0 {
        return Err(ModelError::Invalid("rate factor needs eps in (0, 1/4) and n >= 1".into()));
    }
    let n = n as f64;
    Ok(match case {
        SensorCase::Poisson => (n / (eps * eps)).ln() / (1.0 / (4.0 * eps)).ln(),
        SensorCase::Gaussian => {
            gaussian_tail_inv(eps / (4.0 * n))? / (2.0 * gaussian_tail_inv(eps / 2.0)?) + 0.5
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub fw: FwConfig,
    /// Bisection tolerance relative to `r_max`.
    pub rel_tol: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            fw: FwConfig::default(),
            rel_tol: 1e-5,
        }
    }
}

/// `φ(ω) = ξᵀω − α`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearDetector {
    pub xi: Vec<f64>,
    pub alpha: f64,
}

impl LinearDetector {
    pub fn eval(&self, omega: &[f64]) -> f64 {
        self.xi.iter().zip(omega).map(|(a, b)| a * b).sum::<f64>() - self.alpha
    }

    fn negated_input(&self) -> LinearDetector {
        LinearDetector {
            xi: self.xi.iter().map(|v| -v).collect(),
            alpha: self.alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateProfile {
    pub case: SensorCase,
    /// `ρ_i`; infinite when even amplitude `r_max` cannot be told apart.
    pub rho: Vec<f64>,
    /// Profile of the oracle that knows the location (Gaussian only).
    pub baseline: Option<Vec<f64>>,
    /// One detector per location (for `χ = +1` in the Gaussian case).
    pub detectors: Vec<LinearDetector>,
    /// Constant added to the minimum of the per-location detectors.
    pub offset: f64,
    /// Rate-optimality factor; defined for eps < 1/4.
    pub kappa: Option<f64>,
}

impl RateProfile {
    /// Assembled detector; `≥ 0` accepts the nuisance-only hypothesis.
    pub fn eval(&self, omega: &[f64]) -> f64 {
        let per = self.detectors.iter().map(|d| match self.case {
            SensorCase::Gaussian => d.eval(omega).min(d.negated_input().eval(omega)),
            SensorCase::Poisson => d.eval(omega),
        });
        per.fold(f64::INFINITY, f64::min) + self.offset
    }

    pub fn accepts_null(&self, omega: &[f64]) -> bool {
        self.eval(omega) >= 0.0
    }
}

struct Closeness<'a> {
    spec: &'a DetectionSpec,
    scheme: ProductScheme,
    x: ParamSet,
    /// Minimal admissible `Opt` (distance threshold in log-affinity form).
    threshold: f64,
}

impl Closeness<'_> {
    fn problem(&self, i: usize, r: f64) -> Result<PairProblem, ModelError> {
        let off: Vec<f64> = self.spec.signal(i).iter().map(|v| v * r).collect();
        let y = ParamSet::lifted(self.spec.nuisance.clone(), Some(self.spec.a.clone()), Some(off))?;
        Ok(PairProblem::new(self.scheme.clone(), self.x.clone(), y))
    }

    fn solve(&self, i: usize, r: f64, fw: &FwConfig) -> Result<PairSolution, ModelError> {
        Ok(solve_pair(&self.problem(i, r)?, fw)?)
    }

    /// Largest amplitude whose hypothesis stays within the threshold of the
    /// null, or `None` when even `r_max` does.
    fn max_close(&self, i: usize, cfg: &SensorConfig) -> Result<Option<f64>, ModelError> {
        let tol = cfg.rel_tol * self.spec.r_max;
        let res = bisect_max_param(
            |r| -> Result<bool, ModelError> {
                let s = self.solve(i, r, &cfg.fw)?;
                Ok(s.opt + s.gap >= self.threshold)
            },
            0.0,
            self.spec.r_max,
            tol,
        );
        match res {
            Ok(r) if r >= self.spec.r_max => Ok(None),
            Ok(r) => Ok(Some(r)),
            Err(BisectError::Inner(e)) => Err(e),
            Err(BisectError::NotFeasibleAtLo) => Err(ModelError::Infeasible("nuisance set is empty".into())),
        }
    }
}

fn is_point(p: &PolytopeSpec) -> bool {
    p.lower.iter().zip(&p.upper).all(|(l, u)| l == u)
}

/// Per-location rate profile and the assembled detector.
pub fn sensor_rate_profile(
    spec: &DetectionSpec,
    case: SensorCase,
    cfg: &SensorConfig,
) -> Result<RateProfile, ModelError> {
    spec.validate(case)?;
    let (m, _) = spec.a.shape();
    let n = spec.signatures.len();
    let nf = n as f64;
    let x = ParamSet::lifted(spec.nuisance.clone(), Some(spec.a.clone()), None)?;
    let eps = spec.eps;
    match case {
        SensorCase::Gaussian => {
            let q_null = gaussian_tail_inv(eps / (4.0 * nf))?;
            let q_alt = gaussian_tail_inv(eps / 2.0)?;
            let sigma = spec.sigma;
            let theta = sigma * (q_null + q_alt);
            let theta_base = 2.0 * sigma * q_alt;
            let scheme = ProductScheme::single(SchemeFactor::gaussian_iso(m, sigma, 1)?);
            let close = |t: f64| Closeness {
                spec,
                scheme: scheme.clone(),
                x: x.clone(),
                threshold: -t * t / (4.0 * sigma * sigma),
            };
            let (main, base) = (close(theta), close(theta_base));
            let lambda = q_alt / (q_null + q_alt);
            let point = is_point(&spec.nuisance);
            let per: Vec<(f64, f64, LinearDetector)> = (0..n)
                .into_par_iter()
                .map(|i| -> Result<_, ModelError> {
                    let (rho, rho_base) = if point {
                        // Fixed nuisance: the distance grows linearly in r.
                        let a = spec.signal(i).norm();
                        let cap = |t: f64| if t / a >= spec.r_max { None } else { Some(t / a) };
                        (cap(theta), cap(theta_base))
                    } else {
                        (main.max_close(i, cfg)?, base.max_close(i, cfg)?)
                    };
                    let s = main.solve(i, rho.unwrap_or(spec.r_max), &cfg.fw)?;
                    // Null side gets eps/(4n) per test, the alternative eps/2.
                    let w: Vec<f64> = s.x_star.iter().zip(&s.y_star).map(|(p, q)| p - q).collect();
                    let alpha = w
                        .iter()
                        .zip(s.x_star.iter().zip(&s.y_star))
                        .map(|(wi, (p, q))| wi * (lambda * p + (1.0 - lambda) * q))
                        .sum();
                    Ok((
                        rho.unwrap_or(f64::INFINITY),
                        rho_base.unwrap_or(f64::INFINITY),
                        LinearDetector { xi: w, alpha },
                    ))
                })
                .collect::<Result<_, _>>()?;
            Ok(RateProfile {
                case,
                rho: per.iter().map(|p| p.0).collect(),
                baseline: Some(per.iter().map(|p| p.1).collect()),
                detectors: per.into_iter().map(|p| p.2).collect(),
                offset: 0.0,
                kappa: rate_factor(eps, n, case).ok(),
            })
        }
        SensorCase::Poisson => {
            let scheme = ProductScheme::single(SchemeFactor::poisson(m, 1)?);
            let main = Closeness {
                spec,
                scheme,
                x,
                threshold: -2.0 * (nf.sqrt() / eps).ln(),
            };
            let per: Vec<(f64, LinearDetector)> = (0..n)
                .into_par_iter()
                .map(|i| -> Result<_, ModelError> {
                    let rho = main.max_close(i, cfg)?;
                    let s = main.solve(i, rho.unwrap_or(spec.r_max), &cfg.fw)?;
                    let xi = s.x_star.iter().zip(&s.y_star).map(|(p, q)| 0.5 * (p / q).ln()).collect();
                    let alpha = 0.5 * s.x_star.iter().zip(&s.y_star).map(|(p, q)| p - q).sum::<f64>();
                    Ok((rho.unwrap_or(f64::INFINITY), LinearDetector { xi, alpha }))
                })
                .collect::<Result<_, _>>()?;
            Ok(RateProfile {
                case,
                rho: per.iter().map(|p| p.0).collect(),
                baseline: None,
                detectors: per.into_iter().map(|p| p.1).collect(),
                offset: 0.5 * nf.ln(),
                kappa: rate_factor(eps, n, case).ok(),
            })
        }
    }
}

/// Output of a linear system with impulse response `kernel` over `m` steps;
/// the input includes the `T − 1` steps before the window.
pub fn convolution_matrix(kernel: &[f64], m: usize) -> DMatrix<f64> {
    let t = kernel.len();
    let n = m + t - 1;
    DMatrix::from_fn(m, n, |row, col| {
        // Output row sees inputs row..row+T-1, most recent last.
        let k = (row + t - 1).checked_sub(col);
        match k {
            Some(k) if k < t => kernel[k],
            _ => 0.0,
        }
    })
}

/// Signals with bounded second differences and entries in `[−bound, bound]`;
/// symmetric about the origin.
pub fn smooth_nuisance(n: usize, l: f64, bound: f64) -> Result<PolytopeSpec, ModelError> {
    let mut p = PolytopeSpec::new_box(vec![-bound; n], vec![bound; n])?;
    for i in 2..n {
        let mut row = vec![0.0; n];
        row[i] = 1.0;
        row[i - 1] = -2.0;
        row[i - 2] = 1.0;
        let neg: Vec<f64> = row.iter().map(|v| -v).collect();
        p = p.with_ineq(row, l).with_ineq(neg, l);
    }
    Ok(p)
}
