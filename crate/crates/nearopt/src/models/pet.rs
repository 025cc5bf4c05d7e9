//! Toy emission tomography: Poisson counts on detector-arc pairs with
//! intensities `t·Pλ`, testing a linear functional of the density `λ`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sensor::{rows, LinearDetector};
use super::ModelError;
use crate::pairtest::{solve_pair, PairProblem, PairSolution, ParamSet};
use crate::schemes::{ProductScheme, SchemeFactor};
use crate::sets::PolytopeSpec;
use crate::solver::FwConfig;

/// Densities on a `side × side` grid with `λ ≥ lambda_min`, mean at most `r`
/// and discrete Laplacian (zero outside the grid) bounded by `l`.
pub fn density_class(side: usize, l: f64, r: f64, lambda_min: f64) -> Result<PolytopeSpec, ModelError> {
    let n = side * side;
    if n == 0 || !(l > 0.0) || !(r > lambda_min) || !(lambda_min >= 0.0) {
        return Err(ModelError::Invalid("need a nonempty grid, l > 0 and r > lambda_min >= 0".into()));
    }
    let idx = |k: usize, c: usize| k * side + c;
    let mut p = PolytopeSpec::new_box(vec![lambda_min; n], vec![n as f64 * r; n])?.with_ineq(vec![1.0; n], n as f64 * r);
    for k in 0..side {
        for c in 0..side {
            let mut row = vec![0.0; n];
            row[idx(k, c)] = 1.0;
            let mut nb = |kk: Option<usize>, cc: Option<usize>| {
                if let (Some(kk), Some(cc)) = (kk, cc) {
                    if kk < side && cc < side {
                        row[idx(kk, cc)] = -0.25;
                    }
                }
            };
            nb(k.checked_sub(1), Some(c));
            nb(Some(k + 1), Some(c));
            nb(Some(k), c.checked_sub(1));
            nb(Some(k), Some(c + 1));
            let neg: Vec<f64> = row.iter().map(|v| -v).collect();
            p = p.with_ineq(row, l).with_ineq(neg, l);
        }
    }
    Ok(p)
}

/// Average over the pixels in the given row and column ranges.
pub fn spot_functional(side: usize, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Vec<f64> {
    let count = (rows.len() * cols.len()) as f64;
    let mut g = vec![0.0; side * side];
    for k in rows {
        for c in cols.clone() {
            g[k * side + c] = 1.0 / count;
        }
    }
    g
}

/// Registration probabilities of a square field `[−1, 1]²` split into
/// `side²` pixels, inside a circle of `arcs` equal detector arcs. Lines of
/// response are sampled uniformly per pixel; a pair of distinct arcs is a
/// bin, and bins never hit are dropped.
pub fn ring_projection(side: usize, arcs: usize, rays_per_pixel: usize, seed: u64) -> Result<DMatrix<f64>, ModelError> {
    if side == 0 || arcs < 3 || rays_per_pixel == 0 {
        return Err(ModelError::Invalid("need pixels, at least 3 arcs and rays".into()));
    }
    let n = side * side;
    let radius = 2f64.sqrt();
    let width = 2.0 / side as f64;
    let two_pi = std::f64::consts::TAU;
    let pair = |a: usize, b: usize| {
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        a * arcs + b
    };
    let mut counts = DMatrix::<f64>::zeros(arcs * arcs, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..side {
        for c in 0..side {
            let j = k * side + c;
            for _ in 0..rays_per_pixel {
                let px = -1.0 + width * (c as f64 + rng.random::<f64>());
                let py = 1.0 - width * (k as f64 + rng.random::<f64>());
                let th = std::f64::consts::PI * rng.random::<f64>();
                let (dx, dy) = (th.cos(), th.sin());
                // |p + s d| = radius.
                let pd = px * dx + py * dy;
                let disc = (pd * pd - (px * px + py * py - radius * radius)).sqrt();
                let arc = |s: f64| {
                    let ang = (py + s * dy).atan2(px + s * dx).rem_euclid(two_pi);
                    ((ang / two_pi * arcs as f64) as usize).min(arcs - 1)
                };
                let (a, b) = (arc(-pd + disc), arc(-pd - disc));
                if a != b {
                    counts[(pair(a, b), j)] += 1.0;
                }
            }
        }
    }
    let kept: Vec<usize> = (0..arcs * arcs).filter(|&i| counts.row(i).sum() > 0.0).collect();
    Ok(DMatrix::from_fn(kept.len(), n, |i, j| counts[(kept[i], j)] / rays_per_pixel as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PetSpec {
    /// Bin × pixel registration probabilities.
    #[serde(with = "rows")]
    pub p: DMatrix<f64>,
    pub side: usize,
    pub l: f64,
    pub r: f64,
    #[serde(default = "default_lambda_min")]
    pub lambda_min: f64,
    pub g: Vec<f64>,
    pub alpha: f64,
    pub rho: f64,
    pub eps: f64,
}

fn default_lambda_min() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PetPlan {
    /// Shortest observation time with risk at most `eps`.
    pub t_star: f64,
    /// `min Σ_i (sqrt[Pλ]_i − sqrt[Pλ']_i)²` over the two hypotheses.
    pub h: f64,
    pub lambda: Vec<f64>,
    pub lambda_prime: Vec<f64>,
    pub solution: PairSolution,
}

impl PetPlan {
    /// Detector for counts collected over time `t`; `≥ 0` accepts the
    /// hypothesis containing `lambda`.
    pub fn detector(&self, t: f64) -> LinearDetector {
        let (x, y) = (&self.solution.x_star, &self.solution.y_star);
        LinearDetector {
            xi: x.iter().zip(y).map(|(a, b)| 0.5 * (a / b).ln()).collect(),
            alpha: 0.5 * t * x.iter().zip(y).map(|(a, b)| a - b).sum::<f64>(),
        }
    }

    /// Risk bound at time `t`.
    pub fn risk_at(&self, t: f64) -> f64 {
        (-0.5 * t * self.h).exp()
    }
}

/// Minimal observation time separating `Pλ, λ ∈ set1` from `Pλ', λ' ∈ set2`.
pub fn pet_plan_sets(
    p: &DMatrix<f64>,
    set1: &PolytopeSpec,
    set2: &PolytopeSpec,
    eps: f64,
    fw: &FwConfig,
) -> Result<PetPlan, ModelError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(ModelError::Invalid("eps must lie in (0, 1)".into()));
    }
    if p.iter().any(|v| *v < 0.0 || !v.is_finite()) || (0..p.nrows()).any(|i| p.row(i).sum() <= 0.0) {
        return Err(ModelError::Invalid("P must be nonnegative without zero rows".into()));
    }
    let scheme = ProductScheme::single(SchemeFactor::poisson(p.nrows(), 1)?);
    let problem = PairProblem::new(
        scheme,
        ParamSet::lifted(set1.clone(), Some(p.clone()), None)?,
        ParamSet::lifted(set2.clone(), Some(p.clone()), None)?,
    );
    let solution = solve_pair(&problem, fw)?;
    let h = -solution.opt;
    if h <= 1e-12 {
        return Err(ModelError::Infeasible("hypotheses are indistinguishable (H = 0)".into()));
    }
    Ok(PetPlan {
        t_star: 2.0 * (1.0 / eps).ln() / h,
        h,
        lambda: solution.x_latent.clone(),
        lambda_prime: solution.y_latent.clone(),
        solution,
    })
}

/// `g(λ) ≤ α` versus `g(λ') ≥ α + ρ` over the density class.
pub fn pet_plan(spec: &PetSpec, fw: &FwConfig) -> Result<PetPlan, ModelError> {
    let n = spec.side * spec.side;
    if spec.p.ncols() != n || spec.g.len() != n {
        return Err(ModelError::Invalid(format!("P and g need {n} pixel columns")));
    }
    if !(spec.rho > 0.0) {
        return Err(ModelError::Invalid("rho must be positive".into()));
    }
    if (&spec.p * DVector::from_column_slice(&spec.g)).iter().all(|v| *v == 0.0) {
        return Err(ModelError::Invalid("g lies in the kernel of P".into()));
    }
    let class = density_class(spec.side, spec.l, spec.r, spec.lambda_min)?;
    let neg: Vec<f64> = spec.g.iter().map(|v| -v).collect();
    let set1 = class.clone().with_ineq(spec.g.clone(), spec.alpha);
    let set2 = class.with_ineq(neg, -(spec.alpha + spec.rho));
    pet_plan_sets(&spec.p, &set1, &set2, spec.eps, fw)
}

/// The shipped toy: 8×8 field, 16 arcs, 2×2 central spot.
pub fn toy_spec() -> Result<PetSpec, ModelError> {
    let side = 8;
    Ok(PetSpec {
        p: ring_projection(side, 16, 10_000, 7)?,
        side,
        l: 0.05,
        r: 1.0,
        lambda_min: 1e-3,
        g: spot_functional(side, 3..5, 3..5),
        alpha: 1.0,
        rho: 0.1,
        eps: 0.01,
    })
}
