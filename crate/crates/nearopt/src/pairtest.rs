//! Pairwise tests: the saddle-point problem, the resulting detector, its
//! certified risk and repeated-observation plans.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schemes::{Detector, FactorKind, Observation, ProductScheme, SchemeError};
use crate::sets::{check_affine_image, CheckOutcome, DomainTag, PolytopeSpec};
use crate::solver::{gaussian_tail, maximize_concave, ConcaveObjective, FwConfig, SolverError};

/// Interior margin used for Poisson and Discrete parameters unless a
/// problem says otherwise.
pub const DEFAULT_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PairError {
    #[error("hypothesis set {0} is empty")]
    EmptySet(Side),
    #[error("hypothesis set {side} lies on the boundary of the parameter domain in coordinate {coord}")]
    Margin { side: Side, coord: usize },
    #[error("hypothesis set {side} is not contained in the simplex for factor {factor}")]
    NotOnSimplex { side: Side, factor: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("no finite plan: {0}")]
    NoFinitePlan(String),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    X,
    Y,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Side::X => "X",
            Side::Y => "Y",
        })
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawParamSet {
    Lifted {
        polytope: PolytopeSpec,
        #[serde(default)]
        map: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        offset: Option<Vec<f64>>,
    },
    Plain(PolytopeSpec),
}

#[derive(Serialize)]
struct LiftedOut<'a> {
    polytope: &'a PolytopeSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    map: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    offset: Option<&'a Vec<f64>>,
}

/// Parameters `map·z + offset` for `z` in a polytope; the identity map
/// when `map` is absent.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(try_from = "RawParamSet")]
pub struct ParamSet {
    pub polytope: PolytopeSpec,
    pub map: Option<DMatrix<f64>>,
    pub offset: Option<Vec<f64>>,
}

impl Serialize for ParamSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        LiftedOut {
            polytope: &self.polytope,
            map: self
                .map
                .as_ref()
                .map(|m| m.row_iter().map(|r| r.iter().copied().collect()).collect()),
            offset: self.offset.as_ref(),
        }
        .serialize(s)
    }
}

impl TryFrom<RawParamSet> for ParamSet {
    type Error = String;

    fn try_from(r: RawParamSet) -> Result<Self, String> {
        match r {
            RawParamSet::Plain(p) => Ok(ParamSet::new(p)),
            RawParamSet::Lifted { polytope, map, offset } => {
                let map = match map {
                    None => None,
                    Some(rows) => {
                        let ncols = rows.first().map_or(0, |r| r.len());
                        if rows.iter().any(|r| r.len() != ncols) {
                            return Err("map rows have different lengths".into());
                        }
                        Some(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
                    }
                };
                ParamSet::lifted(polytope, map, offset).map_err(|e| e.to_string())
            }
        }
    }
}

impl ParamSet {
    pub fn new(polytope: PolytopeSpec) -> Self {
        ParamSet {
            polytope,
            map: None,
            offset: None,
        }
    }

    pub fn lifted(
        polytope: PolytopeSpec,
        map: Option<DMatrix<f64>>,
        offset: Option<Vec<f64>>,
    ) -> Result<Self, PairError> {
        let s = ParamSet { polytope, map, offset };
        if let Some(m) = &s.map {
            if m.ncols() != s.polytope.dim || m.iter().any(|v| !v.is_finite()) {
                return Err(PairError::Dimension(format!(
                    "map has {} columns for a polytope of dimension {}",
                    m.ncols(),
                    s.polytope.dim
                )));
            }
        }
        if let Some(o) = &s.offset {
            if o.len() != s.param_dim() || o.iter().any(|v| !v.is_finite()) {
                return Err(PairError::Dimension("offset length does not match the map".into()));
            }
        }
        Ok(s)
    }

    pub fn singleton(x: &[f64]) -> Self {
        ParamSet::new(PolytopeSpec::point(x))
    }

    pub fn param_dim(&self) -> usize {
        self.map.as_ref().map_or(self.polytope.dim, |m| m.nrows())
    }

    pub fn latent_dim(&self) -> usize {
        self.polytope.dim
    }

    pub fn param_of(&self, z: &[f64]) -> Vec<f64> {
        let mut p = match &self.map {
            None => z.to_vec(),
            Some(m) => (m * nalgebra::DVector::from_column_slice(z)).iter().copied().collect(),
        };
        if let Some(o) = &self.offset {
            p.iter_mut().zip(o).for_each(|(a, b)| *a += b);
        }
        p
    }

    fn pull_back(&self, g: &[f64], out: &mut [f64]) {
        match &self.map {
            None => out.copy_from_slice(g),
            Some(m) => {
                let v = m.tr_mul(&nalgebra::DVector::from_column_slice(g));
                out.copy_from_slice(v.as_slice());
            }
        }
    }

    /// Validates the set against the domain of each factor of `scheme`.
    pub fn check(&self, scheme: &ProductScheme, side: Side, margin: f64) -> Result<(), PairError> {
        if self.param_dim() != scheme.dim() {
            return Err(PairError::Dimension(format!(
                "set {side} has {} parameters, scheme needs {}",
                self.param_dim(),
                scheme.dim()
            )));
        }
        for (k, (f, off)) in scheme.factors().iter().zip(scheme.offsets()).enumerate() {
            let tag = match f.kind() {
                FactorKind::Gaussian { .. } => DomainTag::Unrestricted,
                FactorKind::Poisson { .. } => DomainTag::PositiveOrthant { margin },
                FactorKind::Discrete { .. } => DomainTag::SimplexInterior { margin },
            };
            let range = off..off + f.dim();
            match check_affine_image(&self.polytope, self.map.as_ref(), self.offset.as_deref(), range, tag) {
                CheckOutcome::Ok => {}
                CheckOutcome::Empty => return Err(PairError::EmptySet(side)),
                CheckOutcome::MarginViolated(c) => return Err(PairError::Margin { side, coord: off + c }),
                CheckOutcome::NotOnSimplex => return Err(PairError::NotOnSimplex { side, factor: k }),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairProblem {
    pub scheme: ProductScheme,
    pub x: ParamSet,
    pub y: ParamSet,
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_margin() -> f64 {
    DEFAULT_MARGIN
}

impl PairProblem {
    pub fn new(scheme: ProductScheme, x: ParamSet, y: ParamSet) -> Self {
        PairProblem {
            scheme,
            x,
            y,
            margin: DEFAULT_MARGIN,
        }
    }

    pub fn swapped(&self) -> Self {
        PairProblem {
            x: self.y.clone(),
            y: self.x.clone(),
            ..self.clone()
        }
    }
}

/// `Σ_k repeat_k ψ_k(x_k, y_k)` as a function of the stacked latent
/// variables of both sets.
pub(crate) struct PairObjective<'a> {
    pub scheme: &'a ProductScheme,
    pub x: &'a ParamSet,
    pub y: &'a ParamSet,
}

impl PairObjective<'_> {
    fn eval(&self, z: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let nx = self.x.latent_dim();
        let px = self.x.param_of(&z[..nx]);
        let py = self.y.param_of(&z[nx..]);
        let n = px.len();
        let mut gx = vec![0.0; n];
        let mut gy = vec![0.0; n];
        let mut total = 0.0;
        for (f, o) in self.scheme.factors().iter().zip(self.scheme.offsets()) {
            let r = o..o + f.dim();
            let k = f.repeat() as f64;
            let v = f.psi_into(&px[r.clone()], &py[r.clone()], &mut gx[r.clone()], &mut gy[r.clone()]);
            total += k * v;
            if k != 1.0 {
                gx[r.clone()].iter_mut().for_each(|g| *g *= k);
                gy[r].iter_mut().for_each(|g| *g *= k);
            }
        }
        if let Some(grad) = grad {
            let (ax, ay) = grad.split_at_mut(nx);
            self.x.pull_back(&gx, ax);
            self.y.pull_back(&gy, ay);
        }
        total
    }
}

impl ConcaveObjective for PairObjective<'_> {
    fn dim(&self) -> usize {
        self.x.latent_dim() + self.y.latent_dim()
    }

    fn value(&self, z: &[f64]) -> f64 {
        self.eval(z, None)
    }

    fn value_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        self.eval(z, Some(grad))
    }
}

/// Which risk certificate applies to a scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RiskKind {
    /// Only Gaussian factors: the exact normal tail of the detector.
    Gaussian,
    /// One Discrete factor observed once: the moment is linear in the
    /// parameter.
    SingleDiscrete,
    General,
}

impl RiskKind {
    pub fn of(scheme: &ProductScheme) -> RiskKind {
        let fs = scheme.factors();
        if fs.iter().all(|f| matches!(f.kind(), FactorKind::Gaussian { .. })) {
            RiskKind::Gaussian
        } else if fs.len() == 1 && fs[0].is_discrete() && fs[0].repeat() == 1 {
            RiskKind::SingleDiscrete
        } else {
            RiskKind::General
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSolution {
    pub x_star: Vec<f64>,
    pub y_star: Vec<f64>,
    /// Latent points of the two sets (equal to the parameters for plain sets).
    pub x_latent: Vec<f64>,
    pub y_latent: Vec<f64>,
    pub opt: f64,
    pub eps_star: f64,
    pub detector: Detector,
    /// Frank–Wolfe gap on `opt` and its split over the two sets.
    pub gap: f64,
    pub gap_x: f64,
    pub gap_y: f64,
    pub iters: usize,
    pub converged: bool,
    /// Risk bound of the delivered detector that accounts for the gap.
    pub certified_eps: f64,
    pub risk_kind: RiskKind,
    /// Upper bounds on the two error probabilities after shifting,
    /// capped at 1.
    pub bounds: [f64; 2],
    /// The sets are not separated (ε* = 1 up to the gap).
    pub trivial: bool,
}

impl PairSolution {
    pub fn shift(&self) -> f64 {
        self.detector.shift
    }
}

pub fn solve_pair(p: &PairProblem, cfg: &FwConfig) -> Result<PairSolution, PairError> {
    p.x.check(&p.scheme, Side::X, p.margin)?;
    p.y.check(&p.scheme, Side::Y, p.margin)?;
    let obj = PairObjective {
        scheme: &p.scheme,
        x: &p.x,
        y: &p.y,
    };
    let blocks = [p.x.polytope.clone(), p.y.polytope.clone()];
    let r = maximize_concave(&obj, &blocks, cfg)?;
    let nx = p.x.latent_dim();
    let x_latent = r.point[..nx].to_vec();
    let y_latent = r.point[nx..].to_vec();
    let x_star = p.x.param_of(&x_latent);
    let y_star = p.y.param_of(&y_latent);
    let detector = p.scheme.build_detector(&x_star, &y_star)?;
    let opt = r.value.min(0.0);
    let eps_star = (opt / 2.0).exp();
    let (gap_x, gap_y) = (r.block_gaps[0], r.block_gaps[1]);
    let risk_kind = RiskKind::of(&p.scheme);
    let certified_eps = inflated_risk(risk_kind, eps_star, gap_x.max(gap_y));
    Ok(PairSolution {
        x_star,
        y_star,
        x_latent,
        y_latent,
        opt,
        eps_star,
        detector,
        gap: r.gap,
        gap_x,
        gap_y,
        iters: r.iters,
        converged: r.converged,
        certified_eps,
        risk_kind,
        bounds: [eps_star, eps_star],
        trivial: eps_star >= (-r.gap / 2.0).exp() - 1e-12,
    })
}

/// `ε*` inflated by a first-order residual `delta` of the saddle problem.
pub fn inflated_risk(kind: RiskKind, eps_star: f64, delta: f64) -> f64 {
    let b = match kind {
        RiskKind::SingleDiscrete => eps_star * (1.0 + delta),
        RiskKind::Gaussian | RiskKind::General => eps_star * delta.exp(),
    };
    b.min(1.0)
}

/// Normal-tail risk of a Gaussian detector built from approximate
/// optimizers, `Erf(d/2 − 2δ/d)` with `d² = −4·Opt`.
pub fn gaussian_erf_risk(opt: f64, delta: f64) -> f64 {
    let d = (-4.0 * opt).max(0.0).sqrt();
    if d == 0.0 {
        return 1.0;
    }
    gaussian_tail(d / 2.0 - 2.0 * delta / d).min(1.0)
}

/// Scheme-appropriate risk bound of the delivered (unshifted) detector.
pub fn certified_risk(s: &PairSolution) -> f64 {
    let delta = s.gap_x.max(s.gap_y);
    match s.risk_kind {
        RiskKind::Gaussian => gaussian_erf_risk(s.opt, delta).min(s.certified_eps),
        _ => s.certified_eps,
    }
}

/// Moves the detector threshold by `a`, trading the two error bounds as
/// `(e^a ε*, e^{−a} ε*)`.
pub fn shift_detector(s: &PairSolution, a: f64) -> PairSolution {
    let mut out = s.clone();
    out.detector = s.detector.with_shift(a);
    out.bounds = [(a.exp() * s.eps_star).min(1.0), ((-a).exp() * s.eps_star).min(1.0)];
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    AcceptX,
    AcceptY,
}

pub fn decide(s: &PairSolution, obs: &Observation) -> Result<Decision, PairError> {
    Ok(decide_value(s.detector.eval(obs)?))
}

pub fn decide_value(phi: f64) -> Decision {
    if phi >= 0.0 {
        Decision::AcceptX
    } else {
        Decision::AcceptY
    }
}

/// Smallest `K` with `eps_star^K ≤ target`.
pub fn repeated_plan(eps_star: f64, target: f64) -> Result<usize, PairError> {
    if !(eps_star > 0.0 && eps_star < 1.0) {
        return Err(PairError::NoFinitePlan(format!("eps_star = {eps_star} is not below 1")));
    }
    if !(target > 0.0) {
        return Err(PairError::NoFinitePlan("target risk must be positive".into()));
    }
    if target >= eps_star {
        return Ok(1);
    }
    let mut k = (target.ln() / eps_star.ln()).ceil().max(1.0) as usize;
    while k > 1 && eps_star.powi(k as i32 - 1) <= target {
        k -= 1;
    }
    while eps_star.powi(k as i32) > target {
        k += 1;
    }
    Ok(k)
}

/// Number of observations for which the pairwise test matches any test that
/// reaches risk `eps` with `k_bar` observations.
pub fn near_opt_sample_size(eps: f64, k_bar: usize) -> Result<usize, PairError> {
    if !(eps > 0.0 && eps < 0.25) {
        return Err(PairError::NoFinitePlan(format!("risk {eps} outside (0, 1/4)")));
    }
    let denom = 1.0 - 2.0 * 2f64.ln() / (1.0 / eps).ln();
    Ok((2.0 * k_bar as f64 / denom).ceil() as usize)
}
