//! Gaussian, Poisson and Discrete observation schemes, their direct
//! products, the ψ functions and affine/tabular detectors.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchemeError {
    #[error("invalid factor: {0}")]
    InvalidFactor(String),
    #[error("parameter outside the scheme domain: {0}")]
    Domain(String),
    #[error("observation shape mismatch: {0}")]
    Shape(String),
    #[error("observation file line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Serialized form of a factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FactorSpec {
    /// Either a full covariance `cov` or `dim` with `sigma` (σ²I).
    Gaussian {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cov: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dim: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma: Option<f64>,
        #[serde(default = "one")]
        repeat: usize,
    },
    Poisson {
        dim: usize,
        #[serde(default = "one")]
        repeat: usize,
    },
    Discrete {
        outcomes: usize,
        #[serde(default = "one")]
        repeat: usize,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone)]
pub enum FactorKind {
    Gaussian {
        cov: DMatrix<f64>,
        /// Lower Cholesky factor of `cov`.
        chol: DMatrix<f64>,
        cov_inv: DMatrix<f64>,
    },
    /// Independent Poisson counts, one per coordinate.
    Poisson { dim: usize },
    Discrete { outcomes: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "FactorSpec", into = "FactorSpec")]
pub struct SchemeFactor {
    kind: FactorKind,
    repeat: usize,
}

impl PartialEq for SchemeFactor {
    fn eq(&self, other: &Self) -> bool {
        FactorSpec::from(self.clone()) == FactorSpec::from(other.clone())
    }
}

impl TryFrom<FactorSpec> for SchemeFactor {
    type Error = SchemeError;

    fn try_from(s: FactorSpec) -> Result<Self, SchemeError> {
        match s {
            FactorSpec::Gaussian {
                cov,
                dim,
                sigma,
                repeat,
            } => {
                let cov = match (cov, dim, sigma) {
                    (Some(rows), None, None) => {
                        let n = rows.len();
                        if n == 0 || rows.iter().any(|r| r.len() != n) {
                            return Err(SchemeError::InvalidFactor("covariance must be square".into()));
                        }
                        DMatrix::from_fn(n, n, |i, j| rows[i][j])
                    }
                    (None, Some(d), Some(s)) if s > 0.0 && s.is_finite() => {
                        DMatrix::identity(d, d) * (s * s)
                    }
                    _ => {
                        return Err(SchemeError::InvalidFactor(
                            "gaussian factor needs either cov or dim with sigma > 0".into(),
                        ))
                    }
                };
                SchemeFactor::gaussian(cov, repeat)
            }
            FactorSpec::Poisson { dim, repeat } => SchemeFactor::poisson(dim, repeat),
            FactorSpec::Discrete { outcomes, repeat } => SchemeFactor::discrete(outcomes, repeat),
        }
    }
}

impl From<SchemeFactor> for FactorSpec {
    fn from(f: SchemeFactor) -> FactorSpec {
        let repeat = f.repeat;
        match f.kind {
            FactorKind::Gaussian { cov, .. } => FactorSpec::Gaussian {
                cov: Some(cov.row_iter().map(|r| r.iter().copied().collect()).collect()),
                dim: None,
                sigma: None,
                repeat,
            },
            FactorKind::Poisson { dim } => FactorSpec::Poisson { dim, repeat },
            FactorKind::Discrete { outcomes } => FactorSpec::Discrete { outcomes, repeat },
        }
    }
}

fn check_repeat(repeat: usize) -> Result<(), SchemeError> {
    if repeat == 0 {
        return Err(SchemeError::InvalidFactor("repeat must be >= 1".into()));
    }
    Ok(())
}

impl SchemeFactor {
    pub fn gaussian(cov: DMatrix<f64>, repeat: usize) -> Result<Self, SchemeError> {
        check_repeat(repeat)?;
        let n = cov.nrows();
        if n == 0 || !cov.is_square() || cov.iter().any(|v| !v.is_finite()) {
            return Err(SchemeError::InvalidFactor("covariance must be finite and square".into()));
        }
        let asym = (&cov - cov.transpose()).amax();
        if asym > 1e-12 * cov.amax().max(1.0) {
            return Err(SchemeError::InvalidFactor("covariance is not symmetric".into()));
        }
        let ch = Cholesky::<f64, Dyn>::new(cov.clone())
            .ok_or_else(|| SchemeError::InvalidFactor("covariance is not positive definite".into()))?;
        let chol = ch.l();
        let cov_inv = ch.inverse();
        Ok(SchemeFactor {
            kind: FactorKind::Gaussian { cov, chol, cov_inv },
            repeat,
        })
    }

    pub fn gaussian_iso(dim: usize, sigma: f64, repeat: usize) -> Result<Self, SchemeError> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(SchemeError::InvalidFactor("sigma must be positive".into()));
        }
        Self::gaussian(DMatrix::identity(dim, dim) * (sigma * sigma), repeat)
    }

    pub fn poisson(dim: usize, repeat: usize) -> Result<Self, SchemeError> {
        check_repeat(repeat)?;
        if dim == 0 {
            return Err(SchemeError::InvalidFactor("poisson dimension must be >= 1".into()));
        }
        Ok(SchemeFactor {
            kind: FactorKind::Poisson { dim },
            repeat,
        })
    }

    pub fn discrete(outcomes: usize, repeat: usize) -> Result<Self, SchemeError> {
        check_repeat(repeat)?;
        if outcomes == 0 {
            return Err(SchemeError::InvalidFactor("need at least one outcome".into()));
        }
        Ok(SchemeFactor {
            kind: FactorKind::Discrete { outcomes },
            repeat,
        })
    }

    pub fn kind(&self) -> &FactorKind {
        &self.kind
    }

    pub fn repeat(&self) -> usize {
        self.repeat
    }

    pub fn with_repeat(mut self, repeat: usize) -> Self {
        assert!(repeat >= 1, "repeat must be >= 1");
        self.repeat = repeat;
        self
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            FactorKind::Gaussian { cov, .. } => cov.nrows(),
            FactorKind::Poisson { dim } => *dim,
            FactorKind::Discrete { outcomes } => *outcomes,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.kind, FactorKind::Discrete { .. })
    }

    fn check_domain(&self, x: &[f64]) -> Result<(), SchemeError> {
        if x.len() != self.dim() {
            return Err(SchemeError::Domain(format!(
                "expected {} coordinates, got {}",
                self.dim(),
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SchemeError::Domain("non-finite coordinate".into()));
        }
        if !matches!(self.kind, FactorKind::Gaussian { .. }) && x.iter().any(|v| *v <= 0.0) {
            return Err(SchemeError::Domain("coordinates must be positive".into()));
        }
        Ok(())
    }

    /// ψ for a single observation, with gradients written in place. No domain
    /// checks: on the boundary the result may be infinite or NaN.
    pub(crate) fn psi_into(&self, x: &[f64], y: &[f64], gx: &mut [f64], gy: &mut [f64]) -> f64 {
        match &self.kind {
            FactorKind::Gaussian { cov_inv, .. } => {
                let n = x.len();
                let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
                let mut q = 0.0;
                for i in 0..n {
                    let mut s = 0.0;
                    for j in 0..n {
                        s += cov_inv[(i, j)] * d[j];
                    }
                    q += d[i] * s;
                    gx[i] = -0.5 * s;
                    gy[i] = 0.5 * s;
                }
                -0.25 * q
            }
            FactorKind::Poisson { .. } => {
                let mut v = 0.0;
                for i in 0..x.len() {
                    let (sx, sy) = (x[i].sqrt(), y[i].sqrt());
                    v -= (sx - sy).powi(2);
                    gx[i] = -(1.0 - sy / sx);
                    gy[i] = -(1.0 - sx / sy);
                }
                v
            }
            FactorKind::Discrete { .. } => {
                let rho: f64 = x.iter().zip(y).map(|(a, b)| (a * b).sqrt()).sum();
                for i in 0..x.len() {
                    gx[i] = (y[i] / x[i]).sqrt() / rho;
                    gy[i] = (x[i] / y[i]).sqrt() / rho;
                }
                2.0 * rho.ln()
            }
        }
    }

    /// `ψ(x, y)` with gradients, for one observation (repeats not applied).
    pub fn psi_eval(&self, x: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>), SchemeError> {
        self.check_domain(x)?;
        self.check_domain(y)?;
        let mut gx = vec![0.0; x.len()];
        let mut gy = vec![0.0; y.len()];
        let v = self.psi_into(x, y, &mut gx, &mut gy);
        Ok((v, gx, gy))
    }

    /// Single-observation detector part built from a saddle point.
    pub fn build_detector(&self, x: &[f64], y: &[f64]) -> Result<DetectorPart, SchemeError> {
        self.check_domain(x)?;
        self.check_domain(y)?;
        Ok(match &self.kind {
            FactorKind::Gaussian { cov_inv, .. } => {
                let d = DVector::from_iterator(x.len(), x.iter().zip(y).map(|(a, b)| a - b));
                let xi = cov_inv * d * 0.5;
                let alpha = 0.5 * xi.iter().zip(x.iter().zip(y)).map(|(k, (a, b))| k * (a + b)).sum::<f64>();
                DetectorPart::Affine {
                    xi: xi.iter().copied().collect(),
                    alpha,
                }
            }
            FactorKind::Poisson { .. } => DetectorPart::Affine {
                xi: x.iter().zip(y).map(|(a, b)| 0.5 * (a / b).ln()).collect(),
                alpha: 0.5 * x.iter().zip(y).map(|(a, b)| a - b).sum::<f64>(),
            },
            FactorKind::Discrete { .. } => {
                DetectorPart::Table(x.iter().zip(y).map(|(a, b)| 0.5 * (a / b).ln()).collect())
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductScheme {
    factors: Vec<SchemeFactor>,
}

impl ProductScheme {
    pub fn new(factors: Vec<SchemeFactor>) -> Result<Self, SchemeError> {
        if factors.is_empty() {
            return Err(SchemeError::InvalidFactor("scheme needs at least one factor".into()));
        }
        Ok(ProductScheme { factors })
    }

    pub fn single(f: SchemeFactor) -> Self {
        ProductScheme { factors: vec![f] }
    }

    pub fn factors(&self) -> &[SchemeFactor] {
        &self.factors
    }

    pub fn dim(&self) -> usize {
        self.factors.iter().map(|f| f.dim()).sum()
    }

    /// Start offset of each factor in the stacked parameter vector.
    pub fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.factors.len());
        let mut acc = 0;
        for f in &self.factors {
            off.push(acc);
            acc += f.dim();
        }
        off
    }

    /// Every observation is repeated `k` more times.
    pub fn repeated(&self, k: usize) -> Self {
        ProductScheme {
            factors: self
                .factors
                .iter()
                .map(|f| f.clone().with_repeat(f.repeat * k))
                .collect(),
        }
    }

    /// `Σ_k repeat_k ψ_k(x_k, y_k)` over stacked parameter vectors.
    pub fn psi_eval(&self, x: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>), SchemeError> {
        if x.len() != self.dim() || y.len() != self.dim() {
            return Err(SchemeError::Domain("parameter length does not match scheme".into()));
        }
        let mut gx = vec![0.0; x.len()];
        let mut gy = vec![0.0; y.len()];
        let mut total = 0.0;
        for (f, o) in self.factors.iter().zip(self.offsets()) {
            let r = o..o + f.dim();
            let (v, fx, fy) = f.psi_eval(&x[r.clone()], &y[r.clone()])?;
            let k = f.repeat as f64;
            total += k * v;
            for (i, j) in r.enumerate() {
                gx[j] = k * fx[i];
                gy[j] = k * fy[i];
            }
        }
        Ok((total, gx, gy))
    }

    pub fn build_detector(&self, x: &[f64], y: &[f64]) -> Result<Detector, SchemeError> {
        let mut parts = Vec::with_capacity(self.factors.len());
        for (f, o) in self.factors.iter().zip(self.offsets()) {
            parts.push(f.build_detector(&x[o..o + f.dim()], &y[o..o + f.dim()])?);
        }
        Ok(Detector {
            parts,
            repeats: self.factors.iter().map(|f| f.repeat).collect(),
            shift: 0.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorPart {
    /// `ξᵀω − α` (Gaussian and Poisson factors).
    Affine { xi: Vec<f64>, alpha: f64 },
    /// Value per outcome (Discrete factors).
    Table(Vec<f64>),
}

impl DetectorPart {
    fn negated(&self) -> DetectorPart {
        match self {
            DetectorPart::Affine { xi, alpha } => DetectorPart::Affine {
                xi: xi.iter().map(|v| -v).collect(),
                alpha: -alpha,
            },
            DetectorPart::Table(t) => DetectorPart::Table(t.iter().map(|v| -v).collect()),
        }
    }

    fn len(&self) -> usize {
        match self {
            DetectorPart::Affine { xi, .. } => xi.len(),
            DetectorPart::Table(t) => t.len(),
        }
    }
}

/// `φ(ω) = Σ_k Σ_{repeats} part_k(ω_k) − shift`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detector {
    pub parts: Vec<DetectorPart>,
    pub repeats: Vec<usize>,
    #[serde(default)]
    pub shift: f64,
}

impl Detector {
    pub fn negated(&self) -> Detector {
        Detector {
            parts: self.parts.iter().map(DetectorPart::negated).collect(),
            repeats: self.repeats.clone(),
            shift: -self.shift,
        }
    }

    pub fn with_shift(&self, shift: f64) -> Detector {
        Detector {
            shift,
            ..self.clone()
        }
    }

    /// The same per-observation detector applied to `k` times as many
    /// repeats.
    pub fn repeated(&self, k: usize) -> Detector {
        Detector {
            repeats: self.repeats.iter().map(|r| r * k).collect(),
            ..self.clone()
        }
    }

    pub fn eval(&self, obs: &Observation) -> Result<f64, SchemeError> {
        if obs.len() != self.parts.len() {
            return Err(SchemeError::Shape(format!(
                "{} factor observations for {} detector parts",
                obs.len(),
                self.parts.len()
            )));
        }
        let mut total = 0.0;
        for (k, (part, o)) in self.parts.iter().zip(obs).enumerate() {
            let n = o.repeats();
            if n != self.repeats[k] {
                return Err(SchemeError::Shape(format!(
                    "factor {k}: {n} repeats observed, {} expected",
                    self.repeats[k]
                )));
            }
            match (part, o) {
                (DetectorPart::Affine { xi, alpha }, FactorObs::Vectors(vs)) => {
                    for v in vs {
                        if v.len() != xi.len() {
                            return Err(SchemeError::Shape(format!("factor {k}: vector length")));
                        }
                        total += xi.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() - alpha;
                    }
                }
                (DetectorPart::Table(t), FactorObs::Outcomes(os)) => {
                    for &w in os {
                        total += *t
                            .get(w)
                            .ok_or_else(|| SchemeError::Shape(format!("factor {k}: outcome {w} out of range")))?;
                    }
                }
                _ => return Err(SchemeError::Shape(format!("factor {k}: wrong observation kind"))),
            }
        }
        Ok(total - self.shift)
    }

    pub fn factor_dims(&self) -> Vec<usize> {
        self.parts.iter().map(DetectorPart::len).collect()
    }
}

/// Observation of one factor: one entry per repeat. Discrete outcomes are
/// 0-based in memory and 1-based in files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FactorObs {
    Vectors(Vec<Vec<f64>>),
    Outcomes(Vec<usize>),
}

impl FactorObs {
    pub fn repeats(&self) -> usize {
        match self {
            FactorObs::Vectors(v) => v.len(),
            FactorObs::Outcomes(o) => o.len(),
        }
    }
}

pub type Observation = Vec<FactorObs>;

enum FactorSampler {
    Gaussian { mean: DVector<f64>, chol: DMatrix<f64> },
    Poisson(Vec<Option<Poisson<f64>>>),
    Discrete(WeightedIndex<f64>),
}

/// Draws observations of a scheme at a fixed parameter point.
pub struct ObsSampler {
    samplers: Vec<(FactorSampler, usize)>,
}

impl ObsSampler {
    pub fn new(scheme: &ProductScheme, mu: &[f64]) -> Result<Self, SchemeError> {
        if mu.len() != scheme.dim() {
            return Err(SchemeError::Domain("parameter length does not match scheme".into()));
        }
        let mut samplers = Vec::new();
        for (f, o) in scheme.factors.iter().zip(scheme.offsets()) {
            let m = &mu[o..o + f.dim()];
            if m.iter().any(|v| !v.is_finite()) {
                return Err(SchemeError::Domain("non-finite parameter".into()));
            }
            let s = match &f.kind {
                FactorKind::Gaussian { chol, .. } => FactorSampler::Gaussian {
                    mean: DVector::from_column_slice(m),
                    chol: chol.clone(),
                },
                FactorKind::Poisson { .. } => {
                    let mut ds = Vec::with_capacity(m.len());
                    for &rate in m {
                        if rate < 0.0 {
                            return Err(SchemeError::Domain("negative Poisson rate".into()));
                        }
                        ds.push(if rate == 0.0 {
                            None
                        } else {
                            Some(Poisson::new(rate).map_err(|e| SchemeError::Domain(e.to_string()))?)
                        });
                    }
                    FactorSampler::Poisson(ds)
                }
                FactorKind::Discrete { .. } => {
                    let total: f64 = m.iter().sum();
                    if m.iter().any(|v| *v < 0.0) || (total - 1.0).abs() > 1e-8 {
                        return Err(SchemeError::Domain("discrete parameter is not a distribution".into()));
                    }
                    FactorSampler::Discrete(
                        WeightedIndex::new(m).map_err(|e| SchemeError::Domain(e.to_string()))?,
                    )
                }
            };
            samplers.push((s, f.repeat));
        }
        Ok(ObsSampler { samplers })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Observation {
        self.samplers
            .iter()
            .map(|(s, k)| match s {
                FactorSampler::Gaussian { mean, chol } => FactorObs::Vectors(
                    (0..*k)
                        .map(|_| {
                            let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
                            (mean + chol * z).iter().copied().collect()
                        })
                        .collect(),
                ),
                FactorSampler::Poisson(ds) => FactorObs::Vectors(
                    (0..*k)
                        .map(|_| ds.iter().map(|d| d.as_ref().map_or(0.0, |d| d.sample(rng))).collect())
                        .collect(),
                ),
                FactorSampler::Discrete(w) => FactorObs::Outcomes((0..*k).map(|_| w.sample(rng)).collect()),
            })
            .collect()
    }
}

pub fn sample_obs<R: Rng + ?Sized>(
    scheme: &ProductScheme,
    mu: &[f64],
    rng: &mut R,
) -> Result<Observation, SchemeError> {
    Ok(ObsSampler::new(scheme, mu)?.sample(rng))
}

/// One observation per line, factor-major, repeats in order. Discrete
/// outcomes are written 1-based.
pub fn format_observation(obs: &Observation) -> String {
    let mut toks: Vec<String> = Vec::new();
    for o in obs {
        match o {
            FactorObs::Vectors(vs) => {
                for v in vs {
                    toks.extend(v.iter().map(|x| format!("{x}")));
                }
            }
            FactorObs::Outcomes(os) => toks.extend(os.iter().map(|w| (w + 1).to_string())),
        }
    }
    toks.join(" ")
}

pub fn parse_observations(scheme: &ProductScheme, text: &str) -> Result<Vec<Observation>, SchemeError> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| SchemeError::Parse { line: ln + 1, msg };
        let mut toks = line.split_whitespace();
        let mut obs = Vec::with_capacity(scheme.factors.len());
        for f in &scheme.factors {
            match &f.kind {
                FactorKind::Discrete { outcomes } => {
                    let mut os = Vec::with_capacity(f.repeat);
                    for _ in 0..f.repeat {
                        let t = toks.next().ok_or_else(|| err("too few values".into()))?;
                        let w: usize = t.parse().map_err(|_| err(format!("bad outcome {t:?}")))?;
                        if w == 0 || w > *outcomes {
                            return Err(err(format!("outcome {w} outside 1..={outcomes}")));
                        }
                        os.push(w - 1);
                    }
                    obs.push(FactorObs::Outcomes(os));
                }
                kind => {
                    let poisson = matches!(kind, FactorKind::Poisson { .. });
                    let mut vs = Vec::with_capacity(f.repeat);
                    for _ in 0..f.repeat {
                        let mut v = Vec::with_capacity(f.dim());
                        for _ in 0..f.dim() {
                            let t = toks.next().ok_or_else(|| err("too few values".into()))?;
                            let x = if poisson {
                                t.parse::<u64>().map_err(|_| err(format!("bad count {t:?}")))? as f64
                            } else {
                                let x: f64 = t.parse().map_err(|_| err(format!("bad real {t:?}")))?;
                                if !x.is_finite() {
                                    return Err(err("non-finite value".into()));
                                }
                                x
                            };
                            v.push(x);
                        }
                        vs.push(v);
                    }
                    obs.push(FactorObs::Vectors(vs));
                }
            }
        }
        if toks.next().is_some() {
            return Err(err("too many values".into()));
        }
        out.push(obs);
    }
    Ok(out)
}
