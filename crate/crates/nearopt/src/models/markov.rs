//! Markov-chain discrimination: queueing and random-walk chains, trajectory
//! affinities for directly observed chains and observation-distribution
//! sets for chains with uncertain transitions or hidden states.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::pairtest::{PairProblem, ParamSet};
use crate::schemes::{ProductScheme, SchemeFactor};
use crate::sets::{LpWorkspace, PolytopeSpec};
use crate::solver::expm;

/// Zero entries of hidden-observation channels are raised to this value
/// before renormalizing, keeping log-detectors finite.
pub const CHANNEL_FLOOR: f64 = 1e-9;

fn check_stochastic(s: &DMatrix<f64>, what: &str) -> Result<(), ModelError> {
    if s.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(ModelError::Invalid(format!("{what} has negative or non-finite entries")));
    }
    for (j, c) in s.column_iter().enumerate() {
        if (c.sum() - 1.0).abs() > 1e-10 {
            return Err(ModelError::Invalid(format!("{what}: column {j} does not sum to 1")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueueChain {
    pub rates: DMatrix<f64>,
    pub transition: DMatrix<f64>,
}

/// Embedded one-step chain of an M/M/s/s+b queue; state `j` (0-based) has
/// `min(j, s)` busy servers and `n = s + b + 1` states in total.
pub fn queueing_chain(lambda: f64, mu: f64, s: usize, b: usize) -> Result<QueueChain, ModelError> {
    if !(lambda >= 0.0 && mu >= 0.0 && lambda.is_finite() && mu.is_finite()) {
        return Err(ModelError::Invalid("rates must be finite and nonnegative".into()));
    }
    let n = s + b + 1;
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        if j > 0 {
            l[(j - 1, j)] = j.min(s) as f64 * mu;
        }
        if j + 1 < n {
            l[(j + 1, j)] = lambda;
        }
    }
    for j in 0..n {
        let out: f64 = l.column(j).sum();
        l[(j, j)] = -out;
    }
    let mut t = expm(&l);
    // Padé round-off can leave entries of order -1e-17 where the true
    // value is a tiny positive number.
    for v in t.iter_mut() {
        if *v < 0.0 {
            debug_assert!(*v > -1e-12, "expm produced {v}");
            *v = 0.0;
        }
    }
    Ok(QueueChain { rates: l, transition: t })
}

/// 0/1 channel reporting the number of customers waiting in the buffer.
pub fn buffer_channel(s: usize, b: usize) -> DMatrix<f64> {
    let n = s + b + 1;
    let mut a = DMatrix::zeros(b + 1, n);
    for j in 0..n {
        a[(j - j.min(s), j)] = 1.0;
    }
    a
}

/// Ring random walk on `n` states that stays with probability `1 − 2p`
/// and moves to each neighbour with probability `p`.
pub fn random_walk(n: usize, p: f64) -> Result<DMatrix<f64>, ModelError> {
    if n < 3 || !(0.0..=0.5).contains(&p) {
        return Err(ModelError::Invalid("need n >= 3 and p in [0, 1/2]".into()));
    }
    let mut s = DMatrix::zeros(n, n);
    for j in 0..n {
        s[(j, j)] = 1.0 - 2.0 * p;
        s[((j + 1) % n, j)] = p;
        s[((j + n - 1) % n, j)] = p;
    }
    Ok(s)
}

/// `½ ln(S¹_ij / S²_ij)` for a transition from `j` to `i`, infinite where
/// exactly one chain forbids the move.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionDetector {
    pub table: DMatrix<f64>,
}

impl TransitionDetector {
    pub fn eval(&self, states: &[usize]) -> f64 {
        states.windows(2).map(|w| self.table[(w[1], w[0])]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovPlan {
    /// `ε*(K)` for `K = 1, 2, ...` up to `k_min` (or the cap).
    pub curve: Vec<f64>,
    pub k_min: Option<usize>,
    pub detector: TransitionDetector,
}

/// Trajectory affinity `ε*(K) = max_{p∈X} Σ_j (1ᵀ M^K)_j p_j` with
/// `M_ij = sqrt(S¹_ij S²_ij)`, evaluated until it drops to `target` or `k_cap`
/// steps are reached.
pub fn markov_pair_plan(
    s1: &DMatrix<f64>,
    s2: &DMatrix<f64>,
    x: &PolytopeSpec,
    target: f64,
    k_cap: usize,
) -> Result<MarkovPlan, ModelError> {
    let n = s1.nrows();
    if s1.shape() != (n, n) || s2.shape() != (n, n) || x.dim != n {
        return Err(ModelError::Invalid("chains and initial set must share the state count".into()));
    }
    check_stochastic(s1, "first transition matrix")?;
    check_stochastic(s2, "second transition matrix")?;
    let m = s1.zip_map(s2, |a, b| (a * b).sqrt());
    let mut lp = LpWorkspace::new(x)?;
    let mut row = DVector::from_element(n, 1.0).transpose();
    let mut curve = Vec::new();
    let mut k_min = None;
    for k in 1..=k_cap {
        row = &row * &m;
        let neg: Vec<f64> = row.iter().map(|v| -v).collect();
        let eps = -lp.minimize(&neg)?.value;
        curve.push(eps);
        if eps <= target {
            k_min = Some(k);
            break;
        }
    }
    let table = s1.zip_map(s2, |a, b| match (a > 0.0, b > 0.0) {
        (true, true) => 0.5 * (a / b).ln(),
        (true, false) => f64::INFINITY,
        (false, true) => f64::NEG_INFINITY,
        (false, false) => 0.0,
    });
    Ok(MarkovPlan {
        curve,
        k_min,
        detector: TransitionDetector { table },
    })
}

/// Per-entry bounds `lo_ij x_j ≤ P_ij ≤ hi_ij x_j` on the joint law of
/// (previous state `j`, next state `i`); entries with `hi_ij = 0` are off
/// the support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnCones {
    pub lo: DMatrix<f64>,
    pub hi: DMatrix<f64>,
}

impl ColumnCones {
    /// Relative uncertainty `(1 − ρ) S ≤ · ≤ (1 + ρ) S` around a nominal chain.
    pub fn around(nominal: &DMatrix<f64>, rho: f64) -> Result<Self, ModelError> {
        check_stochastic(nominal, "nominal transition matrix")?;
        if !(0.0..1.0).contains(&rho) {
            return Err(ModelError::Invalid("relative radius must be in [0, 1)".into()));
        }
        Ok(ColumnCones {
            lo: nominal * (1.0 - rho),
            hi: nominal * (1.0 + rho),
        })
    }

    /// Every transition distribution allowed.
    pub fn full(n: usize) -> Self {
        ColumnCones {
            lo: DMatrix::zeros(n, n),
            hi: DMatrix::from_element(n, n, 1.0),
        }
    }

    pub fn n(&self) -> usize {
        self.lo.nrows()
    }

    /// Supported transitions as `(next, prev)`, ordered by previous state.
    pub fn support(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        (0..n)
            .flat_map(|j| (0..n).map(move |i| (i, j)))
            .filter(|&(i, j)| self.hi[(i, j)] > 0.0)
            .collect()
    }
}

/// Observation model for the transition-cone sets: how a transition
/// `(next i, prev j)` is reported.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionObservation {
    pub support: Vec<(usize, usize)>,
    /// Exact channel over the kept outcomes, `m × n²` with column `j·n + i`.
    pub channel: DMatrix<f64>,
    /// Floored and renormalized channel restricted to the support columns;
    /// `None` for direct observation of the transition.
    pub fitted: Option<DMatrix<f64>>,
}

impl TransitionObservation {
    pub fn outcomes(&self) -> usize {
        self.channel.nrows()
    }
}

/// Direct observation: the outcome is the index of the transition in the
/// support.
pub fn direct_transitions(cones: &ColumnCones) -> TransitionObservation {
    let n = cones.n();
    let support = cones.support();
    let mut channel = DMatrix::zeros(support.len(), n * n);
    for (k, &(i, j)) in support.iter().enumerate() {
        channel[(k, j * n + i)] = 1.0;
    }
    TransitionObservation {
        support,
        channel,
        fitted: None,
    }
}

/// Hidden observation through a channel over transitions (`m × n²`,
/// column `j·n + i`). Outcomes impossible on the support are dropped.
pub fn hidden_transitions(
    cones: &ColumnCones,
    channel: &DMatrix<f64>,
    floor: f64,
) -> Result<TransitionObservation, ModelError> {
    let n = cones.n();
    if channel.ncols() != n * n {
        return Err(ModelError::Invalid("transition channel needs n² columns".into()));
    }
    let support = cones.support();
    for &(i, j) in &support {
        let c = channel.column(j * n + i);
        if c.iter().any(|v| *v < 0.0) || (c.sum() - 1.0).abs() > 1e-10 {
            return Err(ModelError::Invalid(format!("channel column for {j} -> {i} is not a distribution")));
        }
    }
    let kept: Vec<usize> = (0..channel.nrows())
        .filter(|&r| support.iter().any(|&(i, j)| channel[(r, j * n + i)] > 0.0))
        .collect();
    let exact = DMatrix::from_fn(kept.len(), n * n, |r, c| channel[(kept[r], c)]);
    let mut fitted = DMatrix::from_fn(kept.len(), support.len(), |r, k| {
        let (i, j) = support[k];
        exact[(r, j * n + i)].max(floor)
    });
    for mut c in fitted.column_iter_mut() {
        let s = c.sum();
        c /= s;
    }
    Ok(TransitionObservation {
        support,
        channel: exact,
        fitted: Some(fitted),
    })
}

/// Set of observation distributions `{𝒜(P) : P ∈ 𝒫}` with latent
/// variables (support entries of `P`, then the marginal `x`).
pub fn transition_cone_set(cones: &ColumnCones, obs: &TransitionObservation) -> Result<ParamSet, ModelError> {
    let n = cones.n();
    let support = &obs.support;
    let ns = support.len();
    let dim = ns + n;
    let mut p = PolytopeSpec::new_box(vec![0.0; dim], vec![1.0; dim])?;
    let mut sum_x = vec![0.0; dim];
    sum_x[ns..].iter_mut().for_each(|v| *v = 1.0);
    p = p.with_eq(sum_x, 1.0);
    for j in 0..n {
        let mut row = vec![0.0; dim];
        for (k, &(_, jj)) in support.iter().enumerate() {
            if jj == j {
                row[k] = 1.0;
            }
        }
        row[ns + j] = -1.0;
        p = p.with_eq(row, 0.0);
    }
    for (k, &(i, j)) in support.iter().enumerate() {
        let (lo, hi) = (cones.lo[(i, j)], cones.hi[(i, j)]);
        if lo > 0.0 {
            let mut row = vec![0.0; dim];
            row[k] = -1.0;
            row[ns + j] = lo;
            p = p.with_ineq(row, 0.0);
        }
        if hi < 1.0 {
            let mut row = vec![0.0; dim];
            row[k] = 1.0;
            row[ns + j] = -hi;
            p = p.with_ineq(row, 0.0);
        }
    }
    let m = obs.fitted.as_ref().map_or(ns, |f| f.nrows());
    let mut map = DMatrix::zeros(m, dim);
    match &obs.fitted {
        None => {
            for k in 0..ns {
                map[(k, k)] = 1.0;
            }
        }
        Some(f) => map.view_mut((0, 0), (m, ns)).copy_from(f),
    }
    Ok(ParamSet::lifted(p, Some(map), None)?)
}

/// Observation distributions after `κ` steps of a chain within `ρ` of `Q`
/// in the column-wise ℓ₁ norm, seen through a state channel `A` (`m × n`).
pub fn norm_ball_set(q: &DMatrix<f64>, rho: f64, kappa: usize, a: &DMatrix<f64>) -> Result<ParamSet, ModelError> {
    check_stochastic(q, "nominal transition matrix")?;
    check_stochastic(a, "observation channel")?;
    let n = q.nrows();
    if a.ncols() != n || kappa == 0 {
        return Err(ModelError::Invalid("channel must have one column per state and κ >= 1".into()));
    }
    let radius = kappa as f64 * rho;
    if !(0.0..2.0).contains(&radius) {
        return Err(ModelError::Invalid("κρ must lie in [0, 2)".into()));
    }
    let mut qk = DMatrix::identity(n, n);
    for _ in 0..kappa {
        qk = &qk * q;
    }
    if radius == 0.0 {
        let p = PolytopeSpec::simplex(n);
        return Ok(ParamSet::lifted(p, Some(a * qk), None)?);
    }
    // Variables: α (n), then v^j (n each), then t^j (n each) with
    // |v^j − α_j q_j| ≤ t^j.
    let dim = n + 2 * n * n;
    let v = |j: usize, i: usize| n + j * n + i;
    let t = |j: usize, i: usize| n + n * n + j * n + i;
    let mut lower = vec![0.0; dim];
    let mut upper = vec![1.0; dim];
    for j in 0..n {
        for i in 0..n {
            upper[t(j, i)] = 2.0;
        }
    }
    lower.iter_mut().for_each(|l| *l = 0.0);
    let mut p = PolytopeSpec::new_box(lower, upper)?;
    let mut sum_a = vec![0.0; dim];
    sum_a[..n].iter_mut().for_each(|x| *x = 1.0);
    p = p.with_eq(sum_a, 1.0);
    for j in 0..n {
        let mut row = vec![0.0; dim];
        for i in 0..n {
            row[v(j, i)] = 1.0;
        }
        row[j] = -1.0;
        p = p.with_eq(row, 0.0);
        let mut budget = vec![0.0; dim];
        for i in 0..n {
            budget[t(j, i)] = 1.0;
            let mut up = vec![0.0; dim];
            up[v(j, i)] = 1.0;
            up[j] = -qk[(i, j)];
            up[t(j, i)] = -1.0;
            p = p.with_ineq(up, 0.0);
            let mut down = vec![0.0; dim];
            down[v(j, i)] = -1.0;
            down[j] = qk[(i, j)];
            down[t(j, i)] = -1.0;
            p = p.with_ineq(down, 0.0);
        }
        budget[j] = -radius;
        p = p.with_ineq(budget, 0.0);
    }
    let mut map = DMatrix::zeros(a.nrows(), dim);
    for j in 0..n {
        for i in 0..n {
            map.column_mut(v(j, i)).copy_from(&a.column(i));
        }
    }
    Ok(ParamSet::lifted(p, Some(map), None)?)
}

/// Pair problem for two Markov hypotheses observed through Discrete
/// outcomes, one observation per step.
pub fn markov_pair_problem(x: ParamSet, y: ParamSet) -> Result<PairProblem, ModelError> {
    let m = x.param_dim();
    if y.param_dim() != m {
        return Err(ModelError::Invalid("both hypotheses must share the outcome space".into()));
    }
    let scheme = ProductScheme::single(SchemeFactor::discrete(m, 1)?);
    Ok(PairProblem::new(scheme, x, y))
}

/// Channel reporting the pair (bin of previous state, bin of next state),
/// outcome `b_prev · L + b_next`.
pub fn bin_pair_channel(n: usize, bins: &[Vec<usize>]) -> Result<DMatrix<f64>, ModelError> {
    let mut bin_of = vec![usize::MAX; n];
    for (b, members) in bins.iter().enumerate() {
        for &s in members {
            if s >= n || bin_of[s] != usize::MAX {
                return Err(ModelError::Invalid(format!("state {s} is out of range or binned twice")));
            }
            bin_of[s] = b;
        }
    }
    if bin_of.contains(&usize::MAX) {
        return Err(ModelError::Invalid("every state needs a bin".into()));
    }
    let l = bins.len();
    let mut a = DMatrix::zeros(l * l, n * n);
    for j in 0..n {
        for i in 0..n {
            a[(bin_of[j] * l + bin_of[i], j * n + i)] = 1.0;
        }
    }
    Ok(a)
}

/// The 8 bins of 16 ring states used in the random-walk example (0-based).
pub fn ring16_bins() -> Vec<Vec<usize>> {
    [[1, 8], [4, 6], [5, 7], [9, 11], [3, 10], [2, 15], [12, 16], [13, 14]]
        .iter()
        .map(|b| b.iter().map(|s| s - 1).collect())
        .collect()
}

/// Hidden-state queue hypotheses: `s1` versus `s2` servers with exact rates,
/// observing the buffer occupancy each step.
pub fn hidden_queue_problem(lambda: f64, mu: f64, s1: usize, s2: usize, b: usize) -> Result<PairProblem, ModelError> {
    let set = |s: usize| -> Result<ParamSet, ModelError> {
        let q = queueing_chain(lambda, mu, s, b)?;
        norm_ball_set(&q.transition, 0.0, 1, &buffer_channel(s, b))
    };
    markov_pair_problem(set(s1)?, set(s2)?)
}

/// Transition matrix realizing a joint law `P` with marginal `x`; columns
/// with negligible mass fall back to `fallback`.
pub fn chain_from_joint(
    support: &[(usize, usize)],
    p: &[f64],
    x: &[f64],
    fallback: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = x.len();
    let mut s = DMatrix::zeros(n, n);
    for (k, &(i, j)) in support.iter().enumerate() {
        s[(i, j)] = p[k];
    }
    for j in 0..n {
        let tot: f64 = s.column(j).sum();
        if x[j] > 1e-9 && tot > 0.0 {
            let mut c = s.column_mut(j);
            c /= tot;
        } else {
            s.column_mut(j).copy_from(&fallback.column(j));
        }
    }
    s
}
