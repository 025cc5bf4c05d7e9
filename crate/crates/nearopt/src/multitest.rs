//! Aggregation of pairwise detectors: union tests with spectral risk
//! bounds, importance-weighted shifts, closeness-relaxed multiple testing
//! and tests between unions of hypotheses.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pairtest::{solve_pair, PairError, PairProblem, ParamSet};
use crate::schemes::{Detector, Observation, ProductScheme, SchemeError};
use crate::sets::{lp_minimize, PolytopeSpec};
use crate::solver::{perron_irreducible, spectral_norm_nonneg, FwConfig, SolverError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MultiError {
    #[error("risk matrix entry ({0}, {1}) must be positive and finite")]
    NonPositive(usize, usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("every off-diagonal pair is in the closeness relation")]
    AllClose,
    #[error("invalid partition: {0}")]
    BadPartition(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Pair(#[from] PairError),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggMode {
    /// `max_i min_j`.
    #[default]
    MaxMin,
    /// `min_j max_i`.
    MinMax,
    /// Value of the matrix game between the two.
    Saddle,
}

/// Test between `∪_i X_i` and `∪_j Y_j` built from pairwise detectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnionTest {
    pub risks: DMatrix<f64>,
    /// `a_ij = ln(h_j / g_i)`, subtracted from `φ_ij`.
    pub shifts: DMatrix<f64>,
    /// `‖E‖₂,₂`, the risk bound of the aggregate.
    pub eps: f64,
    pub g: DVector<f64>,
    pub h: DVector<f64>,
    pub mode: AggMode,
}

pub fn union_assemble(risks: &DMatrix<f64>, mode: AggMode) -> Result<UnionTest, MultiError> {
    for i in 0..risks.nrows() {
        for j in 0..risks.ncols() {
            let v = risks[(i, j)];
            if !(v > 0.0 && v.is_finite()) {
                return Err(MultiError::NonPositive(i, j));
            }
        }
    }
    let s = spectral_norm_nonneg(risks)?;
    let shifts = DMatrix::from_fn(risks.nrows(), risks.ncols(), |i, j| (s.h[j] / s.g[i]).ln());
    Ok(UnionTest {
        risks: risks.clone(),
        shifts,
        eps: s.sigma,
        g: s.g,
        h: s.h,
        mode,
    })
}

impl UnionTest {
    /// Aggregate detector value from the matrix of `φ_ij(ω)`.
    pub fn aggregate(&self, phi: &DMatrix<f64>) -> Result<f64, MultiError> {
        self.aggregate_mode(phi, self.mode)
    }

    pub fn aggregate_mode(&self, phi: &DMatrix<f64>, mode: AggMode) -> Result<f64, MultiError> {
        if phi.shape() != self.risks.shape() {
            return Err(MultiError::Shape(format!(
                "detector values {:?} vs risks {:?}",
                phi.shape(),
                self.risks.shape()
            )));
        }
        let a = phi - &self.shifts;
        Ok(match mode {
            AggMode::MaxMin => a.row_iter().map(|r| r.min()).fold(f64::NEG_INFINITY, f64::max),
            AggMode::MinMax => a.column_iter().map(|c| c.max()).fold(f64::INFINITY, f64::min),
            AggMode::Saddle => matrix_game_value(&a)?,
        })
    }
}

/// `max_{λ∈Δ} min_{μ∈Δ} λᵀAμ` by linear programming.
pub fn matrix_game_value(a: &DMatrix<f64>) -> Result<f64, MultiError> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Err(MultiError::Shape("empty game".into()));
    }
    let (lo, hi) = (a.min(), a.max());
    if hi - lo == 0.0 {
        return Ok(lo);
    }
    // Variables (λ, v): maximize v subject to v ≤ Σ_i λ_i A_ij for every j.
    let mut lower = vec![0.0; m];
    let mut upper = vec![1.0; m];
    lower.push(lo);
    upper.push(hi);
    let mut s = PolytopeSpec::new_box(lower, upper).map_err(|e| MultiError::Solver(e.into()))?;
    let mut sum = vec![1.0; m];
    sum.push(0.0);
    s = s.with_eq(sum, 1.0);
    for j in 0..n {
        let mut row: Vec<f64> = (0..m).map(|i| -a[(i, j)]).collect();
        row.push(1.0);
        s = s.with_ineq(row, 0.0);
    }
    let mut c = vec![0.0; m + 1];
    c[m] = -1.0;
    let sol = lp_minimize(&c, &s).map_err(|e| MultiError::Solver(e.into()))?;
    Ok(sol.x[m])
}

/// Independent observation blocks tested one after another; the summed
/// aggregates have risk bounded by the product of the block bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainedUnion {
    pub blocks: Vec<UnionTest>,
}

impl ChainedUnion {
    pub fn bound(&self) -> f64 {
        self.blocks.iter().map(|b| b.eps).product()
    }

    pub fn aggregate(&self, phis: &[DMatrix<f64>]) -> Result<f64, MultiError> {
        if phis.len() != self.blocks.len() {
            return Err(MultiError::Shape("one detector matrix per block required".into()));
        }
        self.blocks.iter().zip(phis).map(|(b, p)| b.aggregate(p)).sum()
    }
}

/// Pairwise detectors with their risks; entries without a detector
/// evaluate to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorMatrix {
    pub risks: DMatrix<f64>,
    pub detectors: Vec<Vec<Option<Detector>>>,
}

impl DetectorMatrix {
    /// `φ_ij` between `xs[i]` and `ys[j]` for every pair.
    pub fn bipartite(
        scheme: &ProductScheme,
        xs: &[ParamSet],
        ys: &[ParamSet],
        cfg: &FwConfig,
    ) -> Result<Self, MultiError> {
        let pairs: Vec<(usize, usize)> = (0..xs.len()).flat_map(|i| (0..ys.len()).map(move |j| (i, j))).collect();
        let sols: Result<Vec<_>, PairError> = pairs
            .par_iter()
            .map(|&(i, j)| solve_pair(&PairProblem::new(scheme.clone(), xs[i].clone(), ys[j].clone()), cfg))
            .collect();
        let sols = sols?;
        let mut risks = DMatrix::zeros(xs.len(), ys.len());
        let mut detectors = vec![vec![None; ys.len()]; xs.len()];
        for ((i, j), s) in pairs.into_iter().zip(sols) {
            risks[(i, j)] = s.certified_eps;
            detectors[i][j] = Some(s.detector);
        }
        Ok(DetectorMatrix { risks, detectors })
    }

    /// Antisymmetric detectors between all pairs of `hyps`; the diagonal
    /// has risk 1 and a zero detector.
    pub fn pairwise(scheme: &ProductScheme, hyps: &[ParamSet], cfg: &FwConfig) -> Result<Self, MultiError> {
        let m = hyps.len();
        let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
        let sols: Result<Vec<_>, PairError> = pairs
            .par_iter()
            .map(|&(i, j)| solve_pair(&PairProblem::new(scheme.clone(), hyps[i].clone(), hyps[j].clone()), cfg))
            .collect();
        let mut risks = DMatrix::identity(m, m);
        let mut detectors = vec![vec![None; m]; m];
        for ((i, j), s) in pairs.into_iter().zip(sols?) {
            risks[(i, j)] = s.certified_eps;
            risks[(j, i)] = s.certified_eps;
            detectors[j][i] = Some(s.detector.negated());
            detectors[i][j] = Some(s.detector);
        }
        Ok(DetectorMatrix { risks, detectors })
    }

    pub fn eval(&self, obs: &Observation) -> Result<DMatrix<f64>, MultiError> {
        let (m, n) = self.risks.shape();
        let mut out = DMatrix::zeros(m, n);
        for i in 0..m {
            for j in 0..n {
                if let Some(d) = &self.detectors[i][j] {
                    out[(i, j)] = d.eval(obs)?;
                }
            }
        }
        Ok(out)
    }
}

/// Skew-symmetric detector shifts `α_ij`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftMatrix(pub DMatrix<f64>);

impl ShiftMatrix {
    pub fn zeros(m: usize) -> Self {
        ShiftMatrix(DMatrix::zeros(m, m))
    }

    pub fn is_skew(&self, tol: f64) -> bool {
        (&self.0 + self.0.transpose()).amax() <= tol
    }
}

fn check_square_offdiag(risks: &DMatrix<f64>) -> Result<usize, MultiError> {
    let m = risks.nrows();
    if !risks.is_square() || m < 2 {
        return Err(MultiError::Shape("need a square risk matrix of size >= 2".into()));
    }
    for i in 0..m {
        for j in 0..m {
            if i != j && !(risks[(i, j)] > 0.0 && risks[(i, j)].is_finite()) {
                return Err(MultiError::NonPositive(i, j));
            }
        }
    }
    Ok(m)
}

/// Shifts minimizing `max_i Σ_j p_i ε_ij e^{α_ij}` over skew-symmetric α;
/// returns them with the optimal value.
pub fn weighted_shifts(risks: &DMatrix<f64>, importance: &[f64]) -> Result<(ShiftMatrix, f64), MultiError> {
    let m = check_square_offdiag(risks)?;
    if importance.len() != m || importance.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
        return Err(MultiError::Shape("importance weights must be positive, one per hypothesis".into()));
    }
    let e = DMatrix::from_fn(m, m, |i, j| if i == j { 0.0 } else { importance[i] * risks[(i, j)] });
    let p = perron_irreducible(&e)?;
    let alpha = DMatrix::from_fn(m, m, |i, j| (p.g[j] / p.g[i]).ln());
    Ok((ShiftMatrix(alpha), p.rho))
}

/// `max_i Σ_j w_ij e^{α_ij}` where `w` is zero on ignored pairs.
pub fn shifted_row_max(weights: &DMatrix<f64>, alpha: &ShiftMatrix) -> f64 {
    (0..weights.nrows())
        .map(|i| {
            (0..weights.ncols())
                .filter(|&j| weights[(i, j)] > 0.0)
                .map(|j| weights[(i, j)] * alpha.0[(i, j)].exp())
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// Ordered pairs whose confusion is tolerated; always contains the
/// diagonal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClosenessRelation {
    close: Vec<Vec<bool>>,
}

impl ClosenessRelation {
    pub fn diagonal(m: usize) -> Self {
        ClosenessRelation {
            close: (0..m).map(|i| (0..m).map(|j| i == j).collect()).collect(),
        }
    }

    pub fn from_pairs(m: usize, pairs: &[(usize, usize)]) -> Result<Self, MultiError> {
        let mut c = Self::diagonal(m);
        for &(i, j) in pairs {
            if i >= m || j >= m {
                return Err(MultiError::Shape(format!("pair ({i}, {j}) out of range")));
            }
            c.close[i][j] = true;
        }
        Ok(c)
    }

    /// All pairs inside the same block.
    pub fn from_partition(m: usize, blocks: &[Vec<usize>]) -> Result<Self, MultiError> {
        let block_of = block_index(m, blocks)?;
        Ok(ClosenessRelation {
            close: (0..m).map(|i| (0..m).map(|j| block_of[i] == block_of[j]).collect()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.close.len()
    }

    pub fn is_empty(&self) -> bool {
        self.close.is_empty()
    }

    pub fn is_close(&self, i: usize, j: usize) -> bool {
        self.close[i][j]
    }
}

fn block_index(m: usize, blocks: &[Vec<usize>]) -> Result<Vec<usize>, MultiError> {
    let mut block_of = vec![usize::MAX; m];
    for (b, members) in blocks.iter().enumerate() {
        if members.is_empty() {
            return Err(MultiError::BadPartition(format!("block {b} is empty")));
        }
        for &i in members {
            if i >= m {
                return Err(MultiError::BadPartition(format!("index {i} out of range")));
            }
            if block_of[i] != usize::MAX {
                return Err(MultiError::BadPartition(format!("index {i} appears twice")));
            }
            block_of[i] = b;
        }
    }
    if let Some(i) = block_of.iter().position(|b| *b == usize::MAX) {
        return Err(MultiError::BadPartition(format!("index {i} is not covered")));
    }
    Ok(block_of)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosenessShifts {
    pub alpha: ShiftMatrix,
    /// Achieved `max_i Σ_{j:(i,j)∉C} ε_ij e^{α_ij}`: the risk bound.
    pub eps: f64,
    /// Infimum of the objective over all skew-symmetric shifts.
    pub lower_bound: f64,
    pub gap: f64,
}

/// Shifts for the closeness-relaxed test.
///
/// With `D` the risks zeroed on `C`, the infimum over skew-symmetric α
/// equals the Perron root of `B_ij = sqrt(D_ij D_ji)`. Pairs with both
/// directions outside `C` get `α_ij = ln(g_j/g_i) + ½ ln(D_ji/D_ij)` from
/// the Perron vector `g` of their component of `B`; pairs outside `C` in one
/// direction only are pushed down to a negligible weight.
pub fn closeness_shifts(risks: &DMatrix<f64>, close: &ClosenessRelation) -> Result<ClosenessShifts, MultiError> {
    let m = check_square_offdiag(risks)?;
    if close.len() != m {
        return Err(MultiError::Shape("closeness relation size differs from the risks".into()));
    }
    let d = DMatrix::from_fn(m, m, |i, j| if close.is_close(i, j) { 0.0 } else { risks[(i, j)] });
    if d.iter().all(|v| *v == 0.0) {
        return Err(MultiError::AllClose);
    }
    let b = DMatrix::from_fn(m, m, |i, j| (d[(i, j)] * d[(j, i)]).sqrt());
    let tiny = 1e-9 * d.max();

    let mut comp = vec![usize::MAX; m];
    let mut comps: Vec<Vec<usize>> = Vec::new();
    for s in 0..m {
        if comp[s] != usize::MAX {
            continue;
        }
        let id = comps.len();
        let mut members = vec![s];
        comp[s] = id;
        let mut k = 0;
        while k < members.len() {
            let i = members[k];
            for j in 0..m {
                if b[(i, j)] > 0.0 && comp[j] == usize::MAX {
                    comp[j] = id;
                    members.push(j);
                }
            }
            k += 1;
        }
        comps.push(members);
    }

    let mut log_g = vec![0.0; m];
    let mut lower_bound: f64 = 0.0;
    for members in &comps {
        if members.len() < 2 {
            continue;
        }
        let sub = DMatrix::from_fn(members.len(), members.len(), |a, c| b[(members[a], members[c])]);
        let p = perron_irreducible(&sub)?;
        lower_bound = lower_bound.max(p.rho);
        for (a, &i) in members.iter().enumerate() {
            log_g[i] = p.g[a].ln();
        }
    }

    let mut alpha = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i + 1..m {
            let (dij, dji) = (d[(i, j)], d[(j, i)]);
            let a = match (dij > 0.0, dji > 0.0) {
                (true, true) => log_g[j] - log_g[i] + 0.5 * (dji / dij).ln(),
                (true, false) => (tiny / dij).ln(),
                (false, true) => -(tiny / dji).ln(),
                (false, false) => 0.0,
            };
            alpha[(i, j)] = a;
            alpha[(j, i)] = -a;
        }
    }
    let alpha = ShiftMatrix(alpha);
    let eps = shifted_row_max(&d, &alpha);
    Ok(ClosenessShifts {
        alpha,
        eps,
        lower_bound,
        gap: (eps - lower_bound).max(0.0),
    })
}

/// Hypotheses `i` with `φ_ij(ω) − α_ij > 0` for every `j` not close to `i`.
pub fn run_multitest(
    phi: &DMatrix<f64>,
    alpha: &ShiftMatrix,
    close: &ClosenessRelation,
) -> Result<Vec<usize>, MultiError> {
    let m = close.len();
    if phi.shape() != (m, m) || alpha.0.shape() != (m, m) {
        return Err(MultiError::Shape("detector values, shifts and relation must agree".into()));
    }
    Ok((0..m)
        .filter(|&i| (0..m).all(|j| close.is_close(i, j) || phi[(i, j)] - alpha.0[(i, j)] > 0.0))
        .collect())
}

/// Test deciding which block of a partition contains the true hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultipleUnions {
    pub blocks: Vec<Vec<usize>>,
    pub relation: ClosenessRelation,
    pub shifts: ClosenessShifts,
}

impl MultipleUnions {
    pub fn new(blocks: &[Vec<usize>], risks: &DMatrix<f64>) -> Result<Self, MultiError> {
        if blocks.len() < 2 {
            return Err(MultiError::BadPartition("need at least two blocks".into()));
        }
        let relation = ClosenessRelation::from_partition(risks.nrows(), blocks)?;
        let shifts = closeness_shifts(risks, &relation)?;
        Ok(MultipleUnions {
            blocks: blocks.to_vec(),
            relation,
            shifts,
        })
    }

    /// Certified risk `‖D‖₂,₂`.
    pub fn eps(&self) -> f64 {
        self.shifts.eps
    }

    /// Index of the accepted block, if any.
    pub fn decide(&self, phi: &DMatrix<f64>) -> Result<Option<usize>, MultiError> {
        let accepted = run_multitest(phi, &self.shifts.alpha, &self.relation)?;
        Ok(accepted
            .first()
            .map(|i| self.blocks.iter().position(|b| b.contains(i)).expect("partition covers all")))
    }
}

pub fn multiple_unions(
    blocks: &[Vec<usize>],
    risks: &DMatrix<f64>,
    phi: &DMatrix<f64>,
) -> Result<(Option<usize>, f64), MultiError> {
    let t = MultipleUnions::new(blocks, risks)?;
    Ok((t.decide(phi)?, t.eps()))
}

/// Risk bound of the two-stage alternative: pairwise union tests between
/// blocks combined by Perron shifts, `‖G‖₂,₂` with `G_ll' = ‖D^{ll'}‖₂,₂`.
pub fn two_stage_bound(blocks: &[Vec<usize>], risks: &DMatrix<f64>) -> Result<f64, MultiError> {
    block_index(risks.nrows(), blocks)?;
    let l = blocks.len();
    let mut g = DMatrix::zeros(l, l);
    for a in 0..l {
        for b in 0..l {
            if a != b {
                let sub = DMatrix::from_fn(blocks[a].len(), blocks[b].len(), |i, j| {
                    risks[(blocks[a][i], blocks[b][j])]
                });
                g[(a, b)] = spectral_norm_nonneg(&sub)?.sigma;
            }
        }
    }
    Ok(spectral_norm_nonneg(&g)?.sigma)
}

/// Observations needed for an `M`-hypothesis test to match any test with
/// risk `eps` based on `k_bar` observations.
pub fn multi_sample_bound(eps: f64, m: usize, k_bar: usize) -> Result<usize, MultiError> {
    if !(eps > 0.0 && eps < 0.25) || m == 0 {
        return Err(MultiError::Shape(format!("risk {eps} outside (0, 1/4) or no hypotheses")));
    }
    let k = 2.0 * (m as f64 / eps).ln() / ((1.0 / eps).ln() - 2.0 * 2f64.ln()) * k_bar as f64;
    Ok(k.ceil() as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    #[test]
    fn union_examples() {
        let t = union_assemble(&m(2, 2, &[0.1, 0.2, 0.2, 0.4]), AggMode::MaxMin).unwrap();
        assert!((t.eps - 0.5).abs() < 1e-12);
        let ln2 = 2f64.ln();
        for (i, j, want) in [(0, 0, 0.0), (0, 1, ln2), (1, 0, -ln2), (1, 1, 0.0)] {
            assert!((t.shifts[(i, j)] - want).abs() < 1e-9);
        }
        let t = union_assemble(&m(1, 1, &[0.3]), AggMode::MaxMin).unwrap();
        assert!((t.eps - 0.3).abs() < 1e-15 && t.shifts[(0, 0)].abs() < 1e-15);
        assert_eq!(t.aggregate(&m(1, 1, &[0.7])).unwrap(), 0.7);
        assert_eq!(
            union_assemble(&m(1, 2, &[0.3, 0.0]), AggMode::MaxMin),
            Err(MultiError::NonPositive(0, 1))
        );
    }

    #[test]
    fn matrix_games() {
        // Matching pennies has value 0; a saddle entry gives its value.
        assert!(matrix_game_value(&m(2, 2, &[1.0, -1.0, -1.0, 1.0])).unwrap().abs() < 1e-12);
        assert!((matrix_game_value(&m(2, 2, &[3.0, 1.0, 4.0, 2.0])).unwrap() - 2.0).abs() < 1e-12);
        assert!((matrix_game_value(&m(2, 2, &[2.0, 0.0, 0.0, 1.0])).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_examples() {
        let r = m(2, 2, &[0.0, 0.3, 0.3, 0.0]);
        let (a, rho) = weighted_shifts(&r, &[1.0, 1.0]).unwrap();
        assert!((rho - 0.3).abs() < 1e-12 && a.0.amax() < 1e-9);
        let (a, rho) = weighted_shifts(&r, &[1.0, 4.0]).unwrap();
        assert!((rho - 0.6).abs() < 1e-12);
        assert!((a.0[(0, 1)] - 2f64.ln()).abs() < 1e-9);
        let c = 0.05;
        let r3 = DMatrix::from_fn(3, 3, |i, j| if i == j { 0.0 } else { c });
        let (a, rho) = weighted_shifts(&r3, &[1.0; 3]).unwrap();
        assert!((rho - 2.0 * c).abs() < 1e-12 && a.0.amax() < 1e-9);
    }

    #[test]
    fn closeness_examples() {
        let r = m(3, 3, &[0.0, 0.2, 0.1, 0.2, 0.0, 0.3, 0.1, 0.3, 0.0]);
        let diag = closeness_shifts(&r, &ClosenessRelation::diagonal(3)).unwrap();
        let (_, rho) = weighted_shifts(&r, &[1.0; 3]).unwrap();
        assert!((diag.eps - rho).abs() < 1e-9 && diag.gap < 1e-9);

        let part = ClosenessRelation::from_partition(3, &[vec![0, 1], vec![2]]).unwrap();
        let s = closeness_shifts(&r, &part).unwrap();
        let d = m(3, 3, &[0.0, 0.0, 0.1, 0.0, 0.0, 0.3, 0.1, 0.3, 0.0]);
        let norm = d.clone().svd(false, false).singular_values.max();
        assert!((s.eps - norm).abs() < 1e-9, "{} vs {norm}", s.eps);
        assert!(s.alpha.is_skew(1e-12));

        let all = ClosenessRelation::from_pairs(2, &[(0, 1), (1, 0)]).unwrap();
        assert_eq!(
            closeness_shifts(&m(2, 2, &[0.0, 0.2, 0.2, 0.0]), &all),
            Err(MultiError::AllClose)
        );
    }

    #[test]
    fn one_directional_closeness() {
        // (0,1) is close but (1,0) is not: the (1,0) term can be made
        // negligible, leaving the star graph 0 - 2 - 1 with root sqrt(0.1² + 0.3²).
        let r = m(3, 3, &[0.0, 0.2, 0.1, 0.2, 0.0, 0.3, 0.1, 0.3, 0.0]);
        let c = ClosenessRelation::from_pairs(3, &[(0, 1)]).unwrap();
        let s = closeness_shifts(&r, &c).unwrap();
        assert!((s.lower_bound - 0.1f64.sqrt()).abs() < 1e-9);
        assert!(s.gap < 1e-6);
    }

    #[test]
    fn multitest_examples() {
        let zero = ShiftMatrix::zeros(2);
        let diag = ClosenessRelation::diagonal(2);
        let phi = m(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert_eq!(run_multitest(&phi, &zero, &diag).unwrap(), vec![0]);
        assert!(run_multitest(&DMatrix::zeros(2, 2), &zero, &diag).unwrap().is_empty());
        let c = ClosenessRelation::from_pairs(3, &[(0, 1), (1, 0)]).unwrap();
        let phi = m(3, 3, &[0.0, -0.5, 1.0, 0.5, 0.0, 2.0, -1.0, -2.0, 0.0]);
        assert_eq!(run_multitest(&phi, &ShiftMatrix::zeros(3), &c).unwrap(), vec![0, 1]);
    }

    #[test]
    fn multiple_union_examples() {
        let e = m(2, 2, &[0.1, 0.2, 0.2, 0.4]);
        // Two singleton blocks with these as the only cross risks.
        let r = m(2, 2, &[1.0, 0.2, 0.2, 1.0]);
        let mu = MultipleUnions::new(&[vec![0], vec![1]], &r).unwrap();
        assert!((mu.eps() - 0.2).abs() < 1e-12);
        let phi = m(2, 2, &[0.0, 0.4, -0.4, 0.0]);
        assert_eq!(mu.decide(&phi).unwrap(), Some(0));
        // Rank-one cross block between two 2-element blocks.
        let mut r4 = DMatrix::from_element(4, 4, 0.5);
        for i in 0..2 {
            for j in 0..2 {
                r4[(i, 2 + j)] = e[(i, j)];
                r4[(2 + j, i)] = e[(i, j)];
            }
        }
        let mu = MultipleUnions::new(&[vec![0, 1], vec![2, 3]], &r4).unwrap();
        assert!((mu.eps() - 0.5).abs() < 1e-9);
        assert!(MultipleUnions::new(&[vec![0, 1], vec![1, 2, 3]], &r4).is_err());
        assert!(MultipleUnions::new(&[vec![0, 1, 2, 3]], &r4).is_err());
    }

    #[test]
    fn sample_bounds() {
        assert_eq!(multi_sample_bound(0.01, 5, 10).unwrap(), 39);
        assert_eq!(multi_sample_bound(0.01, 1, 10).unwrap(), 29);
        assert!(multi_sample_bound(0.3, 2, 10).is_err());
    }

    fn sym_risks(n: usize, vals: &[f64]) -> DMatrix<f64> {
        let mut r = DMatrix::zeros(n, n);
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                r[(i, j)] = vals[k % vals.len()];
                r[(j, i)] = r[(i, j)];
                k += 1;
            }
        }
        r
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn antisymmetry_survives_shifts(
            n in 2usize..7,
            phis in prop::collection::vec(-3.0f64..3.0, 21),
            shifts in prop::collection::vec(-2.0f64..2.0, 21),
        ) {
            let mut phi = DMatrix::zeros(n, n);
            let mut a = DMatrix::zeros(n, n);
            let mut k = 0;
            for i in 0..n {
                for j in i + 1..n {
                    phi[(i, j)] = phis[k]; phi[(j, i)] = -phis[k];
                    a[(i, j)] = shifts[k]; a[(j, i)] = -shifts[k];
                    k += 1;
                }
            }
            let shifted = &phi - &a;
            prop_assert!((&shifted + shifted.transpose()).amax() < 1e-15);
            let accepted = run_multitest(&phi, &ShiftMatrix(a), &ClosenessRelation::diagonal(n)).unwrap();
            prop_assert!(accepted.len() <= 1);
        }

        #[test]
        fn aggregation_modes_are_ordered(
            r in 1usize..5, c in 1usize..5,
            risks in prop::collection::vec(0.01f64..1.0, 16),
            phis in prop::collection::vec(-5.0f64..5.0, 16),
        ) {
            let e = DMatrix::from_fn(r, c, |i, j| risks[i * c + j]);
            let t = union_assemble(&e, AggMode::MaxMin).unwrap();
            let phi = DMatrix::from_fn(r, c, |i, j| phis[i * c + j]);
            let lo = t.aggregate_mode(&phi, AggMode::MaxMin).unwrap();
            let mid = t.aggregate_mode(&phi, AggMode::Saddle).unwrap();
            let hi = t.aggregate_mode(&phi, AggMode::MinMax).unwrap();
            prop_assert!(lo <= mid + 1e-9 && mid <= hi + 1e-9);
        }

        #[test]
        fn closeness_matches_lower_bound(
            n in 3usize..8,
            vals in prop::collection::vec(0.01f64..0.5, 28),
            close_bits in prop::collection::vec(any::<bool>(), 64),
        ) {
            let r = sym_risks(n, &vals);
            let pairs: Vec<(usize, usize)> = (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .filter(|&(i, j)| i != j && close_bits[i * 8 + j])
                .collect();
            let c = ClosenessRelation::from_pairs(n, &pairs).unwrap();
            match closeness_shifts(&r, &c) {
                Ok(s) => {
                    prop_assert!(s.alpha.is_skew(1e-12));
                    prop_assert!(s.gap <= 1e-6);
                    prop_assert!(s.eps >= s.lower_bound - 1e-12);
                }
                Err(MultiError::AllClose) => {}
                Err(e) => prop_assert!(false, "{e}"),
            }
        }
    }
}
