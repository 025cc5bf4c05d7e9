//! Compact polyhedral parameter sets and a dense bounded-variable simplex
//! solver that serves as the linear-minimization oracle.

use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute feasibility tolerance for LP solutions.
pub const FEAS_TOL: f64 = 1e-9;

const PIVOT_TOL: f64 = 1e-10;
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SetError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("coordinate {0}: lower bound exceeds upper bound")]
    InvertedBounds(usize),
    #[error("polytope data contains non-finite values")]
    NonFinite,
    #[error("constraint system has no feasible point")]
    Infeasible,
    #[error("simplex iteration limit reached")]
    IterationLimit,
}

/// One linear constraint row `a·x (<= or =) b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRow {
    pub a: Vec<f64>,
    pub b: f64,
}

/// `{x : lower <= x <= upper, ineq rows a·x <= b, eq rows c·x = d}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolytope")]
pub struct PolytopeSpec {
    pub dim: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default)]
    pub ineq: Vec<LinearRow>,
    #[serde(default)]
    pub eq: Vec<LinearRow>,
}

#[derive(Deserialize)]
struct RawPolytope {
    dim: Option<usize>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    #[serde(default)]
    ineq: Vec<LinearRow>,
    #[serde(default)]
    eq: Vec<LinearRow>,
}

impl TryFrom<RawPolytope> for PolytopeSpec {
    type Error = SetError;
    fn try_from(raw: RawPolytope) -> Result<Self, SetError> {
        let dim = raw.dim.unwrap_or(raw.lower.len());
        let p = PolytopeSpec {
            dim,
            lower: raw.lower,
            upper: raw.upper,
            ineq: raw.ineq,
            eq: raw.eq,
        };
        p.validate()?;
        Ok(p)
    }
}

impl PolytopeSpec {
    pub fn new_box(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, SetError> {
        let p = PolytopeSpec {
            dim: lower.len(),
            lower,
            upper,
            ineq: Vec::new(),
            eq: Vec::new(),
        };
        p.validate()?;
        Ok(p)
    }

    /// The probability simplex in `R^n`.
    pub fn simplex(n: usize) -> Self {
        PolytopeSpec {
            dim: n,
            lower: vec![0.0; n],
            upper: vec![1.0; n],
            ineq: Vec::new(),
            eq: vec![LinearRow {
                a: vec![1.0; n],
                b: 1.0,
            }],
        }
    }

    pub fn point(x: &[f64]) -> Self {
        PolytopeSpec {
            dim: x.len(),
            lower: x.to_vec(),
            upper: x.to_vec(),
            ineq: Vec::new(),
            eq: Vec::new(),
        }
    }

    pub fn with_ineq(mut self, a: Vec<f64>, b: f64) -> Self {
        self.ineq.push(LinearRow { a, b });
        self
    }

    pub fn with_eq(mut self, a: Vec<f64>, b: f64) -> Self {
        self.eq.push(LinearRow { a, b });
        self
    }

    /// Cartesian product, variables concatenated in order.
    pub fn product(parts: &[&PolytopeSpec]) -> Self {
        let dim: usize = parts.iter().map(|p| p.dim).sum();
        let mut out = PolytopeSpec {
            dim,
            lower: Vec::with_capacity(dim),
            upper: Vec::with_capacity(dim),
            ineq: Vec::new(),
            eq: Vec::new(),
        };
        let mut off = 0;
        for p in parts {
            out.lower.extend_from_slice(&p.lower);
            out.upper.extend_from_slice(&p.upper);
            let lift = |r: &LinearRow| {
                let mut a = vec![0.0; dim];
                a[off..off + p.dim].copy_from_slice(&r.a);
                LinearRow { a, b: r.b }
            };
            out.ineq.extend(p.ineq.iter().map(lift));
            out.eq.extend(p.eq.iter().map(lift));
            off += p.dim;
        }
        out
    }

    pub fn validate(&self) -> Result<(), SetError> {
        let n = self.dim;
        if n == 0 {
            return Err(SetError::Dimension {
                expected: 1,
                got: 0,
            });
        }
        for v in [&self.lower, &self.upper] {
            if v.len() != n {
                return Err(SetError::Dimension {
                    expected: n,
                    got: v.len(),
                });
            }
        }
        for r in self.ineq.iter().chain(&self.eq) {
            if r.a.len() != n {
                return Err(SetError::Dimension {
                    expected: n,
                    got: r.a.len(),
                });
            }
            if !r.b.is_finite() || r.a.iter().any(|v| !v.is_finite()) {
                return Err(SetError::NonFinite);
            }
        }
        for i in 0..n {
            if !self.lower[i].is_finite() || !self.upper[i].is_finite() {
                return Err(SetError::NonFinite);
            }
            if self.lower[i] > self.upper[i] {
                return Err(SetError::InvertedBounds(i));
            }
        }
        Ok(())
    }

    /// Largest constraint violation of `x` (0 when feasible).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim {
            worst = worst.max(self.lower[i] - x[i]).max(x[i] - self.upper[i]);
        }
        for r in &self.ineq {
            worst = worst.max(dot(&r.a, x) - r.b);
        }
        for r in &self.eq {
            worst = worst.max((dot(&r.a, x) - r.b).abs());
        }
        worst
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim && self.max_violation(x) <= tol
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub value: f64,
}

/// Minimize `c·x` over `s`.
pub fn lp_minimize(c: &[f64], s: &PolytopeSpec) -> Result<LpSolution, SetError> {
    LpWorkspace::new(s)?.minimize(c)
}

/// Simplex tableau for one polytope. Phase I runs once at construction;
/// every `minimize` call restarts phase II from the last optimal basis.
#[derive(Debug, Clone)]
pub struct LpWorkspace {
    n: usize,
    rows: usize,
    cols: usize,
    tab: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    x: Vec<f64>,
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    at_upper: Vec<bool>,
    reduced: Vec<f64>,
    cost: Vec<f64>,
}

impl LpWorkspace {
    pub fn new(s: &PolytopeSpec) -> Result<Self, SetError> {
        s.validate()?;
        let n = s.dim;
        let (eq_rows, eq_rhs) = reduce_equalities(s)?;
        let n_eq = eq_rows.len();
        let n_ineq = s.ineq.len();
        let rows = n_eq + n_ineq;

        let x0: Vec<f64> = s.lower.clone();
        // Row residuals at the all-lower starting point decide which rows
        // need an artificial variable.
        let mut resid = Vec::with_capacity(rows);
        for (r, d) in eq_rows.iter().zip(&eq_rhs) {
            resid.push(d - dot(r, &x0));
        }
        for r in &s.ineq {
            resid.push(r.b - dot(&r.a, &x0));
        }
        let needs_art: Vec<bool> = (0..rows)
            .map(|i| i < n_eq || resid[i] < 0.0)
            .collect();
        let n_art = needs_art.iter().filter(|&&b| b).count();
        let cols = n + n_ineq + n_art;

        let mut tab = vec![0.0; rows * cols];
        let mut lo = s.lower.clone();
        let mut hi = s.upper.clone();
        lo.extend(std::iter::repeat_n(0.0, n_ineq + n_art));
        hi.extend(std::iter::repeat_n(f64::INFINITY, n_ineq + n_art));
        let mut x = x0;
        x.extend(std::iter::repeat_n(0.0, n_ineq + n_art));
        let mut basis = vec![0; rows];
        let mut in_basis = vec![false; cols];
        let mut art_col = n + n_ineq;
        for i in 0..rows {
            let row = &mut tab[i * cols..(i + 1) * cols];
            if i < n_eq {
                row[..n].copy_from_slice(&eq_rows[i]);
            } else {
                row[..n].copy_from_slice(&s.ineq[i - n_eq].a);
                row[n + i - n_eq] = 1.0;
            }
            let basic = if needs_art[i] {
                let sign = if resid[i] < 0.0 { -1.0 } else { 1.0 };
                row[art_col] = sign;
                art_col += 1;
                art_col - 1
            } else {
                n + i - n_eq
            };
            let coef = row[basic];
            if coef != 1.0 {
                row.iter_mut().for_each(|v| *v /= coef);
            }
            basis[i] = basic;
            in_basis[basic] = true;
            x[basic] = resid[i].abs();
        }

        let mut ws = LpWorkspace {
            n,
            rows,
            cols,
            tab,
            lo,
            hi,
            x,
            basis,
            in_basis,
            at_upper: vec![false; cols],
            reduced: vec![0.0; cols],
            cost: vec![0.0; cols],
        };
        if n_art > 0 {
            let mut c1 = vec![0.0; cols];
            c1[n + n_ineq..].iter_mut().for_each(|v| *v = 1.0);
            ws.run(&c1)?;
            let infeas: f64 = ws.x[n + n_ineq..].iter().sum();
            let scale = 1.0 + resid.iter().fold(0.0f64, |m, r| m.max(r.abs()));
            if infeas > FEAS_TOL * scale {
                return Err(SetError::Infeasible);
            }
            for j in n + n_ineq..cols {
                ws.hi[j] = 0.0;
                ws.x[j] = 0.0;
                ws.at_upper[j] = false;
            }
            ws.drive_out_artificials(n + n_ineq);
            for i in 0..ws.rows {
                let b = ws.basis[i];
                if b >= n + n_ineq {
                    ws.x[b] = 0.0;
                }
            }
        }
        Ok(ws)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Minimize `c·x`; warm-starts from the previous basis.
    pub fn minimize(&mut self, c: &[f64]) -> Result<LpSolution, SetError> {
        if c.len() != self.n {
            return Err(SetError::Dimension {
                expected: self.n,
                got: c.len(),
            });
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(SetError::NonFinite);
        }
        let mut full = vec![0.0; self.cols];
        full[..self.n].copy_from_slice(c);
        self.run(&full)?;
        let x: Vec<f64> = (0..self.n)
            .map(|j| self.x[j].clamp(self.lo[j], self.hi[j]))
            .collect();
        let value = dot(c, &x);
        Ok(LpSolution { x, value })
    }

    fn drive_out_artificials(&mut self, first_art: usize) {
        for r in 0..self.rows {
            if self.basis[r] < first_art {
                continue;
            }
            let row = r * self.cols;
            let enter = (0..first_art).find(|&j| {
                !self.in_basis[j] && self.tab[row + j].abs() > 1e-8 && self.lo[j] < self.hi[j]
            });
            if let Some(j) = enter {
                let leaving = self.basis[r];
                self.pivot(r, j);
                self.in_basis[leaving] = false;
                self.at_upper[leaving] = false;
                self.x[leaving] = 0.0;
            }
        }
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let cols = self.cols;
        let p = self.tab[r * cols + j];
        for v in &mut self.tab[r * cols..(r + 1) * cols] {
            *v /= p;
        }
        let (before, rest) = self.tab.split_at_mut(r * cols);
        let (prow, after) = rest.split_at_mut(cols);
        for other in before.chunks_mut(cols).chain(after.chunks_mut(cols)) {
            let f = other[j];
            if f != 0.0 {
                for (o, pv) in other.iter_mut().zip(prow.iter()) {
                    *o -= f * pv;
                }
                other[j] = 0.0;
            }
        }
        let f = self.reduced[j];
        if f != 0.0 {
            for (o, pv) in self.reduced.iter_mut().zip(prow.iter()) {
                *o -= f * pv;
            }
            self.reduced[j] = 0.0;
        }
        self.in_basis[self.basis[r]] = false;
        self.basis[r] = j;
        self.in_basis[j] = true;
    }

    /// Bounded-variable primal simplex. Largest-coefficient pricing,
    /// switching to Bland's rule after any degenerate step.
    fn run(&mut self, cost: &[f64]) -> Result<(), SetError> {
        let cols = self.cols;
        self.cost.copy_from_slice(cost);
        self.reduced.copy_from_slice(cost);
        for i in 0..self.rows {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.tab[i * cols..(i + 1) * cols];
                for (d, t) in self.reduced.iter_mut().zip(row) {
                    *d -= cb * t;
                }
            }
        }
        for i in 0..self.rows {
            self.reduced[self.basis[i]] = 0.0;
        }
        let cmax = cost.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let dtol = 1e-11 * cmax.max(1e-300);
        let max_iters = 50_000 + 200 * (self.rows + cols);
        let mut bland = false;
        for _ in 0..max_iters {
            let mut enter = None;
            let mut best = 0.0;
            for j in 0..cols {
                if self.in_basis[j] || self.lo[j] >= self.hi[j] {
                    continue;
                }
                let d = self.reduced[j];
                let improving = if self.at_upper[j] { d > dtol } else { d < -dtol };
                if improving {
                    if bland {
                        enter = Some(j);
                        break;
                    }
                    if d.abs() > best {
                        best = d.abs();
                        enter = Some(j);
                    }
                }
            }
            let Some(j) = enter else {
                return Ok(());
            };
            let dir = if self.at_upper[j] { -1.0 } else { 1.0 };

            let mut theta = self.hi[j] - self.lo[j];
            let mut leave: Option<(usize, bool)> = None;
            for i in 0..self.rows {
                let alpha = dir * self.tab[i * cols + j];
                let b = self.basis[i];
                let (lim, to_upper) = if alpha > PIVOT_TOL {
                    ((self.x[b] - self.lo[b]) / alpha, false)
                } else if alpha < -PIVOT_TOL && self.hi[b].is_finite() {
                    ((self.hi[b] - self.x[b]) / -alpha, true)
                } else {
                    continue;
                };
                let lim = lim.max(0.0);
                let better = match leave {
                    _ if lim < theta - TIE_TOL => true,
                    Some((r, _)) if lim <= theta + TIE_TOL => b < self.basis[r],
                    _ => false,
                };
                if better {
                    theta = lim;
                    leave = Some((i, to_upper));
                }
            }
            if !theta.is_finite() {
                // Boxes make every LP bounded; an unbounded ray means the
                // tableau lost accuracy.
                return Err(SetError::IterationLimit);
            }
            let step = dir * theta;
            self.x[j] += step;
            for i in 0..self.rows {
                let t = self.tab[i * cols + j];
                if t != 0.0 {
                    self.x[self.basis[i]] -= step * t;
                }
            }
            match leave {
                None => {
                    self.at_upper[j] = !self.at_upper[j];
                    self.x[j] = if self.at_upper[j] { self.hi[j] } else { self.lo[j] };
                }
                Some((r, to_upper)) => {
                    let b = self.basis[r];
                    self.pivot(r, j);
                    self.at_upper[b] = to_upper;
                    self.x[b] = if to_upper { self.hi[b] } else { self.lo[b] };
                    self.at_upper[j] = false;
                }
            }
            bland = theta <= TIE_TOL;
        }
        Err(SetError::IterationLimit)
    }
}

/// Row-reduces the equality block with partial pivoting, dropping dependent
/// rows and rejecting inconsistent ones.
fn reduce_equalities(s: &PolytopeSpec) -> Result<(Vec<Vec<f64>>, Vec<f64>), SetError> {
    let n = s.dim;
    let mut rows: Vec<Vec<f64>> = s
        .eq
        .iter()
        .map(|r| {
            let mut v = r.a.clone();
            v.push(r.b);
            v
        })
        .collect();
    let k = rows.len();
    let scale = rows
        .iter()
        .flat_map(|r| r[..n].iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1.0);
    let tol = 1e-11 * scale;
    let mut rank = 0;
    for col in 0..n {
        if rank == k {
            break;
        }
        let (piv, val) = (rank..k)
            .map(|i| (i, rows[i][col].abs()))
            .fold((rank, -1.0), |acc, c| if c.1 > acc.1 { c } else { acc });
        if val <= tol {
            continue;
        }
        rows.swap(rank, piv);
        let prow = rows[rank].clone();
        for (i, row) in rows.iter_mut().enumerate() {
            if i == rank {
                continue;
            }
            let f = row[col] / prow[col];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(&prow) {
                    *v -= f * p;
                }
            }
        }
        rank += 1;
    }
    for row in &rows[rank..] {
        if row[n].abs() > FEAS_TOL * scale {
            return Err(SetError::Infeasible);
        }
    }
    rows.truncate(rank);
    let rhs = rows.iter().map(|r| r[n]).collect();
    let lhs = rows
        .into_iter()
        .map(|mut r| {
            r.pop();
            r
        })
        .collect();
    Ok((lhs, rhs))
}

/// Restriction on the parameter domain a set must respect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DomainTag {
    Unrestricted,
    PositiveOrthant { margin: f64 },
    SimplexInterior { margin: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CheckOutcome {
    Ok,
    Empty,
    /// Index (0-based, within the checked coordinate range) of the first
    /// coordinate that stays below the margin on the whole set.
    MarginViolated(usize),
    /// The checked coordinates do not sum to one everywhere on the set.
    NotOnSimplex,
}

pub fn check_set(s: &PolytopeSpec, tag: DomainTag) -> CheckOutcome {
    check_affine_image(s, None, None, 0..s.dim, tag)
}

/// Checks `tag` on coordinates `coords` of the image `map·x + offset`,
/// `x ∈ s` (identity map when `map` is `None`).
pub fn check_affine_image(
    s: &PolytopeSpec,
    map: Option<&DMatrix<f64>>,
    offset: Option<&[f64]>,
    coords: Range<usize>,
    tag: DomainTag,
) -> CheckOutcome {
    let mut ws = match LpWorkspace::new(s) {
        Ok(ws) => ws,
        Err(_) => return CheckOutcome::Empty,
    };
    let margin = match tag {
        DomainTag::Unrestricted => return CheckOutcome::Ok,
        DomainTag::PositiveOrthant { margin } | DomainTag::SimplexInterior { margin } => margin,
    };
    let row_of = |k: usize| -> Vec<f64> {
        match map {
            Some(m) => m.row(k).iter().copied().collect(),
            None => {
                let mut e = vec![0.0; s.dim];
                e[k] = 1.0;
                e
            }
        }
    };
    let off = |k: usize| offset.map_or(0.0, |o| o[k]);
    // A coordinate must reach the margin somewhere on the set; sets that
    // only touch the boundary are fine since optimizers stay interior.
    for (local, k) in coords.clone().enumerate() {
        let neg: Vec<f64> = row_of(k).iter().map(|v| -v).collect();
        match ws.minimize(&neg) {
            Ok(sol) if -sol.value + off(k) >= margin => {}
            Ok(_) => return CheckOutcome::MarginViolated(local),
            Err(_) => return CheckOutcome::Empty,
        }
    }
    if let DomainTag::SimplexInterior { .. } = tag {
        let mut sum = vec![0.0; s.dim];
        let mut sum_off = 0.0;
        for k in coords {
            for (acc, v) in sum.iter_mut().zip(row_of(k)) {
                *acc += v;
            }
            sum_off += off(k);
        }
        let neg: Vec<f64> = sum.iter().map(|v| -v).collect();
        let lo = ws.minimize(&sum).map(|s| s.value + sum_off);
        let hi = ws.minimize(&neg).map(|s| -s.value + sum_off);
        match (lo, hi) {
            (Ok(lo), Ok(hi)) if (lo - 1.0).abs() <= 1e-9 && (hi - 1.0).abs() <= 1e-9 => {}
            _ => return CheckOutcome::NotOnSimplex,
        }
    }
    CheckOutcome::Ok
}
