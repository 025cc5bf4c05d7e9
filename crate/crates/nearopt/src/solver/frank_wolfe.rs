//! Away-step Frank–Wolfe for concave maximization over a product of
//! polytopes. The returned gap `max_z ∇f(x)·(z − x)` bounds `f* − f(x)`.

use serde::{Deserialize, Serialize};

use super::SolverError;
use crate::sets::{LpWorkspace, PolytopeSpec};

pub trait ConcaveObjective {
    /// Length of the concatenated variable vector.
    fn dim(&self) -> usize;
    fn value(&self, z: &[f64]) -> f64;
    /// Writes the gradient into `grad` and returns the value.
    fn value_grad(&self, z: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FwConfig {
    pub max_iters: usize,
    pub gap_tol: f64,
    /// Golden-section line search with away steps when true; plain
    /// `2/(k+2)` steps otherwise.
    pub line_search: bool,
}

impl Default for FwConfig {
    fn default() -> Self {
        FwConfig {
            max_iters: 200_000,
            gap_tol: 1e-7,
            line_search: true,
        }
    }
}

impl FwConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.gap_tol > 0.0) || self.max_iters == 0 {
            return Err(SolverError::Domain("gap_tol must be > 0 and max_iters >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub point: Vec<f64>,
    pub value: f64,
    pub gap: f64,
    /// Frank–Wolfe gap of each block; these sum to `gap`.
    pub block_gaps: Vec<f64>,
    pub iters: usize,
    pub converged: bool,
}

struct Block {
    offset: usize,
    dim: usize,
    lp: LpWorkspace,
    /// Active vertices with convex weights.
    active: Vec<(Vec<f64>, f64)>,
}

impl Block {
    fn point(&self) -> Vec<f64> {
        let mut z = vec![0.0; self.dim];
        for (v, w) in &self.active {
            for (zi, vi) in z.iter_mut().zip(v) {
                *zi += w * vi;
            }
        }
        z
    }

    fn add_vertex(&mut self, s: Vec<f64>, weight: f64) {
        if let Some(slot) = self.active.iter_mut().find(|(v, _)| same_vertex(v, &s)) {
            slot.1 += weight;
        } else {
            self.active.push((s, weight));
        }
    }
}

fn same_vertex(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Starting vertices: LP solutions for `±e_i` over (a stride of) the
/// coordinates, averaged to land in the relative interior.
fn initial_vertices(lp: &mut LpWorkspace, dim: usize) -> Result<Vec<Vec<f64>>, SolverError> {
    let stride = dim.div_ceil(64).max(1);
    let mut out: Vec<Vec<f64>> = Vec::new();
    let mut c = vec![0.0; dim];
    for i in (0..dim).step_by(stride) {
        for sign in [1.0, -1.0] {
            c.iter_mut().for_each(|v| *v = 0.0);
            c[i] = sign;
            let s = lp.minimize(&c)?.x;
            if !out.iter().any(|v| same_vertex(v, &s)) {
                out.push(s);
            }
        }
    }
    Ok(out)
}

pub fn maximize_concave<F: ConcaveObjective + ?Sized>(
    f: &F,
    blocks: &[PolytopeSpec],
    cfg: &FwConfig,
) -> Result<OptResult, SolverError> {
    cfg.validate()?;
    let total: usize = blocks.iter().map(|b| b.dim).sum();
    if total != f.dim() {
        return Err(SolverError::Domain(format!(
            "objective dimension {} does not match blocks ({total})",
            f.dim()
        )));
    }
    let mut state = Vec::with_capacity(blocks.len());
    let mut offset = 0;
    for (k, spec) in blocks.iter().enumerate() {
        let mut lp = LpWorkspace::new(spec).map_err(|e| SolverError::Set { block: k, source: e })?;
        let verts = initial_vertices(&mut lp, spec.dim)?;
        let w = 1.0 / verts.len() as f64;
        state.push(Block {
            offset,
            dim: spec.dim,
            lp,
            active: verts.into_iter().map(|v| (v, w)).collect(),
        });
        offset += spec.dim;
    }

    let mut z = vec![0.0; total];
    let assemble = |state: &[Block], z: &mut [f64]| {
        for b in state {
            z[b.offset..b.offset + b.dim].copy_from_slice(&b.point());
        }
    };
    assemble(&state, &mut z);

    let mut grad = vec![0.0; total];
    let mut value = f.value_grad(&z, &mut grad);
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(SolverError::NonFiniteObjective);
    }
    let mut block_gaps = vec![f64::INFINITY; state.len()];
    let mut stalls = 0;
    let mut iters = 0;
    let mut fw_vertices: Vec<Vec<f64>> = vec![Vec::new(); state.len()];
    let mut trial = vec![0.0; total];
    let mut dir = vec![0.0; total];

    while iters < cfg.max_iters {
        let mut fw_gap = 0.0;
        let mut away: Option<(usize, usize, f64)> = None;
        for (k, b) in state.iter_mut().enumerate() {
            let g = &grad[b.offset..b.offset + b.dim];
            let neg: Vec<f64> = g.iter().map(|v| -v).collect();
            let s = b.lp.minimize(&neg)?.x;
            let zb = &z[b.offset..b.offset + b.dim];
            let gz = dot(g, zb);
            block_gaps[k] = (dot(g, &s) - gz).max(0.0);
            fw_gap += block_gaps[k];
            fw_vertices[k] = s;
            if cfg.line_search && b.active.len() > 1 {
                let (idx, gv) = b
                    .active
                    .iter()
                    .enumerate()
                    .map(|(i, (v, _))| (i, dot(g, v)))
                    .fold((0, f64::INFINITY), |a, c| if c.1 < a.1 { c } else { a });
                let ag = gz - gv;
                if away.is_none_or(|(_, _, best)| ag > best) {
                    away = Some((k, idx, ag));
                }
            }
        }
        if fw_gap <= cfg.gap_tol {
            return Ok(OptResult {
                point: z,
                value,
                gap: fw_gap,
                block_gaps,
                iters,
                converged: true,
            });
        }
        iters += 1;

        let use_away = matches!(away, Some((_, _, ag)) if ag > fw_gap);
        dir.iter_mut().for_each(|v| *v = 0.0);
        let gamma_max;
        if use_away {
            let (k, idx, _) = away.unwrap();
            let b = &state[k];
            let (v, w) = &b.active[idx];
            for i in 0..b.dim {
                dir[b.offset + i] = z[b.offset + i] - v[i];
            }
            gamma_max = w / (1.0 - w);
        } else {
            for (k, b) in state.iter().enumerate() {
                for i in 0..b.dim {
                    dir[b.offset + i] = fw_vertices[k][i] - z[b.offset + i];
                }
            }
            gamma_max = 1.0;
        }

        let mut gamma = if cfg.line_search {
            let mut eval = |t: f64| {
                for i in 0..total {
                    trial[i] = z[i] + t * dir[i];
                }
                let v = f.value(&trial);
                if v.is_nan() {
                    f64::NEG_INFINITY
                } else {
                    v
                }
            };
            line_search(&mut eval, value, gamma_max)
        } else {
            2.0 / (iters as f64 + 2.0)
        };

        // A vertex whose weight is at round-off level cannot change the value
        // measurably; drop it outright instead of stalling on it.
        if gamma <= 0.0 && use_away && gamma_max < 1e-9 {
            gamma = gamma_max;
        }
        if gamma <= 0.0 {
            stalls += 1;
            if stalls >= 3 {
                break;
            }
            continue;
        }
        stalls = 0;

        // A step may land where the gradient is infinite (a boundary face of
        // a log-domain set); such steps are shortened until it is finite.
        let backup: Vec<_> = state.iter().map(|b| b.active.clone()).collect();
        let mut gamma = gamma;
        let mut accepted = false;
        for _ in 0..60 {
            take_step(&mut state, &fw_vertices, away.filter(|_| use_away), gamma, gamma_max);
            assemble(&state, &mut z);
            let new_value = f.value_grad(&z, &mut grad);
            if new_value.is_finite() && grad.iter().all(|g| g.is_finite()) {
                value = new_value;
                accepted = true;
                break;
            }
            for (b, a) in state.iter_mut().zip(&backup) {
                b.active = a.clone();
            }
            gamma *= 0.5;
        }
        if !accepted {
            return Err(SolverError::NonFiniteObjective);
        }
    }
    // The loop may have exited right after a step; report the gap at the
    // returned point.
    for (k, b) in state.iter_mut().enumerate() {
        let g = &grad[b.offset..b.offset + b.dim];
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        let s = b.lp.minimize(&neg)?.x;
        block_gaps[k] = (dot(g, &s) - dot(g, &z[b.offset..b.offset + b.dim])).max(0.0);
    }
    let gap = block_gaps.iter().sum();
    Ok(OptResult {
        point: z,
        value,
        gap,
        block_gaps,
        iters,
        converged: false,
    })
}

fn take_step(
    state: &mut [Block],
    fw_vertices: &[Vec<f64>],
    away: Option<(usize, usize, f64)>,
    gamma: f64,
    gamma_max: f64,
) {
    if let Some((k, idx, _)) = away {
        let b = &mut state[k];
        for (_, w) in b.active.iter_mut() {
            *w *= 1.0 + gamma;
        }
        b.active[idx].1 -= gamma;
        if gamma >= gamma_max || b.active[idx].1 <= 1e-15 {
            b.active.remove(idx);
        }
    } else {
        for (k, b) in state.iter_mut().enumerate() {
            if gamma >= 1.0 {
                b.active.clear();
            } else {
                for (_, w) in b.active.iter_mut() {
                    *w *= 1.0 - gamma;
                }
                b.active.retain(|(_, w)| *w > 0.0);
            }
            b.add_vertex(fw_vertices[k].clone(), gamma.min(1.0));
        }
    }
    for b in state.iter_mut() {
        let s: f64 = b.active.iter().map(|(_, w)| w).sum();
        b.active.iter_mut().for_each(|(_, w)| *w /= s);
    }
}

/// Golden-section maximization of a concave function on `[0, t_max]`;
/// returns 0 when no point beats `h0 = h(0)`.
fn line_search(h: &mut impl FnMut(f64) -> f64, h0: f64, t_max: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (0.0, t_max);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut hc = h(c);
    let mut hd = h(d);
    let tol = 1e-12 * t_max;
    while b - a > tol {
        if hc >= hd {
            b = d;
            d = c;
            hd = hc;
            c = b - INV_PHI * (b - a);
            hc = h(c);
        } else {
            a = c;
            c = d;
            hc = hd;
            d = a + INV_PHI * (b - a);
            hd = h(d);
        }
    }
    let (mut best_t, mut best_h) = if hc >= hd { (c, hc) } else { (d, hd) };
    let h_end = h(t_max);
    if h_end >= best_h {
        best_t = t_max;
        best_h = h_end;
    }
    if best_h > h0 {
        return best_t;
    }
    // Sharp curvature near the domain boundary can hide an improving step
    // below the golden-section resolution.
    let mut t = t_max;
    for _ in 0..100 {
        t *= 0.5;
        if h(t) > h0 {
            return t;
        }
    }
    0.0
}
