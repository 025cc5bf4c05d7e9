//! Testing whether a linear functional of a discrete distribution is below
//! `α − ρ` or above `α + ρ`, observed through several stochastic channels.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::sensor::rows;
use super::ModelError;
use crate::pairtest::{solve_pair, PairProblem, PairSolution, ParamSet};
use crate::schemes::{ProductScheme, SchemeFactor};
use crate::sets::{lp_minimize, PolytopeSpec};
use crate::solver::{bisect_max_param, BisectError, FwConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observer {
    /// Column-stochastic channel, `m × n`.
    #[serde(with = "rows")]
    pub channel: DMatrix<f64>,
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSpec {
    pub observers: Vec<Observer>,
    /// Admissible distributions, a subset of the simplex.
    pub set: PolytopeSpec,
    pub g: Vec<f64>,
    pub level: f64,
}

impl FunctionalSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.set.dim;
        if self.g.len() != n || self.observers.is_empty() {
            return Err(ModelError::Invalid("functional and observers must match the set dimension".into()));
        }
        for (l, o) in self.observers.iter().enumerate() {
            if o.channel.ncols() != n || o.repeats == 0 {
                return Err(ModelError::Invalid(format!("observer {l}: channel needs {n} columns and repeats >= 1")));
            }
            if o.channel.iter().any(|v| *v < 0.0)
                || o.channel.column_iter().any(|c| (c.sum() - 1.0).abs() > 1e-10)
            {
                return Err(ModelError::Invalid(format!("observer {l}: channel is not column-stochastic")));
            }
        }
        Ok(())
    }

    fn scheme(&self) -> Result<ProductScheme, ModelError> {
        let f = self
            .observers
            .iter()
            .map(|o| SchemeFactor::discrete(o.channel.nrows(), o.repeats))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ProductScheme::new(f)?)
    }

    fn stacked_channel(&self) -> DMatrix<f64> {
        let rows: usize = self.observers.iter().map(|o| o.channel.nrows()).sum();
        let mut a = DMatrix::zeros(rows, self.set.dim);
        let mut r = 0;
        for o in &self.observers {
            a.view_mut((r, 0), o.channel.shape()).copy_from(&o.channel);
            r += o.channel.nrows();
        }
        a
    }

    /// Largest `ρ` for which both hypotheses are nonempty.
    pub fn rho_max(&self) -> Result<f64, ModelError> {
        let lo = lp_minimize(&self.g, &self.set)?.value;
        let neg: Vec<f64> = self.g.iter().map(|v| -v).collect();
        let hi = -lp_minimize(&neg, &self.set)?.value;
        Ok((self.level - lo).min(hi - self.level))
    }

    /// Pair problem `g(x) ≤ α − ρ` versus `g(y) ≥ α + ρ`.
    pub fn problem(&self, rho: f64) -> Result<PairProblem, ModelError> {
        let a = self.stacked_channel();
        let neg: Vec<f64> = self.g.iter().map(|v| -v).collect();
        let x = self.set.clone().with_ineq(self.g.clone(), self.level - rho);
        let y = self.set.clone().with_ineq(neg, -(self.level + rho));
        Ok(PairProblem::new(
            self.scheme()?,
            ParamSet::lifted(x, Some(a.clone()), None)?,
            ParamSet::lifted(y, Some(a), None)?,
        ))
    }
}

/// Lower-bound factor: no test reaches risk `eps` below `ρ[ε]/ϑ(ε)`.
pub fn cdf_factor(eps: f64) -> Result<f64, ModelError> {
    if !(eps > 0.0 && eps < 0.25) {
        return Err(ModelError::Invalid("factor needs eps in (0, 1/4)".into()));
    }
    Ok(2.0 * (1.0 / eps).ln() / (1.0 / (4.0 * eps)).ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub rho: f64,
    pub rho_max: f64,
    /// `ρ[ε] ≥ ρ_max`: the test below is built at (just inside) `ρ_max` and need not
    /// reach the target risk.
    pub degenerate: bool,
    pub solution: PairSolution,
    pub lower_factor: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolutionConfig {
    pub fw: FwConfig,
    /// Bisection tolerance relative to `ρ_max`.
    pub rel_tol: f64,
}

impl Default for ResolutionConfig {
    fn default() -> Self {
        ResolutionConfig {
            fw: FwConfig::default(),
            rel_tol: 1e-6,
        }
    }
}

/// Smallest resolution with risk at most `eps` and the test achieving it.
pub fn functional_resolution(spec: &FunctionalSpec, eps: f64, cfg: &ResolutionConfig) -> Result<Resolution, ModelError> {
    spec.validate()?;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(ModelError::Invalid("eps must lie in (0, 1)".into()));
    }
    let rho_max = spec.rho_max()?;
    if !(rho_max > 0.0) {
        return Err(ModelError::Infeasible(format!("both hypotheses are nonempty only up to rho = {rho_max}")));
    }
    let target = 2.0 * eps.ln();
    let tol = cfg.rel_tol * rho_max;
    // At ρ_max a hypothesis may collapse onto a face where some outcome has
    // probability zero; stay just inside.
    let top = rho_max * (1.0 - 1e-9);
    let close = bisect_max_param(
        |r| -> Result<bool, ModelError> {
            let s = solve_pair(&spec.problem(r)?, &cfg.fw)?;
            Ok(s.opt + s.gap > target)
        },
        0.0,
        top,
        tol,
    );
    let (rho, degenerate) = match close {
        Ok(r) if r >= top => (top, true),
        // Step past the last too-close amplitude.
        Ok(r) => ((r + tol).min(top), false),
        Err(BisectError::Inner(e)) => return Err(e),
        Err(BisectError::NotFeasibleAtLo) => (0.0, false),
    };
    let solution = solve_pair(&spec.problem(rho)?, &cfg.fw)?;
    Ok(Resolution {
        rho,
        rho_max,
        degenerate,
        solution,
        lower_factor: cdf_factor(eps).ok(),
    })
}

/// Distributions on `n` bins of width `h` with second differences bounded
/// by `h²·curv`.
pub fn smooth_densities(n: usize, curv: f64) -> PolytopeSpec {
    let h = 2.0 / n as f64;
    let mut p = PolytopeSpec::simplex(n);
    for i in 1..n.saturating_sub(1) {
        let mut row = vec![0.0; n];
        row[i - 1] = 1.0;
        row[i] = -2.0;
        row[i + 1] = 1.0;
        let neg: Vec<f64> = row.iter().map(|v| -v).collect();
        p = p.with_ineq(row, h * h * curv).with_ineq(neg, h * h * curv);
    }
    p
}
