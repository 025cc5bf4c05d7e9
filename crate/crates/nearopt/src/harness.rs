//! Monte Carlo checks: empirical risks with exact binomial intervals,
//! Markov trajectory simulation and estimates of the least achievable sum
//! of error probabilities.

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Binomial;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};
use thiserror::Error;

use crate::pairtest::{decide, Decision, PairSolution, Side};
use crate::schemes::{ObsSampler, ProductScheme, SchemeError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
}

/// Replications per RNG stream.
pub const CHUNK: u64 = 1024;

/// Default replication count.
pub const DEFAULT_REPS: u64 = 5000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub reps: u64,
    pub errors: u64,
    pub rate: f64,
    /// Exact 95% interval for the error probability.
    pub ci: (f64, f64),
    pub bound: Option<f64>,
    pub seed: u64,
    pub stream: u64,
}

impl RiskReport {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci.1 - self.ci.0)
    }

    /// `rate ≤ bound + 3·half-width`; vacuous without a bound.
    pub fn complies(&self) -> bool {
        self.bound.is_none_or(|b| self.rate <= b + 3.0 * self.half_width())
    }
}

/// Two-sided Clopper–Pearson interval at confidence `level`.
pub fn clopper_pearson(k: u64, n: u64, level: f64) -> (f64, f64) {
    assert!(n > 0 && k <= n, "need 0 <= k <= n and n > 0");
    let a = 0.5 * (1.0 - level);
    let (kf, nf) = (k as f64, n as f64);
    let lo = if k == 0 {
        0.0
    } else {
        Beta::new(kf, nf - kf + 1.0).map_or(0.0, |b| b.inverse_cdf(a))
    };
    let hi = if k == n {
        1.0
    } else {
        Beta::new(kf + 1.0, nf - kf).map_or(1.0, |b| b.inverse_cdf(1.0 - a))
    };
    (lo, hi)
}

/// RNG for chunk `chunk` of stream family `stream`.
pub fn chunk_rng(seed: u64, stream: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((stream << 32) | chunk);
    rng
}

/// Counts the replications where `trial` reports an error. Replications are
/// split into fixed chunks with their own streams, so the result does not
/// depend on the thread count.
pub fn estimate_risk<F>(trial: F, reps: u64, seed: u64, stream: u64, bound: Option<f64>) -> RiskReport
where
    F: Fn(&mut ChaCha8Rng) -> bool + Sync,
{
    assert!(reps > 0, "need at least one replication");
    let chunks = reps.div_ceil(CHUNK);
    let errors: u64 = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(seed, stream, c);
            let len = CHUNK.min(reps - c * CHUNK);
            (0..len).filter(|_| trial(&mut rng)).count() as u64
        })
        .sum();
    RiskReport {
        reps,
        errors,
        rate: errors as f64 / reps as f64,
        ci: clopper_pearson(errors, reps, 0.95),
        bound,
        seed,
        stream,
    }
}

/// Rejection frequency of the true side for a pair test, with the truth
/// at parameter `mu` of side `truth`.
pub fn pair_risk(
    solution: &PairSolution,
    scheme: &ProductScheme,
    mu: &[f64],
    truth: Side,
    reps: u64,
    seed: u64,
) -> Result<RiskReport, HarnessError> {
    let sampler = ObsSampler::new(scheme, mu)?;
    let (wrong, idx) = match truth {
        Side::X => (Decision::AcceptY, 0),
        Side::Y => (Decision::AcceptX, 1),
    };
    let stream = idx as u64;
    Ok(estimate_risk(
        |rng| {
            let obs = sampler.sample(rng);
            matches!(decide(solution, &obs), Ok(d) if d == wrong)
        },
        reps,
        seed,
        stream,
        Some(solution.bounds[idx]),
    ))
}

/// What a simulated chain reports at each step.
#[derive(Debug, Clone, PartialEq)]
pub enum Emission {
    /// The states themselves, including the initial one.
    States,
    /// A symbol drawn from column `ι_τ` of an `m × n` channel, `τ ≥ 1`.
    StateChannel(DMatrix<f64>),
    /// A symbol drawn from column `ι_{τ−1}·n + ι_τ` of an `m × n²` channel.
    TransitionChannel(DMatrix<f64>),
}

fn column_samplers(a: &DMatrix<f64>) -> Vec<Option<WeightedIndex<f64>>> {
    a.column_iter()
        .map(|c| WeightedIndex::new(c.iter().copied()).ok())
        .collect()
}

fn check_distribution(c: impl Iterator<Item = f64>, what: &str) -> Result<(), HarnessError> {
    let v: Vec<f64> = c.collect();
    if v.iter().any(|x| !(*x >= 0.0)) || (v.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(HarnessError::Invalid(format!("{what} is not a probability vector")));
    }
    Ok(())
}

/// Precomputed samplers for repeated trajectory simulation.
#[derive(Debug, Clone)]
pub struct ChainSampler {
    n: usize,
    init: WeightedIndex<f64>,
    moves: Vec<WeightedIndex<f64>>,
    emission: Emission,
    symbols: Vec<Option<WeightedIndex<f64>>>,
}

impl ChainSampler {
    pub fn new(s: &DMatrix<f64>, init: &[f64], emission: Emission) -> Result<Self, HarnessError> {
        let n = s.nrows();
        if s.ncols() != n || init.len() != n {
            return Err(HarnessError::Invalid("transition matrix and initial law must share the state count".into()));
        }
        check_distribution(init.iter().copied(), "initial distribution")?;
        for j in 0..n {
            check_distribution(s.column(j).iter().copied(), &format!("transition column {j}"))?;
        }
        let symbols = match &emission {
            Emission::States => Vec::new(),
            Emission::StateChannel(a) => {
                if a.ncols() != n {
                    return Err(HarnessError::Invalid("state channel needs one column per state".into()));
                }
                for j in 0..n {
                    check_distribution(a.column(j).iter().copied(), &format!("channel column {j}"))?;
                }
                column_samplers(a)
            }
            Emission::TransitionChannel(a) => {
                if a.ncols() != n * n {
                    return Err(HarnessError::Invalid("transition channel needs n² columns".into()));
                }
                for j in 0..n {
                    for i in (0..n).filter(|&i| s[(i, j)] > 0.0) {
                        check_distribution(a.column(j * n + i).iter().copied(), &format!("channel column {j} -> {i}"))?;
                    }
                }
                column_samplers(a)
            }
        };
        Ok(ChainSampler {
            n,
            init: WeightedIndex::new(init.iter().copied()).map_err(|e| HarnessError::Invalid(e.to_string()))?,
            moves: (0..n)
                .map(|j| WeightedIndex::new(s.column(j).iter().copied()).expect("checked column"))
                .collect(),
            emission,
            symbols,
        })
    }

    /// `K` steps: `K + 1` states, or `K` symbols under a channel.
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Vec<usize> {
        let mut state = self.init.sample(rng);
        let mut out = Vec::with_capacity(k + 1);
        if matches!(self.emission, Emission::States) {
            out.push(state);
        }
        for _ in 0..k {
            let next = self.moves[state].sample(rng);
            let sym = match self.emission {
                Emission::States => next,
                Emission::StateChannel(_) => self.symbols[next].as_ref().expect("checked column").sample(rng),
                Emission::TransitionChannel(_) => self.symbols[state * self.n + next]
                    .as_ref()
                    .expect("checked column")
                    .sample(rng),
            };
            out.push(sym);
            state = next;
        }
        out
    }
}

pub fn simulate_chain<R: Rng + ?Sized>(
    s: &DMatrix<f64>,
    init: &[f64],
    k: usize,
    emission: Emission,
    rng: &mut R,
) -> Result<Vec<usize>, HarnessError> {
    Ok(ChainSampler::new(s, init, emission)?.sample(k, rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffinityEstimate {
    /// Estimate of `Σ_{ω^K} min(p₁^K, p₂^K)`.
    pub estimate: f64,
    pub std_err: f64,
}

impl AffinityEstimate {
    /// `ln(estimate) / ln(bound)`: how many times more observations the
    /// bound needs than an ideal test, at most.
    pub fn ratio(&self, bound: f64) -> f64 {
        self.estimate.ln() / bound.ln()
    }
}

/// Multinomial counts by sequential binomial draws.
fn multinomial<R: Rng + ?Sized>(k: u64, p: &[f64], rng: &mut R, out: &mut [u64]) {
    let mut left = k;
    let mut mass = 1.0;
    for (i, pi) in p.iter().enumerate() {
        if left == 0 || mass <= 0.0 {
            out[i] = 0;
            continue;
        }
        let q = (pi / mass).clamp(0.0, 1.0);
        let c = if i + 1 == p.len() {
            left
        } else {
            Binomial::new(left, q).expect("probability in [0, 1]").sample(rng)
        };
        out[i] = c;
        left -= c;
        mass -= pi;
    }
}

/// Unbiased estimate of the total-variation affinity of `K` i.i.d. draws
/// from `p1` against `p2`, averaging `E_{p1} min(1, L)` and
/// `E_{p2} min(1, 1/L)` with `L` the likelihood ratio `p2^K / p1^K`.
pub fn affinity_lower_bound(p1: &[f64], p2: &[f64], k: u64, reps: u64, seed: u64) -> Result<AffinityEstimate, HarnessError> {
    if p1.len() != p2.len() || reps < 2 {
        return Err(HarnessError::Invalid("models must share the outcome space and reps >= 2".into()));
    }
    check_distribution(p1.iter().copied(), "first model")?;
    check_distribution(p2.iter().copied(), "second model")?;
    let llr: Vec<f64> = p1
        .iter()
        .zip(p2)
        .map(|(a, b)| match (*a > 0.0, *b > 0.0) {
            (true, true) => (b / a).ln(),
            (true, false) => f64::NEG_INFINITY,
            (false, true) => f64::INFINITY,
            (false, false) => 0.0,
        })
        .collect();
    let half = |p: &[f64], sign: f64, stream: u64| -> (f64, f64) {
        let chunks = reps.div_ceil(CHUNK);
        let (s, s2) = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = chunk_rng(seed, stream, c);
                let mut counts = vec![0u64; p.len()];
                let mut acc = (0.0, 0.0);
                for _ in 0..CHUNK.min(reps - c * CHUNK) {
                    multinomial(k, p, &mut rng, &mut counts);
                    let l: f64 = counts
                        .iter()
                        .zip(&llr)
                        .filter(|(c, _)| **c > 0)
                        .map(|(c, v)| *c as f64 * v)
                        .sum();
                    let v = (sign * l).min(0.0).exp();
                    acc.0 += v;
                    acc.1 += v * v;
                }
                acc
            })
            .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        let n = reps as f64;
        let mean = s / n;
        (mean, ((s2 / n - mean * mean).max(0.0) / (n - 1.0)).max(0.0))
    };
    let (m1, v1) = half(p1, 1.0, 0);
    let (m2, v2) = half(p2, -1.0, 1);
    Ok(AffinityEstimate {
        estimate: 0.5 * (m1 + m2),
        std_err: 0.5 * (v1 + v2).sqrt(),
    })
}
