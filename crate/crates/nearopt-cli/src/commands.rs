//! One report builder per subcommand.

use nalgebra::DMatrix;
use nearopt::harness::estimate_risk;
use nearopt::models::functional::{functional_resolution, ResolutionConfig};
use nearopt::models::markov::{markov_pair_plan, queueing_chain};
use nearopt::models::pet::{pet_plan, toy_spec};
use nearopt::models::sensor::{sensor_rate_profile, SensorConfig};
use nearopt::multitest::{
    closeness_shifts, two_stage_bound, union_assemble, weighted_shifts, ClosenessRelation, DetectorMatrix,
    MultipleUnions,
};
use nearopt::pairtest::{certified_risk, decide, repeated_plan, solve_pair, Decision, PairProblem, PairSolution, Side};
use nearopt::schemes::{parse_observations, ObsSampler, ProductScheme, SchemeFactor};
use nearopt::sets::PolytopeSpec;
use nearopt::solver::FwConfig;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::format::{columns_csv, matrix_csv, matrix_table, sig6, table};
use crate::spec::{
    BlocksTask, ChainModel, FunctionalTask, MarkovTask, MultiTask, PairTask, PetTask, SensorTask, SimulateTask,
    SpecFile, UnionTask, SPEC_VERSION,
};
use crate::Failure;

pub struct Options {
    pub fw: FwConfig,
    pub seed: u64,
    pub reps: u64,
}

pub struct Report {
    pub json: serde_json::Value,
    pub text: String,
    /// Extra artifacts written next to `result.json`.
    pub files: Vec<(String, String)>,
    /// Set when a result was produced without meeting the solver tolerance.
    pub unconverged: Option<String>,
}

impl Report {
    fn new(json: serde_json::Value, text: String) -> Self {
        Report {
            json,
            text,
            files: Vec::new(),
            unconverged: None,
        }
    }

    fn flag(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok && self.unconverged.is_none() {
            self.unconverged = Some(what());
        }
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, Failure> {
    let nc = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || nc == 0 || rows.iter().any(|r| r.len() != nc) {
        return Err(Failure::Validation(format!("{what}: rows must be nonempty and of equal length")));
    }
    Ok(DMatrix::from_fn(rows.len(), nc, |i, j| rows[i][j]))
}

fn check_risk(v: f64, what: &str) -> Result<(), Failure> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Failure::Validation(format!("{what} = {v} must lie in (0, 1)")));
    }
    Ok(())
}

/// What `decide` reloads from a saved pair result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SavedPair {
    pub spec_version: u32,
    pub scheme: Vec<SchemeFactor>,
    pub solution: PairSolution,
}

fn decision_name(d: Decision) -> &'static str {
    match d {
        Decision::AcceptX => "accept-x",
        Decision::AcceptY => "accept-y",
    }
}

pub fn decisions(scheme: &ProductScheme, s: &PairSolution, obs_text: &str) -> Result<Vec<Decision>, Failure> {
    parse_observations(scheme, obs_text)?
        .iter()
        .map(|o| decide(s, o).map_err(Failure::from))
        .collect()
}

pub fn decide_saved(saved_text: &str, obs_text: &str) -> Result<Report, Failure> {
    let saved: SavedPair =
        serde_json::from_str(saved_text).map_err(|e| Failure::Validation(format!("solution file: {e}")))?;
    let scheme = ProductScheme::new(saved.scheme)?;
    let ds = decisions(&scheme, &saved.solution, obs_text)?;
    let text: String = ds.iter().map(|d| format!("{}\n", decision_name(*d))).collect();
    Ok(Report::new(json!({ "decisions": ds }), text))
}

pub fn solve_pair_report(spec: &SpecFile, t: &PairTask, opts: &Options, obs: Option<&str>) -> Result<Report, Failure> {
    let scheme = spec.scheme()?;
    for e in &t.targets {
        check_risk(*e, "target risk")?;
    }
    let p = PairProblem::new(scheme.clone(), spec.set(&t.x)?, spec.set(&t.y)?);
    let s = solve_pair(&p, &opts.fw)?;
    let delta = s.gap_x.max(s.gap_y);
    let plans: Vec<(f64, Option<usize>)> = t.targets.iter().map(|&e| (e, repeated_plan(s.eps_star, e).ok())).collect();
    let mut text = format!(
        "eps_star={}\nopt={}\ndelta={}\ncertified_risk={}\niters={} converged={}\n",
        sig6(s.eps_star),
        sig6(s.opt),
        sig6(delta),
        sig6(certified_risk(&s)),
        s.iters,
        s.converged
    );
    let table_rows: Vec<Vec<String>> = plans
        .iter()
        .map(|(e, k)| vec![sig6(*e), k.map_or("-".into(), |k| k.to_string())])
        .collect();
    text.push_str(&table(&["target", "K_min"], &table_rows));
    let mut out = serde_json::to_value(SavedPair {
        spec_version: SPEC_VERSION,
        scheme: scheme.factors().to_vec(),
        solution: s.clone(),
    })
    .expect("solution serializes");
    out["task"] = json!("pair");
    out["certified_risk"] = json!(certified_risk(&s));
    out["k_min"] = json!(plans.iter().map(|(e, k)| json!({ "target": e, "k": k })).collect::<Vec<_>>());
    if let Some(obs) = obs {
        let ds = decisions(&scheme, &s, obs)?;
        text.push_str("decisions:\n");
        for d in &ds {
            text.push_str(decision_name(*d));
            text.push('\n');
        }
        out["decisions"] = json!(ds);
    }
    let mut r = Report::new(out, text);
    r.flag(s.converged, || format!("pair solver stopped with gap {:e}", s.gap));
    Ok(r)
}

pub fn union_report(spec: &SpecFile, t: &UnionTask, opts: &Options) -> Result<Report, Failure> {
    let scheme = spec.scheme()?;
    let dm = DetectorMatrix::bipartite(&scheme, &spec.sets_named(&t.xs)?, &spec.sets_named(&t.ys)?, &opts.fw)?;
    let u = union_assemble(&dm.risks, t.mode)?;
    let text = format!(
        "eps={}\nrisks:\n{}shifts:\n{}",
        sig6(u.eps),
        matrix_table(&u.risks),
        matrix_table(&u.shifts)
    );
    let mut r = Report::new(
        json!({
            "spec_version": SPEC_VERSION,
            "task": "union",
            "eps": u.eps,
            "risks": rows(&u.risks),
            "shifts": rows(&u.shifts),
            "mode": u.mode,
        }),
        text,
    );
    r.files = vec![("risks.csv".into(), matrix_csv(&u.risks)), ("shifts.csv".into(), matrix_csv(&u.shifts))];
    Ok(r)
}

pub fn multitest_report(spec: &SpecFile, t: &MultiTask, opts: &Options) -> Result<Report, Failure> {
    let scheme = spec.scheme()?;
    let m = t.hypotheses.len();
    let dm = DetectorMatrix::pairwise(&scheme, &spec.sets_named(&t.hypotheses)?, &opts.fw)?;
    let (alpha, eps, lower) = match &t.importance {
        Some(w) => {
            if !t.close.is_empty() {
                return Err(Failure::Validation("importance weights and closeness pairs are exclusive".into()));
            }
            let (a, v) = weighted_shifts(&dm.risks, w)?;
            (a, v, v)
        }
        None => {
            let c = closeness_shifts(&dm.risks, &ClosenessRelation::from_pairs(m, &t.close)?)?;
            (c.alpha, c.eps, c.lower_bound)
        }
    };
    let text = format!(
        "eps={}\nlower_bound={}\nrisks:\n{}shifts:\n{}",
        sig6(eps),
        sig6(lower),
        matrix_table(&dm.risks),
        matrix_table(&alpha.0)
    );
    let mut r = Report::new(
        json!({
            "spec_version": SPEC_VERSION,
            "task": "multitest",
            "eps": eps,
            "lower_bound": lower,
            "risks": rows(&dm.risks),
            "shifts": rows(&alpha.0),
        }),
        text,
    );
    r.files = vec![("risks.csv".into(), matrix_csv(&dm.risks)), ("shifts.csv".into(), matrix_csv(&alpha.0))];
    Ok(r)
}

pub fn blocks_report(spec: &SpecFile, t: &BlocksTask, opts: &Options) -> Result<Report, Failure> {
    let scheme = spec.scheme()?;
    let dm = DetectorMatrix::pairwise(&scheme, &spec.sets_named(&t.hypotheses)?, &opts.fw)?;
    let mu = MultipleUnions::new(&t.blocks, &dm.risks)?;
    let two = two_stage_bound(&t.blocks, &dm.risks)?;
    let text = format!(
        "eps={}\ntwo_stage_eps={}\nrisks:\n{}shifts:\n{}",
        sig6(mu.eps()),
        sig6(two),
        matrix_table(&dm.risks),
        matrix_table(&mu.shifts.alpha.0)
    );
    let mut r = Report::new(
        json!({
            "spec_version": SPEC_VERSION,
            "task": "multiple-unions",
            "eps": mu.eps(),
            "two_stage_eps": two,
            "blocks": t.blocks,
            "risks": rows(&dm.risks),
            "shifts": rows(&mu.shifts.alpha.0),
        }),
        text,
    );
    r.files = vec![
        ("risks.csv".into(), matrix_csv(&dm.risks)),
        ("shifts.csv".into(), matrix_csv(&mu.shifts.alpha.0)),
    ];
    Ok(r)
}

pub fn markov_report(t: &MarkovTask) -> Result<Report, Failure> {
    check_risk(t.target, "target")?;
    let (nominal, alts, labels) = match &t.model {
        ChainModel::Queue {
            lambda,
            mu,
            servers,
            buffer,
            alternatives,
        } => {
            let nominal = queueing_chain(*lambda, *mu, *servers, *buffer)?.transition;
            let alts = alternatives
                .iter()
                .map(|a| queueing_chain(*lambda, *a, *servers, *buffer).map(|q| q.transition))
                .collect::<Result<Vec<_>, _>>()?;
            (nominal, alts, alternatives.iter().map(|a| sig6(*a)).collect::<Vec<_>>())
        }
        ChainModel::Explicit { nominal, alternatives } => {
            let alts = alternatives
                .iter()
                .enumerate()
                .map(|(k, a)| matrix(a, &format!("alternative {k}")))
                .collect::<Result<Vec<_>, _>>()?;
            (matrix(nominal, "nominal chain")?, alts, (0..alternatives.len()).map(|k| k.to_string()).collect())
        }
    };
    if alts.is_empty() {
        return Err(Failure::Validation("no alternative chain given".into()));
    }
    let x = t.initial.clone().unwrap_or_else(|| PolytopeSpec::simplex(nominal.nrows()));
    let plans = alts
        .iter()
        .map(|a| markov_pair_plan(&nominal, a, &x, t.target, t.k_cap))
        .collect::<Result<Vec<_>, _>>()?;
    let mut text = String::new();
    let mut table_rows = Vec::new();
    for (label, p) in labels.iter().zip(&plans) {
        let k = p.k_min.map_or("-".into(), |k| k.to_string());
        text.push_str(&format!("alternative={label} K_min={k}\n"));
        table_rows.push(vec![
            label.clone(),
            k,
            sig6(p.curve[0]),
            sig6(*p.curve.last().expect("at least one step")),
        ]);
    }
    text.push_str(&table(&["alternative", "K_min", "eps*(1)", "eps*(K)"], &table_rows));
    let curves: Vec<Vec<f64>> = plans.iter().map(|p| p.curve.clone()).collect();
    let longest = curves.iter().map(Vec::len).max().unwrap_or(0);
    let mut cols = vec![(1..=longest).map(|k| k as f64).collect::<Vec<_>>()];
    cols.extend(curves.iter().cloned());
    let heads: Vec<String> = std::iter::once("K".to_string())
        .chain(labels.iter().map(|l| format!("alt_{l}")))
        .collect();
    let mut r = Report::new(
        json!({
            "spec_version": SPEC_VERSION,
            "task": "markov",
            "target": t.target,
            "alternatives": labels.iter().zip(&plans).map(|(l, p)| json!({
                "label": l,
                "k_min": p.k_min,
                "curve": p.curve,
            })).collect::<Vec<_>>(),
        }),
        text,
    );
    r.files = vec![(
        "curve.csv".into(),
        columns_csv(&heads.iter().map(String::as_str).collect::<Vec<_>>(), &cols),
    )];
    r.flag(plans.iter().all(|p| p.k_min.is_some()), || {
        format!("target not reached within k_cap = {}", t.k_cap)
    });
    Ok(r)
}

pub fn sensor_report(t: &SensorTask, opts: &Options) -> Result<Report, Failure> {
    let mut cfg = SensorConfig {
        fw: opts.fw,
        ..Default::default()
    };
    if let Some(tol) = t.rel_tol {
        cfg.rel_tol = tol;
    }
    let p = sensor_rate_profile(&t.detection, t.case, &cfg)?;
    let base = p.baseline.clone().unwrap_or_default();
    let table_rows: Vec<Vec<String>> = p
        .rho
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let b = base.get(i).copied();
            vec![
                i.to_string(),
                sig6(*r),
                b.map_or("-".into(), sig6),
                b.map_or("-".into(), |b| sig6(r / b)),
            ]
        })
        .collect();
    let text = format!(
        "kappa={}\noffset={}\n{}",
        p.kappa.map_or("-".into(), sig6),
        sig6(p.offset),
        table(&["i", "rho", "rho_star", "ratio"], &table_rows)
    );
    let mut r = Report::new(
        json!({ "spec_version": SPEC_VERSION, "task": "sensor", "profile": p }),
        text,
    );
    let mut cols = vec![p.rho.clone()];
    let mut heads = vec!["rho"];
    if !base.is_empty() {
        cols.push(base);
        heads.push("rho_star");
    }
    r.files = vec![("rates.csv".into(), columns_csv(&heads, &cols))];
    Ok(r)
}

pub fn resolve_report(t: &FunctionalTask, opts: &Options) -> Result<Report, Failure> {
    let mut cfg = ResolutionConfig {
        fw: opts.fw,
        ..Default::default()
    };
    if let Some(tol) = t.rel_tol {
        cfg.rel_tol = tol;
    }
    let mut text = String::new();
    let mut table_rows = Vec::new();
    let mut items = Vec::new();
    let mut converged = true;
    for &eps in &t.eps {
        check_risk(eps, "eps")?;
        let res = functional_resolution(&t.functional, eps, &cfg)?;
        converged &= res.solution.converged;
        text.push_str(&format!("eps={} rho={}\n", sig6(eps), sig6(res.rho)));
        table_rows.push(vec![
            sig6(eps),
            sig6(res.rho),
            sig6(res.rho_max),
            res.degenerate.to_string(),
            sig6(res.solution.eps_star),
            res.lower_factor.map_or("-".into(), sig6),
            res.lower_factor.map_or("-".into(), |f| sig6(res.rho / f)),
        ]);
        items.push(json!({
            "eps": eps,
            "rho": res.rho,
            "rho_max": res.rho_max,
            "degenerate": res.degenerate,
            "eps_star": res.solution.eps_star,
            "lower_factor": res.lower_factor,
            "detector": res.solution.detector,
        }));
    }
    text.push_str(&table(
        &["eps", "rho", "rho_max", "degenerate", "eps_star", "factor", "rho_lower"],
        &table_rows,
    ));
    let mut r = Report::new(
        json!({ "spec_version": SPEC_VERSION, "task": "functional", "resolutions": items }),
        text,
    );
    r.flag(converged, || "a pair solve stopped before the gap tolerance".into());
    Ok(r)
}

pub fn pet_report(t: &PetTask, opts: &Options) -> Result<Report, Failure> {
    let spec = match (&t.spec, t.toy) {
        (Some(s), false) => s.clone(),
        (None, true) => toy_spec()?,
        _ => return Err(Failure::Validation("give exactly one of `toy: true` and `spec`".into())),
    };
    let plan = pet_plan(&spec, &opts.fw)?;
    let grid = |v: &[f64]| DMatrix::from_fn(spec.side, spec.side, |r, c| v[r * spec.side + c]);
    let (l1, l2) = (grid(&plan.lambda), grid(&plan.lambda_prime));
    let text = format!(
        "t_star={}\nH={}\nrisk_at_t_star={}\nlambda:\n{}lambda_prime:\n{}",
        sig6(plan.t_star),
        sig6(plan.h),
        sig6(plan.risk_at(plan.t_star)),
        matrix_table(&l1),
        matrix_table(&l2)
    );
    let det = plan.detector(plan.t_star);
    let mut r = Report::new(
        json!({
            "spec_version": SPEC_VERSION,
            "task": "pet",
            "t_star": plan.t_star,
            "h": plan.h,
            "lambda": plan.lambda,
            "lambda_prime": plan.lambda_prime,
            "detector_at_t_star": det,
        }),
        text,
    );
    r.files = vec![("lambda.csv".into(), matrix_csv(&l1)), ("lambda_prime.csv".into(), matrix_csv(&l2))];
    r.flag(plan.solution.converged, || format!("pair solver stopped with gap {:e}", plan.solution.gap));
    Ok(r)
}

pub fn simulate_report(spec: &SpecFile, t: &SimulateTask, opts: &Options) -> Result<Report, Failure> {
    let scheme = spec.scheme()?;
    if opts.reps == 0 {
        return Err(Failure::Validation("reps must be positive".into()));
    }
    let s = solve_pair(&PairProblem::new(scheme.clone(), spec.set(&t.x)?, spec.set(&t.y)?), &opts.fw)?;
    let mut table_rows = Vec::new();
    let mut reports = Vec::new();
    for (k, truth) in t.truths.iter().enumerate() {
        let sampler = ObsSampler::new(&scheme, &truth.mu)?;
        let (wrong, bound) = match truth.side {
            Side::X => (Decision::AcceptY, s.bounds[0]),
            Side::Y => (Decision::AcceptX, s.bounds[1]),
        };
        let rep = estimate_risk(
            |rng| matches!(decide(&s, &sampler.sample(rng)), Ok(d) if d == wrong),
            opts.reps,
            opts.seed,
            k as u64,
            Some(bound),
        );
        table_rows.push(vec![
            k.to_string(),
            truth.side.to_string(),
            rep.errors.to_string(),
            sig6(rep.rate),
            sig6(rep.ci.0),
            sig6(rep.ci.1),
            sig6(bound),
            rep.complies().to_string(),
        ]);
        reports.push(json!({ "truth": truth, "report": rep }));
    }
    let text = format!(
        "eps_star={}\nreps={} seed={}\n{}",
        sig6(s.eps_star),
        opts.reps,
        opts.seed,
        table(
            &["truth", "side", "errors", "rate", "ci_lo", "ci_hi", "bound", "complies"],
            &table_rows
        )
    );
    let mut r = Report::new(
        json!({
            "spec_version": SPEC_VERSION,
            "task": "simulate",
            "eps_star": s.eps_star,
            "reports": reports,
        }),
        text,
    );
    r.flag(s.converged, || format!("pair solver stopped with gap {:e}", s.gap));
    Ok(r)
}
