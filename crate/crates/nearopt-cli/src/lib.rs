//! `nearopt` command line: reads a JSON problem spec, runs the requested
//! construction and prints a report.
//!
//! Exit codes: 0 success, 1 I/O failure while writing artifacts,
//! 2 invalid input, 3 infeasible problem, 4 result produced without
//! reaching the solver tolerance.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use nearopt::harness::DEFAULT_REPS;
use nearopt::models::ModelError;
use nearopt::multitest::MultiError;
use nearopt::pairtest::PairError;
use nearopt::schemes::SchemeError;
use nearopt::sets::SetError;
use nearopt::solver::{FwConfig, SolverError};

mod commands;
pub mod format;
pub mod spec;

pub use commands::SavedPair;
use commands::{Options, Report};
use spec::{SpecFile, Task};

#[derive(Debug, Clone, PartialEq)]
pub enum Failure {
    Validation(String),
    Infeasible(String),
    NoConvergence(String),
    Io(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Io(_) => 1,
            Failure::Validation(_) => 2,
            Failure::Infeasible(_) => 3,
            Failure::NoConvergence(_) => 4,
        }
    }

    fn with_code(code: i32, msg: String) -> Failure {
        match code {
            3 => Failure::Infeasible(msg),
            4 => Failure::NoConvergence(msg),
            _ => Failure::Validation(msg),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Validation(m) => write!(f, "invalid input: {m}"),
            Failure::Infeasible(m) => write!(f, "infeasible: {m}"),
            Failure::NoConvergence(m) => write!(f, "no convergence: {m}"),
            Failure::Io(m) => write!(f, "i/o: {m}"),
        }
    }
}

fn set_code(e: &SetError) -> i32 {
    match e {
        SetError::Infeasible => 3,
        SetError::IterationLimit => 4,
        _ => 2,
    }
}

fn solver_code(e: &SolverError) -> i32 {
    match e {
        SolverError::NonConvergence { .. } => 4,
        SolverError::Set { source, .. } => set_code(source),
        SolverError::Lp(s) => set_code(s),
        _ => 2,
    }
}

fn pair_code(e: &PairError) -> i32 {
    match e {
        PairError::EmptySet(_) | PairError::NoFinitePlan(_) => 3,
        PairError::Solver(s) => solver_code(s),
        _ => 2,
    }
}

fn multi_code(e: &MultiError) -> i32 {
    match e {
        MultiError::Solver(s) => solver_code(s),
        MultiError::Pair(p) => pair_code(p),
        _ => 2,
    }
}

fn model_code(e: &ModelError) -> i32 {
    match e {
        ModelError::Infeasible(_) => 3,
        ModelError::Set(s) => set_code(s),
        ModelError::Solver(s) => solver_code(s),
        ModelError::Pair(p) => pair_code(p),
        ModelError::Multi(m) => multi_code(m),
        _ => 2,
    }
}

macro_rules! failure_from {
    ($t:ty, $f:expr) => {
        impl From<$t> for Failure {
            fn from(e: $t) -> Failure {
                Failure::with_code($f(&e), e.to_string())
            }
        }
    };
}

failure_from!(SetError, set_code);
failure_from!(SolverError, solver_code);
failure_from!(PairError, pair_code);
failure_from!(MultiError, multi_code);
failure_from!(ModelError, model_code);
failure_from!(SchemeError, |_: &SchemeError| 2);

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Parser)]
#[command(name = "nearopt", version, about = "Near-optimal tests for composite hypotheses")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Problem spec (alternative to the positional argument).
    #[arg(long, global = true)]
    pub spec: Option<PathBuf>,
    /// Directory for result.json and CSV artifacts.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Monte Carlo replications.
    #[arg(long, global = true, default_value_t = DEFAULT_REPS)]
    pub reps: u64,
    /// Frank–Wolfe duality-gap tolerance.
    #[arg(long, global = true)]
    pub gap_tol: Option<f64>,
    #[arg(long, global = true)]
    pub max_iters: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimal detector and risk for two convex hypotheses.
    SolvePair {
        spec_file: Option<PathBuf>,
        /// Observations to classify with the constructed detector.
        #[arg(long)]
        obs: Option<PathBuf>,
    },
    /// Union, multiple-hypothesis and partition tests from pairwise detectors.
    Aggregate { spec_file: Option<PathBuf> },
    /// Trajectory length separating two Markov chains.
    MarkovPlan { spec_file: Option<PathBuf> },
    /// Detection rate profiles for a sensor network.
    SensorRates { spec_file: Option<PathBuf> },
    /// Resolution of a linear functional test.
    Resolve { spec_file: Option<PathBuf> },
    /// Empirical risks of a pair test by simulation.
    Simulate { spec_file: Option<PathBuf> },
    /// Observation time for the emission tomography test.
    PetPlan { spec_file: Option<PathBuf> },
    /// Classify observations with a saved solve-pair result.
    Decide {
        #[arg(long)]
        solution: PathBuf,
        #[arg(long)]
        obs: PathBuf,
    },
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Validation(format!("cannot read {}: {e}", path.display())))
}

fn load_spec(cli: &Cli, positional: &Option<PathBuf>) -> Result<SpecFile, Failure> {
    let path = positional
        .as_ref()
        .or(cli.spec.as_ref())
        .ok_or_else(|| Failure::Validation("no spec file given".into()))?;
    SpecFile::parse(&read(path)?)
}

fn options(cli: &Cli) -> Result<Options, Failure> {
    let mut fw = FwConfig::default();
    if let Some(t) = cli.gap_tol {
        fw.gap_tol = t;
    }
    if let Some(n) = cli.max_iters {
        fw.max_iters = n;
    }
    fw.validate()?;
    Ok(Options {
        fw,
        seed: cli.seed,
        reps: cli.reps,
    })
}

fn mismatch(command: &str, task: &Task) -> Failure {
    Failure::Validation(format!("{command} cannot run a {} task", task.name()))
}

fn build(cli: &Cli) -> Result<Report, Failure> {
    let opts = options(cli)?;
    match &cli.command {
        Command::Decide { solution, obs } => commands::decide_saved(&read(solution)?, &read(obs)?),
        Command::SolvePair { spec_file, obs } => {
            let spec = load_spec(cli, spec_file)?;
            let obs_text = obs.as_deref().map(read).transpose()?;
            match &spec.task {
                Task::Pair(t) => commands::solve_pair_report(&spec, t, &opts, obs_text.as_deref()),
                other => Err(mismatch("solve-pair", other)),
            }
        }
        Command::Aggregate { spec_file } => {
            let spec = load_spec(cli, spec_file)?;
            match &spec.task {
                Task::Union(t) => commands::union_report(&spec, t, &opts),
                Task::Multitest(t) => commands::multitest_report(&spec, t, &opts),
                Task::MultipleUnions(t) => commands::blocks_report(&spec, t, &opts),
                other => Err(mismatch("aggregate", other)),
            }
        }
        Command::MarkovPlan { spec_file } => match &load_spec(cli, spec_file)?.task {
            Task::Markov(t) => commands::markov_report(t),
            other => Err(mismatch("markov-plan", other)),
        },
        Command::SensorRates { spec_file } => match &load_spec(cli, spec_file)?.task {
            Task::Sensor(t) => commands::sensor_report(t, &opts),
            other => Err(mismatch("sensor-rates", other)),
        },
        Command::Resolve { spec_file } => match &load_spec(cli, spec_file)?.task {
            Task::Functional(t) => commands::resolve_report(t, &opts),
            other => Err(mismatch("resolve", other)),
        },
        Command::Simulate { spec_file } => {
            let spec = load_spec(cli, spec_file)?;
            match &spec.task {
                Task::Simulate(t) => commands::simulate_report(&spec, t, &opts),
                other => Err(mismatch("simulate", other)),
            }
        }
        Command::PetPlan { spec_file } => match &load_spec(cli, spec_file)?.task {
            Task::Pet(t) => commands::pet_report(t, &opts),
            other => Err(mismatch("pet-plan", other)),
        },
    }
}

fn emit(cli: &Cli, report: &Report) -> Result<(), Failure> {
    let pretty = serde_json::to_string_pretty(&report.json).expect("report serializes");
    match cli.format {
        Format::Json => println!("{pretty}"),
        Format::Table => print!("{}", report.text),
    }
    if let Some(dir) = &cli.out {
        let io = |e: std::io::Error| Failure::Io(format!("{}: {e}", dir.display()));
        fs::create_dir_all(dir).map_err(io)?;
        fs::write(dir.join("result.json"), pretty + "\n").map_err(io)?;
        for (name, body) in &report.files {
            fs::write(dir.join(name), body).map_err(io)?;
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let report = match build(&cli) {
        Ok(r) => r,
        Err(f) => {
            eprintln!("error: {f}");
            return f.code();
        }
    };
    if let Err(f) = emit(&cli, &report) {
        eprintln!("error: {f}");
        return f.code();
    }
    match &report.unconverged {
        Some(msg) => {
            eprintln!("warning: {msg}");
            4
        }
        None => 0,
    }
}
