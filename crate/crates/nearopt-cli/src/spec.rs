//! Problem-spec files: a versioned JSON document naming a task, an
//! observation scheme, named hypothesis sets and task parameters.

use std::collections::BTreeMap;

use nearopt::models::functional::FunctionalSpec;
use nearopt::models::pet::PetSpec;
use nearopt::models::sensor::{DetectionSpec, SensorCase};
use nearopt::multitest::AggMode;
use nearopt::pairtest::{ParamSet, Side};
use nearopt::schemes::{ProductScheme, SchemeFactor};
use nearopt::sets::PolytopeSpec;
use serde::{Deserialize, Serialize};

use crate::Failure;

pub const SPEC_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
pub struct SpecFile {
    pub spec_version: u32,
    #[serde(default)]
    pub scheme: Vec<SchemeFactor>,
    #[serde(default)]
    pub sets: BTreeMap<String, ParamSet>,
    #[serde(flatten)]
    pub task: Task,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "task", rename_all = "kebab-case")]
pub enum Task {
    Pair(PairTask),
    Union(UnionTask),
    Multitest(MultiTask),
    MultipleUnions(BlocksTask),
    Markov(MarkovTask),
    Sensor(SensorTask),
    Functional(FunctionalTask),
    Pet(PetTask),
    Simulate(SimulateTask),
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Pair(_) => "pair",
            Task::Union(_) => "union",
            Task::Multitest(_) => "multitest",
            Task::MultipleUnions(_) => "multiple-unions",
            Task::Markov(_) => "markov",
            Task::Sensor(_) => "sensor",
            Task::Functional(_) => "functional",
            Task::Pet(_) => "pet",
            Task::Simulate(_) => "simulate",
        }
    }
}

fn default_targets() -> Vec<f64> {
    vec![0.1, 0.05, 0.01, 0.001]
}

#[derive(Debug, Clone, Deserialize)]
pub struct PairTask {
    pub x: String,
    pub y: String,
    /// Risks for the repeated-observation table.
    #[serde(default = "default_targets")]
    pub targets: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct UnionTask {
    pub xs: Vec<String>,
    pub ys: Vec<String>,
    #[serde(default)]
    pub mode: AggMode,
}

#[derive(Debug, Clone, Deserialize)]
pub struct MultiTask {
    pub hypotheses: Vec<String>,
    /// Pairs `(i, j)` whose confusion is not an error.
    #[serde(default)]
    pub close: Vec<(usize, usize)>,
    /// Per-hypothesis weights; excludes `close`.
    #[serde(default)]
    pub importance: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct BlocksTask {
    pub hypotheses: Vec<String>,
    pub blocks: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ChainModel {
    /// M/M/s/s+b queue with arrival rate `lambda`; the nominal chain has
    /// service rate `mu`, each alternative its own.
    Queue {
        lambda: f64,
        mu: f64,
        servers: usize,
        buffer: usize,
        alternatives: Vec<f64>,
    },
    /// Column-stochastic matrices given row by row.
    Explicit {
        nominal: Vec<Vec<f64>>,
        alternatives: Vec<Vec<Vec<f64>>>,
    },
}

fn default_markov_target() -> f64 {
    0.01
}

fn default_k_cap() -> usize {
    100_000
}

#[derive(Debug, Clone, Deserialize)]
pub struct MarkovTask {
    pub model: ChainModel,
    /// Initial distributions; the whole simplex when absent.
    #[serde(default)]
    pub initial: Option<PolytopeSpec>,
    #[serde(default = "default_markov_target")]
    pub target: f64,
    #[serde(default = "default_k_cap")]
    pub k_cap: usize,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SensorTask {
    pub case: SensorCase,
    pub detection: DetectionSpec,
    #[serde(default)]
    pub rel_tol: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct FunctionalTask {
    pub functional: FunctionalSpec,
    pub eps: Vec<f64>,
    #[serde(default)]
    pub rel_tol: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct PetTask {
    /// Use the shipped 8×8 ring instance.
    #[serde(default)]
    pub toy: bool,
    #[serde(default)]
    pub spec: Option<PetSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Truth {
    pub side: Side,
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SimulateTask {
    pub x: String,
    pub y: String,
    pub truths: Vec<Truth>,
}

impl SpecFile {
    pub fn parse(text: &str) -> Result<SpecFile, Failure> {
        let spec: SpecFile =
            serde_json::from_str(text).map_err(|e| Failure::Validation(format!("spec file: {e}")))?;
        if spec.spec_version != SPEC_VERSION {
            return Err(Failure::Validation(format!(
                "spec_version {} is not supported (expected {SPEC_VERSION})",
                spec.spec_version
            )));
        }
        Ok(spec)
    }

    pub fn scheme(&self) -> Result<ProductScheme, Failure> {
        if self.scheme.is_empty() {
            return Err(Failure::Validation(format!("task {} needs a scheme", self.task.name())));
        }
        Ok(ProductScheme::new(self.scheme.clone())?)
    }

    pub fn set(&self, name: &str) -> Result<ParamSet, Failure> {
        self.sets
            .get(name)
            .cloned()
            .ok_or_else(|| Failure::Validation(format!("set {name:?} is not defined")))
    }

    pub fn sets_named(&self, names: &[String]) -> Result<Vec<ParamSet>, Failure> {
        names.iter().map(|n| self.set(n)).collect()
    }
}
