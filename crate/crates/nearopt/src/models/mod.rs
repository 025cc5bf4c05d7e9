//! Builders and planners for concrete testing problems.

pub mod markov;
pub mod channels;
pub mod functional;
pub mod pet;
pub mod sensor;

use thiserror::Error;

use crate::multitest::MultiError;
use crate::pairtest::PairError;
use crate::schemes::SchemeError;
use crate::sets::SetError;
use crate::solver::SolverError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("no admissible parameter: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Set(#[from] SetError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Pair(#[from] PairError),
    #[error(transparent)]
    Multi(#[from] MultiError),
}
