use thiserror::Error;

use crate::eigensolver::PartialSolve;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("refusing dense operation: N = {n} exceeds limit {limit}")]
    TooLarge { n: usize, limit: usize },

    #[error("eigensolver did not converge after {} matrix-vector products ({} of {} pairs converged)",
        .0.report.matvecs, .0.converged, .0.pairs.len())]
    NoConvergence(Box<PartialSolve>),

    #[error("classification failed for index {index}: {msg}")]
    Classification { index: usize, msg: String },

    #[error("accidental degeneracy: {size} eigenvalues near {value} within tolerance")]
    AccidentalDegeneracy { value: f64, size: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
