//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by mesh handling, assembly, solvers and the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh parse error at line {line}: {msg}")]
    MeshParse { line: usize, msg: String },

    #[error("invalid mesh: {0}")]
    MeshInvalid(String),

    #[error("mesh generation failed: {0}")]
    MeshGeneration(String),

    #[error("periodic pairing failed: {0}")]
    PeriodicPairing(String),

    #[error("boundary specification error: {0}")]
    BoundarySpec(String),

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("eigensolver failed: {0}")]
    EigenSolve(String),

    #[error("incompatible data: residual {residual:.3e} exceeds tolerance {tol:.3e} ({context})")]
    Incompatible {
        residual: f64,
        tol: f64,
        context: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
