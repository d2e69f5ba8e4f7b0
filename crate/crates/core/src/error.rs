use thiserror::Error;

use crate::behavior::Alphabets;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid alphabets: every count must be at least 1 (got {0:?})")]
    InvalidAlphabets(Alphabets),
    #[error("alphabet mismatch: {0:?} vs {1:?}")]
    AlphabetMismatch(Alphabets, Alphabets),
    #[error("table length {got} does not match alphabets (expected {expected})")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("{what} index {index} out of range (< {bound})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("behavior failed validation: {0}")]
    InvalidBehavior(String),
    #[error("no samples for input pair (u={u}, v={v})")]
    EmptyCell { u: usize, v: usize },
    #[error("unsupported hierarchy level {0:?}")]
    UnsupportedLevel(String),
    #[error("word list is not canonical: {0}")]
    NonCanonicalWord(String),
    #[error("moment {0} is not represented in the moment matrix")]
    MissingMoment(String),
    #[error("malformed problem: {0}")]
    MalformedProblem(String),
    #[error("solver: {0}")]
    Solver(#[from] crate::sdp::SolveError),
    #[error("certificate rejected: slack min eigenvalue {min_eigenvalue:e} below -{margin:e}")]
    CertificateRejected { min_eigenvalue: f64, margin: f64 },
    #[error("certificate kind mismatch: expected {expected}, got {got}")]
    CertificateKind {
        expected: &'static str,
        got: &'static str,
    },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
