use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("self-edge on user `{0}`")]
    SelfEdge(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty cohort: no responding series with n_f in {lo}..={hi}")]
    EmptyCohort { lo: u32, hi: u32 },

    #[error("time-response functions do not share bin edges")]
    MismatchedBins,

    #[error("underdetermined fit: {params} parameters but only {bins} usable bins")]
    Underdetermined { params: usize, bins: usize },

    #[error("optimizer did not converge after {iterations} iterations (best objective {best_value:e} at {best_point:?})")]
    NoConvergence {
        iterations: usize,
        best_point: Vec<f64>,
        best_value: f64,
    },

    #[error("probability {value} outside [0, 1)")]
    ProbabilityOutOfRange { value: f64 },

    #[error("{n_e} exposures exceeds the brute-force limit of {limit}; use the generating-function path")]
    TooManyExposures { n_e: usize, limit: usize },

    #[error("enhancement factor must be non-negative, got f({n}) = {value}")]
    NegativeEnhancement { n: usize, value: f64 },

    #[error("no enhancement factor for n_e = {0}")]
    MissingEnhancement(usize),

    #[error("all visibilities are zero; ratio undefined")]
    ZeroVisibility,

    #[error("degenerate calibration curve: {0}")]
    DegenerateCurve(String),

    #[error("no sign change of the likelihood gradient for n_e = {n_e}: g({lo:e}) = {g_lo:e}, g({hi:e}) = {g_hi:e}")]
    NoRootInBracket {
        n_e: u32,
        lo: f64,
        hi: f64,
        g_lo: f64,
        g_hi: f64,
    },

    #[error("infeasible graph spec: {0}")]
    InfeasibleGraph(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
