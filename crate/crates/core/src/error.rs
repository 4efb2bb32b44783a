use thiserror::Error;

/// Errors raised by the estimators, simulators and the ABC engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("point set is empty")]
    EmptyPointSet,
    #[error("point set has zero dimension")]
    ZeroDimension,
    #[error("row {row} has {found} coordinates, expected {expected}")]
    RaggedRows {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("non-finite coordinate at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("duplicate points: zero nearest-neighbour distance at query {index}")]
    DuplicatePoints { index: usize },
    #[error("neighbour order k = {k} requires more points (have {available})")]
    SampleTooSmall { k: usize, available: usize },
    #[error("invalid neighbour order k = {0}")]
    InvalidK(usize),
    #[error("invalid gamma {gamma}: need 0 < gamma < k = {k}")]
    InvalidGamma { gamma: f64, k: usize },
    #[error("invalid bandwidth {0}")]
    InvalidBandwidth(f64),
    #[error("degenerate sample: all points coincide")]
    DegenerateSample,
    #[error("Monte Carlo sample count {0} is below the minimum of 1000")]
    TooFewMonteCarloSamples(usize),
    #[error("parameter vector has length {found}, expected {expected}")]
    ThetaLength { expected: usize, found: usize },
    #[error("parameter outside model support: {0}")]
    OutOfSupport(String),
    #[error("invalid contamination spec: {0}")]
    InvalidContamination(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no proposal was accepted after {proposals} proposals at epsilon = {epsilon}")]
    EpsilonTooTight { proposals: usize, epsilon: f64 },
    #[error("every calibration draw failed ({0} attempted)")]
    CalibrationFailed(usize),
    #[error("empty sample")]
    EmptySample,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("run for gamma = {gamma} failed: {source}")]
    GridRun { gamma: f64, source: Box<Error> },
}

pub type Result<T> = std::result::Result<T, Error>;
