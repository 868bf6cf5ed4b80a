use thiserror::Error;

use crate::limits::BeamTrace;
use crate::rank::Metric;
use crate::types::RemovedSet;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure reported by a [`ValueFunction`](crate::ValueFunction) implementation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValueError {
    #[error("no value recorded for this subset")]
    MissingValue,
    #[error("unknown instance `{0}`")]
    UnknownInstance(String),
    #[error("model returned a non-finite output ({0})")]
    NonFinite(f64),
    #[error("model server: {0}")]
    Server(String),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvaluationFailure {
    #[error(transparent)]
    Value(#[from] ValueError),
    #[error("feature index {index} is out of range for {n} features")]
    InvalidSubset { index: usize, n: usize },
    #[error("value function is not deterministic: {first} then {second}")]
    NonDeterministic { first: f64, second: f64 },
}

/// A value-function query that failed, with the offending subset attached.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("evaluating instance `{instance_id}` with removed {removed}: {failure}")]
pub struct EvaluationError {
    pub instance_id: String,
    pub removed: RemovedSet,
    pub failure: EvaluationFailure,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid feature count {0}")]
    InvalidFeatureCount(usize),
    #[error("feature index {index} is out of range 1..={n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("not a permutation of 1..={n}: {reason}")]
    InvalidOrdering { n: usize, reason: String },
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite attribution score for feature {feature}")]
    NonFiniteScore { feature: usize },
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error("{n} features exceeds the exact computation cap of {cap}")]
    FeatureCountExceedsExactCap { n: usize, cap: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("limits did not stabilize before reaching beam size cap {max_beam}")]
    MaxBeamExceeded { max_beam: usize, trace: Box<BeamTrace> },
    #[error("degenerate limits [{lower}, {upper}]: normalized score is undefined")]
    DegenerateLimits { lower: f64, upper: f64 },
    #[error("need at least 2 items, got {0}")]
    TooFewItems(usize),
    #[error("rank correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),
    #[error("missing ranking cells: {}", format_cells(.0))]
    MissingCell(Vec<(String, Metric)>),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("instance `{instance_id}` is missing {total} subset record(s), first: {}", format_subsets(.first))]
    MissingSubsets {
        instance_id: String,
        total: usize,
        first: Vec<Vec<usize>>,
    },
    #[error("model server: {0}")]
    Server(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_cells(cells: &[(String, Metric)]) -> String {
    cells
        .iter()
        .map(|(s, m)| format!("({s}, {m})"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn format_subsets(subsets: &[Vec<usize>]) -> String {
    subsets
        .iter()
        .map(|s| format!("{s:?}"))
        .collect::<Vec<_>>()
        .join(" ")
}
