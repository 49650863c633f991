use thiserror::Error;

/// Errors produced by the estimation, analysis, and simulation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid node partition: {0}")]
    Partition(String),

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("graphs do not share one node partition")]
    PartitionMismatch,

    #[error("weight matrix does not match graph sparsity at ({row}, {col}): {reason}")]
    WeightSparsity { row: usize, col: usize, reason: &'static str },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("transition matrix row {row} sums to {sum}, expected 1")]
    NotStochastic { row: usize, sum: f64 },

    #[error("transition matrix has a negative or non-finite entry at ({row}, {col})")]
    InvalidProbability { row: usize, col: usize },

    #[error("Markov chain is not ergodic")]
    NotErgodic,

    #[error("state index {index} out of range for a chain with {states} states")]
    StateIndex { index: usize, states: usize },

    #[error("missing measurement for edge ({0}, {1})")]
    MissingMeasurement(usize, usize),

    #[error("lifted operator dimension {dim} exceeds the cap of {cap}; use the simulation-only workflow")]
    SizeCap { dim: usize, cap: usize },

    #[error("power iteration did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("system is not mean-square convergent (spectral radius {rho})")]
    NotConvergent { rho: f64 },

    #[error("spectral test (rho = {rho}) disagrees with reference reachability ({references_reach_all}) under the convergence hypotheses")]
    CriteriaDisagree { rho: f64, references_reach_all: bool },

    #[error("singular linear system {what} (estimated condition number {condition:e})")]
    Singular { what: &'static str, condition: f64 },

    #[error("invalid probability mass function: {0}")]
    InvalidPmf(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
