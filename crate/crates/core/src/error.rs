use thiserror::Error;

/// Errors raised by the selection policies.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SelectionError {
    #[error("invalid budget: k = {k} exceeds dimension {dim}")]
    InvalidBudget { k: usize, dim: usize },
    #[error("magnitude slots k_m = {k_m} exceed budget k = {k}")]
    InvalidSplit { k: usize, k_m: usize },
    #[error("length mismatch: {what} has length {got}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
}

/// Errors raised while building or querying the staleness Markov chain.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarkovError {
    #[error("infeasible exchange model: {0}")]
    InfeasibleModel(String),
    #[error("k_A = 0: staleness is unbounded, no distribution exists")]
    UnboundedStaleness,
    #[error("steady-state solver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("transition matrix row {row} sums to {sum}, not 1")]
    NotStochastic { row: usize, sum: f64 },
    #[error("Monte-Carlo run too short: {rounds} rounds, need at least {min}")]
    TooFewRounds { rounds: usize, min: usize },
}

/// Errors raised by the channel simulation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("aggregation error: {0}")]
    Aggregation(String),
    #[error("invalid channel parameters: {0}")]
    InvalidParams(String),
    #[error("cardinality mismatch: mask selects {selected} entries, payload has {payload}")]
    Cardinality { selected: usize, payload: usize },
}

/// Errors raised by datasets, partitioning and the training loop.
#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("partition error: {0}")]
    Partition(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("divergence at round {round}: {what} is not finite")]
    Divergence { round: usize, what: &'static str },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Errors raised by the constant estimators and bound evaluators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("learning rate not admissible: {0}")]
    Admissibility(String),
}

/// Configuration validation failure; lists every violated key.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
pub struct ConfigError(pub Vec<String>);

/// Top-level error type used by the harness and the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Markov(#[from] MarkovError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
