use crate::model::Cell;

/// Errors raised by the simulator, the learner and the exact solver.
#[derive(Debug, thiserror::Error, PartialEq)]
pub enum Error {
    /// A configuration value violates one of its invariants.
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    /// The sensor transmit power cannot close the link even directly overhead.
    #[error("infeasible link: beta0*P/((2^(M/(B*tau))-1)*sigma^2) = {budget:.6e} m^2 is below h^2 = {altitude_sq:.6e} m^2")]
    InfeasibleLink { budget: f64, altitude_sq: f64 },
    /// A movement would leave the grid.
    #[error("move from ({},{}) leaves the {width}x{height} grid", .from.col, .from.row)]
    OutOfBounds { from: Cell, width: u32, height: u32 },
    /// A masked or otherwise illegal action was submitted to the environment.
    #[error("invalid action index {index}: {reason}")]
    InvalidAction { index: usize, reason: String },
    /// `step` was called on a state that already terminated.
    #[error("episode already terminated")]
    EpisodeOver,
    /// Input vector length does not match the network's input layer.
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    /// Two networks with different layer sizes were combined.
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    /// No action is allowed by the mask.
    #[error("empty action mask")]
    EmptyMask,
    /// Training loss became NaN or infinite.
    #[error("non-finite loss {loss} at gradient step {step}")]
    Diverged { loss: f64, step: u64 },
    /// The exact solver's state-space estimate exceeds the configured limit.
    #[error("state space too large: estimated {estimate} states exceeds limit {limit}")]
    StateSpaceTooLarge { estimate: u128, limit: u128 },
    /// The value table has no entry for a state visited during a rollout.
    #[error("value table has no entry for the state at slot {slot}")]
    MissingState { slot: u32 },
    /// A checkpoint or value-table container could not be decoded.
    #[error("bad container: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
