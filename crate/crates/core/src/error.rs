use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent problem dimensions.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A precondition on the input data is violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A solver could not produce a usable answer (iteration cap, numerical
    /// breakdown, or an unexpected certificate).
    #[error("solver failure: {0}")]
    Solver(String),

    /// A problem that was expected to be solvable is infeasible. For the
    /// receding-horizon loop this indicates a recursive-feasibility breach
    /// and carries diagnostics.
    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// Malformed configuration file or unknown key.
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
