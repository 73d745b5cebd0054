//! Error taxonomy shared by every module.
//!
//! The variants separate concerns the command-line layer maps to distinct
//! exit codes: model/configuration problems, numerical failures (something
//! did not converge or a truncation was too small), and estimators that ran
//! fine but produced no usable data.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// The model description itself is invalid (bad probabilities, ragged
    /// dimensions, malformed file). The message names the offending part.
    #[error("invalid model: {0}")]
    Model(String),

    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative scheme hit its iteration cap before meeting tolerance.
    #[error("{what}: no convergence after {iterations} iterations (residual {residual:.3e}, tolerance {tolerance:.3e})")]
    NoConvergence {
        what: &'static str,
        iterations: u64,
        residual: f64,
        tolerance: f64,
    },

    /// A cone projection received a vector that maps to zero.
    #[error("degenerate projection: {0}")]
    DegenerateProjection(String),

    /// The truncated state space was too small for the requested accuracy.
    #[error("truncation too small: {detail} (truncation {truncation})")]
    TruncationTooSmall { truncation: usize, detail: String },

    /// A configured resource cap would be exceeded.
    #[error("resource limit: {0}")]
    ResourceLimit(String),

    /// An estimator finished but has nothing to report (for example, no
    /// surviving trajectory in a conditional-law sample).
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A simulated population exceeded the per-step particle budget, which
    /// for a subcritical model indicates a misconfigured (supercritical) one.
    #[error("population overflow at step {step}: {particles} particles exceed the budget of {budget}")]
    PopulationOverflow {
        step: usize,
        particles: u64,
        budget: u64,
    },

    /// A trajectory of the size-biased chain left the truncated window.
    #[error("trajectory escaped the truncated window at step {step} from a state with untracked mass {leak:.3e}")]
    TruncationEscape { step: usize, leak: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
