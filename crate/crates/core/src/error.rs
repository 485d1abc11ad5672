use alloc::string::String;

/// Errors raised by model construction, theory evaluation and simulation.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("spike {alpha} is not above the phase transition (phi' = {phi1:e})")]
    BelowPhaseTransition { alpha: f64, phi1: f64 },

    #[error("not a correlation model: max |diag(R) - 1| = {max_deviation:e}")]
    NotACorrelationModel { max_deviation: f64 },

    #[error("spike separation violated: {0}")]
    Separation(String),

    #[error(
        "Stieltjes solver did not converge after {iterations} iterations (residual {residual:e})"
    )]
    Solver { residual: f64, iterations: usize },

    #[error("spike {spike} has multiplicity {mult}; only simple spikes are supported here")]
    Multiplicity { spike: usize, mult: usize },

    #[error("out of scope: {0}")]
    Scope(String),

    #[error("coordinate {index} has zero sample variance")]
    DegenerateVariance { index: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = core::result::Result<T, Error>;
