use thiserror::Error;

/// Errors produced by the solver pipeline.
///
/// The CLI maps these onto its exit-code contract: configuration and usage
/// problems are exit 1, mathematical gate failures (a violated invertibility
/// or positivity assumption, or a blow-up) are exit 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config parse error: {0}")]
    Parse(String),

    #[error("{0}")]
    Validation(String),

    /// A solvability assumption failed at a specific time.
    #[error("Assumption {assumption} violated at t={t}: {detail}")]
    Gate {
        assumption: &'static str,
        t: f64,
        detail: String,
    },

    /// A trajectory left the finite range (blow-up guard).
    #[error("nonfinite value in {what} at t={t} (last valid t={last_valid})")]
    NonFinite {
        what: &'static str,
        t: f64,
        last_valid: f64,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
