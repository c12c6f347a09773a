use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("domain violation: {0}")]
    Domain(String),

    #[error("zero time step: the short-time kernel and action are singular at t = t0")]
    ZeroTimeStep,

    #[error("caustic: |sin(omega t)| = {sin:.3e} at t = {t}")]
    Caustic { t: f64, sin: f64 },

    #[error("kernel oscillation unresolved: phase step {phase_step:.3} rad exceeds pi; smallest admissible |dt| for this grid is {min_dt:.6e}")]
    Unresolved { phase_step: f64, min_dt: f64 },

    #[error("shooting did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("every grid point is masked (density below the node threshold)")]
    AllMasked,

    #[error("norm drift {drift:.3e} exceeds bound {bound:.3e} at slice {slice}")]
    NormDrift { slice: usize, drift: f64, bound: f64 },

    #[error("grid too coarse: {0}")]
    Underresolved(String),

    #[error("integration blew up at t = {t}")]
    BlowUp { t: f64 },

    #[error("algorithm check failed: derivative mismatch {mismatch:.3e} exceeds {tol:.1e}")]
    AlgorithmCheck { mismatch: f64, tol: f64 },

    #[error("subinterval {index} failed: {source}")]
    Subinterval {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("not enough usable samples: need {needed}, have {have}")]
    TooFewSamples { needed: usize, have: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}
