use thiserror::Error;

use crate::frames::FrameTag;

#[derive(Debug, Error)]
pub enum FdcError {
    #[error("frame mismatch: expected {expected:?}, found {found:?}")]
    FrameMismatch { expected: FrameTag, found: FrameTag },

    #[error("degenerate orbital elements: {0}")]
    DegenerateElements(String),

    #[error("unbound orbit (e = {0}) is not supported")]
    Unbound(f64),

    #[error("singularity: {0}")]
    Singularity(String),

    #[error("ephemeris evaluation failed at t = {t}: {reason}")]
    Ephemeris { t: f64, reason: String },

    #[error("integration failed at t = {t}: {reason}")]
    Integration { t: f64, reason: String },

    #[error("segment {segment} failed: {source}")]
    Segment {
        segment: usize,
        #[source]
        source: Box<FdcError>,
    },

    #[error("requested span exceeds propagated interval: {0}")]
    SpanExceeded(String),

    #[error("invalid signal: {0}")]
    InvalidSignal(String),

    #[error("singular matrix ({what}), condition estimate {cond:e}")]
    SingularMatrix { what: String, cond: f64 },

    #[error("refinement of component {component} did not converge (residual {residual:e})")]
    RefineFailed { component: usize, residual: f64 },

    #[error("peak identity lost: {0}")]
    PeakLost(String),

    #[error("corrector did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl FdcError {
    /// True for errors caused by user input rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, FdcError::Config(_) | FdcError::FrameMismatch { .. })
    }
}

pub type Result<T> = std::result::Result<T, FdcError>;
