use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("reality condition violated at k = {k:?} (mismatch {mismatch:.3e})")]
    RealityViolation { k: [i32; 3], mismatch: f64 },

    #[error("field is not divergence-free at k = {k:?} (relative defect {defect:.3e})")]
    NotDivergenceFree { k: [i32; 3], defect: f64 },

    #[error("negative time {0}")]
    NegativeTime(f64),

    #[error("truncation mismatch: radius {left} vs {right}")]
    TruncationMismatch { left: u32, right: u32 },

    #[error("wavevector {0:?} lies outside the truncation")]
    OutsideTruncation([i32; 3]),

    #[error("target has content outside the working truncation")]
    TargetOutsideTruncation,

    #[error("field is not representable in the computed cone (residual {residual:.3e})")]
    NotRepresentable { residual: f64 },

    #[error("convex weights cannot be normalised (sum {sum})")]
    WeightOverflow { sum: f64 },

    #[error("solution blew up at t = {t} (V-norm {v_norm:.3e})")]
    BlowUp { t: f64, v_norm: f64 },

    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },

    #[error("oscillation budget exhausted on interval {interval}: best sup-deviation {best_error:.3e} at k = {best_k}")]
    OscillationBudgetExhausted {
        interval: usize,
        best_k: usize,
        best_error: f64,
    },

    #[error("cutoff budget exhausted: best endpoint mismatch {best_error:.3e} at k = {best_k}")]
    CutoffBudgetExhausted { best_k: usize, best_error: f64 },

    #[error("saturation chain of depth {depth} does not cover the base shell (covered fraction {covered_fraction:.3})")]
    SaturationInsufficient { depth: usize, covered_fraction: f64 },

    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("hypothesis failed: {0}")]
    HypothesisFailed(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("control signal has no analytic derivative: {0}")]
    NoDerivative(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
