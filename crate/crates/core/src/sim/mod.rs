//! Trace-driven replay of the capture → encode → send → decode → infer
//! pipeline.

mod analytic;
mod integrator;
mod session;

pub use analytic::{next_queue, simulate_gop_analytic, GopInputs, GopTiming};
pub use integrator::ThroughputIntegrator;
pub use session::{
    compute_metrics, simulate_session, write_gop_csv, CameraBuffer, DecisionContext,
    DecisionSource, Fidelity, FixedSchedule, FrameTiming, GopOutcome, SessionConfig,
    SessionResult, SessionSummary, DEFAULT_PRESTREAM_S, DEFAULT_STALL_CAP_S,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("link stalled: transfer from t={at:.3} s not finished within {cap} s")]
    Stall { at: f64, cap: f64 },
    #[error("causality violation: {0}")]
    Causality(String),
    #[error("invalid decision at GOP {gop}: {message}")]
    Decision { gop: usize, message: String },
    #[error("session has no GOPs")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
