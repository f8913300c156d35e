//! Throughput and shift prediction: a uniform predictor interface, the
//! harmonic-mean and moving-average baselines, a bridge to an external
//! learned predictor, and the evaluation metric suite.

mod baseline;
mod external;
mod metrics;

pub use baseline::{derive_shifts_from_throughput, predict_hm, predict_ma, HarmonicMean, MovingAverage, HM_FLOOR_MBPS};
pub use external::{
    truth_prediction_lines, write_prediction_file, BatchLine, PipePredictor, PredictionFile,
    WireRequest, WireResponse, WireSample, DEFAULT_TIMEOUT,
};
pub use metrics::{eval_predictor, evaluate_on_trace, MetricsAccumulator, PredictorMetrics, MAPE_FLOOR_MBPS};

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::NetworkSample;

pub const DEFAULT_LOOKBACK: usize = 60;
pub const DEFAULT_LOOKAHEAD: usize = 15;
pub const DEFAULT_CONTEXT: usize = 15;
pub const DEFAULT_WINDOW: usize = 5;

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("invalid prediction request: {0}")]
    InvalidRequest(String),
    #[error("predictor did not answer within {0:?}")]
    Timeout(Duration),
    #[error("predictor protocol error: {0}")]
    Protocol(String),
    #[error("predictor unavailable: {0}")]
    Unavailable(String),
    #[error("prediction file has no entry for trace {trace_id} at t={t}")]
    Coverage { trace_id: String, t: u64 },
    #[error("metric inputs: {0}")]
    Metrics(String),
}

impl PredictError {
    /// Whether the controller should fall back to the harmonic-mean baseline
    /// rather than abort.
    pub fn is_fallback(&self) -> bool {
        !matches!(self, PredictError::InvalidRequest(_) | PredictError::Metrics(_))
    }
}

/// Lookback observations plus the shape of the forecast wanted.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRequest {
    /// Last `m` observations, oldest first.
    pub samples: Vec<NetworkSample>,
    pub m: usize,
    pub n: usize,
    pub p: usize,
    pub delta: f64,
    /// Trace the samples came from; keys batch prediction files.
    pub trace_id: Option<String>,
}

impl PredictionRequest {
    pub fn new(samples: Vec<NetworkSample>, n: usize, delta: f64) -> Self {
        let m = samples.len();
        Self {
            samples,
            m,
            n,
            p: DEFAULT_CONTEXT.min(m.max(1)),
            delta,
            trace_id: None,
        }
    }

    pub fn with_trace_id(mut self, trace_id: impl Into<String>) -> Self {
        self.trace_id = Some(trace_id.into());
        self
    }

    pub fn validate(&self) -> Result<(), PredictError> {
        if self.samples.is_empty() {
            return Err(PredictError::InvalidRequest("empty lookback window".into()));
        }
        if self.n == 0 {
            return Err(PredictError::InvalidRequest("lookahead must be at least 1".into()));
        }
        if self.p == 0 || self.p > self.m {
            return Err(PredictError::InvalidRequest(format!(
                "context length p={} must be in [1, m={}]",
                self.p, self.m
            )));
        }
        if !(self.delta > 0.0) {
            return Err(PredictError::InvalidRequest(format!(
                "shift threshold must be positive, got {}",
                self.delta
            )));
        }
        Ok(())
    }

    pub fn last_throughput(&self) -> Option<f64> {
        self.samples.last().map(|s| s.throughput)
    }

    /// Timestamp of the newest observation, the decision timestamp.
    pub fn decision_time(&self) -> Option<u64> {
        self.samples.last().map(|s| s.timestamp)
    }
}

/// `n` throughput forecasts (Mbps) and `n` shift indicators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub throughputs: Vec<f64>,
    pub shifts: Vec<bool>,
    pub shift_probabilities: Option<Vec<f64>>,
}

impl PredictionResult {
    pub fn validate(&self, n: usize) -> Result<(), PredictError> {
        if self.throughputs.len() != n || self.shifts.len() != n {
            return Err(PredictError::Protocol(format!(
                "expected {n} steps, got {} throughputs and {} shifts",
                self.throughputs.len(),
                self.shifts.len()
            )));
        }
        if let Some(v) = self.throughputs.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(PredictError::Protocol(format!("invalid throughput {v}")));
        }
        if let Some(p) = &self.shift_probabilities {
            if p.len() != n {
                return Err(PredictError::Protocol(format!(
                    "expected {n} probabilities, got {}",
                    p.len()
                )));
            }
            if let Some(v) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(PredictError::Protocol(format!("probability {v} out of [0, 1]")));
            }
        }
        Ok(())
    }
}

pub trait Predictor: Send {
    fn name(&self) -> String;

    fn predict(&mut self, req: &PredictionRequest) -> Result<PredictionResult, PredictError>;
}

/// Where an external predictor lives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    /// A long-running process speaking newline-delimited JSON on stdio.
    Command(Vec<String>),
    /// A JSON-lines file of precomputed responses.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PredictorKind {
    HarmonicMean { window: usize },
    MovingAverage { window: usize },
    External { endpoint: Endpoint },
}

impl Default for PredictorKind {
    fn default() -> Self {
        PredictorKind::HarmonicMean {
            window: DEFAULT_WINDOW,
        }
    }
}

impl PredictorKind {
    pub fn build(&self) -> Result<Box<dyn Predictor>, PredictError> {
        Ok(match self {
            PredictorKind::HarmonicMean { window } => Box::new(HarmonicMean::new(*window)?),
            PredictorKind::MovingAverage { window } => Box::new(MovingAverage::new(*window)?),
            PredictorKind::External {
                endpoint: Endpoint::Command(cmd),
            } => Box::new(PipePredictor::new(cmd.clone(), DEFAULT_TIMEOUT)?),
            PredictorKind::External {
                endpoint: Endpoint::File(path),
            } => Box::new(PredictionFile::load(path)?),
        })
    }

    /// Parses `hm`, `hm:10`, `ma`, `ma:3`, `file:<path>` or `cmd:<command
    /// line>`.
    pub fn parse(spec: &str) -> Result<Self, String> {
        let (head, rest) = match spec.split_once(':') {
            Some((h, r)) => (h, Some(r)),
            None => (spec, None),
        };
        let window = |r: Option<&str>| -> Result<usize, String> {
            match r {
                None => Ok(DEFAULT_WINDOW),
                Some(w) => match w.parse::<usize>() {
                    Ok(w) if w >= 1 => Ok(w),
                    _ => Err(format!("invalid window in predictor spec {spec:?}")),
                },
            }
        };
        match head {
            "hm" => Ok(PredictorKind::HarmonicMean { window: window(rest)? }),
            "ma" => Ok(PredictorKind::MovingAverage { window: window(rest)? }),
            "file" => Ok(PredictorKind::External {
                endpoint: Endpoint::File(PathBuf::from(rest.ok_or("file: needs a path")?)),
            }),
            "cmd" => {
                let parts: Vec<String> = rest
                    .ok_or("cmd: needs a command")?
                    .split_whitespace()
                    .map(str::to_owned)
                    .collect();
                if parts.is_empty() {
                    return Err("cmd: needs a command".into());
                }
                Ok(PredictorKind::External {
                    endpoint: Endpoint::Command(parts),
                })
            }
            _ => Err(format!("unknown predictor {spec:?}")),
        }
    }
}
