use serde::{Deserialize, Serialize};

use super::{PredictError, PredictionRequest, Predictor};
use crate::trace::NetworkTrace;

/// Floor on `|truth|` in the MAPE denominator.
pub const MAPE_FLOOR_MBPS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorMetrics {
    pub mae: f64,
    pub rmse: f64,
    /// Percent.
    pub mape: f64,
    /// NaN when the truth has zero variance.
    pub r2: f64,
    pub shift_accuracy: f64,
    pub shift_f1: f64,
    pub samples: usize,
}

pub fn eval_predictor(
    predicted: &[f64],
    truth: &[f64],
    predicted_shifts: &[bool],
    true_shifts: &[bool],
) -> Result<PredictorMetrics, PredictError> {
    let mut acc = MetricsAccumulator::default();
    acc.extend(predicted, truth, predicted_shifts, true_shifts)?;
    acc.finish()
}

/// Streams (prediction, truth) pairs and produces the metric record at the
/// end. R² needs the truth mean, so sums of `y` and `y²` are kept.
#[derive(Debug, Clone, Default)]
pub struct MetricsAccumulator {
    n: usize,
    abs_err: f64,
    sq_err: f64,
    pct_err: f64,
    y_sum: f64,
    y_sq_sum: f64,
    shift_n: usize,
    shift_match: usize,
    tp: usize,
    fp: usize,
    fn_: usize,
}

impl MetricsAccumulator {
    pub fn extend(
        &mut self,
        predicted: &[f64],
        truth: &[f64],
        predicted_shifts: &[bool],
        true_shifts: &[bool],
    ) -> Result<(), PredictError> {
        if predicted.len() != truth.len() || predicted_shifts.len() != true_shifts.len() {
            return Err(PredictError::Metrics(format!(
                "length mismatch: {} vs {} throughputs, {} vs {} shifts",
                predicted.len(),
                truth.len(),
                predicted_shifts.len(),
                true_shifts.len()
            )));
        }
        for (&p, &y) in predicted.iter().zip(truth) {
            let e = p - y;
            self.n += 1;
            self.abs_err += e.abs();
            self.sq_err += e * e;
            self.pct_err += e.abs() / y.abs().max(MAPE_FLOOR_MBPS);
            self.y_sum += y;
            self.y_sq_sum += y * y;
        }
        for (&p, &y) in predicted_shifts.iter().zip(true_shifts) {
            self.shift_n += 1;
            if p == y {
                self.shift_match += 1;
            }
            match (p, y) {
                (true, true) => self.tp += 1,
                (true, false) => self.fp += 1,
                (false, true) => self.fn_ += 1,
                (false, false) => {}
            }
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<PredictorMetrics, PredictError> {
        if self.n == 0 {
            return Err(PredictError::Metrics("no samples".into()));
        }
        let n = self.n as f64;
        let mean = self.y_sum / n;
        let sst = self.y_sq_sum - n * mean * mean;
        // Relative tolerance on SST since it is formed by cancellation.
        let r2 = if sst <= 1e-12 * self.y_sq_sum.max(f64::MIN_POSITIVE) {
            f64::NAN
        } else {
            1.0 - self.sq_err / sst
        };
        let f1_den = 2 * self.tp + self.fp + self.fn_;
        Ok(PredictorMetrics {
            mae: self.abs_err / n,
            rmse: (self.sq_err / n).sqrt(),
            mape: 100.0 * self.pct_err / n,
            r2,
            shift_accuracy: if self.shift_n == 0 {
                f64::NAN
            } else {
                self.shift_match as f64 / self.shift_n as f64
            },
            shift_f1: if f1_den == 0 {
                1.0
            } else {
                (2 * self.tp) as f64 / f1_den as f64
            },
            samples: self.n,
        })
    }
}

/// Sliding-window evaluation: at every decision index `t` with `m` samples
/// of history and `n` samples of future, predict and score all `n` steps.
pub fn evaluate_on_trace(
    predictor: &mut dyn Predictor,
    trace: &NetworkTrace,
    m: usize,
    n: usize,
    p: usize,
    acc: &mut MetricsAccumulator,
) -> Result<(), PredictError> {
    trace
        .ensure_covers(m, n)
        .map_err(|e| PredictError::InvalidRequest(e.to_string()))?;
    let throughputs = trace.throughputs();
    let shifts: Vec<bool> = trace.samples.iter().map(|s| s.shift).collect();
    for t in (m - 1)..(trace.len() - n) {
        let req = PredictionRequest {
            samples: trace.samples[t + 1 - m..=t].to_vec(),
            m,
            n,
            p,
            delta: trace.delta,
            trace_id: Some(trace.trace_id.clone()),
        };
        let result = predictor.predict(&req)?;
        result.validate(n)?;
        acc.extend(
            &result.throughputs,
            &throughputs[t + 1..=t + n],
            &result.shifts,
            &shifts[t + 1..=t + n],
        )?;
    }
    Ok(())
}
