use super::{PredictError, PredictionRequest, PredictionResult, Predictor};

/// Zero observations are raised to this before taking a harmonic mean.
pub const HM_FLOOR_MBPS: f64 = 0.01;

/// Per-step shifts of a forecast: the first step is compared against the
/// last observation, later steps against the previous forecast.
pub fn derive_shifts_from_throughput(predicted: &[f64], last_observed: f64, delta: f64) -> Vec<bool> {
    let mut prev = last_observed;
    predicted
        .iter()
        .map(|&b| {
            let shift = (b - prev).abs() > delta;
            prev = b;
            shift
        })
        .collect()
}

fn tail(req: &PredictionRequest, window: usize) -> impl Iterator<Item = f64> + '_ {
    let start = req.samples.len().saturating_sub(window);
    req.samples[start..].iter().map(|s| s.throughput)
}

fn flat(req: &PredictionRequest, value: f64) -> PredictionResult {
    let throughputs = vec![value; req.n];
    let last = req.last_throughput().unwrap_or(value);
    PredictionResult {
        shifts: derive_shifts_from_throughput(&throughputs, last, req.delta),
        throughputs,
        shift_probabilities: None,
    }
}

/// Harmonic mean of the last `window` observations (fewer at cold start),
/// repeated for every step.
pub fn predict_hm(req: &PredictionRequest, window: usize) -> Result<PredictionResult, PredictError> {
    req.validate()?;
    let (count, inv_sum) = tail(req, window.max(1))
        .fold((0usize, 0.0f64), |(n, s), b| (n + 1, s + 1.0 / b.max(HM_FLOOR_MBPS)));
    Ok(flat(req, count as f64 / inv_sum))
}

/// Arithmetic mean of the last `window` observations, repeated for every
/// step.
pub fn predict_ma(req: &PredictionRequest, window: usize) -> Result<PredictionResult, PredictError> {
    req.validate()?;
    let (count, sum) = tail(req, window.max(1)).fold((0usize, 0.0f64), |(n, s), b| (n + 1, s + b));
    Ok(flat(req, sum / count as f64))
}

#[derive(Debug, Clone)]
pub struct HarmonicMean {
    window: usize,
}

impl HarmonicMean {
    pub fn new(window: usize) -> Result<Self, PredictError> {
        if window == 0 {
            return Err(PredictError::InvalidRequest("window must be at least 1".into()));
        }
        Ok(Self { window })
    }
}

impl Predictor for HarmonicMean {
    fn name(&self) -> String {
        format!("HM({})", self.window)
    }

    fn predict(&mut self, req: &PredictionRequest) -> Result<PredictionResult, PredictError> {
        predict_hm(req, self.window)
    }
}

#[derive(Debug, Clone)]
pub struct MovingAverage {
    window: usize,
}

impl MovingAverage {
    pub fn new(window: usize) -> Result<Self, PredictError> {
        if window == 0 {
            return Err(PredictError::InvalidRequest("window must be at least 1".into()));
        }
        Ok(Self { window })
    }
}

impl Predictor for MovingAverage {
    fn name(&self) -> String {
        format!("MA({})", self.window)
    }

    fn predict(&mut self, req: &PredictionRequest) -> Result<PredictionResult, PredictError> {
        predict_ma(req, self.window)
    }
}
