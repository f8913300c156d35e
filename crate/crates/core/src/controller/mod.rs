//! Per-GOP decisions: shift-guided GOP lengths, horizon bitrate planning and
//! the baseline policies.

mod dp;
mod policies;

pub use dp::{
    brute_force_oracle, optimize_dp, quantization_bound, Plan, PlanInstance, Stage, StageOption,
    ORACLE_CAP, TIME_CELL_S,
};
pub use policies::{
    baseline_adarate, baseline_fixed, baseline_mpc, select_below, AdaRateController,
    Ablation, FixedController, MpcController, StarStreamController, MPC_HISTORY_GOPS,
};

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profiler::ProfileTable;
use crate::sim::SessionResult;
use crate::trace::{Bitrate, StreamFormat, GOP_LENGTH_CANDIDATES};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("planning failed: {0}")]
    Plan(String),
    #[error("profile lookup failed: {0}")]
    Profile(String),
    #[error("prediction failed: {0}")]
    Predict(#[from] crate::predictor::PredictError),
}

/// One committed GOP decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub gop_length: u32,
    pub bitrate: Bitrate,
    /// Predicted mean throughput for the GOP, Mbps.
    pub predicted_throughput: Option<f64>,
    /// Horizon objective of the plan this decision heads.
    pub objective: Option<f64>,
    pub gamma: f64,
    pub stall: bool,
}

impl Decision {
    pub fn fixed(gop_length: u32, bitrate: Bitrate) -> Self {
        Self {
            gop_length,
            bitrate,
            predicted_throughput: None,
            objective: None,
            gamma: 1.0,
            stall: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerParams {
    pub alpha: f64,
    pub beta: f64,
    /// Horizon in GOPs.
    pub horizon: usize,
    pub gop_candidates: Vec<u32>,
    pub bitrates: Vec<Bitrate>,
    /// Shift threshold in Mbps.
    pub delta: f64,
    /// Samples sent to the predictor.
    pub lookback: usize,
    /// Steps requested from the predictor.
    pub lookahead: usize,
    /// Quantize completion times to 10 ms cells in the DP.
    pub quantize: bool,
    pub stall_cap: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.02,
            horizon: 3,
            gop_candidates: GOP_LENGTH_CANDIDATES.to_vec(),
            bitrates: Bitrate::candidates(),
            delta: 2.5,
            lookback: crate::predictor::DEFAULT_LOOKBACK,
            lookahead: crate::predictor::DEFAULT_LOOKAHEAD,
            quantize: true,
            stall_cap: crate::sim::DEFAULT_STALL_CAP_S,
        }
    }
}

impl ControllerParams {
    pub fn validate(&self) -> Result<(), ControlError> {
        let bad = |m: &str| Err(ControlError::Params(m.into()));
        if !(self.alpha > 0.0) || !(self.beta > 0.0) {
            return bad("alpha and beta must be positive");
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if self.gop_candidates.is_empty() || self.gop_candidates.contains(&0) {
            return bad("GOP candidates must be non-empty and positive");
        }
        if self.bitrates.is_empty() {
            return bad("bitrate candidates must be non-empty");
        }
        if !(self.delta > 0.0) {
            return bad("delta must be positive");
        }
        if self.lookback == 0 || self.lookahead == 0 {
            return bad("lookback and lookahead must be positive");
        }
        Ok(())
    }

    fn sorted_bitrates(&self) -> Vec<Bitrate> {
        let mut b = self.bitrates.clone();
        b.sort();
        b.dedup();
        b
    }
}

/// GOP length from per-step shift indicators: the run of leading non-shift
/// steps, clipped to the candidate range; the longest candidate when no
/// shift is predicted at all. Returns the length and the steps it consumes.
pub fn select_gop_length(shifts: &[bool], candidates: &[u32]) -> (u32, usize) {
    let lo = candidates.iter().copied().min().unwrap_or(1);
    let hi = candidates.iter().copied().max().unwrap_or(lo);
    let l = match shifts.iter().position(|&s| s) {
        None => hi,
        Some(lead) => (lead as u32).clamp(lo, hi),
    };
    (l, l as usize)
}

/// Mean of `predicted[start..start + len]`, repeating the final prediction
/// past the end.
pub fn mean_prediction(predicted: &[f64], start: usize, len: usize) -> f64 {
    let last = *predicted.last().expect("non-empty prediction");
    let sum: f64 = (start..start + len)
        .map(|i| predicted.get(i).copied().unwrap_or(last))
        .sum();
    sum / len as f64
}

/// Largest candidate not above `limit`, or the smallest candidate.
fn fit_length(l: u32, limit: u32, candidates: &[u32]) -> u32 {
    let cap = l.min(limit);
    candidates
        .iter()
        .copied()
        .filter(|&c| c <= cap)
        .max()
        .unwrap_or_else(|| candidates.iter().copied().min().unwrap_or(cap))
}

/// GOP lengths and predicted throughputs for up to `horizon` GOPs.
///
/// Each later GOP starts at a boundary, so the shift at its own first step
/// is ignored before the rule is applied to the remaining window. With
/// `fixed_length`, every GOP has that length. Planning stops when the
/// remaining content runs out.
pub fn plan_horizon(
    predicted: &[f64],
    shifts: &[bool],
    candidates: &[u32],
    horizon: usize,
    remaining: u32,
    fixed_length: Option<u32>,
) -> Vec<(u32, f64)> {
    let mut out = Vec::with_capacity(horizon);
    let mut idx = 0usize;
    let mut left = remaining;
    for i in 0..horizon {
        if left == 0 {
            break;
        }
        let l = match fixed_length {
            Some(l) => l,
            None => {
                let mut window = shifts.get(idx..).unwrap_or(&[]).to_vec();
                if i > 0 {
                    if let Some(first) = window.first_mut() {
                        *first = false;
                    }
                }
                select_gop_length(&window, candidates).0
            }
        };
        let l = fit_length(l, left, candidates);
        out.push((l, mean_prediction(predicted, idx, l as usize)));
        idx += l as usize;
        left -= l.min(left);
    }
    out
}

/// DP stages for the planned GOPs of the pruned stream format, using the
/// profiled timing and γ-scaled accuracy.
pub fn build_stages(
    profile: &ProfileTable,
    format: StreamFormat,
    bitrates: &[Bitrate],
    plans: &[(u32, f64)],
    content_start: u32,
    gamma: f64,
) -> Result<Vec<Stage>, ControlError> {
    let mut start = content_start;
    plans
        .iter()
        .map(|&(l, throughput)| {
            let options = bitrates
                .iter()
                .map(|&b| {
                    let e = profile
                        .entry(format.with_bitrate(b), l)
                        .map_err(|e| ControlError::Profile(e.to_string()))?;
                    Ok(StageOption {
                        bitrate: b,
                        accuracy: crate::profiler::scaled_accuracy(gamma, e.accuracy),
                        encode: e.encode_delays.clone(),
                        sizes: e.frame_sizes.clone(),
                    })
                })
                .collect::<Result<Vec<_>, ControlError>>()?;
            let stage = Stage {
                gop_length: l,
                content_start: f64::from(start),
                throughput,
                options,
            };
            start += l;
            Ok(stage)
        })
        .collect()
}

/// Decision log: `timestamp, L, bitrate, predicted b̄, realized b̄, γ, Q,
/// objective`. `Q` is the backlog at decision time.
pub fn write_decision_log<W: Write>(result: &SessionResult, writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "timestamp",
        "gop_length",
        "bitrate_mbps",
        "predicted_throughput",
        "realized_throughput",
        "gamma",
        "queue",
        "objective",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let mut queue = 0.0;
    for g in &result.gops {
        let d = &g.decision;
        w.write_record([
            format!("{:.6}", g.t_prev),
            d.gop_length.to_string(),
            d.bitrate.mbps().to_string(),
            opt(d.predicted_throughput),
            format!("{:.6}", g.realized_throughput),
            format!("{:.6}", d.gamma),
            format!("{queue:.6}"),
            opt(d.objective),
        ])?;
        queue = g.queue;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const C: [u32; 5] = [1, 2, 3, 4, 5];

    #[test]
    fn gop_length_examples() {
        assert_eq!(select_gop_length(&[false, false, true], &C), (2, 2));
        assert_eq!(select_gop_length(&[true, false, false], &C), (1, 1));
        assert_eq!(select_gop_length(&[false; 15], &C), (5, 5));
        let mut s = vec![false; 15];
        s[9] = true;
        assert_eq!(select_gop_length(&s, &C).0, 5);
        assert_eq!(select_gop_length(&[], &C).0, 5);
    }

    #[test]
    fn worked_example_throughput() {
        let p = [4.0, 6.0, 11.0];
        let plans = plan_horizon(&p, &[false, false, true], &C, 1, 100, None);
        assert_eq!(plans, vec![(2, 5.0)]);
    }

    #[test]
    fn horizon_recursion_masks_boundary() {
        let mut s = vec![false; 15];
        s[2] = true;
        s[4] = true;
        let p: Vec<f64> = (0..15).map(f64::from).collect();
        let plans = plan_horizon(&p, &s, &C, 3, 100, None);
        assert_eq!(plans[0].0, 2);
        assert_eq!(plans[1].0, 2);
        assert_eq!(plans[0].1, 0.5);
        assert_eq!(plans[1].1, 2.5);
        // Steps 4.. hold a boundary shift then no more: longest GOP.
        assert_eq!(plans[2].0, 5);
    }

    #[test]
    fn horizon_extends_last_prediction_and_respects_content() {
        let p = [3.0; 4];
        let plans = plan_horizon(&p, &[false; 4], &C, 3, 100, None);
        assert_eq!(plans, vec![(5, 3.0), (5, 3.0), (5, 3.0)]);
        let plans = plan_horizon(&[2.0, 4.0], &[false; 2], &C, 3, 7, None);
        assert_eq!(plans, vec![(5, 18.0 / 5.0), (2, 4.0)]);
        let plans = plan_horizon(&[1.0, 2.0, 3.0, 4.0], &[true; 4], &C, 2, 100, Some(2));
        assert_eq!(plans, vec![(2, 1.5), (2, 3.5)]);
    }
}
