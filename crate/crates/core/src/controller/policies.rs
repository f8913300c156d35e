use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    build_stages, fit_length, mean_prediction, optimize_dp, plan_horizon, ControlError,
    ControllerParams, Decision, PlanInstance,
};
use crate::predictor::{
    predict_hm, PredictionRequest, PredictionResult, Predictor, DEFAULT_WINDOW, HM_FLOOR_MBPS,
};
use crate::profiler::{frames_uncertainty, update_gamma, GammaState, ProfileTable};
use crate::sim::{DecisionContext, DecisionSource, SimError};
use crate::trace::{Bitrate, NetworkSample, StreamFormat};

/// GOP length every baseline uses.
pub const BASELINE_GOP_S: u32 = 2;
/// GOPs of history behind the MPC baseline's harmonic mean.
pub const MPC_HISTORY_GOPS: usize = 5;

/// Largest candidate strictly below `estimate`; the smallest candidate when
/// none is.
pub fn select_below(estimate: f64, candidates: &[Bitrate]) -> Bitrate {
    candidates
        .iter()
        .copied()
        .filter(|b| b.mbps() < estimate)
        .max()
        .or_else(|| candidates.iter().copied().min())
        .expect("non-empty bitrate candidates")
}

/// Bitrate below the mean throughput of the pre-stream window.
pub fn baseline_fixed(prestream: &[f64], candidates: &[Bitrate]) -> Bitrate {
    if prestream.is_empty() {
        return select_below(f64::NEG_INFINITY, candidates);
    }
    let mean = prestream.iter().sum::<f64>() / prestream.len() as f64;
    select_below(mean, candidates)
}

/// Bitrate below the GOP's mean predicted throughput.
pub fn baseline_adarate(predicted: f64, candidates: &[Bitrate]) -> Bitrate {
    select_below(predicted, candidates)
}

fn to_sim(gop: usize) -> impl Fn(ControlError) -> SimError {
    move |e| SimError::Decision {
        gop,
        message: e.to_string(),
    }
}

fn throughputs(samples: &[NetworkSample]) -> Vec<f64> {
    samples.iter().map(|s| s.throughput).collect()
}

/// Inputs of one horizon plan shared by the MPC-style policies.
struct PlanRequest<'a> {
    params: &'a ControllerParams,
    profile: &'a ProfileTable,
    format: StreamFormat,
    now: f64,
    queue: f64,
    content_start: u32,
    plans: Vec<(u32, f64)>,
    gamma: f64,
}

fn plan_decision(req: PlanRequest<'_>) -> Result<Decision, ControlError> {
    let bitrates = req.params.sorted_bitrates();
    let stages = build_stages(
        req.profile,
        req.format,
        &bitrates,
        &req.plans,
        req.content_start,
        req.gamma,
    )?;
    let instance = PlanInstance {
        t0: req.now,
        q0: req.queue,
        frame_rate: f64::from(req.format.frame_rate),
        alpha: req.params.alpha,
        beta: req.params.beta,
        stall_cap: req.params.stall_cap,
        stages,
    };
    let plan = optimize_dp(&instance, req.params.quantize)?;
    let (gop_length, predicted) = req.plans[0];
    Ok(Decision {
        gop_length,
        bitrate: plan.bitrates[0],
        predicted_throughput: Some(predicted),
        objective: (!plan.stall).then_some(plan.objective),
        gamma: req.gamma,
        stall: plan.stall,
    })
}

/// MPC over `H` GOPs of 2 s with the harmonic mean of the last five GOPs'
/// worth of per-second throughput samples and no content adaptation.
/// Without any history it falls back to the lowest bitrate.
#[allow(clippy::too_many_arguments)]
pub fn baseline_mpc(
    params: &ControllerParams,
    profile: &ProfileTable,
    format: StreamFormat,
    history: &[f64],
    now: f64,
    queue: f64,
    content_start: u32,
    remaining: u32,
) -> Result<Decision, ControlError> {
    let length = fit_length(BASELINE_GOP_S, remaining, &params.gop_candidates);
    if history.is_empty() {
        return Ok(Decision::fixed(length, baseline_fixed(&[], &params.bitrates)));
    }
    let window = MPC_HISTORY_GOPS * BASELINE_GOP_S as usize;
    let start = history.len().saturating_sub(window);
    let (count, inv_sum) = history[start..]
        .iter()
        .fold((0usize, 0.0f64), |(n, s), &b| (n + 1, s + 1.0 / b.max(HM_FLOOR_MBPS)));
    let hm = count as f64 / inv_sum;
    let plans = plan_horizon(
        &[hm],
        &[],
        &params.gop_candidates,
        params.horizon,
        remaining,
        Some(length),
    );
    plan_decision(PlanRequest {
        params,
        profile,
        format,
        now,
        queue,
        content_start,
        plans,
        gamma: 1.0,
    })
}

/// Fixed bitrate chosen once from the pre-stream window; 2 s GOPs.
#[derive(Debug, Clone)]
pub struct FixedController {
    bitrates: Vec<Bitrate>,
    gop_candidates: Vec<u32>,
    chosen: Option<Bitrate>,
}

impl FixedController {
    pub fn new(params: &ControllerParams) -> Self {
        Self {
            bitrates: params.bitrates.clone(),
            gop_candidates: params.gop_candidates.clone(),
            chosen: None,
        }
    }
}

impl DecisionSource for FixedController {
    fn name(&self) -> String {
        "fixed".into()
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<Decision, SimError> {
        let bitrates = &self.bitrates;
        let b = *self
            .chosen
            .get_or_insert_with(|| baseline_fixed(&throughputs(ctx.prestream), bitrates));
        let l = fit_length(BASELINE_GOP_S, ctx.remaining, &self.gop_candidates);
        Ok(Decision::fixed(l, b))
    }
}

/// Queries `predictor`, falling back to the harmonic-mean baseline when the
/// backend is unreachable, slow or returns garbage.
fn predict_with_fallback(
    predictor: &mut dyn Predictor,
    req: &PredictionRequest,
    fallbacks: &mut usize,
) -> Result<PredictionResult, ControlError> {
    let outcome = predictor
        .predict(req)
        .and_then(|r| r.validate(req.n).map(|_| r));
    match outcome {
        Ok(r) => Ok(r),
        Err(e) if e.is_fallback() => {
            *fallbacks += 1;
            tracing::warn!(predictor = %predictor.name(), error = %e, "predictor failed, using harmonic mean");
            Ok(predict_hm(req, DEFAULT_WINDOW)?)
        }
        Err(e) => Err(e.into()),
    }
}

fn lookback_request(ctx: &DecisionContext<'_>, params: &ControllerParams) -> PredictionRequest {
    let start = ctx.observed.len().saturating_sub(params.lookback);
    PredictionRequest::new(ctx.observed[start..].to_vec(), params.lookahead, params.delta)
        .with_trace_id(ctx.trace_id)
}

/// Largest bitrate below the predicted mean of the next 2 s GOP.
pub struct AdaRateController {
    params: ControllerParams,
    predictor: Box<dyn Predictor>,
    fallbacks: usize,
}

impl AdaRateController {
    pub fn new(params: ControllerParams, predictor: Box<dyn Predictor>) -> Self {
        Self {
            params,
            predictor,
            fallbacks: 0,
        }
    }

    pub fn fallbacks(&self) -> usize {
        self.fallbacks
    }
}

impl DecisionSource for AdaRateController {
    fn name(&self) -> String {
        "adarate".into()
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<Decision, SimError> {
        let l = fit_length(BASELINE_GOP_S, ctx.remaining, &self.params.gop_candidates);
        if ctx.observed.is_empty() {
            return Ok(Decision::fixed(l, baseline_fixed(&[], &self.params.bitrates)));
        }
        let req = lookback_request(ctx, &self.params);
        let r = predict_with_fallback(self.predictor.as_mut(), &req, &mut self.fallbacks)
            .map_err(to_sim(ctx.gop_index))?;
        let predicted = mean_prediction(&r.throughputs, 0, l as usize);
        Ok(Decision {
            predicted_throughput: Some(predicted),
            ..Decision::fixed(l, baseline_adarate(predicted, &self.params.bitrates))
        })
    }
}

/// The MPC baseline as a decision source.
pub struct MpcController {
    params: ControllerParams,
    profile: Arc<ProfileTable>,
    format: StreamFormat,
}

impl MpcController {
    pub fn new(params: ControllerParams, profile: Arc<ProfileTable>, format: StreamFormat) -> Self {
        Self {
            params,
            profile,
            format,
        }
    }
}

impl DecisionSource for MpcController {
    fn name(&self) -> String {
        "mpc".into()
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<Decision, SimError> {
        baseline_mpc(
            &self.params,
            &self.profile,
            self.format,
            &throughputs(ctx.observed),
            ctx.now,
            ctx.queue,
            ctx.content_start,
            ctx.remaining,
        )
        .map_err(to_sim(ctx.gop_index))
    }
}

/// Ablation switches. Swapping the predictor for another backend is done by
/// constructing the controller with a different [`Predictor`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// Keep γ at 1.
    pub freeze_gamma: bool,
    /// Use this GOP length instead of the shift rule.
    pub fixed_gop: Option<u32>,
}

/// Shift-guided GOP lengths, content-aware accuracy and horizon planning.
pub struct StarStreamController {
    params: ControllerParams,
    profile: Arc<ProfileTable>,
    format: StreamFormat,
    predictor: Box<dyn Predictor>,
    ablation: Ablation,
    gamma: GammaState,
    fallbacks: usize,
}

impl StarStreamController {
    pub fn new(
        params: ControllerParams,
        profile: Arc<ProfileTable>,
        format: StreamFormat,
        predictor: Box<dyn Predictor>,
        ablation: Ablation,
    ) -> Result<Self, ControlError> {
        params.validate()?;
        Ok(Self {
            params,
            profile,
            format,
            predictor,
            ablation,
            gamma: GammaState::default(),
            fallbacks: 0,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.gamma
    }

    pub fn fallbacks(&self) -> usize {
        self.fallbacks
    }

    /// Re-estimates γ from the compact model's detections on the most recent
    /// probe window of captured content.
    fn refresh_gamma(&mut self, ctx: &DecisionContext<'_>) {
        if self.ablation.freeze_gamma || !self.gamma.is_due(ctx.now) {
            return;
        }
        let captured = ctx.now.min(f64::from(ctx.video.duration()));
        let from = (captured - self.gamma.probe_length).max(0.0);
        if let Some(frames) = ctx.video.detections_in(from, captured) {
            if !frames.is_empty() {
                update_gamma(&mut self.gamma, frames_uncertainty(frames), self.profile.uncertainty);
            }
        }
        self.gamma.last_update = Some(ctx.now);
    }

    /// One decision cycle for the GOP starting at `ctx.content_start`.
    pub fn step(&mut self, ctx: &DecisionContext<'_>) -> Result<Decision, ControlError> {
        self.refresh_gamma(ctx);
        let gamma = if self.ablation.freeze_gamma {
            1.0
        } else {
            self.gamma.gamma
        };
        let candidates = &self.params.gop_candidates;
        if ctx.observed.is_empty() {
            let max = candidates.iter().copied().max().unwrap_or(1);
            let l = fit_length(self.ablation.fixed_gop.unwrap_or(max), ctx.remaining, candidates);
            return Ok(Decision::fixed(l, baseline_fixed(&[], &self.params.bitrates)));
        }
        let req = lookback_request(ctx, &self.params);
        let prediction = predict_with_fallback(self.predictor.as_mut(), &req, &mut self.fallbacks)?;
        let plans = plan_horizon(
            &prediction.throughputs,
            &prediction.shifts,
            candidates,
            self.params.horizon,
            ctx.remaining,
            self.ablation.fixed_gop,
        );
        plan_decision(PlanRequest {
            params: &self.params,
            profile: &self.profile,
            format: self.format,
            now: ctx.now,
            queue: ctx.queue,
            content_start: ctx.content_start,
            plans,
            gamma,
        })
    }
}

impl DecisionSource for StarStreamController {
    fn name(&self) -> String {
        "starstream".into()
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<Decision, SimError> {
        self.step(ctx).map_err(to_sim(ctx.gop_index))
    }
}
