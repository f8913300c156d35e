use std::path::Path;
use std::sync::Arc;

use anyhow::Context;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use starstream::controller::{
    write_decision_log, AdaRateController, ControllerParams, FixedController, MpcController,
    StarStreamController,
};
use starstream::predictor::{Endpoint, PredictorKind};
use starstream::profiler::{build_profile, prune_configs, ProfileTable};
use starstream::sim::{
    simulate_session, write_gop_csv, DecisionSource, SessionConfig, SessionResult, SimError,
};
use starstream::trace::{load_video_trace_set, NetworkTrace, StreamFormat, VideoTraceSet};

use crate::config::{ControllerKind, RunConfig};
use crate::error::{Class, ClassExt, CliError, CliResult};
use crate::files::{require_existing, video_trace_dirs, write_atomic, write_json};

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Stall,
    Error,
}

/// Session means for one pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub accuracy: f64,
    pub normalized_tp: f64,
    pub ol_delay: f64,
    pub response_delay: f64,
}

impl PairMetrics {
    pub const NAMES: [&'static str; 4] = ["accuracy", "normalized_tp", "ol_delay", "response_delay"];

    pub fn values(&self) -> [f64; 4] {
        [self.accuracy, self.normalized_tp, self.ol_delay, self.response_delay]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRecord {
    pub video_id: String,
    pub trace_id: String,
    pub status: Status,
    pub message: Option<String>,
    pub metrics: Option<PairMetrics>,
    pub gops: usize,
    /// Decisions made on the harmonic-mean fallback.
    pub fallbacks: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub controller: ControllerKind,
    pub pairs: Vec<PairRecord>,
    pub stalled: usize,
    pub failed: usize,
    /// Means over the pairs that completed.
    pub mean: Option<PairMetrics>,
}

struct PreparedVideo {
    set: VideoTraceSet,
    profile: Arc<ProfileTable>,
    format: StreamFormat,
}

enum Source {
    Fixed(FixedController),
    AdaRate(AdaRateController),
    Mpc(MpcController),
    StarStream(StarStreamController),
}

impl Source {
    fn as_dyn(&mut self) -> &mut dyn DecisionSource {
        match self {
            Source::Fixed(c) => c,
            Source::AdaRate(c) => c,
            Source::Mpc(c) => c,
            Source::StarStream(c) => c,
        }
    }

    fn fallbacks(&self) -> usize {
        match self {
            Source::AdaRate(c) => c.fallbacks(),
            Source::StarStream(c) => c.fallbacks(),
            _ => 0,
        }
    }
}

fn prepare_video(dir: &Path, params: &ControllerParams) -> CliResult<PreparedVideo> {
    let set = load_video_trace_set(dir).class(Class::Validation)?;
    let profile = build_profile(&set, None).class(Class::Validation)?;
    let format = prune_configs(&profile, &params.bitrates).ok_or_else(|| {
        CliError::validation(format!("video {} has no usable stream format", set.video_id))
    })?;
    tracing::info!(video = %set.video_id, %format, "profiled");
    Ok(PreparedVideo {
        set,
        profile: Arc::new(profile),
        format,
    })
}

fn build_source(cfg: &RunConfig, kind: &PredictorKind, video: &PreparedVideo) -> CliResult<Source> {
    let params = cfg.params.clone();
    let predictor = || kind.build().class(Class::Protocol);
    Ok(match cfg.controller {
        ControllerKind::Fixed => Source::Fixed(FixedController::new(&params)),
        ControllerKind::Adarate => Source::AdaRate(AdaRateController::new(params, predictor()?)),
        ControllerKind::Mpc => Source::Mpc(MpcController::new(params, video.profile.clone(), video.format)),
        ControllerKind::Starstream => Source::StarStream(
            StarStreamController::new(params, video.profile.clone(), video.format, predictor()?, cfg.ablation())
                .class(Class::Validation)?,
        ),
    })
}

fn pair_stem(video_id: &str, trace_id: &str) -> String {
    format!("{video_id}__{trace_id}")
}

fn write_pair(dir: &Path, result: &SessionResult) -> anyhow::Result<()> {
    let stem = pair_stem(&result.video_id, &result.trace_id);
    write_json(&dir.join(format!("{stem}.json")), result)?;
    let mut buf = Vec::new();
    write_gop_csv(result, &mut buf).context("GOP log")?;
    write_atomic(&dir.join(format!("{stem}.gops.csv")), &buf)?;
    let mut buf = Vec::new();
    write_decision_log(result, &mut buf).context("decision log")?;
    write_atomic(&dir.join(format!("{stem}.decisions.csv")), &buf)?;
    Ok(())
}

fn run_pair(
    cfg: &RunConfig,
    kind: &PredictorKind,
    video: &PreparedVideo,
    trace: &NetworkTrace,
    pairs_dir: &Path,
) -> CliResult<PairRecord> {
    let mut source = build_source(cfg, kind, video)?;
    let mut session = SessionConfig::new(video.format);
    session.fidelity = cfg.fidelity.into();
    session.stall_cap = cfg.params.stall_cap;
    session.duration = cfg.duration;
    let outcome = simulate_session(trace, source.as_dyn(), &video.set, &session);
    let mut record = PairRecord {
        video_id: video.set.video_id.clone(),
        trace_id: trace.trace_id.clone(),
        status: Status::Ok,
        message: None,
        metrics: None,
        gops: 0,
        fallbacks: source.fallbacks(),
    };
    match outcome {
        Ok(result) => {
            write_pair(pairs_dir, &result)?;
            let s = &result.summary;
            record.gops = result.gops.len();
            record.metrics = Some(PairMetrics {
                accuracy: s.mean_accuracy,
                normalized_tp: s.normalized_tp,
                ol_delay: s.mean_ol_delay,
                response_delay: s.mean_response_delay,
            });
        }
        Err(e) => {
            record.status = if matches!(e, SimError::Stall { .. }) {
                Status::Stall
            } else {
                Status::Error
            };
            tracing::warn!(video = %record.video_id, trace = %record.trace_id, "{e}");
            record.message = Some(e.to_string());
        }
    }
    Ok(record)
}

fn mean_metrics(records: &[PairRecord]) -> Option<PairMetrics> {
    let ok: Vec<[f64; 4]> = records.iter().filter_map(|r| r.metrics.map(|m| m.values())).collect();
    if ok.is_empty() {
        return None;
    }
    let n = ok.len() as f64;
    let m = |i: usize| ok.iter().map(|v| v[i]).sum::<f64>() / n;
    Some(PairMetrics {
        accuracy: m(0),
        normalized_tp: m(1),
        ol_delay: m(2),
        response_delay: m(3),
    })
}

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    let out = cfg.out_dir()?;
    cfg.params.validate().class(Class::Validation)?;
    if cfg.video_traces.is_empty() {
        return Err(CliError::usage("no video traces given (--video or `video_traces`)"));
    }
    let kind = PredictorKind::parse(cfg.controller_predictor()?).map_err(CliError::validation)?;
    if let PredictorKind::External {
        endpoint: Endpoint::File(p),
    } = &kind
    {
        require_existing(std::slice::from_ref(p), "prediction files")?;
    }
    let traces = super::eval::load_traces(cfg)?;
    let dirs = video_trace_dirs(&cfg.video_traces)?;
    if matches!(cfg.controller, ControllerKind::Adarate | ControllerKind::Starstream) {
        // Surfaces unreadable prediction files before any session starts.
        kind.build().class(Class::Protocol)?;
    }
    let videos = dirs
        .par_iter()
        .map(|d| prepare_video(d, &cfg.params))
        .collect::<CliResult<Vec<_>>>()?;

    let pairs: Vec<(&PreparedVideo, &NetworkTrace)> = videos
        .iter()
        .flat_map(|v| traces.iter().map(move |t| (v, t)))
        .collect();
    let mut seen = std::collections::BTreeSet::new();
    for (v, t) in &pairs {
        if !seen.insert(pair_stem(&v.set.video_id, &t.trace_id)) {
            return Err(CliError::validation(format!(
                "duplicate pair video={} trace={}",
                v.set.video_id, t.trace_id
            )));
        }
    }
    let pairs_dir = out.join("pairs");
    let records = pairs
        .par_iter()
        .map(|(v, t)| run_pair(cfg, &kind, v, t, &pairs_dir))
        .collect::<CliResult<Vec<_>>>()?;

    let summary = RunSummary {
        label: cfg.label(),
        controller: cfg.controller,
        stalled: records.iter().filter(|r| r.status == Status::Stall).count(),
        failed: records.iter().filter(|r| r.status == Status::Error).count(),
        mean: mean_metrics(&records),
        pairs: records,
    };
    write_json(&out.join("run.json"), cfg)?;
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    crate::files::write_csv(&out.join("summary.csv"), |w| {
        w.write_record([
            "video_id", "trace_id", "status", "accuracy", "normalized_tp", "ol_delay", "response_delay", "gops", "fallbacks",
        ])?;
        for r in &summary.pairs {
            let mut rec = vec![
                r.video_id.clone(),
                r.trace_id.clone(),
                format!("{:?}", r.status).to_lowercase(),
            ];
            match r.metrics {
                Some(m) => rec.extend(m.values().iter().map(|v| format!("{v:.6}"))),
                None => rec.extend(std::iter::repeat_n(String::new(), 4)),
            }
            rec.push(r.gops.to_string());
            rec.push(r.fallbacks.to_string());
            w.write_record(&rec)?;
        }
        Ok(())
    })?;
    tracing::info!(pairs = summary.pairs.len(), stalled = summary.stalled, failed = summary.failed, "simulated");

    let total = summary.pairs.len();
    if summary.failed > 0 {
        Err(CliError::new(
            Class::Runtime,
            anyhow::anyhow!("{} of {total} sessions failed", summary.failed),
        ))
    } else if summary.stalled > 0 {
        Err(CliError::new(
            Class::Stall,
            anyhow::anyhow!("{} of {total} sessions stalled", summary.stalled),
        ))
    } else {
        Ok(())
    }
}
