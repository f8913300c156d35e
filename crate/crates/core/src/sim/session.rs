use std::io::Write;

use serde::{Deserialize, Serialize};

use super::analytic::{next_queue, simulate_gop_analytic, GopInputs, GopTiming};
use super::integrator::ThroughputIntegrator;
use super::SimError;
use crate::controller::Decision;
use crate::trace::{Bitrate, EncodingConfig, NetworkSample, NetworkTrace, StreamFormat, VideoTraceSet};

/// Seconds of trace replayed before the stream starts.
pub const DEFAULT_PRESTREAM_S: usize = 60;
pub const DEFAULT_STALL_CAP_S: f64 = 120.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fidelity {
    #[default]
    EventDriven,
    Analytic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionConfig {
    pub fidelity: Fidelity,
    pub format: StreamFormat,
    /// Trace samples before stream time 0.
    pub prestream: usize,
    pub stall_cap: f64,
    /// Content seconds to stream; the whole video when `None`.
    pub duration: Option<u32>,
    /// Keep per-frame timings in the result.
    pub record_frames: bool,
}

impl SessionConfig {
    pub fn new(format: StreamFormat) -> Self {
        Self {
            fidelity: Fidelity::EventDriven,
            format,
            prestream: DEFAULT_PRESTREAM_S,
            stall_cap: DEFAULT_STALL_CAP_S,
            duration: None,
            record_frames: false,
        }
    }
}

/// Backlog of captured content not yet sent, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CameraBuffer {
    pub queue: f64,
}

impl CameraBuffer {
    /// Applies one GOP to the backlog and returns the new `Q`.
    pub fn advance(&mut self, prev_end: f64, end: f64, gop_length: f64) -> f64 {
        self.queue = next_queue(self.queue, prev_end, end, gop_length);
        self.queue
    }
}

/// What a decision source sees before GOP `gop_index`.
pub struct DecisionContext<'a> {
    pub gop_index: usize,
    /// `t_{k-1}` in stream time.
    pub now: f64,
    /// Content second at which the GOP starts.
    pub content_start: u32,
    /// Content seconds left to stream.
    pub remaining: u32,
    /// `Q_{k-1}`.
    pub queue: f64,
    /// Trace samples fully observed by `now`, including the pre-stream window.
    pub observed: &'a [NetworkSample],
    /// Samples observed before the stream started.
    pub prestream: &'a [NetworkSample],
    pub history: &'a [GopOutcome],
    pub video: &'a VideoTraceSet,
    pub format: StreamFormat,
    pub trace_id: &'a str,
}

pub trait DecisionSource {
    fn name(&self) -> String;
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<Decision, SimError>;
}

/// Open-loop schedule: entries are used in order and the last one repeats.
/// GOP lengths longer than the remaining content are shortened.
#[derive(Debug, Clone)]
pub struct FixedSchedule {
    entries: Vec<(u32, Bitrate)>,
}

impl FixedSchedule {
    pub fn new(entries: Vec<(u32, Bitrate)>) -> Self {
        Self { entries }
    }

    pub fn constant(gop_length: u32, bitrate: Bitrate) -> Self {
        Self::new(vec![(gop_length, bitrate)])
    }
}

impl DecisionSource for FixedSchedule {
    fn name(&self) -> String {
        "schedule".into()
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<Decision, SimError> {
        let &(gop_length, bitrate) = self
            .entries
            .get(ctx.gop_index)
            .or(self.entries.last())
            .ok_or_else(|| SimError::Decision {
                gop: ctx.gop_index,
                message: "empty schedule".into(),
            })?;
        Ok(Decision::fixed(gop_length.min(ctx.remaining), bitrate))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameTiming {
    pub gop: usize,
    pub capture: f64,
    pub encode_start: f64,
    pub send_start: f64,
    pub send_done: f64,
    pub decode_done: f64,
    pub analyzed: f64,
    pub bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GopOutcome {
    pub k: usize,
    pub config: EncodingConfig,
    pub gop_length: u32,
    pub content_start: u32,
    pub t_prev: f64,
    pub t_end: f64,
    /// `Δt_k`.
    pub wait: f64,
    pub queue: f64,
    pub ol_delay: f64,
    pub response_delay: f64,
    /// Ground-truth accuracy of the streamed content.
    pub accuracy: f64,
    pub frames: usize,
    /// When the last frame's analysis result is available.
    pub analysis_done: f64,
    /// Mean link rate over `[t_{k-1}, t_k]`, Mbps.
    pub realized_throughput: f64,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub mean_accuracy: f64,
    pub mean_ol_delay: f64,
    pub mean_response_delay: f64,
    pub normalized_tp: f64,
    pub frames_analyzed: usize,
    pub elapsed: f64,
    /// One entry per content second, from the GOP that covers it.
    pub per_second_ol: Vec<f64>,
    pub per_second_response: Vec<f64>,
    pub per_second_accuracy: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionResult {
    pub trace_id: String,
    pub video_id: String,
    pub controller: String,
    pub fidelity: Fidelity,
    pub frame_rate: u32,
    pub gops: Vec<GopOutcome>,
    pub summary: SessionSummary,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frames: Vec<FrameTiming>,
}

/// Aggregates a list of GOP outcomes. Delays and accuracy are averaged over
/// content seconds; normalized throughput is `n / (f · t)` with `t` measured
/// from the first capture (stream time 0) to the last analysis result and
/// floored at the capture span `n / f`.
pub fn compute_metrics(gops: &[GopOutcome], frame_rate: u32) -> Result<SessionSummary, SimError> {
    if gops.is_empty() {
        return Err(SimError::Empty);
    }
    let mut per_second_ol = Vec::new();
    let mut per_second_response = Vec::new();
    let mut per_second_accuracy = Vec::new();
    for g in gops {
        for _ in 0..g.gop_length {
            per_second_ol.push(g.ol_delay);
            per_second_response.push(g.response_delay);
            per_second_accuracy.push(g.accuracy);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let n: usize = gops.iter().map(|g| g.frames).sum();
    let elapsed = gops.iter().map(|g| g.analysis_done).fold(0.0, f64::max);
    let f = f64::from(frame_rate);
    let capture_span = n as f64 / f;
    Ok(SessionSummary {
        mean_accuracy: mean(&per_second_accuracy),
        mean_ol_delay: mean(&per_second_ol),
        mean_response_delay: mean(&per_second_response),
        normalized_tp: n as f64 / (f * elapsed.max(capture_span)),
        frames_analyzed: n,
        elapsed,
        per_second_ol,
        per_second_response,
        per_second_accuracy,
    })
}

struct ServerQueues {
    decode_free: f64,
    infer_free: f64,
}

/// Replays `trace` against the decisions of `source`.
pub fn simulate_session(
    trace: &NetworkTrace,
    source: &mut dyn DecisionSource,
    video: &VideoTraceSet,
    config: &SessionConfig,
) -> Result<SessionResult, SimError> {
    let offset = config.prestream.min(trace.len());
    let mut link = ThroughputIntegrator::new(trace, offset, config.stall_cap);
    let total = config.duration.unwrap_or(video.duration()).min(video.duration());
    let fps = config.format.frame_rate;
    let f = f64::from(fps);

    let mut gops: Vec<GopOutcome> = Vec::new();
    let mut frames_out = Vec::new();
    let mut buffer = CameraBuffer::default();
    let mut server = ServerQueues {
        decode_free: 0.0,
        infer_free: 0.0,
    };
    let mut now = 0.0f64;
    let mut content = 0u32;

    while content < total {
        let k = gops.len();
        let known = (offset + now.floor() as usize).min(trace.len());
        let ctx = DecisionContext {
            gop_index: k,
            now,
            content_start: content,
            remaining: total - content,
            queue: buffer.queue,
            observed: &trace.samples[..known],
            prestream: &trace.samples[..offset],
            history: &gops,
            video,
            format: config.format,
            trace_id: &trace.trace_id,
        };
        let decision = source.decide(&ctx)?;
        let bad = |message: String| SimError::Decision { gop: k, message };
        let gop_length = decision.gop_length;
        if gop_length == 0 || gop_length > total - content {
            return Err(bad(format!(
                "GOP length {gop_length} s with {} s of content left",
                total - content
            )));
        }
        let enc = config.format.with_bitrate(decision.bitrate);
        let record = video
            .covering(enc, gop_length, content)
            .ok_or_else(|| bad(format!("no video record for {enc} with {gop_length} s GOPs")))?;
        let first_capture = f64::from(content);
        let inputs = GopInputs {
            prev_end: now,
            prev_queue: buffer.queue,
            gop_length: f64::from(gop_length),
            first_capture,
            frame_rate: f,
            encode: &record.encode_delays,
            sizes: &record.frame_sizes,
        };

        let (timing, send_starts) = match config.fidelity {
            Fidelity::EventDriven => event_driven_gop(&inputs, &mut link)?,
            Fidelity::Analytic => {
                let timing = analytic_gop(&inputs, &link, config.stall_cap)?;
                let starts = send_starts_from(&inputs, &timing);
                (timing, starts)
            }
        };

        let mut analysis_done = now;
        let mut decode_done_last = now;
        for (j, &done) in timing.send_done.iter().enumerate() {
            let decode_done = server.decode_free.max(done) + record.decode_delays[j];
            server.decode_free = decode_done;
            let analyzed = server.infer_free.max(decode_done) + record.inference_delays[j];
            server.infer_free = analyzed;
            analysis_done = analyzed;
            decode_done_last = decode_done;
            if config.record_frames {
                let capture = first_capture + j as f64 / f;
                frames_out.push(FrameTiming {
                    gop: k,
                    capture,
                    encode_start: send_starts[j] - record.encode_delays[j],
                    send_start: send_starts[j],
                    send_done: done,
                    decode_done,
                    analyzed,
                    bits: record.frame_sizes[j],
                });
            }
        }

        let queue = buffer.advance(now, timing.end, f64::from(gop_length));
        gops.push(GopOutcome {
            k,
            config: enc,
            gop_length,
            content_start: content,
            t_prev: now,
            t_end: timing.end,
            wait: timing.wait,
            queue,
            ol_delay: decode_done_last - timing.encode_start,
            response_delay: analysis_done - first_capture,
            accuracy: record.accuracy,
            frames: timing.send_done.len(),
            analysis_done,
            realized_throughput: link.average_mbps(now, timing.end),
            decision,
        });
        now = timing.end;
        content += gop_length;
    }

    let summary = compute_metrics(&gops, fps)?;
    Ok(SessionResult {
        trace_id: trace.trace_id.clone(),
        video_id: video.video_id.clone(),
        controller: source.name(),
        fidelity: config.fidelity,
        frame_rate: fps,
        gops,
        summary,
        frames: frames_out,
    })
}

/// Serial encode then send of every frame through the exact link model.
fn event_driven_gop(
    inputs: &GopInputs<'_>,
    link: &mut ThroughputIntegrator,
) -> Result<(GopTiming, Vec<f64>), SimError> {
    let mut free = inputs.prev_end;
    let mut wait = 0.0;
    let mut encode_start = free;
    let n = inputs.sizes.len();
    let mut send_done = Vec::with_capacity(n);
    let mut send_starts = Vec::with_capacity(n);
    for (j, (&e, &d)) in inputs.encode.iter().zip(inputs.sizes).enumerate() {
        let capture = inputs.first_capture + j as f64 / inputs.frame_rate;
        if capture > free {
            wait += capture - free;
            free = capture;
        }
        if j == 0 {
            encode_start = free;
        }
        let start = free + e;
        free = link.transmit(start, d)?;
        send_starts.push(start);
        send_done.push(free);
    }
    Ok((
        GopTiming {
            end: free,
            queue: next_queue(inputs.prev_queue, inputs.prev_end, free, inputs.gop_length),
            wait,
            encode_start,
            send_done,
        },
        send_starts,
    ))
}

/// Analytic timing with the realized mean rate over the GOP's own span,
/// found as the fixed point `T = t_k(b̄[t_{k-1}, T])` by bisection.
fn analytic_gop(
    inputs: &GopInputs<'_>,
    link: &ThroughputIntegrator,
    stall_cap: f64,
) -> Result<GopTiming, SimError> {
    let t0 = inputs.prev_end;
    let eval = |t: f64| simulate_gop_analytic(inputs, link.average_mbps(t0, t));
    let gap = |t: f64| eval(t).end - t;
    let stall = SimError::Stall {
        at: t0,
        cap: stall_cap,
    };

    if gap(t0) <= 0.0 {
        return Ok(eval(t0));
    }
    let mut lo = t0;
    let mut hi = eval(t0).end;
    let mut span = (hi - t0).max(1e-6);
    while !(gap(hi) <= 0.0) {
        if !hi.is_finite() || span > stall_cap {
            return Err(stall);
        }
        lo = hi;
        span *= 2.0;
        hi = t0 + span;
    }
    for _ in 0..200 {
        if hi - lo <= 1e-12 * hi.abs().max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if gap(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let timing = eval(hi);
    if timing.end - t0 > stall_cap {
        return Err(stall);
    }
    Ok(timing)
}

fn send_starts_from(inputs: &GopInputs<'_>, timing: &GopTiming) -> Vec<f64> {
    // Sending begins right after the frame's encode; recover it from the
    // completion time and the mean rate implied by the timing.
    let mut prev = inputs.prev_end;
    timing
        .send_done
        .iter()
        .enumerate()
        .map(|(j, &done)| {
            let capture = inputs.first_capture + j as f64 / inputs.frame_rate;
            let start = prev.max(capture) + inputs.encode[j];
            prev = done;
            start
        })
        .collect()
}

/// Per-GOP log: `k, bitrate, frame rate, resolution, L, t_k, Q_k, OL delay,
/// response delay, accuracy`.
pub fn write_gop_csv<W: Write>(result: &SessionResult, writer: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "k",
        "bitrate_mbps",
        "frame_rate",
        "resolution",
        "gop_length",
        "t_end",
        "queue",
        "ol_delay",
        "response_delay",
        "accuracy",
    ])?;
    for g in &result.gops {
        w.write_record([
            g.k.to_string(),
            g.config.bitrate.mbps().to_string(),
            g.config.frame_rate.to_string(),
            g.config.resolution.to_string(),
            g.gop_length.to_string(),
            format!("{:.6}", g.t_end),
            format!("{:.6}", g.queue),
            format!("{:.6}", g.ol_delay),
            format!("{:.6}", g.response_delay),
            format!("{:.6}", g.accuracy),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{
        gen_synthetic_video_trace_with, step_trace, Resolution, VideoModelParams,
        GOP_LENGTH_CANDIDATES,
    };

    fn format() -> StreamFormat {
        StreamFormat {
            frame_rate: 15,
            resolution: Resolution::new(1280, 720),
        }
    }

    fn video(seed: u64, duration: u32, zero_server: bool) -> VideoTraceSet {
        let configs: Vec<_> = Bitrate::candidates()
            .into_iter()
            .map(|b| format().with_bitrate(b))
            .collect();
        gen_synthetic_video_trace_with(
            seed,
            duration,
            15,
            &configs,
            &GOP_LENGTH_CANDIDATES,
            &VideoModelParams {
                zero_server_delays: zero_server,
                emit_detections: false,
                ..VideoModelParams::default()
            },
        )
        .unwrap()
    }

    fn gop(k: usize, l: u32, ol: f64, response: f64, frames: usize, done: f64) -> GopOutcome {
        GopOutcome {
            k,
            config: format().with_bitrate(Bitrate::from_kbps(3000)),
            gop_length: l,
            content_start: 0,
            t_prev: 0.0,
            t_end: 1.0,
            wait: 0.0,
            queue: 0.0,
            ol_delay: ol,
            response_delay: response,
            accuracy: 0.9,
            frames,
            analysis_done: done,
            realized_throughput: 1.0,
            decision: Decision::fixed(l, Bitrate::from_kbps(3000)),
        }
    }

    #[test]
    fn metric_examples() {
        let s = compute_metrics(&[gop(0, 2, 0.8, 1.2, 30, 2.0)], 15).unwrap();
        assert_eq!(s.per_second_ol, vec![0.8, 0.8]);
        let s = compute_metrics(&[gop(0, 10, 0.8, 1.0, 150, 10.0)], 15).unwrap();
        assert_eq!(s.normalized_tp, 1.0);
        let s = compute_metrics(&[gop(0, 10, 0.8, 1.0, 150, 20.0)], 15).unwrap();
        assert_eq!(s.normalized_tp, 0.5);
        assert!(matches!(compute_metrics(&[], 15), Err(SimError::Empty)));
    }

    #[test]
    fn camera_buffer_clamps() {
        let mut b = CameraBuffer::default();
        assert_eq!(b.advance(0.0, 1.5, 2.0), 0.0);
        assert_eq!(b.advance(1.5, 5.5, 2.0), 2.0);
    }

    #[test]
    fn fidelities_agree_on_constant_link() {
        let trace = step_trace("c", &[(600, 6.0)], 2.5).unwrap();
        let v = video(3, 120, true);
        let schedule = || {
            FixedSchedule::new(vec![
                (2, Bitrate::from_kbps(4500)),
                (3, Bitrate::from_kbps(9000)),
                (1, Bitrate::from_kbps(1500)),
                (5, Bitrate::from_kbps(7500)),
            ])
        };
        let mut cfg = SessionConfig::new(format());
        let ev = simulate_session(&trace, &mut schedule(), &v, &cfg).unwrap();
        cfg.fidelity = Fidelity::Analytic;
        let an = simulate_session(&trace, &mut schedule(), &v, &cfg).unwrap();
        assert_eq!(ev.gops.len(), an.gops.len());
        for (a, b) in ev.gops.iter().zip(&an.gops) {
            assert!((a.t_end - b.t_end).abs() < 1e-9, "{} vs {}", a.t_end, b.t_end);
        }
    }

    #[test]
    fn invalid_decision_reports_gop() {
        let trace = step_trace("c", &[(100, 6.0)], 2.5).unwrap();
        let v = video(1, 60, false);
        let mut s = FixedSchedule::new(vec![(2, Bitrate::from_kbps(3000)), (2, Bitrate::from_kbps(3100))]);
        let err = simulate_session(&trace, &mut s, &v, &SessionConfig::new(format())).unwrap_err();
        assert!(matches!(err, SimError::Decision { gop: 1, .. }), "{err}");
    }

    #[test]
    fn dead_link_stalls() {
        let trace = step_trace("z", &[(60, 5.0), (10, 0.0)], 2.5).unwrap();
        let v = video(1, 60, false);
        let mut s = FixedSchedule::constant(2, Bitrate::from_kbps(3000));
        let mut cfg = SessionConfig::new(format());
        assert!(matches!(
            simulate_session(&trace, &mut s, &v, &cfg),
            Err(SimError::Stall { .. })
        ));
        cfg.fidelity = Fidelity::Analytic;
        assert!(matches!(
            simulate_session(&trace, &mut s, &v, &cfg),
            Err(SimError::Stall { .. })
        ));
    }

    #[test]
    fn causality_and_conservation() {
        let trace = step_trace("s", &[(70, 9.0), (20, 2.0), (60, 7.0)], 2.5).unwrap();
        let v = video(5, 60, false);
        let mut s = FixedSchedule::constant(2, Bitrate::from_kbps(6000));
        let mut cfg = SessionConfig::new(format());
        cfg.record_frames = true;
        let r = simulate_session(&trace, &mut s, &v, &cfg).unwrap();
        let link = ThroughputIntegrator::new(&trace, 60, 120.0);
        let mut prev_done = 0.0;
        for fr in &r.frames {
            assert!(fr.encode_start >= fr.capture - 1e-12);
            assert!(fr.send_start >= fr.encode_start);
            assert!(fr.send_start >= prev_done - 1e-9);
            assert!(fr.decode_done >= fr.send_done);
            assert!(fr.analyzed >= fr.decode_done);
            let bits = link.integral(fr.send_start, fr.send_done);
            assert!((bits - fr.bits).abs() <= 1e-6 * fr.bits.max(1.0));
            prev_done = fr.send_done;
        }
        let sent: f64 = r.frames.iter().map(|f| f.bits).sum();
        let expected: f64 = r
            .gops
            .iter()
            .map(|g| v.covering(g.config, g.gop_length, g.content_start).unwrap().total_bits())
            .sum();
        assert!((sent - expected).abs() < 1e-6 * expected);
    }
}
