use std::sync::Arc;
use std::time::Duration;

use proptest::prelude::*;
use starstream::controller::{
    write_decision_log, Ablation, ControllerParams, Decision, MpcController, StarStreamController,
};
use starstream::predictor::{
    truth_prediction_lines, write_prediction_file, HarmonicMean, PipePredictor, PredictionFile,
};
use starstream::profiler::{build_profile, ProfileTable};
use starstream::sim::{
    simulate_session, write_gop_csv, DecisionContext, DecisionSource, Fidelity, FixedSchedule,
    SessionConfig, SessionResult, SimError,
};
use starstream::trace::{
    gen_synthetic_network_trace, gen_synthetic_video_trace, load_network_trace,
    load_video_trace_set, step_trace, Bitrate, NetworkModelParams, NetworkTrace, Resolution,
    StreamFormat, VideoTraceSet, GOP_LENGTH_CANDIDATES,
};

fn format() -> StreamFormat {
    StreamFormat {
        frame_rate: 5,
        resolution: Resolution::new(1280, 720),
    }
}

fn video(seed: u64, duration: u32) -> VideoTraceSet {
    let configs: Vec<_> = Bitrate::candidates()
        .into_iter()
        .map(|b| format().with_bitrate(b))
        .collect();
    gen_synthetic_video_trace(seed, duration, 5, &configs, &GOP_LENGTH_CANDIDATES).unwrap()
}

fn starstream(profile: &Arc<ProfileTable>, predictor: Box<dyn starstream::predictor::Predictor>, ablation: Ablation) -> StarStreamController {
    StarStreamController::new(ControllerParams::default(), profile.clone(), format(), predictor, ablation)
        .unwrap()
}

fn scaled(trace: &NetworkTrace, k: f64) -> NetworkTrace {
    let mut samples = trace.samples.clone();
    for s in &mut samples {
        s.throughput *= k;
    }
    NetworkTrace::new(&trace.trace_id, &trace.location_tag, samples, trace.delta).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn faster_link_never_delays_completion_or_results(
        seed in 0u64..1000,
        schedule in proptest::collection::vec((1u32..=5, 0usize..6), 1..20),
        analytic in any::<bool>(),
    ) {
        let v = video(3, 60);
        let np = NetworkModelParams { bad_mean: 1.0, ..NetworkModelParams::default() };
        let mut trace = gen_synthetic_network_trace(seed, 150, &np).unwrap();
        for s in &mut trace.samples {
            s.throughput = s.throughput.max(0.3);
        }
        let fast = scaled(&trace, 2.0);
        let entries: Vec<_> = schedule.iter().map(|&(l, b)| (l, Bitrate::candidates()[b])).collect();
        let mut cfg = SessionConfig::new(format());
        if analytic {
            cfg.fidelity = Fidelity::Analytic;
        }
        let slow = simulate_session(&trace, &mut FixedSchedule::new(entries.clone()), &v, &cfg).unwrap();
        let quick = simulate_session(&fast, &mut FixedSchedule::new(entries), &v, &cfg).unwrap();
        for (a, b) in slow.gops.iter().zip(&quick.gops) {
            if !analytic {
                prop_assert!(b.t_end <= a.t_end + 1e-9);
            }
            prop_assert!(b.response_delay <= a.response_delay + 1e-9 || analytic);
        }
    }
}

#[test]
fn faster_link_can_lengthen_offloading_delay() {
    // A large GOP then a small one. On the slow link the small GOP starts
    // after all its frames exist and goes out back to back; on the fast link
    // it starts at its first capture, so its encode-to-decode span includes
    // the capture interval.
    let v = video(4, 60);
    let slow = step_trace("s", &[(200, 4.0)], 2.5).unwrap();
    let fast = scaled(&slow, 2.0);
    let cfg = SessionConfig::new(format());
    let schedule = vec![(2, Bitrate::from_kbps(9000)), (2, Bitrate::from_kbps(1500))];
    let run = |t: &NetworkTrace| {
        simulate_session(t, &mut FixedSchedule::new(schedule.clone()), &v, &cfg).unwrap()
    };
    let (a, b) = (run(&slow), run(&fast));
    assert!(b.gops[1].ol_delay > a.gops[1].ol_delay);
    assert!(b.gops[1].t_end <= a.gops[1].t_end);
    assert!(b.gops[1].response_delay <= a.gops[1].response_delay);
}

/// Records every context it is asked about, then defers to the inner
/// source.
struct Recorder<S> {
    inner: S,
    seen: Vec<(usize, f64, u32, f64)>,
}

impl<S: DecisionSource> DecisionSource for Recorder<S> {
    fn name(&self) -> String {
        self.inner.name()
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<Decision, SimError> {
        self.seen.push((ctx.gop_index, ctx.now, ctx.content_start, ctx.queue));
        self.inner.decide(ctx)
    }
}

#[test]
fn one_decision_per_gop_with_fresh_state() {
    let v = video(5, 90);
    let profile = Arc::new(build_profile(&v, None).unwrap());
    let trace = gen_synthetic_network_trace(8, 200, &NetworkModelParams::default()).unwrap();
    let mut rec = Recorder {
        inner: starstream(&profile, Box::new(HarmonicMean::new(5).unwrap()), Ablation::default()),
        seen: Vec::new(),
    };
    let r = simulate_session(&trace, &mut rec, &v, &SessionConfig::new(format())).unwrap();
    assert_eq!(rec.seen.len(), r.gops.len());
    let mut prev = (0.0, 0u32, 0.0);
    for ((k, now, start, q), g) in rec.seen.iter().zip(&r.gops) {
        assert_eq!(*k, g.k);
        assert_eq!((*now, *start, *q), prev);
        prev = (g.t_end, g.content_start + g.gop_length, g.queue);
    }
}

#[test]
fn frozen_gamma_stays_one() {
    let v = video(6, 180);
    let profile = Arc::new(build_profile(&v, None).unwrap());
    let trace = gen_synthetic_network_trace(9, 300, &NetworkModelParams::default()).unwrap();
    let cfg = SessionConfig::new(format());
    let mut frozen = starstream(
        &profile,
        Box::new(HarmonicMean::new(5).unwrap()),
        Ablation {
            freeze_gamma: true,
            ..Ablation::default()
        },
    );
    let r = simulate_session(&trace, &mut frozen, &v, &cfg).unwrap();
    assert!(r.gops.iter().all(|g| g.decision.gamma == 1.0));

    let mut live = starstream(&profile, Box::new(HarmonicMean::new(5).unwrap()), Ablation::default());
    let r = simulate_session(&trace, &mut live, &v, &cfg).unwrap();
    assert!(r.gops.iter().any(|g| g.decision.gamma != 1.0));
    assert!(r.gops.iter().all(|g| (1.0 / 3.0..=3.0).contains(&g.decision.gamma)));
}

#[test]
fn unreachable_predictor_falls_back_to_harmonic_mean() {
    let v = video(7, 30);
    let profile = Arc::new(build_profile(&v, None).unwrap());
    let trace = gen_synthetic_network_trace(10, 200, &NetworkModelParams::default()).unwrap();
    let cfg = SessionConfig::new(format());
    let mut reference = starstream(&profile, Box::new(HarmonicMean::new(5).unwrap()), Ablation::default());
    let expected = simulate_session(&trace, &mut reference, &v, &cfg).unwrap();

    let mut empty_file = starstream(&profile, Box::new(PredictionFile::from_lines("empty", vec![])), Ablation::default());
    let r = simulate_session(&trace, &mut empty_file, &v, &cfg).unwrap();
    assert_eq!(decisions(&r), decisions(&expected));
    assert_eq!(empty_file.fallbacks(), r.gops.len());

    let silent = PipePredictor::new(
        vec!["sh".into(), "-c".into(), "sleep 30".into()],
        Duration::from_millis(30),
    )
    .unwrap();
    let mut slow = starstream(&profile, Box::new(silent), Ablation::default());
    let r = simulate_session(&trace, &mut slow, &v, &cfg).unwrap();
    assert_eq!(decisions(&r), decisions(&expected));
}

fn decisions(r: &SessionResult) -> Vec<Decision> {
    r.gops.iter().map(|g| g.decision.clone()).collect()
}

#[test]
fn perfect_foresight_file_drives_the_controller() {
    let dir = tempfile::tempdir().unwrap();
    let v = video(11, 60);
    let profile = Arc::new(build_profile(&v, None).unwrap());
    let trace = gen_synthetic_network_trace(12, 300, &NetworkModelParams::default()).unwrap();
    let path = dir.path().join("truth.jsonl");
    write_prediction_file(&path, &truth_prediction_lines(&trace, 15)).unwrap();
    let mut ss = starstream(&profile, Box::new(PredictionFile::load(&path).unwrap()), Ablation::default());
    let r = simulate_session(&trace, &mut ss, &v, &SessionConfig::new(format())).unwrap();
    assert_eq!(ss.fallbacks(), 0);
    assert!(r.summary.normalized_tp > 0.0);
}

#[test]
fn files_round_trip_into_identical_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let v = video(13, 60);
    let trace = gen_synthetic_network_trace(14, 200, &NetworkModelParams::default()).unwrap();
    let trace_dir = dir.path().join("leo-1");
    std::fs::create_dir_all(&trace_dir).unwrap();
    let trace_path = trace_dir.join(format!("{}.csv", trace.trace_id));
    trace.save(&trace_path).unwrap();
    v.save(&dir.path().join("video")).unwrap();

    let trace2 = load_network_trace(&trace_path, 2.5).unwrap();
    let v2 = load_video_trace_set(&dir.path().join("video")).unwrap();
    assert_eq!(trace2.location_tag, "leo-1");

    let profile = Arc::new(build_profile(&v, None).unwrap());
    let cfg = SessionConfig::new(format());
    let run = |t: &NetworkTrace, v: &VideoTraceSet| {
        let mut mpc = MpcController::new(ControllerParams::default(), profile.clone(), format());
        simulate_session(t, &mut mpc, v, &cfg).unwrap()
    };
    let (a, b) = (run(&trace, &v), run(&trace2, &v2));
    assert_eq!(a.gops, b.gops);

    let json = serde_json::to_string(&a).unwrap();
    let back: SessionResult = serde_json::from_str(&json).unwrap();
    assert_eq!(back.gops, a.gops);

    let mut gop_csv = Vec::new();
    write_gop_csv(&a, &mut gop_csv).unwrap();
    let text = String::from_utf8(gop_csv).unwrap();
    assert_eq!(text.lines().count(), a.gops.len() + 1);
    assert!(text.starts_with("k,bitrate_mbps,frame_rate,resolution,gop_length,t_end,queue"));

    let mut log = Vec::new();
    write_decision_log(&a, &mut log).unwrap();
    let text = String::from_utf8(log).unwrap();
    assert!(text.starts_with(
        "timestamp,gop_length,bitrate_mbps,predicted_throughput,realized_throughput,gamma,queue,objective"
    ));
}
