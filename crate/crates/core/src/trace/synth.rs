//! Seeded synthetic traces for desk-scale evaluation.

use chrono::{DateTime, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::network::{NetworkSample, NetworkTrace};
use super::video::{EncodingConfig, VideoTraceSet, VideoUnitRecord};
use super::TraceError;
use crate::profiler::{Detection, FrameDetections};

/// Two-state Markov-modulated throughput model with an optional square-wave
/// level change on a fixed grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkModelParams {
    /// Mean throughput in the good state (Mbps).
    pub good_mean: f64,
    /// Mean throughput in the degraded state (Mbps).
    pub bad_mean: f64,
    /// Standard deviation of the additive Gaussian noise (Mbps).
    pub noise_std: f64,
    /// Per-second probability of leaving the good state.
    pub p_good_to_bad: f64,
    /// Per-second probability of leaving the degraded state.
    pub p_bad_to_good: f64,
    /// Square-wave period in seconds; the level toggles at every multiple.
    pub step_period: Option<u64>,
    /// Square-wave amplitude (Mbps), added on odd periods.
    pub step_amplitude: f64,
    pub delta: f64,
    pub start: DateTime<Utc>,
}

impl Default for NetworkModelParams {
    fn default() -> Self {
        Self {
            good_mean: 12.0,
            bad_mean: 3.0,
            noise_std: 1.0,
            p_good_to_bad: 0.02,
            p_bad_to_good: 0.1,
            step_period: Some(15),
            step_amplitude: 3.0,
            delta: 2.5,
            start: Utc.with_ymd_and_hms(2024, 3, 1, 12, 0, 0).unwrap(),
        }
    }
}

/// Generates a network trace. Deterministic for a fixed seed.
pub fn gen_synthetic_network_trace(
    seed: u64,
    duration_s: u64,
    params: &NetworkModelParams,
) -> Result<NetworkTrace, TraceError> {
    generate_network(seed, duration_s, params).map(|(t, _)| t)
}

pub(crate) fn generate_network(
    seed: u64,
    duration_s: u64,
    params: &NetworkModelParams,
) -> Result<(NetworkTrace, Vec<bool>), TraceError> {
    if duration_s < 2 {
        return Err(TraceError::Validation(format!(
            "synthetic trace needs at least 2 s, got {duration_s}"
        )));
    }
    if !(params.noise_std >= 0.0) || !(params.good_mean >= 0.0) || !(params.bad_mean >= 0.0) {
        return Err(TraceError::Validation("invalid network model parameters".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, params.noise_std.max(f64::MIN_POSITIVE))
        .map_err(|e| TraceError::Validation(e.to_string()))?;
    let unit = Normal::new(0.0, 1.0).unwrap();
    let cap = 5.0 * params.noise_std;

    let mut good = true;
    let mut states = Vec::with_capacity(duration_s as usize);
    let mut samples = Vec::with_capacity(duration_s as usize);
    let mut srtt_noise = 0.0f64;
    for t in 0..duration_s {
        if t > 0 {
            let flip = if good {
                params.p_good_to_bad
            } else {
                params.p_bad_to_good
            };
            if rng.gen::<f64>() < flip {
                good = !good;
            }
        }
        states.push(good);
        let level = if good { params.good_mean } else { params.bad_mean };
        let step = match params.step_period {
            Some(p) if p > 0 && (t / p) % 2 == 1 => params.step_amplitude,
            _ => 0.0,
        };
        let e = if params.noise_std > 0.0 {
            noise.sample(&mut rng).clamp(-cap, cap)
        } else {
            0.0
        };
        let throughput = (level + step + e).max(0.0);

        // TCP state: AR(1) RTT noise, window near the bandwidth-delay product,
        // more retransmissions when degraded.
        srtt_noise = 0.8 * srtt_noise + 4.0 * unit.sample(&mut rng);
        let srtt = (45.0 + 60.0 / (throughput + 1.0) + srtt_noise).max(20.0);
        let rtt_var = (srtt * 0.1 + 2.0 * unit.sample(&mut rng).abs()).max(0.5);
        let cwnd = (throughput * 1e6 / 8.0 * srtt / 1000.0).max(2920.0) as u64;
        let lambda = if good { 0.3 } else { 2.5 };
        let retransmits = Poisson::new(lambda).unwrap().sample(&mut rng) as u64;

        samples.push(NetworkSample {
            timestamp: t,
            wall_clock: params.start + chrono::Duration::seconds(t as i64),
            throughput,
            retransmits,
            cwnd,
            srtt,
            rtt_var,
            shift: false,
        });
    }
    let trace = NetworkTrace::new(format!("synth-{seed}"), "synthetic", samples, params.delta)?;
    Ok((trace, states))
}

/// Piecewise-constant trace with no noise: `levels` is a list of
/// (duration seconds, Mbps).
pub fn step_trace(
    trace_id: &str,
    levels: &[(u64, f64)],
    delta: f64,
) -> Result<NetworkTrace, TraceError> {
    let start = Utc.with_ymd_and_hms(2024, 3, 1, 12, 0, 0).unwrap();
    let mut samples = Vec::new();
    for &(secs, mbps) in levels {
        for _ in 0..secs {
            let t = samples.len() as u64;
            samples.push(NetworkSample {
                timestamp: t,
                wall_clock: start + chrono::Duration::seconds(t as i64),
                throughput: mbps,
                retransmits: 0,
                cwnd: (mbps * 1e6 / 8.0 * 0.05).max(2920.0) as u64,
                srtt: 50.0,
                rtt_var: 5.0,
                shift: false,
            });
        }
    }
    NetworkTrace::new(trace_id, "synthetic", samples, delta)
}

/// Knobs for the synthetic video model. Content difficulty is a per-scene
/// scalar in `[difficulty_min, difficulty_max]`; accuracy loss and detection
/// uncertainty both scale with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VideoModelParams {
    pub difficulty_min: f64,
    pub difficulty_max: f64,
    pub scene_min_s: u32,
    pub scene_max_s: u32,
    /// Bits per pixel at which quality reaches 1 - 1/e.
    pub bpp_scale: f64,
    /// Effective-bitrate gain per extra GOP second (fewer I-frames).
    pub gop_gain: f64,
    /// Relative size of the I-frame to a P-frame.
    pub iframe_weight: f64,
    /// Write zero decode and inference delays.
    pub zero_server_delays: bool,
    pub emit_detections: bool,
}

impl Default for VideoModelParams {
    fn default() -> Self {
        Self {
            difficulty_min: 0.2,
            difficulty_max: 1.0,
            scene_min_s: 8,
            scene_max_s: 20,
            bpp_scale: 0.1,
            gop_gain: 0.04,
            iframe_weight: 4.0,
            zero_server_delays: false,
            emit_detections: true,
        }
    }
}

const CATEGORIES: [&str; 4] = ["person", "car", "bicycle", "bus"];
const FULL_HD: f64 = 1920.0 * 1080.0;

fn resolution_factor(pixels: f64) -> f64 {
    // Small objects vanish as resolution drops.
    (0.6 + 0.4 * (pixels / FULL_HD).sqrt()).min(1.0)
}

fn frame_rate_factor(fps: u32) -> f64 {
    match fps {
        0 => 0.0,
        1 => 0.7,
        2..=3 => 0.85,
        4..=5 => 0.9,
        6..=14 => 0.95,
        _ => 1.0,
    }
}

/// Fraction of the accuracy a configuration retains at difficulty 1.
fn config_quality(config: &EncodingConfig, gop_length: u32, params: &VideoModelParams) -> f64 {
    let pixels = config.resolution.pixels();
    let effective_bps =
        config.bitrate.bps() * (1.0 + params.gop_gain * f64::from(gop_length.saturating_sub(1)));
    let bpp = effective_bps / (pixels * f64::from(config.frame_rate));
    let q = 1.0 - (-bpp / params.bpp_scale).exp();
    q * resolution_factor(pixels) * frame_rate_factor(config.frame_rate)
}

fn uncertainty_for(difficulty: f64) -> f64 {
    (0.05 + 0.35 * difficulty).clamp(0.0, 1.0)
}

fn mix(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn series_seed(seed: u64, config: &EncodingConfig, gop_length: u32) -> u64 {
    let key = (u64::from(config.bitrate.kbps()) << 32)
        ^ (u64::from(config.frame_rate) << 24)
        ^ (u64::from(config.resolution.width) << 12)
        ^ u64::from(config.resolution.height)
        ^ (u64::from(gop_length) << 56);
    mix(mix(seed) ^ key)
}

fn lcm(a: u32, b: u32) -> u32 {
    fn gcd(a: u32, b: u32) -> u32 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    a / gcd(a, b) * b
}

/// Generates a video trace set for every (config, GOP length) pair.
///
/// The duration is rounded up to a multiple of every GOP length so each
/// series tiles the same timeline. Per-GOP sizes follow CBR within ±8%, the
/// I-frame is the largest frame in each GOP, and accuracy is non-decreasing
/// in bitrate and in GOP length at a fixed GOP start.
pub fn gen_synthetic_video_trace(
    seed: u64,
    duration_s: u32,
    frame_rate: u32,
    config_set: &[EncodingConfig],
    gop_set: &[u32],
) -> Result<VideoTraceSet, TraceError> {
    gen_synthetic_video_trace_with(
        seed,
        duration_s,
        frame_rate,
        config_set,
        gop_set,
        &VideoModelParams::default(),
    )
}

pub fn gen_synthetic_video_trace_with(
    seed: u64,
    duration_s: u32,
    frame_rate: u32,
    config_set: &[EncodingConfig],
    gop_set: &[u32],
    params: &VideoModelParams,
) -> Result<VideoTraceSet, TraceError> {
    if config_set.is_empty() || gop_set.is_empty() || duration_s == 0 || frame_rate == 0 {
        return Err(TraceError::Validation(
            "synthetic video needs configs, GOP lengths, a duration and a frame rate".into(),
        ));
    }
    for c in config_set {
        c.validate()?;
    }
    let grid = gop_set.iter().fold(1, |acc, &g| lcm(acc, g.max(1)));
    let duration = duration_s.div_ceil(grid) * grid;
    let video_id = format!("synth-video-{seed}");

    // Content: per-second difficulty from random scenes.
    let mut content_rng = ChaCha8Rng::seed_from_u64(mix(seed));
    let mut difficulty = Vec::with_capacity(duration as usize);
    while difficulty.len() < duration as usize {
        let scene = content_rng.gen_range(params.scene_min_s..=params.scene_max_s.max(params.scene_min_s));
        let level = content_rng.gen_range(params.difficulty_min..=params.difficulty_max);
        for _ in 0..scene.max(1) {
            let jitter = content_rng.gen_range(-0.03..=0.03);
            difficulty.push((level + jitter).clamp(0.0, 1.0));
        }
    }
    difficulty.truncate(duration as usize);

    // Compact-model detections at the native rate.
    let mut det_rng = ChaCha8Rng::seed_from_u64(mix(seed ^ 0x5eed_de7e));
    let mut detections = Vec::with_capacity((duration * frame_rate) as usize);
    for frame_idx in 0..(duration * frame_rate) as u64 {
        let second = (frame_idx / u64::from(frame_rate)) as usize;
        let u = uncertainty_for(difficulty[second]);
        let count = det_rng.gen_range(4..=8);
        let mut dets = Vec::with_capacity(count);
        for _ in 0..count {
            let w = det_rng.gen_range(20.0..300.0);
            let h = det_rng.gen_range(20.0..300.0);
            let x1 = det_rng.gen_range(0.0..(1920.0 - w));
            let y1 = det_rng.gen_range(0.0..(1080.0 - h));
            let confidence = if det_rng.gen::<f64>() < u {
                det_rng.gen_range(0.2..0.5)
            } else {
                det_rng.gen_range(0.5..0.98)
            };
            dets.push(Detection {
                bbox: [x1, y1, x1 + w, y1 + h],
                category: CATEGORIES[det_rng.gen_range(0..CATEGORIES.len())].to_string(),
                confidence,
            });
        }
        detections.push(FrameDetections {
            frame_idx,
            detections: dets,
        });
    }
    let span_uncertainty = |start: u32, len: u32| -> f64 {
        let lo = (start * frame_rate) as usize;
        let hi = ((start + len) * frame_rate) as usize;
        let frames = &detections[lo..hi];
        let total: usize = frames.iter().map(|f| f.detections.len()).sum();
        let uncertain: usize = frames
            .iter()
            .flat_map(|f| &f.detections)
            .filter(|d| d.confidence < 0.5)
            .count();
        if total == 0 {
            0.0
        } else {
            uncertain as f64 / total as f64
        }
    };

    let mut records = Vec::new();
    for config in config_set {
        for &gop_length in gop_set {
            let mut rng = ChaCha8Rng::seed_from_u64(series_seed(seed, config, gop_length));
            let quality = config_quality(config, gop_length, params);
            let frames = (gop_length * config.frame_rate) as usize;
            let scale = config.resolution.pixels() / FULL_HD;
            for g in 0..duration / gop_length {
                let gop_start = g * gop_length;
                let d = difficulty[gop_start as usize];
                let accuracy = (1.0 - d * (1.0 - quality)).clamp(0.0, 1.0);

                let total = config.bitrate.bps()
                    * f64::from(gop_length)
                    * (1.0 + rng.gen_range(-0.08..=0.08));
                let weights: Vec<f64> = (0..frames)
                    .map(|j| {
                        if j == 0 {
                            params.iframe_weight * rng.gen_range(0.95..=1.05)
                        } else {
                            rng.gen_range(0.75..=1.25)
                        }
                    })
                    .collect();
                let wsum: f64 = weights.iter().sum();
                let frame_sizes = weights.iter().map(|w| total * w / wsum).collect();
                let encode_delays = (0..frames)
                    .map(|j| {
                        let base = 0.004 + 0.012 * scale;
                        let i_factor = if j == 0 { 1.6 } else { 1.0 };
                        base * i_factor * rng.gen_range(0.9..=1.1)
                    })
                    .collect();
                let (decode_delays, inference_delays) = if params.zero_server_delays {
                    (vec![0.0; frames], vec![0.0; frames])
                } else {
                    (
                        (0..frames)
                            .map(|_| (0.002 + 0.006 * scale) * rng.gen_range(0.9..=1.1))
                            .collect(),
                        (0..frames)
                            .map(|_| (0.025 + 0.01 * scale) * rng.gen_range(0.9..=1.1))
                            .collect(),
                    )
                };
                records.push(VideoUnitRecord {
                    video_id: video_id.clone(),
                    config: *config,
                    gop_start,
                    gop_length,
                    frame_sizes,
                    encode_delays,
                    decode_delays,
                    inference_delays,
                    accuracy,
                    mean_confidence_uncertainty: span_uncertainty(gop_start, gop_length),
                });
            }
        }
    }
    let detections = params.emit_detections.then_some(detections);
    VideoTraceSet::new(video_id, frame_rate, records, detections)
}
