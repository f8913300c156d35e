//! Video processing traces: per-GOP frame sizes, stage delays and accuracy
//! recorded for every (encoding configuration, GOP length) pair.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TraceError;
use crate::profiler::FrameDetections;

pub const BITRATE_CANDIDATES_KBPS: [u32; 6] = [1500, 3000, 4500, 6000, 7500, 9000];
pub const FRAME_RATE_CANDIDATES: [u32; 4] = [1, 3, 5, 15];
pub const RESOLUTION_CANDIDATES: [Resolution; 3] = [
    Resolution::new(1920, 1080),
    Resolution::new(1280, 720),
    Resolution::new(640, 320),
];
pub const GOP_LENGTH_CANDIDATES: [u32; 5] = [1, 2, 3, 4, 5];

const DETECTIONS_FILE: &str = "detections.jsonl";
const META_FILE: &str = "video.json";

/// Target encoding bitrate, stored in kbps so it can be used as a map key.
/// Serialized as Mbps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "f64", try_from = "f64")]
pub struct Bitrate(u32);

impl Bitrate {
    pub const fn from_kbps(kbps: u32) -> Self {
        Self(kbps)
    }

    pub fn from_mbps(mbps: f64) -> Option<Self> {
        let kbps = (mbps * 1000.0).round();
        if mbps.is_finite() && mbps > 0.0 && (kbps / 1000.0 - mbps).abs() < 1e-9 {
            Some(Self(kbps as u32))
        } else {
            None
        }
    }

    pub fn kbps(self) -> u32 {
        self.0
    }

    pub fn mbps(self) -> f64 {
        f64::from(self.0) / 1000.0
    }

    /// Bits per second.
    pub fn bps(self) -> f64 {
        f64::from(self.0) * 1000.0
    }

    pub fn candidates() -> Vec<Bitrate> {
        BITRATE_CANDIDATES_KBPS.iter().map(|&k| Bitrate(k)).collect()
    }
}

impl From<Bitrate> for f64 {
    fn from(b: Bitrate) -> f64 {
        b.mbps()
    }
}

impl TryFrom<f64> for Bitrate {
    type Error = String;

    fn try_from(v: f64) -> Result<Self, Self::Error> {
        Bitrate::from_mbps(v).ok_or_else(|| format!("invalid bitrate {v} Mbps"))
    }
}

impl fmt::Display for Bitrate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.mbps())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct Resolution {
    pub width: u32,
    pub height: u32,
}

impl Resolution {
    pub const fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    pub fn pixels(self) -> f64 {
        f64::from(self.width) * f64::from(self.height)
    }
}

impl From<[u32; 2]> for Resolution {
    fn from([width, height]: [u32; 2]) -> Self {
        Self { width, height }
    }
}

impl From<Resolution> for [u32; 2] {
    fn from(r: Resolution) -> Self {
        [r.width, r.height]
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// The (frame rate, resolution) part of a configuration, fixed for a whole
/// stream after pruning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StreamFormat {
    pub frame_rate: u32,
    pub resolution: Resolution,
}

impl StreamFormat {
    pub fn with_bitrate(self, bitrate: Bitrate) -> EncodingConfig {
        EncodingConfig {
            bitrate,
            frame_rate: self.frame_rate,
            resolution: self.resolution,
        }
    }
}

impl fmt::Display for StreamFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}fps@{}", self.frame_rate, self.resolution)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EncodingConfig {
    pub bitrate: Bitrate,
    pub frame_rate: u32,
    pub resolution: Resolution,
}

impl EncodingConfig {
    pub fn format(self) -> StreamFormat {
        StreamFormat {
            frame_rate: self.frame_rate,
            resolution: self.resolution,
        }
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        if !BITRATE_CANDIDATES_KBPS.contains(&self.bitrate.kbps()) {
            return Err(TraceError::Validation(format!(
                "bitrate {} Mbps is not a candidate",
                self.bitrate
            )));
        }
        if !FRAME_RATE_CANDIDATES.contains(&self.frame_rate) {
            return Err(TraceError::Validation(format!(
                "frame rate {} is not a candidate",
                self.frame_rate
            )));
        }
        if !RESOLUTION_CANDIDATES.contains(&self.resolution) {
            return Err(TraceError::Validation(format!(
                "resolution {} is not a candidate",
                self.resolution
            )));
        }
        Ok(())
    }

    /// Every candidate configuration (6 bitrates x 4 frame rates x 3
    /// resolutions).
    pub fn all_candidates() -> Vec<EncodingConfig> {
        let mut out = Vec::new();
        for &kbps in &BITRATE_CANDIDATES_KBPS {
            for &frame_rate in &FRAME_RATE_CANDIDATES {
                for &resolution in &RESOLUTION_CANDIDATES {
                    out.push(EncodingConfig {
                        bitrate: Bitrate(kbps),
                        frame_rate,
                        resolution,
                    });
                }
            }
        }
        out
    }

    fn file_stem(&self, gop_length: u32) -> String {
        format!(
            "b{}_f{}_{}x{}_g{}",
            self.bitrate.kbps(),
            self.frame_rate,
            self.resolution.width,
            self.resolution.height,
            gop_length
        )
    }
}

impl fmt::Display for EncodingConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}Mbps/{}", self.bitrate, self.format())
    }
}

/// One GOP of one video encoded with one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoUnitRecord {
    pub video_id: String,
    pub config: EncodingConfig,
    /// Content time of the GOP's first frame, in seconds.
    pub gop_start: u32,
    pub gop_length: u32,
    /// Compressed size of each frame in bits; the first entry is the I-frame.
    pub frame_sizes: Vec<f64>,
    pub encode_delays: Vec<f64>,
    pub decode_delays: Vec<f64>,
    pub inference_delays: Vec<f64>,
    /// F1 against raw-frame detections.
    pub accuracy: f64,
    pub mean_confidence_uncertainty: f64,
}

impl VideoUnitRecord {
    pub fn frame_count(&self) -> usize {
        self.frame_sizes.len()
    }

    pub fn total_bits(&self) -> f64 {
        self.frame_sizes.iter().sum()
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        self.config.validate()?;
        if !GOP_LENGTH_CANDIDATES.contains(&self.gop_length) {
            return Err(TraceError::Validation(format!(
                "gop length {} is not a candidate",
                self.gop_length
            )));
        }
        let frames = (self.gop_length * self.config.frame_rate) as usize;
        let lists = [
            ("frame_sizes", &self.frame_sizes),
            ("encode_delays", &self.encode_delays),
            ("decode_delays", &self.decode_delays),
            ("inference_delays", &self.inference_delays),
        ];
        for (name, list) in lists {
            if list.len() != frames {
                return Err(TraceError::Validation(format!(
                    "{} at gop_start={}: {name} has {} entries, expected {frames}",
                    self.config,
                    self.gop_start,
                    list.len()
                )));
            }
            if list.iter().any(|v| !(*v >= 0.0)) {
                return Err(TraceError::Validation(format!(
                    "{} at gop_start={}: negative value in {name}",
                    self.config, self.gop_start
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.accuracy) {
            return Err(TraceError::Validation(format!(
                "accuracy {} out of [0, 1]",
                self.accuracy
            )));
        }
        if !(0.0..=1.0).contains(&self.mean_confidence_uncertainty) {
            return Err(TraceError::Validation(format!(
                "uncertainty {} out of [0, 1]",
                self.mean_confidence_uncertainty
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VideoMeta {
    video_id: String,
    frame_rate: u32,
}

/// All records of one video. Every (config, GOP length) series tiles the
/// same content timeline `[0, duration)` without gaps or overlaps.
#[derive(Debug, Clone)]
pub struct VideoTraceSet {
    pub video_id: String,
    /// Native capture frame rate.
    pub frame_rate: u32,
    duration: u32,
    series: BTreeMap<(EncodingConfig, u32), Vec<VideoUnitRecord>>,
    /// Compact-model detections on raw frames at the native frame rate,
    /// indexed by frame.
    pub detections: Option<Vec<FrameDetections>>,
}

impl VideoTraceSet {
    /// Validates and indexes the records.
    pub fn new(
        video_id: impl Into<String>,
        frame_rate: u32,
        records: Vec<VideoUnitRecord>,
        detections: Option<Vec<FrameDetections>>,
    ) -> Result<Self, TraceError> {
        let video_id = video_id.into();
        let mut series: BTreeMap<(EncodingConfig, u32), Vec<VideoUnitRecord>> = BTreeMap::new();
        for r in records {
            r.validate()?;
            if r.video_id != video_id {
                return Err(TraceError::Validation(format!(
                    "record for video {} in set {video_id}",
                    r.video_id
                )));
            }
            series.entry((r.config, r.gop_length)).or_default().push(r);
        }
        if series.is_empty() {
            return Err(TraceError::Validation(format!("video {video_id} has no records")));
        }
        let mut duration = None;
        for ((config, gop_length), records) in series.iter_mut() {
            records.sort_by_key(|r| r.gop_start);
            let mut expected = 0u32;
            for r in records.iter() {
                if r.gop_start != expected {
                    let kind = if r.gop_start > expected { "gap" } else { "overlap" };
                    return Err(TraceError::Alignment(format!(
                        "{kind} in {config} gop={gop_length}s: GOP at gop_start={} but previous GOP ends at {expected}",
                        r.gop_start
                    )));
                }
                expected += r.gop_length;
            }
            match duration {
                None => duration = Some(expected),
                Some(d) if d != expected => {
                    return Err(TraceError::Alignment(format!(
                        "{config} gop={gop_length}s covers {expected} s, other series cover {d} s"
                    )));
                }
                Some(_) => {}
            }
        }
        Ok(Self {
            video_id,
            frame_rate,
            duration: duration.unwrap_or(0),
            series,
            detections,
        })
    }

    /// Content duration in seconds.
    pub fn duration(&self) -> u32 {
        self.duration
    }

    pub fn configs(&self) -> impl Iterator<Item = (EncodingConfig, u32)> + '_ {
        self.series.keys().copied()
    }

    pub fn series(&self, config: EncodingConfig, gop_length: u32) -> Option<&[VideoUnitRecord]> {
        self.series.get(&(config, gop_length)).map(Vec::as_slice)
    }

    pub fn has(&self, config: EncodingConfig, gop_length: u32) -> bool {
        self.series.contains_key(&(config, gop_length))
    }

    /// Exact lookup by GOP start.
    pub fn record(
        &self,
        config: EncodingConfig,
        gop_length: u32,
        gop_start: u32,
    ) -> Option<&VideoUnitRecord> {
        if !gop_start.is_multiple_of(gop_length) {
            return None;
        }
        self.series(config, gop_length)?
            .get((gop_start / gop_length) as usize)
    }

    /// The record of length `gop_length` whose span covers content second
    /// `at`. Used when a GOP starts off the series grid after a GOP-length
    /// switch: CBR sizes and delays depend on the configuration and length,
    /// and the covering record carries the content's accuracy.
    pub fn covering(
        &self,
        config: EncodingConfig,
        gop_length: u32,
        at: u32,
    ) -> Option<&VideoUnitRecord> {
        self.series(config, gop_length)?
            .get((at / gop_length) as usize)
    }

    pub fn records(&self) -> impl Iterator<Item = &VideoUnitRecord> {
        self.series.values().flatten()
    }

    /// Detections of native frames whose capture time falls in
    /// `[start, end)` seconds.
    pub fn detections_in(&self, start: f64, end: f64) -> Option<&[FrameDetections]> {
        let dets = self.detections.as_ref()?;
        let f = f64::from(self.frame_rate);
        let lo = ((start * f).ceil().max(0.0) as usize).min(dets.len());
        let hi = ((end * f).ceil().max(0.0) as usize).min(dets.len());
        Some(&dets[lo..hi.max(lo)])
    }

    /// Writes `video.json`, one JSON-lines file per (config, GOP length) and
    /// the optional detection file into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), TraceError> {
        fs::create_dir_all(dir)?;
        let meta = VideoMeta {
            video_id: self.video_id.clone(),
            frame_rate: self.frame_rate,
        };
        fs::write(dir.join(META_FILE), serde_json::to_vec_pretty(&meta)?)?;
        for ((config, gop_length), records) in &self.series {
            let path = dir.join(format!("{}.jsonl", config.file_stem(*gop_length)));
            let mut w = BufWriter::new(File::create(path)?);
            for r in records {
                serde_json::to_writer(&mut w, r)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        if let Some(dets) = &self.detections {
            let mut w = BufWriter::new(File::create(dir.join(DETECTIONS_FILE))?);
            for d in dets {
                serde_json::to_writer(&mut w, d)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        Ok(())
    }
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, TraceError> {
    let file = File::open(path).map_err(|e| TraceError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| TraceError::Parse {
            line: i + 1,
            message: format!("{}: {e}", path.display()),
        })?);
    }
    Ok(out)
}

/// Loads a video trace directory written by [`VideoTraceSet::save`] (or by
/// an external recorder using the same layout). `video.json` is optional;
/// without it the video id is the directory name and the frame rate is 15.
pub fn load_video_trace_set(dir: &Path) -> Result<VideoTraceSet, TraceError> {
    let meta_path = dir.join(META_FILE);
    let meta = if meta_path.exists() {
        serde_json::from_slice::<VideoMeta>(&fs::read(&meta_path)?)?
    } else {
        VideoMeta {
            video_id: dir
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            frame_rate: 15,
        }
    };
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| TraceError::Io {
            path: dir.display().to_string(),
            source: e,
        })?
        .collect::<Result<Vec<_>, _>>()?;
    entries.sort_by_key(|e| e.file_name());

    let mut records = Vec::new();
    let mut detections = None;
    for entry in entries {
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
            continue;
        }
        if path.file_name().and_then(|n| n.to_str()) == Some(DETECTIONS_FILE) {
            let mut frames: Vec<FrameDetections> = read_jsonl(&path)?;
            frames.sort_by_key(|f| f.frame_idx);
            detections = Some(frames);
            continue;
        }
        let file_records: Vec<VideoUnitRecord> = read_jsonl(&path)?;
        if let Some(first) = file_records.first() {
            let key = (first.config, first.gop_length);
            if file_records.iter().any(|r| (r.config, r.gop_length) != key) {
                return Err(TraceError::Validation(format!(
                    "{} mixes configurations or GOP lengths",
                    path.display()
                )));
            }
        }
        records.extend(file_records);
    }
    VideoTraceSet::new(meta.video_id, meta.frame_rate, records, detections)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> EncodingConfig {
        EncodingConfig {
            bitrate: Bitrate::from_kbps(3000),
            frame_rate: 1,
            resolution: Resolution::new(1280, 720),
        }
    }

    fn record(gop_start: u32, gop_length: u32) -> VideoUnitRecord {
        let n = gop_length as usize;
        VideoUnitRecord {
            video_id: "v".into(),
            config: config(),
            gop_start,
            gop_length,
            frame_sizes: vec![1.0e6; n],
            encode_delays: vec![0.01; n],
            decode_delays: vec![0.005; n],
            inference_delays: vec![0.02; n],
            accuracy: 0.8,
            mean_confidence_uncertainty: 0.2,
        }
    }

    #[test]
    fn complete_tiling_is_accepted() {
        let records = (0..240).map(|i| record(i * 2, 2)).collect();
        let set = VideoTraceSet::new("v", 15, records, None).unwrap();
        assert_eq!(set.duration(), 480);
        assert_eq!(set.record(config(), 2, 10).unwrap().gop_start, 10);
        assert_eq!(set.covering(config(), 2, 11).unwrap().gop_start, 10);
    }

    #[test]
    fn gap_is_rejected() {
        let records = (0..10).filter(|&i| i != 5).map(|i| record(i * 2, 2)).collect();
        let err = VideoTraceSet::new("v", 15, records, None).unwrap_err();
        assert!(matches!(err, TraceError::Alignment(ref m) if m.contains("gop_start=12")), "{err}");
    }

    #[test]
    fn overlap_is_rejected() {
        let records = vec![
            record(0, 2),
            record(2, 2),
            record(4, 2),
            record(6, 2),
            record(8, 2),
            record(10, 2),
            record(11, 2),
        ];
        let err = VideoTraceSet::new("v", 15, records, None).unwrap_err();
        assert!(matches!(err, TraceError::Alignment(ref m) if m.contains("overlap")), "{err}");
    }

    #[test]
    fn wrong_frame_count_is_rejected() {
        let mut r = record(0, 2);
        r.frame_sizes.pop();
        assert!(r.validate().is_err());
    }

    #[test]
    fn bitrate_serializes_as_mbps() {
        let json = serde_json::to_string(&config()).unwrap();
        assert_eq!(json, r#"{"bitrate":3.0,"frame_rate":1,"resolution":[1280,720]}"#);
        let back: EncodingConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, config());
        assert!(serde_json::from_str::<Bitrate>("-1.0").is_err());
    }
}
