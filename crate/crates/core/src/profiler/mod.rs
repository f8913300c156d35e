//! Offline configuration profiling, (frame rate, resolution) pruning,
//! online content difficulty and the detection-matching oracle.

mod detection;
mod gamma;

pub use detection::{
    compute_f1, compute_uncertainty, frames_uncertainty, iou, match_counts, match_frame,
    Detection, FrameDetections, MatchCounts, MATCH_IOU, UNCERTAIN_CONFIDENCE,
};
pub use gamma::{
    estimate_accuracy, scaled_accuracy, update_gamma, GammaState, GAMMA_MAX, GAMMA_MIN,
    PROFILED_UNCERTAINTY_FLOOR,
};

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{Bitrate, EncodingConfig, StreamFormat, VideoTraceSet};

/// Seconds of content at the head of each video used for offline profiling.
pub const PROFILE_SECONDS: u32 = 20;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("video {video_id} covers {duration} s, profiling needs {needed} s")]
    TooShort {
        video_id: String,
        duration: u32,
        needed: u32,
    },
    #[error("video {video_id} has no records for: {}", .missing.join(", "))]
    MissingCandidates {
        video_id: String,
        missing: Vec<String>,
    },
    #[error("profile table has no entry for {0}")]
    MissingEntry(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Aggregates for one (config, GOP length) over the profiled span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub config: EncodingConfig,
    pub gop_length: u32,
    /// Reference accuracy `A(c)`.
    pub accuracy: f64,
    pub encode_delay: f64,
    pub decode_delay: f64,
    pub inference_delay: f64,
    /// Mean compressed frame size in bits.
    pub frame_size: f64,
    /// Mean size of the j-th frame of the GOP, so the I-frame keeps its
    /// weight in the optimizer's timing model.
    pub frame_sizes: Vec<f64>,
    /// Mean encode delay of the j-th frame of the GOP.
    pub encode_delays: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileTable {
    pub video_id: String,
    pub profile_seconds: u32,
    /// Uncertainty `u_p` of the profiled content.
    pub uncertainty: f64,
    entries: Vec<ProfileEntry>,
    #[serde(skip)]
    index: BTreeMap<(EncodingConfig, u32), usize>,
}

impl ProfileTable {
    pub fn from_entries(
        video_id: impl Into<String>,
        profile_seconds: u32,
        uncertainty: f64,
        entries: Vec<ProfileEntry>,
    ) -> Self {
        let mut table = Self {
            video_id: video_id.into(),
            profile_seconds,
            uncertainty,
            entries,
            index: BTreeMap::new(),
        };
        table.reindex();
        table
    }

    fn reindex(&mut self) {
        self.entries.sort_by_key(|e| (e.config, e.gop_length));
        self.index = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| ((e.config, e.gop_length), i))
            .collect();
    }

    pub fn entries(&self) -> &[ProfileEntry] {
        &self.entries
    }

    pub fn get(&self, config: EncodingConfig, gop_length: u32) -> Option<&ProfileEntry> {
        self.index.get(&(config, gop_length)).map(|&i| &self.entries[i])
    }

    pub fn entry(&self, config: EncodingConfig, gop_length: u32) -> Result<&ProfileEntry, ProfileError> {
        self.get(config, gop_length)
            .ok_or_else(|| ProfileError::MissingEntry(format!("{config} gop={gop_length}s")))
    }

    pub fn formats(&self) -> BTreeSet<StreamFormat> {
        self.entries.iter().map(|e| e.config.format()).collect()
    }

    pub fn bitrates(&self) -> BTreeSet<Bitrate> {
        self.entries.iter().map(|e| e.config.bitrate).collect()
    }

    pub fn gop_lengths(&self) -> BTreeSet<u32> {
        self.entries.iter().map(|e| e.gop_length).collect()
    }

    /// Mean reference accuracy of a configuration across profiled GOP
    /// lengths.
    pub fn config_accuracy(&self, config: EncodingConfig) -> Option<f64> {
        mean(self.entries.iter().filter(|e| e.config == config).map(|e| e.accuracy))
    }

    fn config_frame_size(&self, config: EncodingConfig) -> Option<f64> {
        mean(self.entries.iter().filter(|e| e.config == config).map(|e| e.frame_size))
    }

    pub fn save(&self, path: &Path) -> Result<(), ProfileError> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ProfileError> {
        let mut table: ProfileTable = serde_json::from_slice(&std::fs::read(path)?)?;
        table.reindex();
        Ok(table)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn mean_by_position<'a>(lists: impl Iterator<Item = &'a Vec<f64>>) -> Vec<f64> {
    let mut sums: Vec<f64> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for list in lists {
        if sums.len() < list.len() {
            sums.resize(list.len(), 0.0);
            counts.resize(list.len(), 0);
        }
        for (j, v) in list.iter().enumerate() {
            sums[j] += v;
            counts[j] += 1;
        }
    }
    sums.iter().zip(&counts).map(|(s, &c)| s / c.max(1) as f64).collect()
}

/// Profiles every (config, GOP length) series in `set` over GOPs starting
/// in the first [`PROFILE_SECONDS`] of content. When `required` is given,
/// every listed pair must be present.
pub fn build_profile(
    set: &VideoTraceSet,
    required: Option<(&[EncodingConfig], &[u32])>,
) -> Result<ProfileTable, ProfileError> {
    if set.duration() < PROFILE_SECONDS {
        return Err(ProfileError::TooShort {
            video_id: set.video_id.clone(),
            duration: set.duration(),
            needed: PROFILE_SECONDS,
        });
    }
    if let Some((configs, gops)) = required {
        let missing: Vec<String> = configs
            .iter()
            .flat_map(|c| gops.iter().map(move |g| (*c, *g)))
            .filter(|(c, g)| !set.has(*c, *g))
            .map(|(c, g)| format!("{c} gop={g}s"))
            .collect();
        if !missing.is_empty() {
            return Err(ProfileError::MissingCandidates {
                video_id: set.video_id.clone(),
                missing,
            });
        }
    }

    let mut entries = Vec::new();
    for (config, gop_length) in set.configs() {
        let records: Vec<_> = set
            .series(config, gop_length)
            .unwrap_or_default()
            .iter()
            .filter(|r| r.gop_start < PROFILE_SECONDS)
            .collect();
        let per_frame = |f: fn(&crate::trace::VideoUnitRecord) -> &Vec<f64>| {
            mean(records.iter().flat_map(|r| f(r).iter().copied())).unwrap_or(0.0)
        };
        entries.push(ProfileEntry {
            config,
            gop_length,
            accuracy: mean(records.iter().map(|r| r.accuracy)).unwrap_or(0.0),
            encode_delay: per_frame(|r| &r.encode_delays),
            decode_delay: per_frame(|r| &r.decode_delays),
            inference_delay: per_frame(|r| &r.inference_delays),
            frame_size: per_frame(|r| &r.frame_sizes),
            frame_sizes: mean_by_position(records.iter().map(|r| &r.frame_sizes)),
            encode_delays: mean_by_position(records.iter().map(|r| &r.encode_delays)),
        });
    }

    let span = f64::from(PROFILE_SECONDS);
    let uncertainty = match set.detections_in(0.0, span) {
        Some(frames) => frames_uncertainty(frames),
        None => mean(
            set.records()
                .filter(|r| r.gop_start < PROFILE_SECONDS)
                .map(|r| r.mean_confidence_uncertainty),
        )
        .unwrap_or(0.0),
    };
    Ok(ProfileTable::from_entries(
        set.video_id.clone(),
        PROFILE_SECONDS,
        uncertainty,
        entries,
    ))
}

/// Picks the (frame rate, resolution) that lands in the per-bitrate top 3
/// most often. Ties go to the higher mean accuracy, then to the smaller mean
/// frame size.
pub fn prune_configs(table: &ProfileTable, bitrates: &[Bitrate]) -> Option<StreamFormat> {
    let mut bitrates = bitrates.to_vec();
    bitrates.sort();
    bitrates.dedup();

    struct Score {
        hits: usize,
        acc_sum: f64,
        acc_n: usize,
        size_sum: f64,
    }
    let formats = table.formats();
    let mut scores: BTreeMap<StreamFormat, Score> = formats
        .iter()
        .map(|f| {
            (
                *f,
                Score {
                    hits: 0,
                    acc_sum: 0.0,
                    acc_n: 0,
                    size_sum: 0.0,
                },
            )
        })
        .collect();

    for &bitrate in &bitrates {
        let mut ranked: Vec<(StreamFormat, f64)> = formats
            .iter()
            .filter_map(|f| table.config_accuracy(f.with_bitrate(bitrate)).map(|a| (*f, a)))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for (rank, (format, acc)) in ranked.iter().enumerate() {
            let s = scores.get_mut(format).expect("format from table");
            if rank < 3 {
                s.hits += 1;
            }
            s.acc_sum += acc;
            s.acc_n += 1;
            s.size_sum += table
                .config_frame_size(format.with_bitrate(bitrate))
                .unwrap_or(0.0);
        }
    }

    scores
        .into_iter()
        .filter(|(_, s)| s.acc_n > 0)
        .map(|(f, s)| {
            let n = s.acc_n as f64;
            (f, s.hits, s.acc_sum / n, s.size_sum / n)
        })
        .max_by(|a, b| {
            a.1.cmp(&b.1)
                .then(a.2.total_cmp(&b.2))
                .then(b.3.total_cmp(&a.3))
                // Final deterministic key: prefer the smaller format.
                .then(b.0.cmp(&a.0))
        })
        .map(|(f, ..)| f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{gen_synthetic_video_trace, Resolution, RESOLUTION_CANDIDATES};
    use proptest::prelude::*;

    fn fmt(fps: u32, res: Resolution) -> StreamFormat {
        StreamFormat {
            frame_rate: fps,
            resolution: res,
        }
    }

    fn entry(config: EncodingConfig, accuracy: f64, frame_size: f64) -> ProfileEntry {
        ProfileEntry {
            config,
            gop_length: 2,
            accuracy,
            encode_delay: 0.01,
            decode_delay: 0.0,
            inference_delay: 0.0,
            frame_size,
            frame_sizes: vec![frame_size],
            encode_delays: vec![0.01],
        }
    }

    /// Table where `acc(format, bitrate)` is supplied by the closure.
    fn table_with(
        formats: &[StreamFormat],
        acc: impl Fn(usize, usize) -> f64,
        size: impl Fn(usize) -> f64,
    ) -> ProfileTable {
        let mut entries = Vec::new();
        for (bi, b) in Bitrate::candidates().into_iter().enumerate() {
            for (fi, f) in formats.iter().enumerate() {
                entries.push(entry(f.with_bitrate(b), acc(fi, bi), size(fi)));
            }
        }
        ProfileTable::from_entries("v", 20, 0.1, entries)
    }

    fn five_formats() -> Vec<StreamFormat> {
        vec![
            fmt(15, RESOLUTION_CANDIDATES[0]),
            fmt(15, RESOLUTION_CANDIDATES[1]),
            fmt(5, RESOLUTION_CANDIDATES[1]),
            fmt(3, RESOLUTION_CANDIDATES[2]),
            fmt(1, RESOLUTION_CANDIDATES[2]),
        ]
    }

    #[test]
    fn always_first_wins() {
        let formats = five_formats();
        let t = table_with(&formats, |fi, bi| 0.9 - 0.1 * fi as f64 + 0.001 * bi as f64, |_| 1.0);
        assert_eq!(prune_configs(&t, &Bitrate::candidates()), Some(formats[0]));
    }

    #[test]
    fn frequency_beats_peak_accuracy() {
        let formats = five_formats();
        // Format 3 ranks first at four bitrates but last at the other two
        // (4/6 top-3 hits); format 2 is never best but is top-3 at 6/6.
        let t = table_with(
            &formats,
            |fi, bi| match (fi, bi < 4) {
                (3, true) => 0.99,
                (3, false) => 0.1,
                (2, _) => 0.7,
                (4, true) => 0.65,
                (4, false) => 0.1,
                (1, true) => 0.6,
                (1, false) => 0.72,
                (0, true) => 0.5,
                (0, false) => 0.75,
                _ => unreachable!(),
            },
            |_| 1.0,
        );
        assert_eq!(prune_configs(&t, &Bitrate::candidates()), Some(formats[2]));
    }

    #[test]
    fn tie_on_count_goes_to_mean_accuracy_then_size() {
        let formats = five_formats();
        let t = table_with(
            &formats,
            |fi, _| [0.80, 0.81, 0.79, 0.3, 0.2][fi],
            |_| 1.0,
        );
        assert_eq!(prune_configs(&t, &Bitrate::candidates()), Some(formats[1]));

        let t = table_with(
            &formats,
            |fi, _| [0.8, 0.8, 0.8, 0.3, 0.2][fi],
            |fi| [3.0, 2.0, 5.0, 1.0, 1.0][fi],
        );
        assert_eq!(prune_configs(&t, &Bitrate::candidates()), Some(formats[1]));
    }

    #[test]
    fn profile_of_synthetic_video() {
        let format = fmt(15, RESOLUTION_CANDIDATES[1]);
        let configs: Vec<_> = Bitrate::candidates().into_iter().map(|b| format.with_bitrate(b)).collect();
        let set = gen_synthetic_video_trace(9, 60, 15, &configs, &[1, 2]).unwrap();
        let table = build_profile(&set, Some((&configs, &[1, 2]))).unwrap();

        for c in &configs {
            let want = set
                .series(*c, 2)
                .unwrap()
                .iter()
                .filter(|r| r.gop_start < 20)
                .map(|r| r.accuracy)
                .sum::<f64>()
                / 10.0;
            assert!((table.entry(*c, 2).unwrap().accuracy - want).abs() < 1e-12);
        }
        for w in configs.windows(2) {
            assert!(table.entry(w[1], 2).unwrap().accuracy >= table.entry(w[0], 2).unwrap().accuracy);
        }
        let expected_u = frames_uncertainty(set.detections_in(0.0, 20.0).unwrap());
        assert_eq!(table.uncertainty, expected_u);
        assert!(table.uncertainty > 0.0);
        assert_eq!(table.entry(configs[0], 2).unwrap().frame_sizes.len(), 30);
    }

    #[test]
    fn missing_candidates_are_listed() {
        let format = fmt(15, RESOLUTION_CANDIDATES[1]);
        let configs: Vec<_> = Bitrate::candidates().into_iter().map(|b| format.with_bitrate(b)).collect();
        let set = gen_synthetic_video_trace(9, 30, 15, &configs[..5], &[2]).unwrap();
        match build_profile(&set, Some((&configs, &[2]))) {
            Err(ProfileError::MissingCandidates { missing, .. }) => {
                assert_eq!(missing.len(), 1);
                assert!(missing[0].starts_with("9Mbps"));
            }
            other => panic!("expected missing candidates, got {other:?}"),
        }
        let short = gen_synthetic_video_trace(9, 10, 15, &configs, &[2]).unwrap();
        assert!(matches!(build_profile(&short, None), Err(ProfileError::TooShort { .. })));
    }

    #[test]
    fn profile_json_round_trip() {
        let t = table_with(&five_formats(), |fi, bi| 0.5 + 0.01 * (fi + bi) as f64, |_| 1.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("profile.json");
        t.save(&path).unwrap();
        let back = ProfileTable::load(&path).unwrap();
        assert_eq!(back, t);
        let c = five_formats()[2].with_bitrate(Bitrate::from_kbps(4500));
        assert_eq!(back.entry(c, 2).unwrap().accuracy, t.entry(c, 2).unwrap().accuracy);
    }

    proptest! {
        #[test]
        fn pruning_ignores_bitrate_order(
            accs in proptest::collection::vec(0.0..1.0f64, 30),
            perm in Just(Bitrate::candidates()).prop_shuffle(),
        ) {
            let formats = five_formats();
            let t = table_with(&formats, |fi, bi| accs[bi * 5 + fi], |fi| fi as f64);
            prop_assert_eq!(
                prune_configs(&t, &Bitrate::candidates()),
                prune_configs(&t, &perm)
            );
        }
    }
}
