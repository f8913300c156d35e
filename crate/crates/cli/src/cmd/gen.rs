use std::path::Path;

use anyhow::Context;
use serde::Serialize;
use starstream::predictor::truth_prediction_lines;
use starstream::trace::{
    gen_synthetic_network_trace, gen_synthetic_video_trace, split_dataset, DatasetSplit,
    EncodingConfig, NetworkModelParams, GOP_LENGTH_CANDIDATES,
};

use crate::config::RunConfig;
use crate::error::{Class, ClassExt, CliError, CliResult};
use crate::files::{write_atomic, write_json};

#[derive(Serialize)]
struct Entry {
    id: String,
    path: String,
    seed: u64,
    duration: u64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    seed: u64,
    network: Vec<Entry>,
    videos: Vec<Entry>,
    /// Train/validation/test split of the network traces, when there are
    /// enough of them.
    split: Option<DatasetSplit>,
    /// Perfect-foresight prediction file covering every network trace.
    truth_predictions: String,
    network_model: &'a NetworkModelParams,
}

/// Seed of the `i`-th generated item.
fn item_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(i as u64)
}

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    let seed = cfg
        .seed
        .ok_or_else(|| CliError::usage("gen-traces needs --seed (or `seed` in the config)"))?;
    let out = cfg.out_dir()?;
    let g = &cfg.gen;
    if g.count == 0 && g.videos == 0 {
        return Err(CliError::validation("nothing to generate: count and videos are both 0"));
    }

    let mut network = Vec::new();
    let mut truth = Vec::new();
    for i in 0..g.count {
        let s = item_seed(seed, i);
        let trace = gen_synthetic_network_trace(s, g.duration, &g.network).class(Class::Validation)?;
        let rel = format!("network/{}/{}.csv", trace.location_tag, trace.trace_id);
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).context("serializing trace")?;
        write_atomic(&out.join(&rel), &buf)?;
        truth.extend(truth_prediction_lines(&trace, cfg.params.lookahead));
        network.push(Entry {
            id: trace.trace_id,
            path: rel,
            seed: s,
            duration: g.duration,
        });
    }

    let truth_rel = "predictions/truth.jsonl".to_owned();
    let mut buf = Vec::new();
    for line in &truth {
        serde_json::to_writer(&mut buf, line).context("serializing predictions")?;
        buf.push(b'\n');
    }
    write_atomic(&out.join(&truth_rel), &buf)?;

    let configs = EncodingConfig::all_candidates();
    let mut videos = Vec::new();
    for i in 0..g.videos {
        let s = item_seed(seed, i);
        let set = gen_synthetic_video_trace(s, g.video_duration, g.frame_rate, &configs, &GOP_LENGTH_CANDIDATES)
            .class(Class::Validation)?;
        let rel = format!("videos/{}", set.video_id);
        save_video(&set, &out.join(&rel))?;
        videos.push(Entry {
            id: set.video_id.clone(),
            path: rel,
            seed: s,
            duration: u64::from(set.duration()),
        });
    }

    let ids: Vec<String> = network.iter().map(|e| e.id.clone()).collect();
    let split = if ids.len() >= 10 {
        Some(split_dataset(&ids, seed).class(Class::Validation)?)
    } else {
        None
    };
    write_json(
        &out.join("manifest.json"),
        &Manifest {
            seed,
            network,
            videos,
            split,
            truth_predictions: truth_rel,
            network_model: &g.network,
        },
    )?;
    tracing::info!(traces = g.count, videos = g.videos, "generated traces in {}", out.display());
    Ok(())
}

/// Saves into a sibling staging directory and swaps it in.
fn save_video(set: &starstream::trace::VideoTraceSet, dir: &Path) -> anyhow::Result<()> {
    let parent = dir.parent().context("video path has no parent")?;
    std::fs::create_dir_all(parent)?;
    let staging = parent.join(format!(
        ".{}.tmp",
        dir.file_name().context("video path has no name")?.to_string_lossy()
    ));
    if staging.exists() {
        std::fs::remove_dir_all(&staging)?;
    }
    set.save(&staging).with_context(|| format!("writing {}", staging.display()))?;
    if dir.exists() {
        std::fs::remove_dir_all(dir)?;
    }
    std::fs::rename(&staging, dir)?;
    Ok(())
}
