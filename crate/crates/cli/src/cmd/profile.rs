use rayon::prelude::*;
use serde::Serialize;
use starstream::profiler::{build_profile, prune_configs};
use starstream::trace::{load_video_trace_set, StreamFormat};

use crate::config::RunConfig;
use crate::error::{Class, ClassExt, CliError, CliResult};
use crate::files::{video_trace_dirs, write_atomic, write_json};

#[derive(Serialize)]
struct Pruned {
    video_id: String,
    format: Option<StreamFormat>,
    profile: String,
}

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    let out = cfg.out_dir()?;
    if cfg.video_traces.is_empty() {
        return Err(CliError::usage("no video traces given (--video or `video_traces`)"));
    }
    let dirs = video_trace_dirs(&cfg.video_traces)?;
    let rows = dirs
        .par_iter()
        .map(|dir| -> CliResult<Pruned> {
            let set = load_video_trace_set(dir).class(Class::Validation)?;
            let table = build_profile(&set, None).class(Class::Validation)?;
            let rel = format!("profiles/{}.json", set.video_id);
            let mut bytes = serde_json::to_vec_pretty(&table).map_err(anyhow::Error::from)?;
            bytes.push(b'\n');
            write_atomic(&out.join(&rel), &bytes)?;
            Ok(Pruned {
                video_id: set.video_id,
                format: prune_configs(&table, &cfg.params.bitrates),
                profile: rel,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    write_json(&out.join("formats.json"), &rows)?;
    Ok(())
}
