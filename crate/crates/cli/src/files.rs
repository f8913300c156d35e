//! Input discovery and atomic output writes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use walkdir::WalkDir;

use crate::error::{CliError, CliResult};

/// Every referenced path must exist before any work starts.
pub fn require_existing(paths: &[PathBuf], what: &str) -> CliResult<()> {
    let missing: Vec<String> = paths
        .iter()
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CliError::validation(format!("missing {what}: {}", missing.join(", "))))
    }
}

/// Trace CSV files named directly or found under the given directories,
/// sorted by path.
pub fn network_trace_files(roots: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    require_existing(roots, "network trace paths")?;
    let mut out = Vec::new();
    for root in roots {
        if root.is_file() {
            out.push(root.clone());
            continue;
        }
        for entry in WalkDir::new(root).sort_by_file_name() {
            let entry = entry.map_err(|e| CliError::validation(e.to_string()))?;
            if entry.file_type().is_file() && entry.path().extension().is_some_and(|e| e == "csv") {
                out.push(entry.into_path());
            }
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

fn is_video_dir(dir: &Path) -> bool {
    dir.join("video.json").is_file()
        || fs::read_dir(dir).is_ok_and(|mut it| {
            it.any(|e| e.is_ok_and(|e| e.path().extension().is_some_and(|x| x == "jsonl")))
        })
}

/// Video trace directories, either named directly or one level below the
/// given directories.
pub fn video_trace_dirs(roots: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    require_existing(roots, "video trace paths")?;
    let mut out = Vec::new();
    for root in roots {
        if is_video_dir(root) {
            out.push(root.clone());
            continue;
        }
        let mut children: Vec<PathBuf> = fs::read_dir(root)
            .with_context(|| format!("reading {}", root.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir() && is_video_dir(p))
            .collect();
        if children.is_empty() {
            return Err(CliError::validation(format!(
                "{} holds no video traces",
                root.display()
            )));
        }
        children.sort();
        out.extend(children);
    }
    out.sort();
    out.dedup();
    Ok(out)
}

/// Writes through a temporary file in the same directory, then renames, so a
/// reader never sees a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path
        .file_name()
        .with_context(|| format!("{} has no file name", path.display()))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    f.write_all(bytes)?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Builds a CSV in memory and writes it atomically.
pub fn write_csv<F>(path: &Path, fill: F) -> anyhow::Result<()>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> anyhow::Result<()>,
{
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        fill(&mut w)?;
        w.flush()?;
    }
    write_atomic(path, &buf)
}
