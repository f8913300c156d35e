use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::simulate::{PairMetrics, RunSummary, Status, SUMMARY_FILE};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::files::{require_existing, write_csv, write_json};

type Key = (String, String);

struct ResultSet {
    label: String,
    pairs: BTreeMap<Key, Option<PairMetrics>>,
}

fn load(dir: &Path) -> CliResult<ResultSet> {
    let path = dir.join(SUMMARY_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    let summary: RunSummary = serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    let pairs = summary
        .pairs
        .into_iter()
        .map(|p| {
            let m = if p.status == Status::Ok { p.metrics } else { None };
            ((p.video_id, p.trace_id), m)
        })
        .collect();
    Ok(ResultSet {
        label: summary.label,
        pairs,
    })
}

fn describe(keys: &BTreeSet<&Key>) -> String {
    keys.iter()
        .map(|(v, t)| format!("{v}/{t}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Empirical CDF points `(value, fraction ≤ value)` of `values`.
pub fn cdf_points(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter().enumerate().map(|(i, &x)| (x, (i + 1) as f64 / n)).collect()
}

#[derive(Serialize)]
struct SetReport {
    label: String,
    mean: BTreeMap<&'static str, f64>,
    /// Mean paired difference against the reference set.
    mean_delta: BTreeMap<&'static str, f64>,
}

#[derive(Serialize)]
struct Report {
    reference: String,
    pairs: usize,
    /// Pairs left out because some set stalled or failed on them.
    excluded: Vec<String>,
    sets: Vec<SetReport>,
}

pub fn run(cfg: &RunConfig, dirs: &[PathBuf]) -> CliResult<()> {
    let out = cfg.out_dir()?;
    if dirs.len() < 2 {
        return Err(CliError::usage("compare needs at least two result directories"));
    }
    require_existing(dirs, "result directories")?;
    let mut sets = dirs.iter().map(|d| load(d)).collect::<CliResult<Vec<_>>>()?;

    // Labels name the CDF series, so they must be distinct.
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for s in &sets {
        *counts.entry(s.label.clone()).or_default() += 1;
    }
    for (s, dir) in sets.iter_mut().zip(dirs) {
        if counts[&s.label] > 1 {
            s.label = format!("{}@{}", s.label, dir.display());
        }
    }

    let reference: BTreeSet<&Key> = sets[0].pairs.keys().collect();
    for s in &sets[1..] {
        let other: BTreeSet<&Key> = s.pairs.keys().collect();
        if other != reference {
            let only_ref: BTreeSet<&Key> = reference.difference(&other).copied().collect();
            let only_other: BTreeSet<&Key> = other.difference(&reference).copied().collect();
            return Err(CliError::validation(format!(
                "pair sets differ between {} and {}: only in the first [{}]; only in the second [{}]",
                sets[0].label,
                s.label,
                describe(&only_ref),
                describe(&only_other)
            )));
        }
    }

    let (common, excluded): (Vec<&Key>, Vec<&Key>) = reference
        .iter()
        .copied()
        .partition(|k| sets.iter().all(|s| s.pairs[*k].is_some()));
    if common.is_empty() {
        return Err(CliError::validation("no pair completed in every result set"));
    }
    let values = |s: &ResultSet, i: usize| -> Vec<f64> {
        common.iter().map(|k| s.pairs[*k].expect("completed").values()[i]).collect()
    };

    for (i, name) in PairMetrics::NAMES.iter().enumerate() {
        write_csv(&out.join(format!("cdf_{name}.csv")), |w| {
            w.write_record(["set", "value", "cdf"])?;
            for s in &sets {
                for (x, p) in cdf_points(&values(s, i)) {
                    w.write_record([s.label.clone(), format!("{x:.6}"), format!("{p:.6}")])?;
                }
            }
            Ok(())
        })?;
    }

    write_csv(&out.join("deltas.csv"), |w| {
        let mut header = vec!["video_id".to_owned(), "trace_id".to_owned(), "set".to_owned()];
        header.extend(PairMetrics::NAMES.iter().map(|n| format!("{n}_delta")));
        w.write_record(&header)?;
        let r = &sets[0];
        for s in &sets[1..] {
            for k in &common {
                let a = r.pairs[*k].expect("completed").values();
                let b = s.pairs[*k].expect("completed").values();
                let mut rec = vec![k.0.clone(), k.1.clone(), s.label.clone()];
                rec.extend((0..4).map(|i| format!("{:.6}", b[i] - a[i])));
                w.write_record(&rec)?;
            }
        }
        Ok(())
    })?;

    let n = common.len() as f64;
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / n;
    let report = Report {
        reference: sets[0].label.clone(),
        pairs: common.len(),
        excluded: excluded.iter().map(|(v, t)| format!("{v}/{t}")).collect(),
        sets: sets
            .iter()
            .map(|s| SetReport {
                label: s.label.clone(),
                mean: PairMetrics::NAMES
                    .iter()
                    .enumerate()
                    .map(|(i, n)| (*n, mean(values(s, i))))
                    .collect(),
                mean_delta: PairMetrics::NAMES
                    .iter()
                    .enumerate()
                    .map(|(i, n)| {
                        let d = values(s, i)
                            .iter()
                            .zip(values(&sets[0], i))
                            .map(|(b, a)| b - a)
                            .collect();
                        (*n, mean(d))
                    })
                    .collect(),
            })
            .collect(),
    };
    write_json(&out.join("report.json"), &report)?;
    Ok(())
}
