//! Run configuration: a TOML document, then `STARSTREAM_` environment
//! overrides, then command-line flags.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use starstream::controller::{Ablation, ControllerParams};
use starstream::sim::Fidelity;
use starstream::trace::NetworkModelParams;

use crate::error::{CliError, CliResult};

pub const ENV_PREFIX: &str = "STARSTREAM_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Fixed,
    Adarate,
    Mpc,
    #[default]
    Starstream,
}

/// `v1` freezes γ at 1; `v2` swaps in the alternate predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AblationKind {
    V1,
    V2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum FidelityArg {
    EventDriven,
    Analytic,
}

impl From<FidelityArg> for Fidelity {
    fn from(f: FidelityArg) -> Self {
        match f {
            FidelityArg::EventDriven => Fidelity::EventDriven,
            FidelityArg::Analytic => Fidelity::Analytic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    /// Network traces to generate.
    pub count: usize,
    /// Seconds per network trace.
    pub duration: u64,
    /// Video trace sets to generate.
    pub videos: usize,
    pub video_duration: u32,
    /// Native capture frame rate of generated videos.
    pub frame_rate: u32,
    pub network: NetworkModelParams,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            count: 10,
            duration: 600,
            videos: 0,
            video_duration: 120,
            frame_rate: 15,
            network: NetworkModelParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    /// Trace CSV files, or directories searched for them.
    pub network_traces: Vec<PathBuf>,
    /// Video trace directories, or directories of them.
    pub video_traces: Vec<PathBuf>,
    /// Predictor specs evaluated by `eval-predictor`.
    pub predictors: Vec<String>,
    /// Predictor spec used by the adaptive controllers.
    pub predictor: String,
    /// Predictor spec used under ablation `v2`.
    pub v2_predictor: Option<String>,
    pub controller: ControllerKind,
    pub ablation: Option<AblationKind>,
    pub fidelity: FidelityArg,
    /// Content seconds per session; the whole video when unset.
    pub duration: Option<u32>,
    pub params: ControllerParams,
    pub gen: GenConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out: None,
            jobs: None,
            network_traces: Vec::new(),
            video_traces: Vec::new(),
            predictors: vec!["hm".into(), "ma".into()],
            predictor: "hm".into(),
            v2_predictor: None,
            controller: ControllerKind::default(),
            ablation: None,
            fidelity: FidelityArg::EventDriven,
            duration: None,
            params: ControllerParams::default(),
            gen: GenConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path` (if any) and applies environment overrides from `env`.
    pub fn load<I>(path: Option<&Path>, env: I) -> CliResult<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::validation(format!("config {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::validation(format!("config {}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        let mut overrides: Vec<_> = env
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|k| (k.to_ascii_lowercase(), v)))
            .filter(|(k, _)| !k.is_empty())
            .collect();
        overrides.sort();
        for (key, raw) in overrides {
            apply_override(&mut table, &key, &raw)?;
        }
        RunConfig::deserialize(toml::Value::Table(table))
            .map_err(|e| CliError::validation(format!("config: {e}")))
    }

    pub fn out_dir(&self) -> CliResult<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::usage("an output directory is required (--out or `out`)"))
    }

    pub fn ablation(&self) -> Ablation {
        Ablation {
            freeze_gamma: self.ablation == Some(AblationKind::V1),
            fixed_gop: None,
        }
    }

    /// Predictor spec for the adaptive controllers after the ablation.
    pub fn controller_predictor(&self) -> CliResult<&str> {
        match (self.ablation, &self.v2_predictor) {
            (Some(AblationKind::V2), Some(p)) => Ok(p),
            (Some(AblationKind::V2), None) => Err(CliError::validation(
                "ablation v2 needs `v2_predictor` in the config",
            )),
            _ => Ok(&self.predictor),
        }
    }

    /// Label used in result files, e.g. `starstream-v1`.
    pub fn label(&self) -> String {
        let base = match self.controller {
            ControllerKind::Fixed => "fixed",
            ControllerKind::Adarate => "adarate",
            ControllerKind::Mpc => "mpc",
            ControllerKind::Starstream => "starstream",
        };
        match self.ablation {
            Some(AblationKind::V1) => format!("{base}-v1"),
            Some(AblationKind::V2) => format!("{base}-v2"),
            None => base.to_owned(),
        }
    }
}

/// `params__alpha` sets `[params] alpha`. Values are parsed as TOML and
/// kept as strings when they do not parse.
fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> CliResult<()> {
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
    let parts: Vec<&str> = key.split("__").collect();
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut node = table;
    for p in parents {
        let entry = node
            .entry((*p).to_owned())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry.as_table_mut().ok_or_else(|| {
            CliError::validation(format!("{ENV_PREFIX}{}: `{p}` is not a table", key.to_uppercase()))
        })?;
    }
    node.insert((*last).to_owned(), value);
    Ok(())
}
