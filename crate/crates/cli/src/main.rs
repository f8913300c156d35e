//! `starstream`: trace generation, predictor evaluation, session simulation
//! and result comparison.

mod cmd;
mod config;
mod error;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{AblationKind, ControllerKind, FidelityArg, RunConfig};
use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "starstream", version, about)]
struct Cli {
    /// TOML run configuration. `STARSTREAM_*` variables override it and
    /// flags override both.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-pair work; all cores when unset.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Repeat for more detail on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate seeded synthetic network and video traces plus a manifest.
    GenTraces {
        #[arg(long)]
        count: Option<usize>,
        /// Seconds per network trace.
        #[arg(long)]
        duration: Option<u64>,
        #[arg(long)]
        videos: Option<usize>,
        #[arg(long)]
        video_duration: Option<u32>,
    },
    /// Score throughput predictors on network traces.
    EvalPredictor {
        /// Trace CSV or directory; repeatable.
        #[arg(long)]
        network: Vec<PathBuf>,
        /// `hm[:w]`, `ma[:w]`, `file:<path>` or `cmd:<command>`; repeatable.
        #[arg(long = "predictor")]
        predictors: Vec<String>,
    },
    /// Simulate every (video, trace) pair under one controller.
    Simulate {
        #[arg(long)]
        network: Vec<PathBuf>,
        /// Video trace directory or a directory of them; repeatable.
        #[arg(long)]
        video: Vec<PathBuf>,
        #[arg(long, value_enum)]
        controller: Option<ControllerKind>,
        #[arg(long, value_enum)]
        ablation: Option<AblationKind>,
        #[arg(long, value_enum)]
        fidelity: Option<FidelityArg>,
        /// Predictor spec for adarate and starstream.
        #[arg(long)]
        predictor: Option<String>,
        /// Content seconds per session.
        #[arg(long)]
        duration: Option<u32>,
    },
    /// Compare result directories written by `simulate`.
    Compare {
        #[arg(required = true, num_args = 2..)]
        dirs: Vec<PathBuf>,
    },
    /// Build profile tables and the pruned stream format per video.
    Profile {
        #[arg(long)]
        video: Vec<PathBuf>,
    },
}

fn resolve(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), std::env::vars())?;
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.jobs.is_some() {
        cfg.jobs = cli.jobs;
    }
    if cli.out.is_some() {
        cfg.out.clone_from(&cli.out);
    }
    match &cli.command {
        Command::GenTraces {
            count,
            duration,
            videos,
            video_duration,
        } => {
            let g = &mut cfg.gen;
            g.count = count.unwrap_or(g.count);
            g.duration = duration.unwrap_or(g.duration);
            g.videos = videos.unwrap_or(g.videos);
            g.video_duration = video_duration.unwrap_or(g.video_duration);
        }
        Command::EvalPredictor {
            network,
            predictors,
        } => {
            if !network.is_empty() {
                cfg.network_traces.clone_from(network);
            }
            if !predictors.is_empty() {
                cfg.predictors.clone_from(predictors);
            }
        }
        Command::Simulate {
            network,
            video,
            controller,
            ablation,
            fidelity,
            predictor,
            duration,
        } => {
            if !network.is_empty() {
                cfg.network_traces.clone_from(network);
            }
            if !video.is_empty() {
                cfg.video_traces.clone_from(video);
            }
            cfg.controller = controller.unwrap_or(cfg.controller);
            if ablation.is_some() {
                cfg.ablation = *ablation;
            }
            cfg.fidelity = fidelity.unwrap_or(cfg.fidelity);
            if let Some(p) = predictor {
                cfg.predictor.clone_from(p);
            }
            if duration.is_some() {
                cfg.duration = *duration;
            }
        }
        Command::Profile { video } => {
            if !video.is_empty() {
                cfg.video_traces.clone_from(video);
            }
        }
        Command::Compare { .. } => {}
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> CliResult<()> {
    let cfg = resolve(cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::validation(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::GenTraces { .. } => cmd::gen::run(&cfg),
        Command::EvalPredictor { .. } => cmd::eval::run(&cfg),
        Command::Simulate { .. } => cmd::simulate::run(&cfg),
        Command::Compare { dirs } => cmd::compare::run(&cfg, dirs),
        Command::Profile { .. } => cmd::profile::run(&cfg),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();

    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
