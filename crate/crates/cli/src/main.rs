//! Batch driver: ingest market data, value it, simulate the bargaining
//! market and analyse the results. Every invocation writes one output
//! directory with a manifest that can be replayed.

mod commands;
mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use config::Config;
use manifest::{digest_file, OutputDir, RunManifest};

const EXIT_VALIDATION: u8 = 2;
const EXIT_COMPUTATION: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "tipnet", version, about = "Feedback-driven bargaining market toolkit")]
struct Cli {
    /// JSON config with optional sections ingest, intrinsic, simulation,
    /// hysteresis, cointegration and forecast.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; must be empty or absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true, env = "TIPNET_SEED")]
    seed: Option<u64>,
    /// Worker threads for ensembles; results do not depend on it.
    #[arg(long, global = true, env = "TIPNET_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Parse a monthly market CSV into real fundamentals.
    Ingest { csv: PathBuf },
    /// Intrinsic value series from fundamentals.
    Intrinsic {
        fundamentals: PathBuf,
        /// Report the backdated value without growing it to the window end.
        #[arg(long)]
        no_forward_correction: bool,
    },
    /// Simulate the market against an intrinsic series.
    Simulate {
        intrinsic: PathBuf,
        #[arg(long, default_value_t = 1)]
        runs: usize,
        /// Ticks per run; defaults to the length of the intrinsic series.
        #[arg(long)]
        ticks: Option<usize>,
    },
    /// Decline-probability hysteresis of simulated runs or of a market.
    Hysteresis {
        /// Simulated run files.
        #[arg(long = "run")]
        runs: Vec<PathBuf>,
        /// Directory whose CSV files are simulated runs.
        #[arg(long)]
        runs_dir: Option<PathBuf>,
        /// Market series; requires --intrinsic.
        #[arg(long, requires = "intrinsic", conflicts_with_all = ["runs", "runs_dir"])]
        market: Option<PathBuf>,
        #[arg(long, requires = "market")]
        intrinsic: Option<PathBuf>,
    },
    /// Unit-root and cointegration tests of a market against its intrinsic value.
    Cointegration {
        #[arg(long)]
        market: PathBuf,
        #[arg(long)]
        intrinsic: PathBuf,
    },
    /// Loss and gain distributions over projected fundamentals.
    Forecast {
        fundamentals: PathBuf,
        /// Months after the last observation.
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Re-run a recorded invocation and compare output digests.
    Replay { manifest: PathBuf },
}

#[derive(Debug)]
pub enum Failure {
    /// Bad arguments, config or input files.
    Validation(anyhow::Error),
    /// The computation itself failed or did not reproduce.
    Computation(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => EXIT_VALIDATION,
            Failure::Computation(_) => EXIT_COMPUTATION,
        }
    }
}

fn validation<T>(r: anyhow::Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::Validation)
}

fn absolute(p: &Path) -> Result<PathBuf, Failure> {
    std::fs::canonicalize(p)
        .with_context(|| format!("input file {} does not exist", p.display()))
        .map_err(Failure::Validation)
}

/// Resolves every input path and folds run directories into file lists so
/// the recorded command does not depend on the working directory.
fn resolve(command: Command) -> Result<Command, Failure> {
    Ok(match command {
        Command::Ingest { csv } => Command::Ingest { csv: absolute(&csv)? },
        Command::Intrinsic {
            fundamentals,
            no_forward_correction,
        } => Command::Intrinsic {
            fundamentals: absolute(&fundamentals)?,
            no_forward_correction,
        },
        Command::Simulate { intrinsic, runs, ticks } => Command::Simulate {
            intrinsic: absolute(&intrinsic)?,
            runs,
            ticks,
        },
        Command::Hysteresis {
            runs,
            runs_dir,
            market: Some(m),
            intrinsic: Some(i),
        } if runs.is_empty() && runs_dir.is_none() => Command::Hysteresis {
            runs,
            runs_dir: None,
            market: Some(absolute(&m)?),
            intrinsic: Some(absolute(&i)?),
        },
        Command::Hysteresis { runs, runs_dir, .. } => {
            let files = commands::collect_runs(&runs, runs_dir.as_deref())?;
            Command::Hysteresis {
                runs: files.iter().map(|f| absolute(f)).collect::<Result<_, _>>()?,
                runs_dir: None,
                market: None,
                intrinsic: None,
            }
        }
        Command::Cointegration { market, intrinsic } => Command::Cointegration {
            market: absolute(&market)?,
            intrinsic: absolute(&intrinsic)?,
        },
        Command::Forecast {
            fundamentals,
            horizon,
            runs,
        } => Command::Forecast {
            fundamentals: absolute(&fundamentals)?,
            horizon,
            runs,
        },
        Command::Replay { manifest } => Command::Replay {
            manifest: absolute(&manifest)?,
        },
    })
}

fn inputs(command: &Command) -> Vec<&Path> {
    match command {
        Command::Ingest { csv } => vec![csv],
        Command::Intrinsic { fundamentals, .. } | Command::Forecast { fundamentals, .. } => vec![fundamentals],
        Command::Simulate { intrinsic, .. } => vec![intrinsic],
        Command::Hysteresis {
            runs,
            market,
            intrinsic,
            ..
        } => runs.iter().chain(market).chain(intrinsic).collect(),
        Command::Cointegration { market, intrinsic } => vec![market, intrinsic],
        Command::Replay { manifest } => vec![manifest],
    }
    .into_iter()
    .map(|p| p.as_ref())
    .collect()
}

fn command_name(command: &Command) -> &'static str {
    match command {
        Command::Ingest { .. } => "ingest",
        Command::Intrinsic { .. } => "intrinsic",
        Command::Simulate { .. } => "simulate",
        Command::Hysteresis { .. } => "hysteresis",
        Command::Cointegration { .. } => "cointegration",
        Command::Forecast { .. } => "forecast",
        Command::Replay { .. } => "replay",
    }
}

/// Folds command flags that shadow config keys into the config.
fn apply_flags(command: &Command, cfg: &mut Config) {
    match command {
        Command::Intrinsic {
            no_forward_correction: true,
            ..
        } => cfg.intrinsic.forward_correction = false,
        Command::Forecast { horizon, runs, .. } => {
            if let Some(h) = horizon {
                cfg.forecast.horizon_months = *h;
            }
            if let Some(r) = runs {
                cfg.forecast.n_runs = *r;
            }
        }
        _ => {}
    }
}

fn default_out(command: &Command) -> PathBuf {
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);
    PathBuf::from("tipnet-out").join(format!("{}-{stamp}", command_name(command)))
}

/// Runs a resolved command with a final config and writes its manifest.
fn execute(command: Command, cfg: Config, out_root: PathBuf, args: Vec<String>) -> Result<RunManifest, Failure> {
    let started = Instant::now();
    let input_digests = inputs(&command)
        .into_iter()
        .map(digest_file)
        .collect::<anyhow::Result<Vec<_>>>()
        .map_err(Failure::Validation)?;
    let mut out = validation(OutputDir::create(out_root))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Failure::Computation(e.into()))?;
    let outcome = pool.install(|| match &command {
        Command::Ingest { csv } => commands::ingest(csv, &cfg, &mut out),
        Command::Intrinsic { fundamentals, .. } => commands::intrinsic(fundamentals, &cfg, &mut out),
        Command::Simulate { intrinsic, runs, ticks } => commands::simulate(intrinsic, *runs, *ticks, &cfg, &mut out),
        Command::Hysteresis {
            market: Some(m),
            intrinsic: Some(i),
            ..
        } => commands::hysteresis_market(m, i, &cfg, &mut out),
        Command::Hysteresis { runs, .. } => commands::hysteresis_runs(runs, &cfg, &mut out),
        Command::Cointegration { market, intrinsic } => commands::cointegration(market, intrinsic, &cfg, &mut out),
        Command::Forecast { fundamentals, .. } => commands::forecast(fundamentals, &cfg, &mut out),
        Command::Replay { .. } => unreachable!("replay is dispatched separately"),
    });
    if let Err(f) = outcome {
        out.discard();
        return Err(f);
    }
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        args,
        command,
        seed: cfg.seed,
        config: cfg,
        inputs: input_digests,
        outputs: Vec::new(),
        wall_time_seconds: started.elapsed().as_secs_f64(),
    };
    out.finish(manifest).map_err(Failure::Computation)
}

fn replay(manifest_path: &Path, out: Option<PathBuf>, jobs: Option<usize>, args: Vec<String>) -> Result<(), Failure> {
    let recorded = validation(RunManifest::load(manifest_path))?;
    for input in &recorded.inputs {
        let now = validation(digest_file(Path::new(&input.path)))?;
        if now.sha256 != input.sha256 {
            return Err(Failure::Validation(anyhow!(
                "input {} changed since the recorded run",
                input.path
            )));
        }
    }
    let out_root = out.unwrap_or_else(|| {
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        dir.with_file_name(format!("{name}-replay"))
    });
    let mut cfg = recorded.config.clone();
    if jobs.is_some() {
        cfg.jobs = jobs;
    }
    let fresh = execute(recorded.command.clone(), cfg, out_root.clone(), args)?;
    let mut mismatches = Vec::new();
    for old in &recorded.outputs {
        match fresh.outputs.iter().find(|f| f.path == old.path) {
            Some(new) if new.sha256 == old.sha256 => {}
            Some(_) => mismatches.push(format!("{} differs", old.path)),
            None => mismatches.push(format!("{} missing", old.path)),
        }
    }
    for new in &fresh.outputs {
        if !recorded.outputs.iter().any(|f| f.path == new.path) {
            mismatches.push(format!("{} unexpected", new.path));
        }
    }
    if mismatches.is_empty() {
        println!(
            "replay reproduced {} outputs in {}",
            fresh.outputs.len(),
            out_root.display()
        );
        Ok(())
    } else {
        Err(Failure::Computation(anyhow!(
            "replay mismatch: {}",
            mismatches.join(", ")
        )))
    }
}

fn run(cli: Cli, args: Vec<String>) -> Result<(), Failure> {
    let command = resolve(cli.command)?;
    if let Command::Replay { manifest } = &command {
        return replay(manifest, cli.out, cli.jobs, args);
    }
    let mut cfg = match &cli.config {
        Some(path) => validation(Config::load(path))?,
        None => Config::default(),
    };
    apply_flags(&command, &mut cfg);
    let cfg = validation(cfg.finalize(cli.seed, cli.jobs))?;
    let out_root = cli.out.unwrap_or_else(|| default_out(&command));
    let manifest = execute(command, cfg, out_root.clone(), args)?;
    println!("wrote {} files to {}", manifest.outputs.len() + 1, out_root.display());
    Ok(())
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (kind, e) = match &f {
                Failure::Validation(e) => ("invalid input", e),
                Failure::Computation(e) => ("computation failed", e),
            };
            eprintln!("tipnet: {kind}: {e:#}");
            ExitCode::from(f.code())
        }
    }
}
