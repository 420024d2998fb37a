use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use log::info;
use trolley_core::io::{self, files, LoadedScenario};
use trolley_core::sim::{run, Outcome};

#[derive(Parser)]
#[command(name = "trolley", version, about = "Plan and simulate a two-robot trolley transport")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write log, reference, timing, plot quantities and summary.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory; defaults to `$TROLLEY_OUT_DIR/<name>`, then `out/<name>`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// `key.path=value`, repeatable. Values are parsed as JSON when possible.
        #[arg(long = "override", value_name = "K=V")]
        overrides: Vec<String>,
        #[arg(long, env = "TROLLEY_OUT_DIR", hide_env_values = true)]
        out_root: Option<PathBuf>,
    },
    /// Compute only the global path and write its waypoints as CSV.
    Plan {
        #[arg(long)]
        scenario: PathBuf,
        /// Destination file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "override", value_name = "K=V")]
        overrides: Vec<String>,
    },
    /// Recompute the summary metrics of a finished run directory.
    Metrics {
        dir: PathBuf,
    },
    /// Scenario file utilities.
    Scenario {
        #[command(subcommand)]
        command: ScenarioCommand,
    },
}

#[derive(Subcommand)]
enum ScenarioCommand {
    /// Parse and validate a scenario, printing its hash.
    Validate { file: PathBuf },
}

fn load(path: &Path, overrides: &[String], seed: Option<u64>) -> Result<LoadedScenario> {
    let mut parsed = overrides
        .iter()
        .map(|s| io::parse_override(s))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(seed) = seed {
        parsed.push(("seed".into(), seed.into()));
    }
    Ok(LoadedScenario::from_path(path, &parsed)?)
}

fn exit_code(outcome: Outcome) -> u8 {
    match outcome {
        Outcome::GoalReached => 0,
        Outcome::Timeout => 2,
        Outcome::IntegrityViolation => 3,
    }
}

fn execute(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Run {
            scenario,
            out,
            seed,
            overrides,
            out_root,
        } => {
            let loaded = load(&scenario, &overrides, seed)?;
            let built = loaded.build()?;
            let dir = out.unwrap_or_else(|| out_root.unwrap_or_else(|| "out".into()).join(&loaded.file.name));
            info!("running {} with seed {}", loaded.file.name, loaded.file.seed);
            let result = run(&built)?;
            let summary = io::write_run_outputs(&dir, &loaded, &result)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            eprintln!("{}: {} after {} ticks, outputs in {}", loaded.file.name, summary.outcome.as_str(), summary.ticks, dir.display());
            Ok(exit_code(result.outcome))
        }
        Command::Plan { scenario, out, overrides } => {
            let built = load(&scenario, &overrides, None)?.build()?;
            let path = built.reference_path()?;
            match out {
                Some(file) => io::log::write_reference(&file, &path)?,
                None => {
                    let mut w = csv::Writer::from_writer(std::io::stdout());
                    w.write_record(["x", "y", "theta"])?;
                    for p in &path.waypoints {
                        w.write_record([p.x.to_string(), p.y.to_string(), p.theta.to_string()])?;
                    }
                    w.flush()?;
                }
            }
            eprintln!("{} waypoints, {:.3} m", path.len(), path.length());
            Ok(0)
        }
        Command::Metrics { dir } => {
            let m = io::metrics_from_dir(&dir).with_context(|| format!("reading {}", dir.join(files::LOG).display()))?;
            println!("{}", serde_json::to_string_pretty(&m)?);
            Ok(0)
        }
        Command::Scenario {
            command: ScenarioCommand::Validate { file },
        } => {
            let loaded = load(&file, &[], None)?;
            loaded.build()?;
            println!("{} ok sha256 {}", file.display(), loaded.hash());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
