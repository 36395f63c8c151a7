use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tendon_harness::config::{ScenarioConfig, ScenarioId};
use tendon_harness::teleop::{replay_file, serve_teleop, ServeConfig, SessionConfig};
use tendon_harness::train::{train_schema, SchemaKind, TrainConfig};
use tendon_harness::{run_scenario, Error, Result};

#[derive(Parser)]
#[command(name = "tendon", version, about = "Scenarios, teleoperation and training for the tendon-driven arm")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scripted scenario and write metrics.json plus trajectory CSVs.
    Run {
        scenario: ScenarioId,
        /// JSON scenario config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config seed; one of the two must give it.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: the config's out_dir, else out/<scenario>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Host the teleoperation WebSocket server on 127.0.0.1.
    Serve {
        #[arg(long, default_value_t = 8765)]
        port: u16,
        /// JSON session config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Where recorded demonstrations go.
        #[arg(long, default_value = ".")]
        record_dir: PathBuf,
    },
    /// Replay a recorded demonstration open-loop and print the report.
    Replay {
        file: PathBuf,
        /// Multiple of real time; 0 runs as fast as possible.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
    },
    /// Train a schema from a JSON config and save it.
    Train {
        schema: SchemaKind,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { scenario, config, seed, out } => {
            let cfg = ScenarioConfig::load(config.as_deref(), Some(scenario), seed, out)?;
            let dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("out").join(scenario.name()));
            let output = run_scenario(&cfg)?;
            for p in output.write(&dir)? {
                println!("{}", p.display());
            }
        }
        Command::Serve { port, config, record_dir } => {
            let session = match config {
                Some(p) => serde_json::from_str::<SessionConfig>(&std::fs::read_to_string(&p)?)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
                None => SessionConfig::default(),
            };
            let handle = serve_teleop(ServeConfig { session, record_dir }, port)?;
            eprintln!("teleop server listening on ws://{}", handle.local_addr());
            handle.wait();
        }
        Command::Replay { file, speed } => {
            let speed = if speed == 0.0 { None } else { Some(speed) };
            let report = replay_file(&file, speed)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Train { schema, config, out } => {
            let cfg = TrainConfig::load(&config, out)?;
            let dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("out").join("train"));
            train_schema(schema, &cfg, &dir)?;
            println!("{}", dir.display());
        }
    }
    Ok(())
}
