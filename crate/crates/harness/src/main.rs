use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use temperflow_harness::config::{ExperimentConfig, ExperimentKind};
use temperflow_harness::output::{summary_table, write_outputs};
use temperflow_harness::{run_experiment, Result};

#[derive(Parser)]
#[command(name = "temperflow", version, about = "Tempered transport-map sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        replications: Option<usize>,
    },
    /// Parse and check a config without running it.
    Validate { config: PathBuf },
    /// Time generation against MH on the config's first target.
    Bench {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            println!("{}: ok ({}, hash {})", config.display(), cfg.experiment.as_str(), cfg.hash());
        }
        Command::Run {
            config,
            seed,
            out,
            replications,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(r) = replications {
                cfg.replications = r;
            }
            if let Some(o) = out {
                cfg.output = o;
            }
            execute(cfg)?;
        }
        Command::Bench { config, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.experiment = ExperimentKind::Timing;
            if let Some(o) = out {
                cfg.output = o;
            }
            execute(cfg)?;
        }
    }
    Ok(())
}

fn execute(cfg: ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    let report = run_experiment(&cfg)?;
    let files = write_outputs(&cfg.output, &cfg, &report)?;
    print!("{}", summary_table(&report));
    println!("wrote {} files to {}", files.len(), cfg.output.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
