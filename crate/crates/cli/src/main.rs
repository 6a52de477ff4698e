use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thermal_pinn::experiments::{self, ExperimentConfig, Preset};
use thermal_pinn::Error;

/// Spatio-temporal transformer oil temperature and ageing experiments.
#[derive(Debug, Parser)]
#[command(name = "thermal-pinn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment configuration; defaults to the chosen preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the configuration).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Global seed (overrides the configuration).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Built-in configuration used when no --config is given.
    #[arg(long, global = true, value_enum, default_value_t = PresetArg::Desk)]
    preset: PresetArg,
    /// Maximum number of concurrent training runs.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PresetArg {
    Desk,
    Full,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the heat-diffusion reference field.
    SolvePde,
    /// Train one network and score it against the reference field.
    Train,
    /// Train every configured scheme for every configured seed.
    CompareSchemes,
    /// Hyperparameter sweep over architecture and data sizes.
    Sweep,
    /// Winding temperature, ageing and loss-of-life comparison.
    Ageing,
    /// Repeated training with mean and spread of the predicted field.
    Uncertainty,
    /// Print the effective configuration as JSON.
    ShowConfig,
}

fn config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::preset(match cli.preset {
            PresetArg::Desk => Preset::Desk,
            PresetArg::Full => Preset::Full,
        }),
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print<T: Serialize>(v: T) -> Result<(), Error> {
    println!("{}", serde_json::to_string_pretty(&v)?);
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = config(cli)?;
    match cli.command {
        Command::SolvePde => print(experiments::cmd_solve_pde(&cfg)?),
        Command::Train => print(experiments::cmd_train(&cfg)?),
        Command::CompareSchemes => print(experiments::cmd_compare_schemes(&cfg)?.schemes),
        Command::Sweep => {
            let s = experiments::cmd_hyperparam_sweep(&cfg)?;
            print(serde_json::json!({"models": s.models, "winner": s.winner}))
        }
        Command::Ageing => print(experiments::cmd_ageing(&cfg)?),
        Command::Uncertainty => print(experiments::cmd_uncertainty(&cfg)?),
        Command::ShowConfig => {
            println!("{}", cfg.to_json()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    // Usage errors exit with 1; 2 is reserved for numerical failures.
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
