use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pfedwn_cli::config::{ExperimentConfig, Mode};
use pfedwn_cli::runner;

/// Channel-aware personalized federated learning simulator.
#[derive(Parser)]
#[command(name = "pfedwn", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Configuration file (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dot-path configuration overrides, e.g. `channel.gamma_th=15`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Personalized training with channel-aware selection and EM weights.
    Pfedwn(CommonArgs),
    /// Local-only baseline on the target client.
    Local(CommonArgs),
    /// Federated averaging over the selected participants.
    Fedavg(CommonArgs),
    /// FedAvg with a proximal local objective.
    Fedprox(CommonArgs),
    /// Average-selected-neighbor sweeps over the parameter grid.
    ChannelSweep(CommonArgs),
    /// Oracle validation suites.
    Validate(CommonArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, args) = match cli.command {
        Command::Pfedwn(a) => (Mode::Pfedwn, a),
        Command::Local(a) => (Mode::Local, a),
        Command::Fedavg(a) => (Mode::Fedavg, a),
        Command::Fedprox(a) => (Mode::Fedprox, a),
        Command::ChannelSweep(a) => (Mode::ChannelSweep, a),
        Command::Validate(a) => (Mode::Validate, a),
    };

    if let Ok(threads) = std::env::var("PFEDWN_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n > 0 => {
                // Ignore failure if a pool already exists.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("config error: PFEDWN_THREADS must be a positive integer");
                return ExitCode::from(2);
            }
        }
    }

    match load_and_run(mode, &args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_and_run(mode: Mode, args: &CommonArgs) -> Result<(), pfedwn_cli::RunnerError> {
    let overrides: Vec<(String, String)> = args
        .overrides
        .iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| {
                    pfedwn_cli::RunnerError::Config(format!("override `{kv}` is not KEY=VALUE"))
                })
        })
        .collect::<Result<_, _>>()?;

    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path, &overrides)?,
        None => ExperimentConfig::from_json("{}", &overrides)?,
    };
    config.mode = mode;
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    runner::run(&config)
}
