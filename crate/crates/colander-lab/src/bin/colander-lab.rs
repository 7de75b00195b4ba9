use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use colander_lab::cli::{plot_data, run, Command as ConfigCommand};

/// Numerical potential-theory laboratory: recurrent obstacle sets, harmonic
/// measure by walk-on-spheres, capacities, and subharmonic constructions.
#[derive(Parser)]
#[command(name = "colander-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Args)]
struct RunArgs {
    /// Path to the experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Artifact directory (overrides the config's `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides the config's `seed`).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum CliCommand {
    /// Validate a profile and report its derived constants.
    ValidateProfile(RunArgs),
    /// Equilibrium capacity of the configured obstacle set.
    Capacity(RunArgs),
    /// Escape probability of the configured colander from the origin.
    Measure(RunArgs),
    /// Layered lower/upper bounds on the escape probability.
    Layers(RunArgs),
    /// Escape probabilities over a ladder of radii plus a decay fit.
    DecayStudy(RunArgs),
    /// Build the subharmonic construction and its diagnostics.
    Construct(RunArgs),
    /// Emit plot-ready two-column data from a finished artifact directory.
    PlotData {
        /// Artifact directory holding decay.csv or layers.csv.
        #[arg(long)]
        dir: PathBuf,
    },
}

fn dispatch(expected: ConfigCommand, args: &RunArgs) -> ExitCode {
    // The config's own command tag must agree with the subcommand.
    let declared = std::fs::read(&args.config)
        .ok()
        .and_then(|raw| serde_json::from_slice::<serde_json::Value>(&raw).ok())
        .and_then(|v| v["command"].as_str().map(str::to_string));
    if let Some(declared) = declared {
        if declared != expected.name() {
            eprintln!(
                "config declares command `{declared}` but `{}` was invoked",
                expected.name()
            );
            return ExitCode::from(2);
        }
    }
    match run(&args.config, args.out.as_deref(), args.seed) {
        Ok(outcome) => {
            println!("artifacts: {}", outcome.artifact_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e.inner());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        CliCommand::ValidateProfile(a) => dispatch(ConfigCommand::ValidateProfile, a),
        CliCommand::Capacity(a) => dispatch(ConfigCommand::Capacity, a),
        CliCommand::Measure(a) => dispatch(ConfigCommand::Measure, a),
        CliCommand::Layers(a) => dispatch(ConfigCommand::Layers, a),
        CliCommand::DecayStudy(a) => dispatch(ConfigCommand::DecayStudy, a),
        CliCommand::Construct(a) => dispatch(ConfigCommand::Construct, a),
        CliCommand::PlotData { dir } => match plot_data(dir) {
            Ok(files) => {
                for f in files {
                    println!("wrote {}", f.display());
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
    }
}
