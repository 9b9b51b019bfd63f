use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use scorefusion::harness::{run_command, Command};

#[derive(Parser)]
#[command(name = "scorefusion", version, about = "Fuse pre-trained score models through KL barycenters")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// JSON config file
    #[arg(long)]
    config: PathBuf,
    /// Root seed (for `experiment`, replaces the configured seed list)
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $SCOREFUSION_OUT_DIR, then the config, then ./out)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write an auxiliary score field: exact mixture score or a trained MLP
    TrainAux(Common),
    /// Learn fusion weights by score matching
    FuseScore(Common),
    /// Learn fusion weights by Frank-Wolfe on the KL objective
    FuseVanilla(Common),
    /// Train the from-scratch MLP baseline
    TrainBaseline(Common),
    /// Generate samples from a (fused) score field
    Sample(Common),
    /// W1 and histogram of a sample file against a reference
    Evaluate(Common),
    /// Run a full low-data comparison sweep
    Experiment(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = match cli.command {
        Cmd::TrainAux(a) => (Command::TrainAux, a),
        Cmd::FuseScore(a) => (Command::FuseScore, a),
        Cmd::FuseVanilla(a) => (Command::FuseVanilla, a),
        Cmd::TrainBaseline(a) => (Command::TrainBaseline, a),
        Cmd::Sample(a) => (Command::Sample, a),
        Cmd::Evaluate(a) => (Command::Evaluate, a),
        Cmd::Experiment(a) => (Command::Experiment, a),
    };
    match run_command(cmd, &args.config, args.seed, args.out.as_deref()) {
        Ok(outcome) => {
            for p in &outcome.written {
                println!("{}", p.display());
            }
            if outcome.partial {
                eprintln!("some cells failed; see report.json");
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
