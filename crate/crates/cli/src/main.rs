use std::path::PathBuf;
use std::process::ExitCode;

use bregdiv_cli::{run, Command, Overrides};
use clap::Parser;

/// Learnable functional Bregman divergences: data generation, training,
/// clustering, k-NN evaluation, toy generation and gradient self-checks.
#[derive(Debug, Parser)]
#[command(name = "bregdiv", version)]
struct Args {
    command: Command,

    /// Flat-key JSON config file.
    #[arg(long)]
    config: PathBuf,

    /// Output directory; overrides `out_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Run seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let overrides = Overrides {
        out_dir: args.out,
        seed: args.seed,
    };
    match run(args.command, &args.config, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
