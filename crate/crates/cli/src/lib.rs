//! Library side of the `bregdiv` command-line tool.
//!
//! Each subcommand reads one flat-key JSON config (see [`config`]), writes its
//! resolved form as `<command>.config.json` into the output directory, and
//! then writes CSV/JSON artifacts next to it. Failures map onto process exit
//! codes through [`CliError::exit_code`].

pub mod commands;
pub mod config;
pub mod error;

use std::fmt;
use std::path::{Path, PathBuf};

pub use config::RunConfig;
pub use error::{exit, CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    GenData,
    Train,
    Cluster,
    EvalKnn,
    Generate,
    GradCheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Cluster => "cluster",
            Command::EvalKnn => "eval-knn",
            Command::Generate => "generate",
            Command::GradCheck => "grad-check",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Loads `config_path`, applies `overrides`, and runs `command`.
pub fn run(command: Command, config_path: &Path, overrides: &Overrides) -> CliResult<()> {
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(dir) = &overrides.out_dir {
        cfg.out_dir = dir.display().to_string();
    }
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    run_config(command, &cfg)
}

/// Runs `command` with an already resolved config.
pub fn run_config(command: Command, cfg: &RunConfig) -> CliResult<()> {
    let out = cfg.out_dir();
    std::fs::create_dir_all(&out).map_err(|source| CliError::Io {
        path: out.clone(),
        source,
    })?;
    let resolved = out.join(format!("{command}.config.json"));
    std::fs::write(&resolved, cfg.to_json()).map_err(|source| CliError::Io {
        path: resolved.clone(),
        source,
    })?;
    match command {
        Command::GenData => commands::gen_data(cfg),
        Command::Train => commands::train(cfg),
        Command::Cluster => commands::cluster(cfg),
        Command::EvalKnn => commands::eval_knn(cfg),
        Command::Generate => commands::generate(cfg),
        Command::GradCheck => commands::grad_check_cmd(cfg),
    }
}
