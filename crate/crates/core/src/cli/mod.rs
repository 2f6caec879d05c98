//! Command-line front end: `gen`, `train`, `eval`, `attack`, `preview`.
//!
//! Settings come from defaults, then an optional `key = value` file given by
//! `--config`, then command-line flags; flags win. The resolved settings are
//! written to `<out>/config.resolved`.

mod commands;
mod config;

use std::ffi::OsString;

use clap::{Args, Parser, Subcommand};

pub use config::{RunConfig, DEFAULT_ATTACKS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "pmc",
    version,
    about = "Point-wise manifold mixing for point-cloud networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (train.pcb and test.pcb).
    Gen(GenArgs),
    /// Train a model and write a checkpoint and metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the clean test split.
    Eval(EvalArgs),
    /// Evaluate a checkpoint under a grid of test-time attacks.
    Attack(AttackArgs),
    /// Mix two clouds at the input layer and dump them as text.
    Preview(PreviewArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// key = value settings file
    #[arg(long)]
    pub config: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub rho: Option<String>,
    #[arg(long)]
    pub beta: Option<String>,
    #[arg(long, value_parser = ["pmc-r", "pmc-k"])]
    pub mode: Option<String>,
    /// Hook level (0..K) or `random`
    #[arg(long)]
    pub layer: Option<String>,
    #[arg(long, value_parser = ["before", "after", "off"])]
    pub tnet: Option<String>,
    #[arg(long, value_parser = ["pointnet-mini", "edgeconv-mini"])]
    pub arch: Option<String>,
    #[arg(long, value_parser = ["cls", "seg"])]
    pub task: Option<String>,
    /// Output directory
    #[arg(long)]
    pub out: Option<String>,
    /// Directory holding train.pcb and test.pcb
    #[arg(long)]
    pub data: Option<String>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated shape families
    #[arg(long)]
    pub families: Option<String>,
    #[arg(long)]
    pub per_class: Option<String>,
    #[arg(long)]
    pub points: Option<String>,
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long, value_parser = ["adam", "sgd-cosine"])]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub lr_floor: Option<String>,
    #[arg(long)]
    pub reg_weight: Option<String>,
    /// Fixed mixing ratio instead of Beta draws
    #[arg(long)]
    pub lambda: Option<String>,
    /// Train without the augmentation path
    #[arg(long)]
    pub no_augment: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: Option<String>,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: Option<String>,
    /// Comma-separated attacks, e.g. `noise:0.002,drop:0.2,rotate:x:30`
    #[arg(long)]
    pub attacks: Option<String>,
}

#[derive(Debug, Args)]
pub struct PreviewArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Training-split index of the first cloud
    #[arg(long)]
    pub first: Option<String>,
    /// Training-split index of the second cloud
    #[arg(long)]
    pub second: Option<String>,
    #[arg(long)]
    pub lambda: Option<String>,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                eprint!("{e}");
                return EXIT_USAGE;
            }
            print!("{e}");
            return EXIT_OK;
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
