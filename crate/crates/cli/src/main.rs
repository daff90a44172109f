//! `warpfuse` command-line driver.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<warpfuse::Error> for CliError {
    fn from(e: warpfuse::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "warpfuse",
    version,
    about = "Non-rigid RGB-D reconstruction, pair alignment and evaluation",
    override_usage = "warpfuse [OPTIONS] <COMMAND> [--<section>.<key> <value>]..."
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// TOML config file; dotted `--section.key value` flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for all randomness (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap, 0 for all cores (overrides `threads`).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Track and fuse a sequence directory.
    Reconstruct(commands::ReconstructArgs),
    /// Dense non-rigid matches between two frames of a sequence.
    AlignPair(commands::AlignArgs),
    /// Generate a synthetic sequence in the dataset layout.
    Synth(commands::SynthArgs),
    /// Matching and reconstruction metrics over a dataset.
    Evaluate(commands::EvaluateArgs),
    /// Heatmap-network loss utilities.
    Losses {
        #[command(subcommand)]
        command: LossesCommand,
    },
    /// Write oracle heatmaps for a synthetic sequence.
    ExportHeatmaps(commands::ExportArgs),
}

#[derive(Subcommand, Debug)]
enum LossesCommand {
    /// Evaluate the training losses on exported network outputs.
    Eval(commands::LossesArgs),
}

type Overrides = Vec<(String, String)>;

/// Splits `--a.b value` and `--a.b=value` config overrides from the rest.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Overrides), CliError> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--").filter(|f| f.split('=').next().is_some_and(|k| k.contains('.'))) else {
            rest.push(arg);
            continue;
        };
        match flag.split_once('=') {
            Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| CliError::Usage(format!("--{flag} needs a value")))?;
                overrides.push((flag.to_string(), v));
            }
        }
    }
    Ok((rest, overrides))
}

fn run() -> Result<(), CliError> {
    let (args, overrides) = split_overrides(std::env::args().collect())?;
    let help = format!("Config keys (defaults):\n{}", config::key_listing());
    let matches = match Cli::command().after_long_help(help).try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) if !e.use_stderr() => {
            e.print()?;
            return Ok(());
        }
        Err(e) => {
            e.print()?;
            return Err(CliError::Usage(String::new()));
        }
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut cfg = RunConfig::load(cli.global.config.as_deref(), &overrides)?;
    if let Some(seed) = cli.global.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = cli.global.threads {
        cfg.threads = threads;
    }
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Reconstruct(a) => commands::reconstruct(&a, &cfg),
        Command::AlignPair(a) => commands::align_pair(&a, &cfg),
        Command::Synth(a) => commands::synth(&a, &cfg),
        Command::Evaluate(a) => commands::evaluate(&a, &cfg),
        Command::Losses {
            command: LossesCommand::Eval(a),
        } => commands::losses_eval(&a),
        Command::ExportHeatmaps(a) => commands::export_heatmaps(&a, &cfg),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !matches!(&e, CliError::Usage(m) if m.is_empty()) {
                eprintln!("warpfuse: {e}");
            }
            ExitCode::from(e.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(a: &[&str]) -> Vec<String> {
        a.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn overrides_are_split_from_flags() {
        let (rest, ov) = split_overrides(strings(&[
            "warpfuse",
            "reconstruct",
            "seq",
            "--weights.lambda_learned",
            "0",
            "--out",
            "o",
            "--alignment.icp.max_distance=0.2",
        ]))
        .unwrap();
        assert_eq!(rest, strings(&["warpfuse", "reconstruct", "seq", "--out", "o"]));
        assert_eq!(
            ov,
            vec![
                ("weights.lambda_learned".to_string(), "0".to_string()),
                ("alignment.icp.max_distance".to_string(), "0.2".to_string()),
            ]
        );
        assert!(split_overrides(strings(&["warpfuse", "--weights.lambda_reg"])).is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
