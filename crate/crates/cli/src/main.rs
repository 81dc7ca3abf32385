use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use qtps_cli::config::ExperimentConfig;
use qtps_cli::error::{CliError, CliResult};
use qtps_cli::experiment::{run, Subcommand};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    Simulate,
    Tps,
    Tis,
    Mfpt,
    Stationary,
    Wigner,
    Analyze,
    Compare,
}

impl From<Command> for Subcommand {
    fn from(c: Command) -> Self {
        match c {
            Command::Simulate => Subcommand::Simulate,
            Command::Tps => Subcommand::Tps,
            Command::Tis => Subcommand::Tis,
            Command::Mfpt => Subcommand::Mfpt,
            Command::Stationary => Subcommand::Stationary,
            Command::Wigner => Subcommand::Wigner,
            Command::Analyze => Subcommand::Analyze,
            Command::Compare => Subcommand::Compare,
        }
    }
}

/// Path and interface sampling for classical and quantum Brownian motion in a double well.
///
/// Settings come from the config file, then `--set` overrides, then the
/// dedicated flags (`--seed`, `--out`, `--threads`), later sources winning.
#[derive(Debug, Parser)]
#[command(name = "qtps", version)]
struct Cli {
    command: Command,
    /// TOML configuration; omitted means all defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default `runs/<subcommand>`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Override a config key, e.g. `--set bath.t_b=0.3` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn execute(cli: &Cli) -> CliResult<PathBuf> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut cfg = ExperimentConfig::parse(&text, &cli.overrides)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    let sub: Subcommand = cli.command.into();
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(sub.name()));
    run(sub, &cfg, &out)?;
    Ok(out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(out) => {
            println!("{}", out.join("manifest.toml").display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let rec = e.record();
            eprintln!("{}", serde_json::to_string(&rec).expect("error record serializes"));
            let sub: Subcommand = cli.command.into();
            let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(sub.name()));
            if std::fs::create_dir_all(&dir).is_ok() {
                let _ = std::fs::write(dir.join("error.json"), serde_json::to_string_pretty(&rec).unwrap_or_default());
            }
            ExitCode::FAILURE
        }
    }
}
