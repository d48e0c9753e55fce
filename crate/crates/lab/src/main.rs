use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use svip_lab::commands::{self, Format, Output};
use svip_lab::{io, LabError, LoadedConfig};

/// Speculative decoding experiments on small tabular models.
#[derive(Debug, Parser)]
#[command(name = "svip", version)]
struct Cli {
    /// Run config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replace the config's seed list with this single seed.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "svip-out")]
    out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = OutFormat::Csv)]
    format: OutFormat,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Decode every policy, seed and prompt; write tokens and rounds.
    Decode,
    /// Per-policy experiment reports with oracle comparison and speedup.
    Experiment,
    /// Acceptance-rate bounds over random or model distribution pairs.
    BoundsEval,
    /// Sampled-versus-exact output distribution check (exit 3 on failure).
    Equivalence,
    /// Oracle draft-length distribution.
    OracleStats,
}

fn run(cli: &Cli) -> Result<Output, LabError> {
    let path = cli.config.as_ref().ok_or_else(|| LabError::config("--config", "a run config is required"))?;
    let cfg = LoadedConfig::load(path)?.with_seed_override(cli.seed_override);
    let fmt = match cli.format {
        OutFormat::Csv => Format::Csv,
        OutFormat::Json => Format::Json,
    };
    let out = match cli.command {
        Command::Decode => commands::decode(&cfg, fmt)?,
        Command::Experiment => commands::experiment(&cfg, fmt)?,
        Command::BoundsEval => commands::bounds_eval(&cfg, fmt)?,
        Command::Equivalence => commands::equivalence(&cfg, fmt)?,
        Command::OracleStats => commands::oracle_stats(&cfg, fmt)?,
    };
    for (name, bytes) in &out.files {
        io::write_atomic(&cli.out.join(name), bytes)?;
    }
    Ok(out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            for line in &out.summary {
                println!("{line}");
            }
            if out.failed {
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("svip: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
