use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use qloc_cli::{run, Command, RunOptions, OUT_ENV};

/// Localization experiments for Schrödinger operators with two-valued
/// disorder potentials.
#[derive(Parser, Debug)]
#[command(name = "qloc", version)]
struct Cli {
    command: Command,
    /// JSON config, or a manifest.json from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (takes precedence over QLOC_OUT and the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 1 is the reproducibility mode.
    #[arg(long)]
    threads: Option<usize>,
    /// Run fig1/fig2 at full subgrid resolution.
    #[arg(long)]
    full: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("qloc: cannot configure {t} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let opts = RunOptions {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
        full: cli.full,
        env_out: std::env::var_os(OUT_ENV).map(PathBuf::from),
    };
    match run(cli.command, &opts) {
        Ok(o) => {
            println!("{}: wrote {} artifacts to {}", cli.command.name(), o.manifest.artifacts.len() + 1, o.out_dir.display());
            println!("config_hash={}", o.manifest.config_hash);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("qloc {}: {e}", cli.command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
