use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fastspin_core::config::parse_alpha_list;
use fastspin_core::{emit_plots, run_experiment, write_artifacts, Error, ExperimentConfig, Overrides, Setup};

/// Environment variable consulted when `--threads` is absent.
const THREADS_ENV: &str = "FASTSPIN_THREADS";

#[derive(Parser)]
#[command(name = "fastspin-pe", version, about = "Fast-rotation primitive equation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML configuration.
    Run {
        config: PathBuf,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated rotation rates, e.g. `10,100,1000`.
        #[arg(long)]
        alpha: Option<String>,
        /// Worker threads (default: $FASTSPIN_THREADS, else 1).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Write plot data and gnuplot scripts for a finished run.
    Plots { dir: PathBuf },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Blowup { .. } | Error::EnsembleBlowup { .. } => 3,
        Error::Io(_) | Error::Format(_) => 4,
        _ => 2,
    }
}

fn threads(flag: Option<usize>) -> Result<usize, Error> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config {
                path: THREADS_ENV.into(),
                message: format!("`{v}` is not a thread count"),
            }),
        Err(_) => Ok(1),
    }
}

fn run(
    config: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    alpha: Option<String>,
    threads_flag: Option<usize>,
) -> Result<PathBuf, Error> {
    let mut cfg = ExperimentConfig::load(config)?;
    let overrides = Overrides {
        seed,
        output_dir: out,
        alpha_list: alpha.as_deref().map(parse_alpha_list).transpose()?,
    };
    overrides.apply(&mut cfg)?;
    let base = config.parent().unwrap_or(Path::new("."));
    let dir = if cfg.output_dir.is_absolute() {
        cfg.output_dir.clone()
    } else {
        base.join(&cfg.output_dir)
    };
    let setup = Setup::new(cfg, base, threads(threads_flag)?)?;
    for w in &setup.warnings {
        eprintln!("warning: {w}");
    }
    let artifacts = run_experiment(&setup, base)?;
    write_artifacts(&dir, &setup.config.to_toml(), &artifacts)?;
    Ok(dir)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            out,
            alpha,
            threads,
        } => run(&config, seed, out, alpha, threads).map(|dir| {
            println!("wrote {}", dir.display());
        }),
        Command::Plots { dir } => emit_plots(&dir).map(|files| {
            for f in files {
                println!("wrote {}", f.display());
            }
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
