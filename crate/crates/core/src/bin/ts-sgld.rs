use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ts_sgld::config::ExperimentConfig;
use ts_sgld::experiment::{self, ExperimentError, EXIT_CHECK_FAILED, EXIT_RUNTIME};

#[derive(Parser)]
#[command(version, about = "Collaborative bandits with SGLD Thompson sampling")]
struct Cli {
    /// key=value config file; defaults apply when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides run.output_dir)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    seed_base: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the generated reward matrix to <out>/env.txt
    GenEnv,
    /// Run every policy over every seed
    Run,
    /// Check eluder lengths against the dimension bound
    EluderCheck,
    /// Write the low/mid/high bucket of every user
    Buckets,
}

fn load(cli: &Cli) -> Result<ExperimentConfig, String> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            ExperimentConfig::parse(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(s) = cli.seed_base {
        cfg.seed_base = s;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn exec(cli: &Cli, cfg: &ExperimentConfig) -> Result<i32, ExperimentError> {
    let out = &cfg.output_dir;
    match cli.command {
        Command::GenEnv => {
            let path = experiment::write_env(cfg, out)?;
            println!("wrote {}", path.display());
            Ok(0)
        }
        Command::Run => {
            let outcome = experiment::run_experiment(cfg)?;
            for f in &outcome.failures {
                eprintln!("failed: {f}");
            }
            for p in &outcome.files {
                println!("wrote {}", p.display());
            }
            Ok(outcome.exit_code())
        }
        Command::EluderCheck => {
            let check = experiment::eluder_check(cfg)?;
            let text = check.to_text();
            print!("{text}");
            std::fs::create_dir_all(out).map_err(|source| ExperimentError::Io {
                path: out.clone(),
                source,
            })?;
            let path = out.join("eluder.txt");
            std::fs::write(&path, text).map_err(|source| ExperimentError::Io { path, source })?;
            Ok(check.exit_code())
        }
        Command::Buckets => {
            let [low, mid, high] = experiment::write_buckets(cfg, out)?;
            println!("low {low}\nmid {mid}\nhigh {high}");
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CHECK_FAILED as u8);
        }
    };
    match exec(&cli, &cfg) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code().clamp(0, EXIT_RUNTIME) as u8)
        }
    }
}
