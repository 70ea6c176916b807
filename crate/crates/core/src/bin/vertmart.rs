use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use vertmart::cli::{listing, run, ExperimentConfig};

#[derive(Parser, Debug)]
#[command(name = "vertmart", version, about = "Vertical martingale experiments on submersions")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Worker threads for the path ensemble.
        #[arg(long)]
        jobs: Option<usize>,
        /// Directory for the results CSV and summary JSON.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Replaces the master seed of the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print corpus and experiment names.
    List,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VERTMART_LOG", "error")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match args.command {
        Command::List => {
            print!("{}", listing());
            ExitCode::SUCCESS
        }
        Command::Run {
            config,
            jobs,
            out,
            seed,
        } => match run_config(&config, jobs, &out, seed) {
            Ok(code) => ExitCode::from(code),
            Err(e) => {
                error!("{e}");
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
    }
}

fn run_config(config: &Path, jobs: Option<usize>, out: &Path, seed: Option<u64>) -> vertmart::Result<u8> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let summary = match jobs {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| vertmart::Error::Config(e.to_string()))?;
            pool.install(|| run(&cfg, out))?
        }
        None => run(&cfg, out)?,
    };
    println!(
        "{}: {}",
        summary.experiment,
        if summary.verdict.exit_code() == 0 {
            "pass"
        } else {
            "fail"
        }
    );
    Ok(summary.verdict.exit_code() as u8)
}
