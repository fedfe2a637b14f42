use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spore_cli::{parse_config, run_experiment, ConfigError, ExperimentConfig, RunError, RunOptions};

#[derive(Parser)]
#[command(name = "spore", version, about = "Experiments for the spore/host branching process")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Master seed; overrides experiment.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Artifact directory; overrides output.dir.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Worker threads for Monte Carlo batches. Results do not depend on it.
        #[arg(long)]
        threads: Option<usize>,
        /// Allow a randomized run without a seed; the drawn seed is recorded.
        #[arg(long)]
        ephemeral: bool,
    },
    /// Check a config and print the model's validation report.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(path: &Path) -> Result<ExperimentConfig, RunError> {
    let text = std::fs::read_to_string(path).map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text).map_err(RunError::Config)
}

fn validate(path: &Path) -> Result<(), RunError> {
    let cfg = load(path)?;
    let report = cfg.params.validate(false);
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    if report.passed {
        Ok(())
    } else {
        Err(RunError::Config(ConfigError::new("model", "model validation failed")))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            out_dir,
            threads,
            ephemeral,
        } => load(&config).and_then(|cfg| {
            let report = run_experiment(
                &cfg,
                &RunOptions {
                    out_dir,
                    seed,
                    threads,
                    ephemeral,
                },
            )?;
            print!("{}", report.summary);
            if let Some(seed) = report.config.experiment.seed() {
                println!("seed: {seed}");
            }
            for path in &report.artifacts {
                println!("wrote {}", path.display());
            }
            Ok(())
        }),
        Command::Validate { config } => validate(&config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
