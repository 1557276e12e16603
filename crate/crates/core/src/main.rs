use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use flsim::output::emit_outputs;
use flsim::{run_simulation, Error, SimConfig};

#[derive(Parser)]
#[command(name = "flsim", version, about = "Federated-learning simulator with an eavesdropping model-manipulation attacker")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation and write rounds.csv, summary.json and friends.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// `key.path=value`, applied before validation. Repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Worker threads (default: all cores). Outputs do not depend on it.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Parse and validate a config, then print the resolved form.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn exit_for(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    if e.is_config() {
        ExitCode::from(1)
    } else {
        ExitCode::from(2)
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Validate { config, overrides } => match SimConfig::from_path(&config, &overrides) {
            Ok(cfg) => {
                println!("{}", serde_json::to_string_pretty(&cfg.echo()).expect("echo serializes"));
                ExitCode::SUCCESS
            }
            Err(e) => exit_for(&e),
        },
        Command::Simulate {
            config,
            seed,
            out,
            mut overrides,
            threads,
        } => {
            if let Some(s) = seed {
                overrides.push(format!("seed={s}"));
            }
            let cfg = match SimConfig::from_path(&config, &overrides) {
                Ok(c) => c,
                Err(e) => return exit_for(&e),
            };
            let out_dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads.unwrap_or(0)).build() {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: thread pool: {e}");
                    return ExitCode::from(2);
                }
            };
            let started = Instant::now();
            let result = pool.install(|| {
                let records = run_simulation(&cfg)?;
                let files = emit_outputs(&records, &cfg, &out_dir, Some(started.elapsed()))?;
                Ok::<_, Error>((records, files))
            });
            match result {
                Ok((records, files)) => {
                    let last = records.last().expect("rounds >= 1");
                    println!("rounds: {}, final global accuracy: {:.4}", records.len(), last.test_accuracy);
                    for f in files {
                        println!("wrote {}", f.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => exit_for(&e),
            }
        }
    }
}
