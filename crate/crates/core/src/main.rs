//! `textmtl` — train, evaluate, and compare text classifiers from the
//! command line. Exit code 0 on success, 2 for configuration/validation
//! mistakes, 1 for runtime failures.

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use textmtl_core::runner::{self, OUTPUT_ENV};

#[derive(Parser)]
#[command(name = "textmtl", version, about = "Multi-task text classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a TOML config and write its artifacts.
    Train {
        /// Path to the run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's random seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a saved checkpoint against a labeled CSV.
    Eval {
        /// Path to a checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// CSV of texts and labels to score.
        #[arg(long)]
        data: PathBuf,
        /// Which of the checkpoint's tasks to evaluate.
        #[arg(long)]
        task: String,
    },
    /// Merge two or more report JSON files into a comparison table.
    Compare {
        /// Report files produced by `train` or `eval`.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out_override = std::env::var_os(OUTPUT_ENV).map(PathBuf::from);
    let out_override = out_override.as_deref();

    let result = match cli.command {
        Command::Train { config, seed, epochs } => {
            runner::cmd_train(&config, seed, epochs, out_override).map(|artifacts| {
                let mut lines = vec![
                    format!("checkpoint: {}", artifacts.checkpoint.display()),
                    format!("train log:  {}", artifacts.train_log.display()),
                ];
                for (task, path) in &artifacts.reports {
                    lines.push(format!("report:     {} ({task})", path.display()));
                }
                lines.join("\n")
            })
        }
        Command::Eval { checkpoint, data, task } => {
            runner::cmd_eval(&checkpoint, &data, &task, out_override).map(|artifacts| {
                format!(
                    "{}\nreport: {}",
                    artifacts.report.to_text(),
                    artifacts.report_json.display()
                )
            })
        }
        Command::Compare { reports } => {
            runner::cmd_compare(&reports, out_override).map(|artifacts| {
                format!(
                    "{}\ncomparison: {}",
                    artifacts.rendered,
                    artifacts.comparison_json.display()
                )
            })
        }
    };

    match result {
        Ok(message) => {
            // The work is already done and persisted; a closed stdout
            // (e.g. piping into `head`) must not turn it into a failure.
            let _ = writeln!(io::stdout(), "{message}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
