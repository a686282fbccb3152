//! `lfi-har`: generate synthetic cohorts and run the evaluation tasks.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lfi_har::app::{self, AppError, RunOptions, Task};
use lfi_har::Exec;

#[derive(Parser)]
#[command(name = "lfi-har", version, about = "Activity recognition from LFI eye sensors and a head IMU")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort: one CSV per participant plus a manifest.
    Synth {
        /// Configuration file replacing the built-in defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Override one key, `key=value`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Run a task on a generated dataset and write reports.
    Run {
        /// One of rfc, cnn, transfer, ablate, dsp-demo.
        task: String,
        /// Dataset directory or its manifest; not needed for dsp-demo.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Configuration file replacing the dataset's stored configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Defaults to the seed the dataset was generated with.
        #[arg(long)]
        seed: Option<u64>,
        /// Report directory.
        #[arg(long)]
        out: PathBuf,
        /// Folds evaluated at the same time.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
}

fn usage_error(message: String) -> AppError {
    use clap::CommandFactory;
    let usage = Cli::command().render_usage();
    AppError::Config(format!("{message}\n\n{usage}"))
}

fn execute(cli: Cli) -> Result<String, AppError> {
    match cli.command {
        Command::Synth { config, seed, out, sets } => {
            let cfg = app::layered_config(config.as_deref(), &sets)?;
            let m = app::synth(&cfg, &out, seed, Exec::default())?;
            Ok(format!(
                "wrote {} participants, {} windows ({} after balancing) to {}\n",
                m.participants.len(),
                m.raw_windows,
                m.balanced_windows,
                out.display()
            ))
        }
        Command::Run {
            task,
            dataset,
            config,
            seed,
            out,
            jobs,
            sets,
        } => {
            let task: Task = task.parse().map_err(usage_error)?;
            let dataset = match (task, dataset) {
                (_, Some(d)) => d,
                (Task::DspDemo, None) => PathBuf::new(),
                (_, None) => return Err(usage_error(format!("task `{task}` needs --dataset"))),
            };
            let r = app::run(&RunOptions {
                dataset,
                task,
                config,
                sets,
                seed,
                out,
                jobs,
            })?;
            Ok(r.stdout)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("lfi-har: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
