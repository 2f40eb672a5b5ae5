use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use vdib::checkpoint::Checkpoint;
use vdib::data::{read_dataset, write_dataset};
use vdib::gradcheck::{default_formula, run_checks, Scope};
use vdib::harness::artifacts::write_text;
use vdib::harness::runs::{sweep_csv, STREAM_EVAL};
use vdib::harness::{
    evaluate_checkpoint, export_representations, run, sweep, task_samples, DataSplit, ExperimentConfig, ReprMode,
    SweepAxis, Task,
};
use vdib::mathcore::Rng;
use vdib::Error;

const EXIT_CHECK: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "vdib", version, about = "Spiking-encoder / ANN-decoder autoencoder experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML or JSON experiment file (`.json` selects JSON).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Start from the built-in desk defaults of a task instead of a file.
    #[arg(long)]
    task: Option<Task>,
    /// `key=value` override; dotted keys reach nested fields. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> vdib::Result<ExperimentConfig> {
        match (&self.config, self.task) {
            (Some(_), Some(_)) => Err(Error::config("pass either --config or --task, not both")),
            (Some(path), None) => ExperimentConfig::load(path, &self.overrides),
            (None, Some(task)) => ExperimentConfig::from_task(task, &self.overrides),
            (None, None) => Err(Error::config("one of --config or --task is required")),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every seed of an experiment.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Re-evaluate a checkpoint on its task's held-out data.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// One full run per value and seed along an axis; writes sweep.csv.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// beta, delta, tau_e or tau_d.
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        values: Vec<f64>,
    },
    /// Finite-difference and enumeration checks.
    Gradcheck {
        /// all, decoder, readout or oracle.
        #[arg(long, default_value = "all")]
        scope: Scope,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a split of a task's samples as a binary cache with a JSON sidecar.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "train")]
        split: DataSplit,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export readout spike counts (and optionally full trains) as CSV.
    ExportRepr {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sample cache from gen-data; defaults to the checkpoint task's test split.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Append every readout spike to each row.
        #[arg(long)]
        full: bool,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Serde(_) => EXIT_CONFIG,
        Error::Io { .. } | Error::Parse { .. } => EXIT_IO,
        Error::Shape(_) | Error::Invalid(_) | Error::State(_) => EXIT_CHECK,
    }
}

// A closed pipe on stdout is not an error worth a panic.
fn emit(text: &str) {
    let _ = std::io::stdout().write_all(text.as_bytes());
}

fn print_json<T: Serialize>(value: &T) -> vdib::Result<()> {
    emit(&format!("{}\n", serde_json::to_string_pretty(value)?));
    Ok(())
}

fn checkpoint_config(ck: &Checkpoint) -> vdib::Result<ExperimentConfig> {
    serde_json::from_value(ck.config.clone())
        .map_err(|e| Error::config(format!("checkpoint config is not an experiment config: {e}")))
}

fn export(checkpoint: &Path, dataset: Option<&Path>, count: Option<usize>, out: &Path, full: bool) -> vdib::Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let cfg = checkpoint_config(&ck)?;
    let mut samples = match dataset {
        Some(path) => read_dataset(path)?.0,
        None => task_samples(&cfg, DataSplit::Test, count)?,
    };
    if let Some(n) = count {
        samples.truncate(n);
    }
    let mode = if full { ReprMode::Full } else { ReprMode::Rates };
    let mut model = ck.model;
    let csv = export_representations(&mut model, &samples, mode, &mut Rng::new(cfg.vdib.seed, STREAM_EVAL))?;
    write_text(out, &csv)?;
    log::info!("wrote {} rows to {}", samples.len(), out.display());
    Ok(())
}

fn execute(command: Command) -> Result<(), u8> {
    let fail = |e: Error| {
        eprintln!("error: {e}");
        exit_code(&e)
    };
    match command {
        Command::Train { config } => {
            let cfg = config.load().map_err(fail)?;
            let report = run(&cfg).map_err(fail)?;
            print_json(&report).map_err(fail)
        }
        Command::Eval { checkpoint } => {
            let ck = Checkpoint::load(&checkpoint).map_err(fail)?;
            print_json(&evaluate_checkpoint(&ck).map_err(fail)?).map_err(fail)
        }
        Command::Sweep { config, axis, values } => {
            let cfg = config.load().map_err(fail)?;
            let rows = sweep(&cfg, axis, &values).map_err(fail)?;
            emit(&sweep_csv(axis, &rows));
            Ok(())
        }
        Command::Gradcheck { scope, seed } => {
            let reports = run_checks(scope, seed, default_formula()).map_err(fail)?;
            for r in &reports {
                emit(&format!("{r}\n"));
            }
            if reports.iter().all(|r| r.passed) {
                Ok(())
            } else {
                Err(EXIT_CHECK)
            }
        }
        Command::GenData { config, split, count, out } => {
            let cfg = config.load().map_err(fail)?;
            let samples = task_samples(&cfg, split, count).map_err(fail)?;
            let generation = serde_json::json!({ "split": split, "config": cfg });
            write_dataset(&out, &samples, &generation).map_err(fail)?;
            log::info!("wrote {} samples to {}", samples.len(), out.display());
            Ok(())
        }
        Command::ExportRepr { checkpoint, dataset, count, out, full } => {
            export(&checkpoint, dataset.as_deref(), count, &out, full).map_err(fail)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => ExitCode::from(code),
    }
}
