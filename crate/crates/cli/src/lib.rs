//! The `meg` command-line tool: train a predictor, explain a molecule,
//! evaluate a checkpoint, or write a synthetic dataset.

pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde_json::json;

use meg_core::data::{load_csv, split, synth_task, DataError, Dataset, SynthKind, Task};
use meg_core::gnn::{evaluate, train_predictor, EvalMetrics, GnnError, PredictorModel};
use meg_core::molgraph::check_validity;
use meg_core::parse_smiles;
use meg_core::rl::{generate_counterfactuals, RlError};

use config::RunConfig;

pub mod exit {
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const DATA: i32 = 3;
    pub const DIVERGED: i32 = 4;
    pub const INVALID_MOLECULE: i32 = 5;
    pub const NO_COUNTERFACTUAL: i32 = 6;
    pub const TASK_MISMATCH: i32 = 7;
}

/// An error together with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Library errors often embed their source in their own message, so a
        // cause already spelled out by the previous link is not repeated.
        let mut shown = String::new();
        for cause in self.error.chain() {
            let text = cause.to_string();
            if shown.contains(&text) {
                continue;
            }
            if !shown.is_empty() {
                shown.push_str(": ");
            }
            shown.push_str(&text);
        }
        f.write_str(&shown)
    }
}

/// Marks a failure whose message was already printed (clap usage errors).
#[derive(Debug)]
struct Reported;

impl fmt::Display for Reported {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("invalid command line")
    }
}

impl std::error::Error for Reported {}

impl Failure {
    /// True when the message has already been written to stderr.
    pub fn already_reported(&self) -> bool {
        self.error.is::<Reported>()
    }
}

trait ExitCode<T> {
    fn code(self, code: i32) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ExitCode<T> for Result<T, E> {
    fn code(self, code: i32) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code,
            error: e.into(),
        })
    }
}

fn fail(code: i32, msg: impl fmt::Display) -> Failure {
    Failure {
        code,
        error: anyhow::anyhow!("{msg}"),
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "meg",
    version,
    about = "Counterfactual explanations for molecular property predictors"
)]
pub struct Cli {
    /// TOML file of flat configuration keys.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Override one configuration key; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Shorthand for `--set seed=N`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a predictor on a CSV dataset and write a checkpoint.
    Train {
        /// CSV file with a header row.
        #[arg(long)]
        data: PathBuf,
        /// Where to write the checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Per-epoch metrics as JSON lines (default: <checkpoint>.metrics.jsonl).
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Search for counterfactuals of one molecule and print the report.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        smiles: String,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on a CSV dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Write a synthetic dataset as CSV.
    Synth {
        /// contains_nitrogen or heavy_atom_count
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 400)]
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("cannot create a temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()).code(exit::OTHER),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .code(exit::OTHER)
        }
    }
}

fn data_code(e: &DataError) -> i32 {
    match e {
        DataError::BadFractions(_)
        | DataError::SynthTooSmall(_)
        | DataError::UnknownSynthTask(_) => exit::CONFIG,
        _ => exit::DATA,
    }
}

fn gnn_code(e: &GnnError) -> i32 {
    match e {
        GnnError::NonFiniteLoss { .. } => exit::DIVERGED,
        GnnError::LabelTaskMismatch(_) => exit::TASK_MISMATCH,
        _ => exit::DATA,
    }
}

fn load_dataset(path: &Path, task: Task, cfg: &RunConfig) -> Result<Dataset, Failure> {
    let (data, skipped) = load_csv(path, task, &cfg.columns).map_err(|e| Failure {
        code: data_code(&e),
        error: e.into(),
    })?;
    let mut stderr = std::io::stderr().lock();
    for row in &skipped {
        let line = serde_json::to_string(row).expect("skipped row serialises");
        let _ = writeln!(stderr, "{line}");
    }
    Ok(data)
}

fn load_checkpoint(path: &Path) -> Result<PredictorModel, Failure> {
    let file = std::fs::File::open(path)
        .with_context(|| format!("cannot open checkpoint {}", path.display()))
        .code(exit::DATA)?;
    PredictorModel::load(std::io::BufReader::new(file))
        .with_context(|| format!("cannot load checkpoint {}", path.display()))
        .code(exit::DATA)
}

fn check_task(cfg: &RunConfig, model: &PredictorModel) -> Result<(), Failure> {
    match cfg.task_override {
        Some(t) if t != model.task() => Err(fail(
            exit::TASK_MISMATCH,
            format!(
                "configured task {t} does not match the checkpoint's {}",
                model.task()
            ),
        )),
        _ => Ok(()),
    }
}

fn metrics_json(task: Task, m: &EvalMetrics) -> serde_json::Value {
    match task {
        Task::Classification { .. } => json!({ "loss": m.loss, "accuracy": m.metric }),
        Task::Regression => json!({ "loss": m.loss, "mse": m.metric }),
    }
}

fn cmd_train(
    cfg: &RunConfig,
    data: &Path,
    checkpoint: &Path,
    metrics: Option<&Path>,
) -> Result<(), Failure> {
    let dataset = load_dataset(data, cfg.task, cfg)?;
    let (train, val, test) = split(&dataset, cfg.fractions, cfg.seed).map_err(|e| Failure {
        code: data_code(&e),
        error: e.into(),
    })?;
    let outcome = train_predictor(&train, &val, &cfg.train).map_err(|e| Failure {
        code: gnn_code(&e),
        error: e.into(),
    })?;

    let mut ckpt = Vec::new();
    outcome.model.save(&mut ckpt).code(exit::OTHER)?;
    write_atomic(checkpoint, &ckpt).code(exit::OTHER)?;

    let metrics_path = metrics
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(format!("{}.metrics.jsonl", checkpoint.display())));
    let mut lines = String::new();
    for e in &outcome.history {
        lines.push_str(&serde_json::to_string(e).expect("metrics serialise"));
        lines.push('\n');
    }
    write_atomic(&metrics_path, lines.as_bytes()).code(exit::OTHER)?;

    let score = |d: &Dataset| -> Result<serde_json::Value, Failure> {
        if d.is_empty() {
            return Ok(serde_json::Value::Null);
        }
        let m = evaluate(&outcome.model, d).map_err(|e| Failure {
            code: gnn_code(&e),
            error: e.into(),
        })?;
        Ok(metrics_json(cfg.task, &m))
    };
    let summary = json!({
        "checkpoint": checkpoint.display().to_string(),
        "metrics": metrics_path.display().to_string(),
        "task": cfg.task,
        "sizes": { "train": train.len(), "val": val.len(), "test": test.len() },
        "epochs_run": outcome.history.len(),
        "best_epoch": outcome.best_epoch,
        "val": score(&val)?,
        "test": score(&test)?,
    });
    emit(
        None,
        &format!(
            "{}\n",
            serde_json::to_string_pretty(&summary).expect("json")
        ),
    )
}

fn cmd_explain(
    cfg: &RunConfig,
    checkpoint: &Path,
    smiles: &str,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let model = load_checkpoint(checkpoint)?;
    check_task(cfg, &model)?;
    let molecule = parse_smiles(smiles)
        .with_context(|| format!("invalid input molecule {smiles:?}"))
        .code(exit::INVALID_MOLECULE)?;
    let report = check_validity(&molecule);
    if !report.valid {
        return Err(fail(
            exit::INVALID_MOLECULE,
            format!("invalid input molecule {smiles:?}: {report}"),
        ));
    }
    if cfg.episode.regression_target.is_some() && model.task().is_classification() {
        return Err(fail(
            exit::CONFIG,
            "regression_target is set but the checkpoint is a classifier",
        ));
    }
    let explanation = generate_counterfactuals(&model, &molecule, &cfg.episode).map_err(|e| {
        let code = match &e {
            RlError::NoCounterfactualFound | RlError::NoLegalActions => exit::NO_COUNTERFACTUAL,
            RlError::Config(_) | RlError::RangeViolation(_) | RlError::WeightViolation(_) => {
                exit::CONFIG
            }
            RlError::Molecule(_) => exit::INVALID_MOLECULE,
            _ => exit::OTHER,
        };
        Failure {
            code,
            error: e.into(),
        }
    })?;
    emit(out, &explanation.report(&cfg.episode).to_json())
}

fn other_task(task: Task) -> Task {
    match task {
        Task::Classification { .. } => Task::Regression,
        Task::Regression => Task::BINARY,
    }
}

fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, data: &Path) -> Result<(), Failure> {
    let model = load_checkpoint(checkpoint)?;
    check_task(cfg, &model)?;
    let task = model.task();
    let dataset = match load_csv(data, task, &cfg.columns) {
        Ok((d, _)) => d,
        Err(DataError::EmptyAfterFiltering { .. })
            if load_csv(data, other_task(task), &cfg.columns).is_ok() =>
        {
            return Err(fail(
                exit::TASK_MISMATCH,
                format!(
                    "labels in {} do not fit the checkpoint's {task} task",
                    data.display()
                ),
            ));
        }
        Err(e) => {
            return Err(Failure {
                code: data_code(&e),
                error: e.into(),
            })
        }
    };
    let m = evaluate(&model, &dataset).map_err(|e| Failure {
        code: gnn_code(&e),
        error: e.into(),
    })?;
    let mut out = metrics_json(task, &m);
    out["size"] = json!(dataset.len());
    out["task"] = json!(task);
    emit(
        None,
        &format!("{}\n", serde_json::to_string_pretty(&out).expect("json")),
    )
}

fn cmd_synth(cfg: &RunConfig, kind: &str, n: usize, out: Option<&Path>) -> Result<(), Failure> {
    let kind: SynthKind = kind.parse().code(exit::CONFIG)?;
    let data = synth_task(kind, n, cfg.seed).code(exit::CONFIG)?;
    let mut buf = Vec::new();
    data.write_csv(&mut buf).code(exit::OTHER)?;
    emit(out, std::str::from_utf8(&buf).expect("csv is utf-8"))
}

/// Parses arguments, loads configuration from the file, `env` and flags, and
/// runs the chosen command.
pub fn run<I, T>(args: I, env: impl IntoIterator<Item = (String, String)>) -> Result<(), Failure>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return if code == 0 {
                Ok(())
            } else {
                Err(Failure {
                    code: exit::CONFIG,
                    error: Reported.into(),
                })
            };
        }
    };
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    let cfg = config::load(cli.config.as_deref(), env, &overrides).code(exit::CONFIG)?;
    match &cli.command {
        Command::Train {
            data,
            checkpoint,
            metrics,
        } => cmd_train(&cfg, data, checkpoint, metrics.as_deref()),
        Command::Explain {
            checkpoint,
            smiles,
            out,
        } => cmd_explain(&cfg, checkpoint, smiles, out.as_deref()),
        Command::Eval { checkpoint, data } => cmd_eval(&cfg, checkpoint, data),
        Command::Synth { kind, n, out } => cmd_synth(&cfg, kind, *n, out.as_deref()),
    }
}
