//! Train, evaluate and benchmark the forecaster from the command line.
//!
//! Exit codes: 0 success, 2 bad configuration or model mismatch, 3 training
//! aborted, 4 I/O failure.

pub mod alloc;
pub mod config;
pub mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use kooba_core::data::{self, Table};
use kooba_core::{KoobaError, KoobaModel, ModelConfig};
use log::{info, warn};
use thiserror::Error;

use config::{ConfigFlags, DatasetSpec, FileConfig, RunConfig};
use report::{BenchReport, BenchRow, BenchTable, Command, ParameterCount, RepeatResult, RepeatSummary, Spread};

#[global_allocator]
static GLOBAL: alloc::TrackingAllocator = alloc::TrackingAllocator;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training aborted: {0}")]
    Training(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Training(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<KoobaError> for CliError {
    fn from(e: KoobaError) -> Self {
        match e {
            KoobaError::NonFiniteLoss { .. } | KoobaError::Diverged { .. } => CliError::Training(e.to_string()),
            KoobaError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "kooba", version, about = "Legendre-memory Koopman forecaster benchmark harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Commands,
}

#[derive(Debug, Subcommand)]
pub enum Commands {
    /// Fit a model and score it on the test split
    Train(TrainArgs),
    /// Score a saved model
    Eval(EvalArgs),
    /// Train and score over several datasets
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// lorenz, synthetic or csv:PATH
    #[arg(long)]
    pub dataset: Option<DatasetSpec>,
    #[command(flatten)]
    pub flags: ConfigFlags,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Saved model document
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: Option<DatasetSpec>,
    #[command(flatten)]
    pub flags: ConfigFlags,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Repeat for each dataset
    #[arg(long = "dataset", required = true)]
    pub datasets: Vec<DatasetSpec>,
    #[command(flatten)]
    pub flags: ConfigFlags,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Commands::Train(args) => {
            let (report, dir) = cmd_train(&args)?;
            println!(
                "{}: test MSE {:.6} in {:.1} ms, report in {}",
                report.dataset,
                report.mse_mean,
                report.time_ms,
                dir.display()
            );
        }
        Commands::Eval(args) => {
            let (report, dir) = cmd_eval(&args)?;
            println!("{}: test MSE {:.6}, report in {}", report.dataset, report.mse_mean, dir.display());
        }
        Commands::Bench(args) => {
            let (table, dir) = cmd_bench(&args)?;
            for row in &table.rows {
                match row.mse_mean {
                    Some(mse) => println!("{}: test MSE {mse:.6}", row.dataset),
                    None => println!("{}: failed: {}", row.dataset, row.error.as_deref().unwrap_or("")),
                }
            }
            println!("bench table in {}", dir.display());
        }
    }
    Ok(())
}

/// Normalized states and controls with their row ranges.
struct Prepared {
    dataset: data::TimeSeriesDataset,
    states: nalgebra::DMatrix<f64>,
    controls: nalgebra::DMatrix<f64>,
}

fn prepare(run: &RunConfig, table: &Table) -> Result<Prepared, CliError> {
    let dataset = data::normalize(table)?.with_test_split(run.test_split);
    let (states, controls) = dataset.split_controls(run.model.controls)?;
    Ok(Prepared {
        dataset,
        states,
        controls,
    })
}

impl Prepared {
    fn feature_names(&self, m: usize) -> (Vec<String>, Vec<String>) {
        let names = self.dataset.names();
        (self.dataset.state_names(m), names[names.len() - m..].to_vec())
    }
}

fn summarize(
    command: Command,
    run: &RunConfig,
    prep: &Prepared,
    repeats: Vec<RepeatResult>,
    parameters: ParameterCount,
    skipped_windows: usize,
    test_windows: usize,
) -> BenchReport {
    let n = repeats.len() as f64;
    let features = repeats[0].mse_per_feature.len();
    let mse_per_feature: Vec<f64> = (0..features)
        .map(|f| repeats.iter().map(|r| r.mse_per_feature[f]).sum::<f64>() / n)
        .collect();
    let mse_mean = repeats.iter().map(|r| r.mse_mean).sum::<f64>() / n;
    let epochs = repeats[0].loss_curve.len();
    let loss_curve = (0..epochs)
        .map(|e| repeats.iter().map(|r| r.loss_curve[e]).sum::<f64>() / n)
        .collect();
    let mses: Vec<f64> = repeats.iter().map(|r| r.mse_mean).collect();
    let times: Vec<f64> = repeats.iter().map(|r| r.time_ms).collect();
    let (features, control_features) = prep.feature_names(run.model.controls);
    BenchReport {
        schema: report::SCHEMA_VERSION,
        command,
        dataset: run.dataset.name(),
        config: run.clone(),
        seed: run.model.seed,
        features,
        control_features,
        mse_per_feature,
        mse_mean,
        time_ms: times.iter().sum::<f64>() / n,
        memory_bytes_estimate: repeats.iter().map(|r| r.memory_bytes_estimate).max().unwrap_or(0),
        parameters,
        loss_curve,
        skipped_windows,
        test_windows,
        summary: RepeatSummary {
            mse_mean: Spread::of(&mses),
            time_ms: Spread::of(&times),
        },
        repeats,
    }
}

/// Trains `run.repeats` models (seeds `seed`, `seed + 1`, …) and scores each
/// on the test split. Returns the report and the first model.
pub fn execute(run: &RunConfig, table: &Table) -> Result<(BenchReport, KoobaModel), CliError> {
    let prep = prepare(run, table)?;
    let split = prep.dataset.split();
    let train_states = prep.states.rows(0, split).into_owned();
    let train_controls = prep.controls.rows(0, split).into_owned();
    let mut repeats = Vec::with_capacity(run.repeats);
    let mut first: Option<KoobaModel> = None;
    let mut test_windows = 0;
    for r in 0..run.repeats {
        let cfg = ModelConfig {
            seed: run.model.seed.wrapping_add(r as u64),
            ..run.model.clone()
        };
        let ((fitted, elapsed), memory) = alloc::measure(|| {
            let start = Instant::now();
            let fitted = kooba_core::model::fit(&cfg, &train_states, &train_controls);
            (fitted, start.elapsed())
        });
        let model = fitted?;
        let eval = model.evaluate(&prep.states, &prep.controls, prep.dataset.test_range())?;
        info!("repeat {r}: test MSE {:.6}", eval.mse_mean);
        test_windows = eval.windows;
        repeats.push(RepeatResult {
            seed: cfg.seed,
            mse_per_feature: eval.mse_per_feature,
            mse_mean: eval.mse_mean,
            time_ms: elapsed.as_secs_f64() * 1e3,
            memory_bytes_estimate: memory.max(1),
            loss_curve: model.loss_history().to_vec(),
        });
        first.get_or_insert(model);
    }
    let model = first.expect("at least one repeat");
    let parameters = ParameterCount {
        controls: run.model.controls,
        total: model.parameter_count(),
    };
    let report = summarize(Command::Train, run, &prep, repeats, parameters, model.skipped_windows(), test_windows);
    Ok((report, model))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

pub fn cmd_train(args: &TrainArgs) -> Result<(BenchReport, PathBuf), CliError> {
    let (run, out) = args.flags.resolve(args.dataset.as_ref())?;
    let table = run.dataset.load()?;
    let (report, model) = execute(&run, &table)?;
    ensure_dir(&out)?;
    report::write_atomic(&out.join("model.json"), model.to_json()?.as_bytes())?;
    report::write_atomic(&out.join("loss_curve.csv"), report::loss_curve_csv(&report).as_bytes())?;
    report::write_atomic(&out.join("report.json"), report::to_json(&report)?.as_bytes())?;
    Ok((report, out))
}

/// Loads a saved model and scores it. Flags that change the model's shape
/// must agree with it; the horizon may be overridden.
pub fn cmd_eval(args: &EvalArgs) -> Result<(BenchReport, PathBuf), CliError> {
    let model = KoobaModel::load(&args.model).map_err(|e| match e {
        KoobaError::Io(msg) => CliError::Io(format!("{}: {msg}", args.model.display())),
        other => CliError::Config(format!("{}: {other}", args.model.display())),
    })?;
    let saved = model.config().clone();
    let file = match &args.flags.config {
        Some(p) => FileConfig::read(p)?,
        None => FileConfig::default(),
    };

    let mut requested = file.model.clone().unwrap_or_else(|| saved.clone());
    args.flags.apply_model(&mut requested);
    let shape = |c: &ModelConfig| (c.resolved_basis(), c.controls, c.seq_len);
    if (file.model.is_some() || args.flags.model_shape_flags()) && shape(&requested) != shape(&saved) {
        return Err(CliError::Config(format!(
            "model/config mismatch: saved model is {}, requested {}",
            describe(&saved),
            describe(&requested)
        )));
    }
    let horizon = args.flags.horizon.or(file.model.as_ref().map(|m| m.horizon)).unwrap_or(saved.horizon);
    let model = model.with_horizon(horizon)?;

    let run = RunConfig {
        dataset: args.dataset.clone().or(file.dataset).unwrap_or(DatasetSpec::Lorenz),
        repeats: 1,
        test_split: file.test_split.unwrap_or_default(),
        model: model.config().clone(),
    };
    let out = args.flags.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("out"));
    let table = run.dataset.load()?;
    let prep = prepare(&run, &table)?;
    if prep.states.ncols() != model.features() {
        return Err(CliError::Config(format!(
            "model/config mismatch: model forecasts {} features, dataset provides {}",
            model.features(),
            prep.states.ncols()
        )));
    }
    let ((eval, elapsed), memory) = alloc::measure(|| {
        let start = Instant::now();
        let eval = model.evaluate(&prep.states, &prep.controls, prep.dataset.test_range());
        (eval, start.elapsed())
    });
    let eval = eval?;
    let repeat = RepeatResult {
        seed: run.model.seed,
        mse_per_feature: eval.mse_per_feature,
        mse_mean: eval.mse_mean,
        time_ms: elapsed.as_secs_f64() * 1e3,
        memory_bytes_estimate: memory.max(1),
        loss_curve: model.loss_history().to_vec(),
    };
    let parameters = ParameterCount {
        controls: run.model.controls,
        total: model.parameter_count(),
    };
    let report = summarize(Command::Eval, &run, &prep, vec![repeat], parameters, eval.skipped_windows, eval.windows);
    ensure_dir(&out)?;
    report::write_atomic(&out.join("eval_report.json"), report::to_json(&report)?.as_bytes())?;
    Ok((report, out))
}

fn describe(c: &ModelConfig) -> String {
    let b = c.resolved_basis();
    format!(
        "{:?} order {} (dt {}, omega {:?}) with {} controls and seq_len {}",
        b.method, b.order, b.dt, b.omega, c.controls, c.seq_len
    )
}

/// One row per dataset; failures are recorded in their row.
pub fn cmd_bench(args: &BenchArgs) -> Result<(BenchTable, PathBuf), CliError> {
    let (_, out) = args.flags.resolve(None)?;
    let mut rows = Vec::with_capacity(args.datasets.len());
    let mut first_error = None;
    for spec in &args.datasets {
        let outcome = args
            .flags
            .resolve(Some(spec))
            .and_then(|(run, _)| run.dataset.load().and_then(|t| execute(&run, &t)));
        rows.push(match outcome {
            Ok((report, _)) => BenchRow {
                dataset: report.dataset,
                status: "ok".into(),
                error: None,
                mse_mean: Some(report.mse_mean),
                mse_per_feature: Some(report.mse_per_feature),
                time_ms: Some(report.time_ms),
                memory_bytes_estimate: Some(report.memory_bytes_estimate),
                parameters: Some(report.parameters),
                skipped_windows: Some(report.skipped_windows),
            },
            Err(e) => {
                warn!("{spec}: {e}");
                let row = BenchRow {
                    dataset: spec.name(),
                    status: "error".into(),
                    error: Some(e.to_string()),
                    mse_mean: None,
                    mse_per_feature: None,
                    time_ms: None,
                    memory_bytes_estimate: None,
                    parameters: None,
                    skipped_windows: None,
                };
                first_error.get_or_insert(e);
                row
            }
        });
    }
    if rows.iter().all(|r| r.status != "ok") {
        return Err(first_error.unwrap_or_else(|| CliError::Config("no datasets given".into())));
    }
    let table = BenchTable {
        schema: report::SCHEMA_VERSION,
        command: "bench".into(),
        rows,
    };
    ensure_dir(&out)?;
    report::write_atomic(&out.join("bench.csv"), report::bench_csv(&table).as_bytes())?;
    report::write_atomic(&out.join("bench.json"), report::to_json(&table)?.as_bytes())?;
    Ok((table, out))
}
