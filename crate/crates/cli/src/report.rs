//! Versioned report documents and their CSV companions.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCount {
    pub controls: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub min: f64,
    pub mean: f64,
    pub stddev: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            mean,
            stddev: var.sqrt(),
        }
    }
}

/// One training (or evaluation) pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatResult {
    pub seed: u64,
    pub mse_per_feature: Vec<f64>,
    pub mse_mean: f64,
    pub time_ms: f64,
    pub memory_bytes_estimate: u64,
    pub loss_curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatSummary {
    pub mse_mean: Spread,
    pub time_ms: Spread,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchReport {
    pub schema: u32,
    pub command: Command,
    pub dataset: String,
    pub config: RunConfig,
    pub seed: u64,
    pub features: Vec<String>,
    pub control_features: Vec<String>,
    /// Means over repeats.
    pub mse_per_feature: Vec<f64>,
    pub mse_mean: f64,
    /// Wall time of the fit call (evaluation call for `eval`), mean over
    /// repeats.
    pub time_ms: f64,
    pub memory_bytes_estimate: u64,
    pub parameters: ParameterCount,
    /// Mean training loss per epoch over repeats.
    pub loss_curve: Vec<f64>,
    pub skipped_windows: usize,
    pub test_windows: usize,
    pub repeats: Vec<RepeatResult>,
    pub summary: RepeatSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchRow {
    pub dataset: String,
    pub status: String,
    pub error: Option<String>,
    pub mse_mean: Option<f64>,
    pub mse_per_feature: Option<Vec<f64>>,
    pub time_ms: Option<f64>,
    pub memory_bytes_estimate: Option<u64>,
    pub parameters: Option<ParameterCount>,
    pub skipped_windows: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchTable {
    pub schema: u32,
    pub command: String,
    pub rows: Vec<BenchRow>,
}

/// Writes through a sibling temporary file so a failed run never leaves a
/// truncated document behind.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, contents).map_err(|e| CliError::Io(format!("{}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))
}

pub fn loss_curve_csv(report: &BenchReport) -> String {
    let mut out = String::from("repeat,seed,epoch,loss\n");
    for (r, rep) in report.repeats.iter().enumerate() {
        for (e, loss) in rep.loss_curve.iter().enumerate() {
            out.push_str(&format!("{r},{},{},{loss:?}\n", rep.seed, e + 1));
        }
    }
    out
}

pub fn bench_csv(table: &BenchTable) -> String {
    let mut out = String::from(
        "dataset,status,mse_mean,time_ms,memory_bytes_estimate,params_controls,params_total,skipped_windows,error\n",
    );
    let opt = |v: Option<String>| v.unwrap_or_default();
    for row in &table.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            row.dataset,
            row.status,
            opt(row.mse_mean.map(|v| format!("{v:?}"))),
            opt(row.time_ms.map(|v| format!("{v:?}"))),
            opt(row.memory_bytes_estimate.map(|v| v.to_string())),
            opt(row.parameters.map(|p| p.controls.to_string())),
            opt(row.parameters.map(|p| p.total.to_string())),
            opt(row.skipped_windows.map(|v| v.to_string())),
            opt(row.error.as_ref().map(|e| format!("\"{}\"", e.replace('"', "'")))),
        ));
    }
    out
}
