//! Run configuration: defaults, then the TOML file, then flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use kooba_core::data::{self, LorenzParams, SyntheticParams, Table, TestSplit};
use kooba_core::hippo::Method;
use kooba_core::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSpec {
    Lorenz,
    Synthetic,
    Csv(PathBuf),
}

impl FromStr for DatasetSpec {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "lorenz" => Ok(Self::Lorenz),
            "synthetic" => Ok(Self::Synthetic),
            _ => match s.strip_prefix("csv:") {
                Some(path) if !path.is_empty() => Ok(Self::Csv(PathBuf::from(path))),
                _ => Err(CliError::Config(format!(
                    "unknown dataset `{s}` (expected lorenz, synthetic or csv:PATH)"
                ))),
            },
        }
    }
}

impl fmt::Display for DatasetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Lorenz => f.write_str("lorenz"),
            Self::Synthetic => f.write_str("synthetic"),
            Self::Csv(p) => write!(f, "csv:{}", p.display()),
        }
    }
}

impl Serialize for DatasetSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DatasetSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

impl DatasetSpec {
    pub fn load(&self) -> Result<Table, CliError> {
        let table = match self {
            Self::Lorenz => data::gen_lorenz(&LorenzParams::default()),
            Self::Synthetic => data::gen_synthetic(&SyntheticParams::default()),
            Self::Csv(path) => {
                if !path.exists() {
                    return Err(CliError::Io(format!("dataset file {} not found", path.display())));
                }
                data::load_csv(path)
            }
        };
        table.map_err(CliError::from)
    }

    /// Short label for reports.
    pub fn name(&self) -> String {
        match self {
            Self::Csv(p) => p
                .file_stem()
                .map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned()),
            other => other.to_string(),
        }
    }
}

/// Fully resolved settings, echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub repeats: usize,
    pub test_split: TestSplit,
    pub model: ModelConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::Lorenz,
            repeats: 1,
            test_split: TestSplit::Remainder,
            model: ModelConfig::default(),
        }
    }
}

/// Contents of a `--config` file; every field optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: Option<DatasetSpec>,
    pub repeats: Option<usize>,
    pub test_split: Option<TestSplit>,
    pub out: Option<PathBuf>,
    pub model: Option<ModelConfig>,
}

impl FileConfig {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigFlags {
    /// TOML file with run settings
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// legt or legs
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub order: Option<usize>,
    /// LegT window length, in the same time units as dt
    #[arg(long)]
    pub omega: Option<f64>,
    /// HiPPO step size
    #[arg(long)]
    pub dt: Option<f64>,
    /// Number of trailing features used as controls
    #[arg(long)]
    pub controls: Option<usize>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigFlags {
    /// Applies defaults, then the config file, then these flags.
    pub fn resolve(&self, dataset: Option<&DatasetSpec>) -> Result<(RunConfig, PathBuf), CliError> {
        let file = match &self.config {
            Some(path) => FileConfig::read(path)?,
            None => FileConfig::default(),
        };
        let mut run = RunConfig::default();
        if let Some(d) = file.dataset {
            run.dataset = d;
        }
        if let Some(r) = file.repeats {
            run.repeats = r;
        }
        if let Some(t) = file.test_split {
            run.test_split = t;
        }
        if let Some(m) = file.model {
            run.model = m;
        }
        if let Some(d) = dataset {
            run.dataset = d.clone();
        }
        if let Some(r) = self.repeats {
            run.repeats = r;
        }
        self.apply_model(&mut run.model);
        if run.repeats == 0 {
            return Err(CliError::Config("repeats must be at least 1".into()));
        }
        run.model.validate()?;
        let out = self.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("out"));
        Ok((run, out))
    }

    pub fn apply_model(&self, m: &mut ModelConfig) {
        if let Some(v) = self.method {
            m.basis.method = v;
        }
        if let Some(v) = self.order {
            m.basis.order = v;
        }
        if let Some(v) = self.omega {
            m.basis.omega = Some(v);
        }
        if let Some(v) = self.dt {
            m.basis.dt = v;
        }
        if let Some(v) = self.controls {
            m.controls = v;
        }
        if let Some(v) = self.seq_len {
            m.seq_len = v;
        }
        if let Some(v) = self.horizon {
            m.horizon = v;
        }
        if let Some(v) = self.epochs {
            m.epochs = v;
        }
        if let Some(v) = self.lr {
            m.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            m.batch_size = v;
        }
        if let Some(v) = self.stride {
            m.stride = Some(v);
        }
        if let Some(v) = self.seed {
            m.seed = v;
        }
    }

    /// Model-shaping flags that must agree with a saved model.
    pub fn model_shape_flags(&self) -> bool {
        self.method.is_some()
            || self.order.is_some()
            || self.omega.is_some()
            || self.dt.is_some()
            || self.controls.is_some()
            || self.seq_len.is_some()
    }
}
