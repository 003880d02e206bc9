//! Dataset generation, CSV ingestion, normalization and windowing.

use std::path::Path;

use log::{info, warn};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{KoobaError, Result};

/// Fraction of rows used for training.
pub const TRAIN_FRACTION: f64 = 0.7;

/// Named columns over a `T x F` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub values: DMatrix<f64>,
}

impl Table {
    pub fn new(names: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if names.len() != values.ncols() {
            return Err(KoobaError::Dimension(format!(
                "{} names for {} columns",
                names.len(),
                values.ncols()
            )));
        }
        Ok(Self { names, values })
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorenzParams {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
    pub dt: f64,
    pub steps: usize,
    pub x0: [f64; 3],
}

impl Default for LorenzParams {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
            dt: 0.01,
            steps: 15_000,
            x0: [1.0, 1.0, 1.0],
        }
    }
}

impl LorenzParams {
    pub fn derivative(&self, s: [f64; 3]) -> [f64; 3] {
        [
            self.sigma * (s[1] - s[0]),
            s[0] * (self.rho - s[2]) - s[1],
            s[0] * s[1] - self.beta * s[2],
        ]
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= 0.05) {
            return Err(KoobaError::Config(format!("Lorenz dt must lie in (0, 0.05], got {}", self.dt)));
        }
        if self.steps == 0 {
            return Err(KoobaError::Config("Lorenz steps must be positive".into()));
        }
        if [self.sigma, self.rho, self.beta].iter().chain(&self.x0).any(|v| !v.is_finite()) {
            return Err(KoobaError::Config("Lorenz parameters must be finite".into()));
        }
        Ok(())
    }
}

fn rk4_step<const D: usize>(f: impl Fn([f64; D]) -> [f64; D], s: [f64; D], h: f64) -> [f64; D] {
    let shift = |base: [f64; D], k: [f64; D], w: f64| std::array::from_fn(|i| base[i] + w * k[i]);
    let k1 = f(s);
    let k2 = f(shift(s, k1, h / 2.0));
    let k3 = f(shift(s, k2, h / 2.0));
    let k4 = f(shift(s, k3, h));
    std::array::from_fn(|i| s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

/// `steps` rows starting at `x0`, columns `x, y, z`.
pub fn gen_lorenz(params: &LorenzParams) -> Result<Table> {
    params.validate()?;
    let mut values = DMatrix::zeros(params.steps, 3);
    let mut s = params.x0;
    for t in 0..params.steps {
        if s.iter().any(|v| !v.is_finite()) {
            return Err(KoobaError::Diverged { step: t });
        }
        for (j, v) in s.iter().enumerate() {
            values[(t, j)] = *v;
        }
        s = rk4_step(|v| params.derivative(v), s, params.dt);
    }
    Table::new(vec!["x".into(), "y".into(), "z".into()], values)
}

/// Driven damped oscillator with two noisy forcing channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub steps: usize,
    pub dt: f64,
    pub damping: f64,
    pub stiffness: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            steps: 4000,
            dt: 0.05,
            damping: 0.4,
            stiffness: 1.0,
            noise: 0.05,
            seed: 11,
        }
    }
}

/// Columns `position, velocity, drive`; the drive is the natural control.
pub fn gen_synthetic(params: &SyntheticParams) -> Result<Table> {
    if params.steps == 0 || !(params.dt > 0.0) {
        return Err(KoobaError::Config("synthetic series needs positive steps and dt".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut values = DMatrix::zeros(params.steps, 3);
    let mut s = [0.0, 0.0];
    for t in 0..params.steps {
        let time = t as f64 * params.dt;
        let jitter: f64 = rng.sample(StandardNormal);
        let drive = (0.3 * time).sin() + 0.5 * (0.071 * time).cos() + params.noise * jitter;
        values[(t, 0)] = s[0];
        values[(t, 1)] = s[1];
        values[(t, 2)] = drive;
        let f = |v: [f64; 2]| [v[1], drive - params.damping * v[1] - params.stiffness * v[0]];
        s = rk4_step(f, s, params.dt);
    }
    Table::new(vec!["position".into(), "velocity".into(), "drive".into()], values)
}

/// Reads a headered CSV, keeping numeric non-constant columns. Rows with an
/// empty cell in a kept column are dropped.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Table> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(KoobaError::Data(format!("{}: file is empty or has no header", path.display())));
    }
    let mut cells: Vec<Vec<String>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        cells.push(record.iter().map(|v| v.trim().to_string()).collect());
    }
    if cells.is_empty() {
        return Err(KoobaError::Data(format!("{}: no data rows", path.display())));
    }

    let mut kept = Vec::new();
    for (j, name) in headers.iter().enumerate() {
        let numeric = cells
            .iter()
            .filter(|row| !row[j].is_empty())
            .all(|row| row[j].parse::<f64>().is_ok_and(f64::is_finite));
        let any = cells.iter().any(|row| !row[j].is_empty());
        if !numeric || !any {
            info!("dropping column `{name}`: not numeric");
            continue;
        }
        kept.push(j);
    }
    let rows: Vec<Vec<f64>> = cells
        .iter()
        .filter(|row| kept.iter().all(|&j| !row[j].is_empty()))
        .map(|row| kept.iter().map(|&j| row[j].parse::<f64>().unwrap()).collect())
        .collect();
    if rows.len() < cells.len() {
        info!("dropped {} rows with missing values", cells.len() - rows.len());
    }

    let mut columns = Vec::new();
    for (pos, &j) in kept.iter().enumerate() {
        let first = rows.first().map(|r| r[pos]);
        if rows.iter().all(|r| Some(r[pos]) == first) {
            info!("dropping column `{}`: constant", headers[j]);
            continue;
        }
        columns.push(pos);
    }
    if columns.is_empty() {
        return Err(KoobaError::Data(format!("{}: no usable numeric columns", path.display())));
    }
    let values = DMatrix::from_fn(rows.len(), columns.len(), |i, c| rows[i][columns[c]]);
    let names = columns.iter().map(|&pos| headers[kept[pos]].clone()).collect();
    Table::new(names, values)
}

fn csv_error(path: &Path, e: csv::Error) -> KoobaError {
    match e.kind() {
        csv::ErrorKind::Io(_) => KoobaError::Io(format!("{}: {e}", path.display())),
        csv::ErrorKind::UnequalLengths { pos, expected_len, len } => KoobaError::Data(format!(
            "{}: ragged row at line {}: expected {expected_len} fields, found {len}",
            path.display(),
            pos.as_ref().map_or(0, |p| p.line())
        )),
        _ => KoobaError::Data(format!("{}: {e}", path.display())),
    }
}

pub fn write_csv(table: &Table, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    writer.write_record(&table.names).map_err(|e| csv_error(path, e))?;
    for row in table.values.row_iter() {
        writer
            .write_record(row.iter().map(|v| format!("{v:?}")))
            .map_err(|e| csv_error(path, e))?;
    }
    writer.flush()?;
    Ok(())
}

/// Per-feature min-max scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(values: &DMatrix<f64>, names: &[String]) -> Result<Self> {
        let mut min = Vec::with_capacity(values.ncols());
        let mut max = Vec::with_capacity(values.ncols());
        for (j, col) in values.column_iter().enumerate() {
            let lo = col.min();
            let hi = col.max();
            if !(hi > lo) {
                return Err(KoobaError::Data(format!(
                    "column `{}` is constant over the training rows",
                    names.get(j).map_or("?", String::as_str)
                )));
            }
            min.push(lo);
            max.push(hi);
        }
        Ok(Self { min, max })
    }

    pub fn transform(&self, values: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(values.nrows(), values.ncols(), |i, j| {
            (values[(i, j)] - self.min[j]) / (self.max[j] - self.min[j])
        })
    }

    pub fn inverse(&self, values: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(values.nrows(), values.ncols(), |i, j| {
            values[(i, j)] * (self.max[j] - self.min[j]) + self.min[j]
        })
    }
}

/// Which rows are scored after training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "rows")]
pub enum TestSplit {
    /// Everything after the training split.
    #[default]
    Remainder,
    /// The final rows only, never reaching into the training split.
    LastRows(usize),
}

/// Normalized features with their training split.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    names: Vec<String>,
    features: DMatrix<f64>,
    scaler: MinMaxScaler,
    split: usize,
    test_split: TestSplit,
}

/// `floor(0.7 T)`.
pub fn split_index(rows: usize) -> usize {
    (rows as f64 * TRAIN_FRACTION).floor() as usize
}

/// Min-max normalizes `table` with statistics from the training rows only.
pub fn normalize(table: &Table) -> Result<TimeSeriesDataset> {
    let split = split_index(table.rows());
    if split < 2 {
        return Err(KoobaError::Data(format!("{} rows leave too few for training", table.rows())));
    }
    let train = table.values.rows(0, split).into_owned();
    let scaler = MinMaxScaler::fit(&train, &table.names)?;
    Ok(TimeSeriesDataset {
        names: table.names.clone(),
        features: scaler.transform(&table.values),
        scaler,
        split,
        test_split: TestSplit::Remainder,
    })
}

impl TimeSeriesDataset {
    pub fn with_test_split(mut self, mode: TestSplit) -> Self {
        self.test_split = mode;
        self
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn scaler(&self) -> &MinMaxScaler {
        &self.scaler
    }

    pub fn rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn split(&self) -> usize {
        self.split
    }

    pub fn train_range(&self) -> std::ops::Range<usize> {
        0..self.split
    }

    pub fn test_range(&self) -> std::ops::Range<usize> {
        let end = self.rows();
        match self.test_split {
            TestSplit::Remainder => self.split..end,
            TestSplit::LastRows(r) => end.saturating_sub(r).max(self.split)..end,
        }
    }

    pub fn denormalize(&self, values: &DMatrix<f64>) -> DMatrix<f64> {
        self.scaler.inverse(values)
    }

    /// Last `k` columns become controls, the rest are forecast targets.
    pub fn split_controls(&self, k: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let f = self.features.ncols();
        if k == 0 || k >= f {
            return Err(KoobaError::Config(format!(
                "control count must satisfy 1 <= k < {f}, got {k}"
            )));
        }
        Ok((
            self.features.columns(0, f - k).into_owned(),
            self.features.columns(f - k, k).into_owned(),
        ))
    }

    pub fn state_names(&self, k: usize) -> Vec<String> {
        self.names[..self.names.len().saturating_sub(k)].to_vec()
    }
}

/// Window geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub seq_len: usize,
    pub horizon: usize,
    pub stride: usize,
}

/// `floor((len - seq_len - horizon) / stride) + 1`, or 0 when too short.
pub fn window_count(len: usize, spec: WindowSpec) -> usize {
    let need = spec.seq_len + spec.horizon;
    if len < need || spec.stride == 0 {
        0
    } else {
        (len - need) / spec.stride + 1
    }
}

/// One aligned sample. `start` indexes the first history row.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub start: usize,
    pub history: DMatrix<f64>,
    pub future_controls: DMatrix<f64>,
    pub future_targets: DMatrix<f64>,
}

/// Windows confined to a row range.
#[derive(Debug, Clone)]
pub struct Windows<'a> {
    states: &'a DMatrix<f64>,
    controls: &'a DMatrix<f64>,
    range: std::ops::Range<usize>,
    spec: WindowSpec,
    next: usize,
    count: usize,
}

/// Iterates windows whose rows all lie in `range`.
pub fn windows<'a>(
    states: &'a DMatrix<f64>,
    controls: &'a DMatrix<f64>,
    range: std::ops::Range<usize>,
    spec: WindowSpec,
) -> Result<Windows<'a>> {
    if states.nrows() != controls.nrows() {
        return Err(KoobaError::Dimension(format!(
            "{} state rows vs {} control rows",
            states.nrows(),
            controls.nrows()
        )));
    }
    if range.end > states.nrows() || range.start > range.end {
        return Err(KoobaError::Dimension(format!(
            "row range {range:?} exceeds {} rows",
            states.nrows()
        )));
    }
    if spec.seq_len == 0 || spec.horizon == 0 || spec.stride == 0 {
        return Err(KoobaError::Config("seq_len, horizon and stride must be positive".into()));
    }
    let count = window_count(range.len(), spec);
    if count == 0 {
        warn!(
            "{} rows are too few for seq_len {} + horizon {}",
            range.len(),
            spec.seq_len,
            spec.horizon
        );
    }
    Ok(Windows {
        states,
        controls,
        range,
        spec,
        next: 0,
        count,
    })
}

impl Iterator for Windows<'_> {
    type Item = Window;

    fn next(&mut self) -> Option<Window> {
        if self.next >= self.count {
            return None;
        }
        let start = self.range.start + self.next * self.spec.stride;
        let (l, h) = (self.spec.seq_len, self.spec.horizon);
        assert!(start + l + h <= self.range.end, "window leaks past row {}", self.range.end);
        self.next += 1;
        Some(Window {
            start,
            history: self.states.rows(start, l).into_owned(),
            future_controls: self.controls.rows(start + l, h).into_owned(),
            future_targets: self.states.rows(start + l, h).into_owned(),
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.count - self.next;
        (left, Some(left))
    }
}

impl ExactSizeIterator for Windows<'_> {}
