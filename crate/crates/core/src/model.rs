//! Control-weight fitting and multi-step forecasting.
//!
//! Each state feature is an independent channel. A window's history is
//! compressed into Legendre coefficients, turned into a companion system,
//! and rolled forward under the future controls. Only the control weights
//! `b` are trained. The forecast is affine in `b`, so every window reduces
//! to a fixed `(homogeneous, gain)` pair computed once before training.

use std::path::Path;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{self, WindowSpec};
use crate::error::{KoobaError, Result};
use crate::hippo::{self, BasisConfig, BlockKernel, CoefficientState, HippoBasis, Method};
use crate::kooba::{self, ForecastDesign, KoopmanSystem, DEGENERATE_TOLERANCE};

pub const MODEL_FORMAT: &str = "kooba-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub basis: BasisConfig,
    /// Number of trailing features used as controls.
    pub controls: usize,
    pub seq_len: usize,
    pub horizon: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Window stride; `seq_len` when unset.
    pub stride: Option<usize>,
    pub momentum: f64,
    /// Score every horizon step as a one-step forecast from the true
    /// history instead of a free-running rollout.
    pub teacher_forcing: bool,
    /// Canonical argument at which the lifted state is evaluated.
    pub s0: f64,
    /// Step of the companion system in canonical units per sample.
    pub koopman_dt: Option<f64>,
    pub degenerate_tolerance: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            basis: BasisConfig::default(),
            controls: 1,
            seq_len: 8,
            horizon: 1,
            learning_rate: 0.001,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            stride: None,
            momentum: 0.0,
            teacher_forcing: false,
            s0: 1.0,
            koopman_dt: None,
            degenerate_tolerance: DEGENERATE_TOLERANCE,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("controls", self.controls),
            ("seq_len", self.seq_len),
            ("horizon", self.horizon),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("stride", self.stride()),
            ("order", self.basis.order),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(KoobaError::Config(format!("{name} must be at least 1")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(KoobaError::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(KoobaError::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(-1.0..=1.0).contains(&self.s0) {
            return Err(KoobaError::Config(format!("s0 must lie in [-1, 1], got {}", self.s0)));
        }
        if !(self.koopman_dt() > 0.0 && self.koopman_dt().is_finite()) {
            return Err(KoobaError::Config(format!("companion step must be positive, got {}", self.koopman_dt())));
        }
        if !(self.degenerate_tolerance >= 0.0) {
            return Err(KoobaError::Config("degenerate tolerance must be non-negative".into()));
        }
        HippoBasis::new(&self.resolved_basis())?;
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.stride.unwrap_or(self.seq_len)
    }

    pub fn window_spec(&self) -> WindowSpec {
        WindowSpec {
            seq_len: self.seq_len,
            horizon: self.horizon,
            stride: self.stride(),
        }
    }

    /// Basis settings with the LegT window defaulted to `seq_len` samples.
    pub fn resolved_basis(&self) -> BasisConfig {
        let mut basis = self.basis.clone();
        if basis.method == Method::LegT && basis.omega.is_none() {
            basis.omega = Some(self.seq_len as f64 * basis.dt);
        }
        basis
    }

    /// One sample expressed on the canonical interval: the window spans
    /// length 2 there.
    pub fn koopman_dt(&self) -> f64 {
        self.koopman_dt.unwrap_or_else(|| {
            let basis = self.resolved_basis();
            match basis.method {
                Method::LegS => 2.0 / self.seq_len as f64,
                Method::LegT => 2.0 * basis.dt / basis.omega.unwrap_or(self.seq_len as f64 * basis.dt),
            }
        })
    }
}

/// Compresses a window history into coefficients and forecast designs.
#[derive(Debug, Clone)]
pub struct Encoder {
    config: ModelConfig,
    basis: HippoBasis,
    kernel: BlockKernel,
}

impl Encoder {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let basis = HippoBasis::new(&config.resolved_basis())?;
        let kernel = BlockKernel::new(&basis, config.seq_len, 0)?;
        Ok(Self {
            config: config.clone(),
            basis,
            kernel,
        })
    }

    pub fn basis(&self) -> &HippoBasis {
        &self.basis
    }

    /// Coefficients after feeding `history` from a zero state.
    pub fn encode(&self, history: &[f64]) -> Result<CoefficientState> {
        hippo::block_step(&CoefficientState::zeros(&self.basis), history, &self.kernel)
    }

    /// Forecast design over `u_future`, or `None` when the window's
    /// companion system is degenerate.
    pub fn design(&self, c: &CoefficientState, u_future: &DMatrix<f64>) -> Result<Option<ForecastDesign>> {
        let coeffs = match kooba::coeffs_c_to_a_with(c.coefficients(), self.config.degenerate_tolerance, None) {
            Ok(a) => a,
            Err(KoobaError::DegenerateCoefficients { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let lifted = kooba::lift_initial_state(coeffs.order(), self.config.s0)?;
        kooba::rollout_design(&coeffs, self.config.koopman_dt(), &lifted, u_future).map(Some)
    }

    /// Design of one window for one feature, honouring teacher forcing.
    fn window_design(
        &self,
        history: &[f64],
        u_future: &DMatrix<f64>,
        truth: &[f64],
    ) -> Result<Option<WindowDesign>> {
        if !self.config.teacher_forcing {
            let c = self.encode(history)?;
            return Ok(self.design(&c, u_future)?.map(|d| WindowDesign {
                homogeneous: d.homogeneous,
                gain: d.gain,
                target: truth.to_vec(),
            }));
        }
        let (h, m) = (u_future.nrows(), u_future.ncols());
        let mut homogeneous = Vec::with_capacity(h);
        let mut gain = DMatrix::zeros(h, m);
        for t in 0..h {
            let seen: Vec<f64> = history.iter().chain(&truth[..t]).copied().collect();
            let c = self.encode(&seen[seen.len() - history.len()..])?;
            let Some(d) = self.design(&c, &u_future.rows(t, 1).into_owned())? else {
                return Ok(None);
            };
            homogeneous.push(d.homogeneous[0]);
            gain.set_row(t, &d.gain.row(0));
        }
        Ok(Some(WindowDesign {
            homogeneous,
            gain,
            target: truth.to_vec(),
        }))
    }
}

/// Affine forecast of one window against its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowDesign {
    pub homogeneous: Vec<f64>,
    /// `horizon x m`.
    pub gain: DMatrix<f64>,
    pub target: Vec<f64>,
}

impl WindowDesign {
    pub fn forecast(&self, b: &[f64]) -> Vec<f64> {
        (0..self.homogeneous.len())
            .map(|t| self.homogeneous[t] + self.gain.row(t).iter().zip(b).map(|(g, w)| g * w).sum::<f64>())
            .collect()
    }

    fn residuals(&self, b: &[f64]) -> Vec<f64> {
        self.forecast(b).iter().zip(&self.target).map(|(p, y)| p - y).collect()
    }

    pub fn loss(&self, b: &[f64]) -> f64 {
        let r = self.residuals(b);
        r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64
    }

    /// `(2/H) Gᵀ r`.
    pub fn gradient(&self, b: &[f64]) -> Vec<f64> {
        let r = self.residuals(b);
        let scale = 2.0 / r.len() as f64;
        (0..self.gain.ncols())
            .map(|j| scale * r.iter().enumerate().map(|(t, rt)| rt * self.gain[(t, j)]).sum::<f64>())
            .collect()
    }
}

/// Designs for every feature over one row range.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSet {
    pub features: Vec<Vec<WindowDesign>>,
    pub windows: usize,
    /// Degenerate `(feature, window)` pairs left out.
    pub skipped: usize,
}

fn check_series(config: &ModelConfig, states: &DMatrix<f64>, controls: &DMatrix<f64>) -> Result<()> {
    if states.nrows() != controls.nrows() {
        return Err(KoobaError::Dimension(format!(
            "{} state rows vs {} control rows",
            states.nrows(),
            controls.nrows()
        )));
    }
    if controls.ncols() != config.controls {
        return Err(KoobaError::Dimension(format!(
            "{} control columns, config expects {}",
            controls.ncols(),
            config.controls
        )));
    }
    if states.ncols() == 0 {
        return Err(KoobaError::Input("no state features to forecast".into()));
    }
    if states.iter().chain(controls.iter()).any(|v| !v.is_finite()) {
        return Err(KoobaError::Input("series contains non-finite values".into()));
    }
    Ok(())
}

pub fn design_windows(
    config: &ModelConfig,
    states: &DMatrix<f64>,
    controls: &DMatrix<f64>,
    range: std::ops::Range<usize>,
) -> Result<DesignSet> {
    check_series(config, states, controls)?;
    let encoder = Encoder::new(config)?;
    let mut features = vec![Vec::new(); states.ncols()];
    let mut windows = 0;
    let mut skipped = 0;
    for w in data::windows(states, controls, range, config.window_spec())? {
        windows += 1;
        for (f, designs) in features.iter_mut().enumerate() {
            let history: Vec<f64> = w.history.column(f).iter().copied().collect();
            let truth: Vec<f64> = w.future_targets.column(f).iter().copied().collect();
            match encoder.window_design(&history, &w.future_controls, &truth)? {
                Some(d) => designs.push(d),
                None => {
                    debug!("skipping degenerate window at row {} (feature {f})", w.start);
                    skipped += 1;
                }
            }
        }
    }
    Ok(DesignSet {
        features,
        windows,
        skipped,
    })
}

fn mean_loss(designs: &[WindowDesign], b: &[f64]) -> f64 {
    if designs.is_empty() {
        return 0.0;
    }
    designs.iter().map(|d| d.loss(b)).sum::<f64>() / designs.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KoobaModel {
    config: ModelConfig,
    /// One control-weight vector per state feature.
    weights: Vec<Vec<f64>>,
    loss_history: Vec<f64>,
    skipped_windows: usize,
}

/// Trains the control weights by stochastic gradient descent, starting
/// from zero. The seed drives the per-epoch window order.
pub fn fit(config: &ModelConfig, states: &DMatrix<f64>, controls: &DMatrix<f64>) -> Result<KoobaModel> {
    config.validate()?;
    check_series(config, states, controls)?;
    let need = config.seq_len + config.horizon;
    if states.nrows() < need {
        return Err(KoobaError::Input(format!(
            "series of {} rows is shorter than seq_len + horizon = {need}",
            states.nrows()
        )));
    }
    let set = design_windows(config, states, controls, 0..states.nrows())?;
    if set.skipped > 0 {
        warn!("{} degenerate windows skipped", set.skipped);
    }
    let m = config.controls;
    let mut weights = vec![vec![0.0; m]; set.features.len()];
    let mut per_feature = vec![Vec::with_capacity(config.epochs); set.features.len()];

    for (f, designs) in set.features.iter().enumerate() {
        let b = &mut weights[f];
        let mut velocity = vec![0.0; m];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(f as u64));
        let mut order: Vec<usize> = (0..designs.len()).collect();
        for epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(config.batch_size) {
                let mut grad = vec![0.0; m];
                for &w in batch {
                    let d = &designs[w];
                    if !d.loss(b).is_finite() {
                        return Err(KoobaError::NonFiniteLoss { epoch, window: w, feature: f });
                    }
                    for (g, dg) in grad.iter_mut().zip(d.gradient(b)) {
                        *g += dg / batch.len() as f64;
                    }
                }
                for j in 0..m {
                    velocity[j] = config.momentum * velocity[j] + grad[j];
                    b[j] -= config.learning_rate * velocity[j];
                }
            }
            let loss = mean_loss(designs, b);
            if !loss.is_finite() {
                let window = designs.iter().position(|d| !d.loss(b).is_finite()).unwrap_or(0);
                return Err(KoobaError::NonFiniteLoss { epoch, window, feature: f });
            }
            per_feature[f].push(loss);
        }
    }

    let loss_history = (0..config.epochs)
        .map(|e| per_feature.iter().map(|h| h[e]).sum::<f64>() / per_feature.len() as f64)
        .collect();
    Ok(KoobaModel {
        config: config.clone(),
        weights,
        loss_history,
        skipped_windows: set.skipped,
    })
}

/// Least-squares control weights per feature.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedForm {
    pub weights: Vec<Vec<f64>>,
    pub rank_deficient: bool,
    pub skipped_windows: usize,
}

/// Solves the normal equations of the stacked window regressions. Rank
/// deficiency falls back to the minimum-norm solution and is flagged.
pub fn closed_form_b(config: &ModelConfig, states: &DMatrix<f64>, controls: &DMatrix<f64>) -> Result<ClosedForm> {
    config.validate()?;
    let set = design_windows(config, states, controls, 0..states.nrows())?;
    let m = config.controls;
    let mut rank_deficient = false;
    let mut weights = Vec::with_capacity(set.features.len());
    for designs in &set.features {
        let mut gram = DMatrix::<f64>::zeros(m, m);
        let mut rhs = DVector::<f64>::zeros(m);
        for d in designs {
            for t in 0..d.homogeneous.len() {
                let g = d.gain.row(t).transpose();
                gram += &g * g.transpose();
                rhs += g * (d.target[t] - d.homogeneous[t]);
            }
        }
        let eig = gram.symmetric_eigen();
        let top = eig.eigenvalues.amax();
        let cutoff = top * 1e-12 * m as f64;
        let mut b = DVector::<f64>::zeros(m);
        for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
            if top > 0.0 && lambda > cutoff {
                let v = eig.eigenvectors.column(i);
                b += v * (v.dot(&rhs) / lambda);
            } else {
                rank_deficient = true;
            }
        }
        weights.push(b.iter().copied().collect());
    }
    if rank_deficient {
        warn!("rank-deficient design, returning the minimum-norm solution");
    }
    Ok(ClosedForm {
        weights,
        rank_deficient,
        skipped_windows: set.skipped,
    })
}

/// Mean squared difference.
pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(KoobaError::Dimension(format!("{} predictions vs {} targets", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(KoobaError::Input("mse of empty vectors".into()));
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64)
}

/// Test-split scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mse_per_feature: Vec<f64>,
    pub mse_mean: f64,
    pub windows: usize,
    pub skipped_windows: usize,
}

impl KoobaModel {
    /// Wraps trained weights, checking them against the config.
    pub fn from_parts(config: ModelConfig, weights: Vec<Vec<f64>>, loss_history: Vec<f64>, skipped_windows: usize) -> Result<Self> {
        let model = Self {
            config,
            weights,
            loss_history,
            skipped_windows,
        };
        model.check()?;
        Ok(model)
    }

    fn check(&self) -> Result<()> {
        self.config.validate()?;
        if self.weights.is_empty() {
            return Err(KoobaError::Format("model has no feature weights".into()));
        }
        if let Some(w) = self.weights.iter().find(|w| w.len() != self.config.controls) {
            return Err(KoobaError::Format(format!(
                "weight vector of length {} for {} controls",
                w.len(),
                self.config.controls
            )));
        }
        if self.weights.iter().flatten().any(|v| !v.is_finite()) {
            return Err(KoobaError::Format("non-finite weights".into()));
        }
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn features(&self) -> usize {
        self.weights.len()
    }

    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    pub fn skipped_windows(&self) -> usize {
        self.skipped_windows
    }

    /// Total entries over all weight vectors.
    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum()
    }

    /// Copy with a different forecast horizon.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        let mut out = self.clone();
        out.config.horizon = horizon;
        out.config.validate()?;
        Ok(out)
    }

    /// Free-running forecast of `feature` from coefficients `c`.
    pub fn predict(&self, feature: usize, c: &CoefficientState, u_future: &DMatrix<f64>) -> Result<Vec<f64>> {
        let b = self.weights.get(feature).ok_or_else(|| {
            KoobaError::Dimension(format!("feature {feature} out of {}", self.weights.len()))
        })?;
        if u_future.ncols() != b.len() {
            return Err(KoobaError::Dimension(format!(
                "{} control columns for {} weights",
                u_future.ncols(),
                b.len()
            )));
        }
        if c.c.len() != self.config.basis.order + 1 {
            return Err(KoobaError::Dimension(format!(
                "{} coefficients for order {}",
                c.c.len(),
                self.config.basis.order
            )));
        }
        if u_future.nrows() == 0 {
            return Ok(Vec::new());
        }
        let coeffs = kooba::coeffs_c_to_a_with(c.coefficients(), self.config.degenerate_tolerance, None)?;
        let sys = KoopmanSystem::new(coeffs, b, self.config.koopman_dt())?;
        let mut state = kooba::lift_initial_state(sys.state_dim(), self.config.s0)?;
        u_future
            .row_iter()
            .map(|u| {
                let u: Vec<f64> = u.iter().copied().collect();
                state = kooba::propagate(&sys, &state, &u)?;
                kooba::readout(&sys, &state)
            })
            .collect()
    }

    /// Forecasts every window in `range` and scores it against the truth.
    pub fn evaluate(&self, states: &DMatrix<f64>, controls: &DMatrix<f64>, range: std::ops::Range<usize>) -> Result<Evaluation> {
        check_series(&self.config, states, controls)?;
        if states.ncols() != self.features() {
            return Err(KoobaError::Dimension(format!(
                "{} state columns for a model of {} features",
                states.ncols(),
                self.features()
            )));
        }
        let encoder = Encoder::new(&self.config)?;
        let mut preds = vec![Vec::new(); self.features()];
        let mut truths = vec![Vec::new(); self.features()];
        let (mut windows, mut skipped) = (0, 0);
        for w in data::windows(states, controls, range, self.config.window_spec())? {
            windows += 1;
            for f in 0..self.features() {
                let history: Vec<f64> = w.history.column(f).iter().copied().collect();
                let c = encoder.encode(&history)?;
                match self.predict(f, &c, &w.future_controls) {
                    Ok(p) => {
                        preds[f].extend(p);
                        truths[f].extend(w.future_targets.column(f).iter());
                    }
                    Err(KoobaError::DegenerateCoefficients { .. }) => skipped += 1,
                    Err(e) => return Err(e),
                }
            }
        }
        let mse_per_feature = preds
            .iter()
            .zip(&truths)
            .map(|(p, t)| mse(p, t))
            .collect::<Result<Vec<_>>>()
            .map_err(|_| KoobaError::Input("no scorable test windows".into()))?;
        let mse_mean = mse_per_feature.iter().sum::<f64>() / mse_per_feature.len() as f64;
        Ok(Evaluation {
            mse_per_feature,
            mse_mean,
            windows,
            skipped_windows: skipped,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            model: self.clone(),
        };
        serde_json::to_string_pretty(&doc).map_err(|e| KoobaError::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| KoobaError::Format(format!("not a model document: {e}")))?;
        if value.get("format").and_then(|v| v.as_str()) != Some(MODEL_FORMAT) {
            return Err(KoobaError::Format(format!("missing `format: \"{MODEL_FORMAT}\"` marker")));
        }
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == MODEL_VERSION as u64 => {}
            Some(v) => {
                return Err(KoobaError::Format(format!(
                    "unsupported format version {v} (this build reads version {MODEL_VERSION})"
                )))
            }
            None => return Err(KoobaError::Format(format!("missing format version (expected {MODEL_VERSION})"))),
        }
        let doc: ModelFile = serde_json::from_value(value)
            .map_err(|e| KoobaError::Format(format!("version {MODEL_VERSION} document is malformed: {e}")))?;
        doc.model.check()?;
        Ok(doc.model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    model: KoobaModel,
}
