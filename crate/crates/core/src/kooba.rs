//! Companion-form Koopman systems built from Legendre coefficients.
//!
//! Writing the reconstruction `γ = Σ c_k g_k` in terms of `p_n` and its
//! derivatives gives `γ = a_0 p_n + a_1 p_n' + … + a_n p_n^(n)` with
//! `a_{n-k} = sqrt((2k+1)/2) c_k / (n (n-1) … (k+1))`. The derivative chain
//! uses the convention `d/ds p_n = n p_{n-1}`. This is not the true
//! Legendre derivative identity (`p_2' = 3s`, not `2 p_1`), but the
//! coefficient map and the lifted state are defined through it.
//!
//! Treating `x = (p_n, p_n', …, p_n^(n-1))` as the state yields the
//! companion system `x' = A x + B u`, which is stepped with the bilinear
//! rule and read out through `a`.

use nalgebra::{DMatrix, DVector};

use crate::error::{KoobaError, Result};
use crate::legendre::{self, norm_factor, LOG_DOMAIN_ORDER_LIMIT};
use crate::linalg;

/// Default lower bound on `|a_n|`.
pub const DEGENERATE_TOLERANCE: f64 = 1e-12;

/// Orders above this evaluate the factorial products in log domain.
pub const LOG_PRODUCT_THRESHOLD: usize = 20;

/// `lo * (lo+1) * … * hi`, 1 when empty.
pub fn product_direct(lo: usize, hi: usize) -> f64 {
    (lo..=hi).fold(1.0, |acc, j| acc * j as f64)
}

/// `ln(lo * … * hi)`, 0 when empty.
pub fn product_log(lo: usize, hi: usize) -> f64 {
    (lo..=hi).map(|j| (j as f64).ln()).sum()
}

/// Coefficients `a_0 … a_n` of the polynomial ODE.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyOdeCoeffs {
    a: Vec<f64>,
}

impl PolyOdeCoeffs {
    /// Wraps raw coefficients, checking `|a_n|` against `tolerance`.
    pub fn new(a: Vec<f64>, tolerance: f64) -> Result<Self> {
        if a.is_empty() {
            return Err(KoobaError::EmptyCoefficients);
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(KoobaError::Input("non-finite ODE coefficient".into()));
        }
        let lead = *a.last().unwrap();
        if !(lead.abs() >= tolerance) {
            return Err(KoobaError::DegenerateCoefficients {
                value: lead.abs(),
                tolerance,
            });
        }
        Ok(Self { a })
    }

    pub fn order(&self) -> usize {
        self.a.len() - 1
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.a
    }

    pub fn leading(&self) -> f64 {
        self.a[self.a.len() - 1]
    }
}

/// Maps Legendre coefficients `c_0 … c_n` to `a_0 … a_n`.
pub fn coeffs_c_to_a(c: &[f64]) -> Result<PolyOdeCoeffs> {
    coeffs_c_to_a_with(c, DEGENERATE_TOLERANCE, None)
}

/// As [`coeffs_c_to_a`] with an explicit tolerance. `log_products` forces
/// one of the two product paths; `None` picks log domain above
/// [`LOG_PRODUCT_THRESHOLD`].
pub fn coeffs_c_to_a_with(c: &[f64], tolerance: f64, log_products: Option<bool>) -> Result<PolyOdeCoeffs> {
    if c.is_empty() {
        return Err(KoobaError::EmptyCoefficients);
    }
    let n = c.len() - 1;
    if n > LOG_DOMAIN_ORDER_LIMIT {
        return Err(KoobaError::OrderTooLarge {
            order: n,
            limit: LOG_DOMAIN_ORDER_LIMIT,
            log_limit: LOG_DOMAIN_ORDER_LIMIT,
        });
    }
    let use_log = log_products.unwrap_or(n > LOG_PRODUCT_THRESHOLD);
    let mut a = vec![0.0; n + 1];
    for (k, &ck) in c.iter().enumerate() {
        let scaled = norm_factor(k) * ck;
        a[n - k] = if use_log {
            if scaled == 0.0 {
                0.0
            } else {
                scaled.signum() * (scaled.abs().ln() - product_log(k + 1, n)).exp()
            }
        } else {
            scaled / product_direct(k + 1, n)
        };
    }
    PolyOdeCoeffs::new(a, tolerance)
}

/// Companion matrix and the unit input column `(0, …, 0, 1/a_n)`.
pub fn build_companion(coeffs: &PolyOdeCoeffs) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = coeffs.order();
    if n == 0 {
        return Err(KoobaError::Unsupported("order 0 has an empty companion state".into()));
    }
    let a = coeffs.as_slice();
    let lead = coeffs.leading();
    if lead == 0.0 {
        return Err(KoobaError::DegenerateCoefficients {
            value: 0.0,
            tolerance: 0.0,
        });
    }
    let mut companion = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        companion[(i, i + 1)] = 1.0;
    }
    for j in 0..n {
        companion[(n - 1, j)] = -a[j] / lead;
    }
    let mut b_base = DVector::zeros(n);
    b_base[n - 1] = 1.0 / lead;
    Ok((companion, b_base))
}

/// `B = B_base bᵀ`.
pub fn expand_controls(b_base: &DVector<f64>, b: &[f64]) -> Result<DMatrix<f64>> {
    if b.is_empty() {
        return Err(KoobaError::Config("at least one control weight is required".into()));
    }
    Ok(DMatrix::from_fn(b_base.len(), b.len(), |i, j| b_base[i] * b[j]))
}

/// `K = [A B; 0 0]`.
pub fn assemble_operator(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() || b.nrows() != a.nrows() {
        return Err(KoobaError::Dimension(format!(
            "A is {}x{}, B is {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let (n, m) = (a.nrows(), b.ncols());
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(a);
    k.view_mut((0, n), (n, m)).copy_from(b);
    Ok(k)
}

/// Companion system with trainable control weights.
#[derive(Debug, Clone)]
pub struct KoopmanSystem {
    coeffs: PolyOdeCoeffs,
    a: DMatrix<f64>,
    b_base: DVector<f64>,
    b: Vec<f64>,
    b_mat: DMatrix<f64>,
    operator: DMatrix<f64>,
    dt: f64,
    a_bar: DMatrix<f64>,
    b_bar: DMatrix<f64>,
    b_base_bar: DVector<f64>,
}

impl KoopmanSystem {
    pub fn new(coeffs: PolyOdeCoeffs, b: &[f64], dt: f64) -> Result<Self> {
        let (a, b_base) = build_companion(&coeffs)?;
        let b_mat = expand_controls(&b_base, b)?;
        let operator = assemble_operator(&a, &b_mat)?;
        let n = a.nrows();
        let m = b.len();
        // discretize [B_base | B] in one solve
        let mut inputs = DMatrix::zeros(n, m + 1);
        inputs.set_column(0, &b_base);
        inputs.view_mut((0, 1), (n, m)).copy_from(&b_mat);
        let (a_bar, inputs_bar) = linalg::bilinear(&a, &inputs, dt)?;
        let b_base_bar = inputs_bar.column(0).into_owned();
        let b_bar = inputs_bar.columns(1, m).into_owned();
        Ok(Self {
            coeffs,
            a,
            b_base,
            b: b.to_vec(),
            b_mat,
            operator,
            dt,
            a_bar,
            b_bar,
            b_base_bar,
        })
    }

    pub fn coeffs(&self) -> &PolyOdeCoeffs {
        &self.coeffs
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.len()
    }

    pub fn companion(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b_base(&self) -> &DVector<f64> {
        &self.b_base
    }

    pub fn control_weights(&self) -> &[f64] {
        &self.b
    }

    pub fn control_matrix(&self) -> &DMatrix<f64> {
        &self.b_mat
    }

    pub fn operator(&self) -> &DMatrix<f64> {
        &self.operator
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Discretized `(Ā, B̄)`.
    pub fn discrete(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        (&self.a_bar, &self.b_bar)
    }

    pub fn discrete_b_base(&self) -> &DVector<f64> {
        &self.b_base_bar
    }
}

/// Lifted state `x` plus the first component retained from before the last
/// propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedState {
    pub x: DVector<f64>,
    pub x1_prev: f64,
}

/// `x_j = (n (n-1) … (n-j+2)) p_{n-j+1}(s0)` for `j = 1..n`, i.e. the
/// derivative chain of `p_n` under the `n p_{n-1}` convention.
pub fn lift_initial_state(n: usize, s0: f64) -> Result<LiftedState> {
    if n == 0 {
        return Err(KoobaError::Unsupported("order 0 has an empty lifted state".into()));
    }
    let p = legendre::legendre_all(n, s0)?;
    let x = DVector::from_fn(n, |i, _| {
        let j = i + 1;
        product_direct(n + 2 - j, n) * p[n + 1 - j]
    });
    let x1_prev = x[0];
    Ok(LiftedState { x, x1_prev })
}

/// `x1_prev ← x_1`, then `x ← Ā x + B̄ u` with `u` held over the step.
pub fn propagate(sys: &KoopmanSystem, state: &LiftedState, u: &[f64]) -> Result<LiftedState> {
    if u.len() != sys.control_dim() {
        return Err(KoobaError::Dimension(format!(
            "{} controls supplied, system has {}",
            u.len(),
            sys.control_dim()
        )));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(KoobaError::Input("non-finite control input".into()));
    }
    if state.x.len() != sys.state_dim() {
        return Err(KoobaError::Dimension(format!(
            "lifted state has {} entries, system has {}",
            state.x.len(),
            sys.state_dim()
        )));
    }
    let u = DVector::from_column_slice(u);
    Ok(LiftedState {
        x1_prev: state.x[0],
        x: &sys.a_bar * &state.x + &sys.b_bar * u,
    })
}

/// `a · (x1_prev, x)`.
pub fn readout(sys: &KoopmanSystem, state: &LiftedState) -> Result<f64> {
    readout_coeffs(sys.coeffs(), state)
}

pub fn readout_coeffs(coeffs: &PolyOdeCoeffs, state: &LiftedState) -> Result<f64> {
    let a = coeffs.as_slice();
    if a.len() != state.x.len() + 1 {
        return Err(KoobaError::Dimension(format!(
            "{} ODE coefficients for a lifted state of {}",
            a.len(),
            state.x.len()
        )));
    }
    Ok(a[0] * state.x1_prev + a[1..].iter().zip(state.x.iter()).map(|(ai, xi)| ai * xi).sum::<f64>())
}

/// Forecast split into its control-free part and per-control sensitivities:
/// `γ̃_t = homogeneous[t] + Σ_j gain[(t, j)] b_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastDesign {
    pub homogeneous: Vec<f64>,
    pub gain: DMatrix<f64>,
}

impl ForecastDesign {
    pub fn horizon(&self) -> usize {
        self.homogeneous.len()
    }

    pub fn evaluate(&self, b: &[f64]) -> Vec<f64> {
        (0..self.horizon())
            .map(|t| self.homogeneous[t] + (0..b.len()).map(|j| self.gain[(t, j)] * b[j]).sum::<f64>())
            .collect()
    }
}

/// Free-running rollout over `u_future` (`horizon x m`) decomposed linearly
/// in the control weights. Equivalent to propagating a [`KoopmanSystem`]
/// for every `b` at once.
pub fn rollout_design(coeffs: &PolyOdeCoeffs, dt: f64, initial: &LiftedState, u_future: &DMatrix<f64>) -> Result<ForecastDesign> {
    let m = u_future.ncols();
    let sys = KoopmanSystem::new(coeffs.clone(), &vec![0.0; m.max(1)], dt)?;
    let a_bar = &sys.a_bar;
    let b_bar = &sys.b_base_bar;
    let n = sys.state_dim();
    let horizon = u_future.nrows();
    let mut hom = initial.clone();
    let mut sens = DMatrix::<f64>::zeros(n, m);
    let mut sens_prev = vec![0.0; m];
    let mut homogeneous = Vec::with_capacity(horizon);
    let mut gain = DMatrix::zeros(horizon, m);
    for t in 0..horizon {
        let u = u_future.row(t);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(KoobaError::Input(format!("non-finite control at horizon step {t}")));
        }
        hom = LiftedState {
            x1_prev: hom.x[0],
            x: a_bar * &hom.x,
        };
        for j in 0..m {
            sens_prev[j] = sens[(0, j)];
        }
        sens = a_bar * &sens + b_bar * u;
        homogeneous.push(readout_coeffs(coeffs, &hom)?);
        let a = coeffs.as_slice();
        for j in 0..m {
            gain[(t, j)] = a[0] * sens_prev[j] + (0..n).map(|i| a[i + 1] * sens[(i, j)]).sum::<f64>();
        }
    }
    Ok(ForecastDesign { homogeneous, gain })
}
