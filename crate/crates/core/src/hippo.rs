//! HiPPO Legendre memory: continuous LegT/LegS operators, their bilinear
//! discretization, and streaming or block-batched coefficient updates.
//!
//! The coefficient recurrence is `c_{k+1} = N̄ c_k + M̄ γ_k`. For the
//! fixed timescale `N̄, M̄` are the bilinear images of the continuous
//! `(N, M)` at step `dt`. The scaled timescale (LegS only) projects onto the
//! whole elapsed history, so step `k` uses the bilinear images at the
//! effective step `1 / (k + 1)`.

use std::borrow::Cow;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{KoobaError, Result};
use crate::legendre::PolyOrder;
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Sliding window of length `omega`.
    LegT,
    /// Entire elapsed history.
    LegS,
}

impl std::str::FromStr for Method {
    type Err = KoobaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "legt" => Ok(Method::LegT),
            "legs" => Ok(Method::LegS),
            other => Err(KoobaError::Config(format!("unknown method `{other}` (expected legt or legs)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Timescale {
    /// Constant `N̄, M̄` at step `dt`.
    Fixed,
    /// LegS projection onto `[0, t]`: effective step `1/(k+1)` at step `k`.
    Scaled,
}

/// Which closed forms are used for `N` and `M`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixForm {
    /// Unscaled forms with a leading minus on every LegS branch.
    #[default]
    Standard,
    /// Experimental alternative: LegT with the `lambda_n = 2/sqrt(2n+1)`
    /// rescaling, LegS without the leading minus.
    Rescaled,
}

/// Serializable basis settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisConfig {
    pub method: Method,
    pub order: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    pub dt: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timescale: Option<Timescale>,
    #[serde(default)]
    pub form: MatrixForm,
    #[serde(default)]
    pub log_domain: bool,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            method: Method::LegS,
            order: 6,
            omega: None,
            dt: 1.0,
            timescale: None,
            form: MatrixForm::Standard,
            log_domain: false,
        }
    }
}

impl BasisConfig {
    pub fn effective_timescale(&self) -> Timescale {
        self.timescale.unwrap_or(match self.method {
            Method::LegS => Timescale::Scaled,
            Method::LegT => Timescale::Fixed,
        })
    }
}

/// Continuous `(N, M)` in the standard form.
pub fn build_continuous(method: Method, order: usize, omega: Option<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    build_continuous_form(method, order, omega, MatrixForm::Standard)
}

pub fn build_continuous_form(
    method: Method,
    order: usize,
    omega: Option<f64>,
    form: MatrixForm,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let dim = order + 1;
    let root = |n: usize, k: usize| (((2 * n + 1) * (2 * k + 1)) as f64).sqrt();
    match method {
        Method::LegT => {
            let w = match omega {
                Some(w) if w > 0.0 && w.is_finite() => w,
                Some(w) => return Err(KoobaError::Config(format!("LegT window omega must be positive, got {w}"))),
                None => return Err(KoobaError::Config("LegT requires a window length omega".into())),
            };
            let n = DMatrix::from_fn(dim, dim, |n, k| {
                // (-1)^(n-k) for k > n is the parity of k - n
                let parity = if (n + k) % 2 == 0 { 1.0 } else { -1.0 };
                let sign = if k < n { 1.0 } else { parity };
                let mag = match form {
                    MatrixForm::Standard => root(n, k),
                    MatrixForm::Rescaled => (2 * n + 1) as f64,
                };
                -sign * mag / w
            });
            let m = DVector::from_fn(dim, |n, _| match form {
                MatrixForm::Standard => (2.0 * (2 * n + 1) as f64).sqrt() / w,
                MatrixForm::Rescaled => (2 * n + 1) as f64 / w,
            });
            Ok((n, m))
        }
        Method::LegS => {
            let lead = match form {
                MatrixForm::Standard => -1.0,
                MatrixForm::Rescaled => 1.0,
            };
            let n = DMatrix::from_fn(dim, dim, |n, k| {
                if k < n {
                    lead * root(n, k)
                } else if k == n {
                    lead * (n + 1) as f64
                } else {
                    0.0
                }
            });
            let m = DVector::from_fn(dim, |n, _| (2.0 * (2 * n + 1) as f64).sqrt());
            Ok((n, m))
        }
    }
}

/// `N̄ = (I - dt/2 N)^-1 (I + dt/2 N)`, `M̄ = dt (I - dt/2 N)^-1 M`.
pub fn discretize_bilinear(n: &DMatrix<f64>, m: &DVector<f64>, dt: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let m_col = DMatrix::from_column_slice(m.len(), 1, m.as_slice());
    let (n_bar, m_bar) = linalg::bilinear(n, &m_col, dt)?;
    let m_bar = DVector::from_column_slice(m_bar.as_slice());
    Ok((n_bar, m_bar))
}

const STABILITY_SLACK: f64 = 1e-6;

/// A fully constructed Legendre memory.
#[derive(Debug, Clone)]
pub struct HippoBasis {
    method: Method,
    order: PolyOrder,
    omega: Option<f64>,
    dt: f64,
    timescale: Timescale,
    n: DMatrix<f64>,
    m: DVector<f64>,
    n_bar: DMatrix<f64>,
    m_bar: DVector<f64>,
}

impl HippoBasis {
    pub fn new(config: &BasisConfig) -> Result<Self> {
        let order = PolyOrder::new(config.order, config.log_domain)?;
        if !(config.dt > 0.0) || !config.dt.is_finite() {
            return Err(KoobaError::Config(format!("dt must be positive, got {}", config.dt)));
        }
        let timescale = config.effective_timescale();
        if config.method == Method::LegT && timescale == Timescale::Scaled {
            return Err(KoobaError::Config("the scaled timescale applies to LegS only".into()));
        }
        let omega = match config.method {
            Method::LegT => config.omega,
            Method::LegS => None,
        };
        let (n, m) = build_continuous_form(config.method, order.get(), omega, config.form)?;
        let (n_bar, m_bar) = discretize_bilinear(&n, &m, config.dt)?;
        let basis = Self {
            method: config.method,
            order,
            omega,
            dt: config.dt,
            timescale,
            n,
            m,
            n_bar,
            m_bar,
        };
        if timescale == Timescale::Fixed && config.form == MatrixForm::Standard {
            let radius = basis.spectral_radius();
            if radius > 1.0 + STABILITY_SLACK {
                return Err(KoobaError::Unstable { radius, dt: config.dt });
            }
        }
        Ok(basis)
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn order(&self) -> PolyOrder {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.order.len()
    }

    pub fn omega(&self) -> Option<f64> {
        self.omega
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn timescale(&self) -> Timescale {
        self.timescale
    }

    pub fn continuous(&self) -> (&DMatrix<f64>, &DVector<f64>) {
        (&self.n, &self.m)
    }

    pub fn discrete(&self) -> (&DMatrix<f64>, &DVector<f64>) {
        (&self.n_bar, &self.m_bar)
    }

    /// Spectral radius of `N̄` at `dt`.
    pub fn spectral_radius(&self) -> f64 {
        linalg::spectral_radius(&self.n_bar)
    }

    /// Transition and input maps applied when consuming sample number `k`.
    pub fn step_matrices(&self, k: usize) -> Result<(Cow<'_, DMatrix<f64>>, Cow<'_, DVector<f64>>)> {
        match self.timescale {
            Timescale::Fixed => Ok((Cow::Borrowed(&self.n_bar), Cow::Borrowed(&self.m_bar))),
            Timescale::Scaled => {
                let (nb, mb) = discretize_bilinear(&self.n, &self.m, 1.0 / (k as f64 + 1.0))?;
                Ok((Cow::Owned(nb), Cow::Owned(mb)))
            }
        }
    }

    /// Canonical basis argument for physical time `t` once `elapsed` time has
    /// been consumed. LegT maps `[elapsed - omega, elapsed]`, LegS maps
    /// `[0, elapsed]` onto `[-1, 1]`.
    pub fn canonical_argument(&self, t: f64, elapsed: f64) -> f64 {
        let s = match (self.method, self.omega) {
            (Method::LegT, Some(w)) => 2.0 * (t - (elapsed - w)) / w - 1.0,
            _ => 2.0 * t / elapsed - 1.0,
        };
        s.clamp(-1.0, 1.0)
    }
}

/// Legendre coefficients at a step index.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientState {
    pub c: DVector<f64>,
    pub step_index: usize,
}

impl CoefficientState {
    /// The zero state at step 0.
    pub fn zeros(basis: &HippoBasis) -> Self {
        Self {
            c: DVector::zeros(basis.dim()),
            step_index: 0,
        }
    }

    /// Resume from previously computed coefficients.
    pub fn warm_start(basis: &HippoBasis, c: DVector<f64>, step_index: usize) -> Result<Self> {
        if c.len() != basis.dim() {
            return Err(KoobaError::Dimension(format!(
                "state has {} coefficients, basis expects {}",
                c.len(),
                basis.dim()
            )));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(KoobaError::Input("non-finite coefficient in warm-start state".into()));
        }
        Ok(Self { c, step_index })
    }

    pub fn coefficients(&self) -> &[f64] {
        self.c.as_slice()
    }
}

/// One recurrence step: `c' = N̄ c + M̄ γ`.
pub fn step(state: &CoefficientState, gamma: f64, basis: &HippoBasis) -> Result<CoefficientState> {
    if !gamma.is_finite() {
        return Err(KoobaError::Input(format!("non-finite sample {gamma} at step {}", state.step_index)));
    }
    if state.c.len() != basis.dim() {
        return Err(KoobaError::Dimension(format!(
            "state has {} coefficients, basis expects {}",
            state.c.len(),
            basis.dim()
        )));
    }
    let (n_bar, m_bar) = basis.step_matrices(state.step_index)?;
    let c = n_bar.as_ref() * &state.c + m_bar.as_ref() * gamma;
    Ok(CoefficientState {
        c,
        step_index: state.step_index + 1,
    })
}

/// Streams a whole signal through the recurrence starting from `state`.
pub fn project(state: &CoefficientState, signal: &[f64], basis: &HippoBasis) -> Result<CoefficientState> {
    signal.iter().try_fold(state.clone(), |s, &g| step(&s, g, basis))
}

/// Precomputed operators for consuming `k` samples at once.
///
/// `transitions[j]` is the product of the last `j` step transitions of the
/// block (`N̄^j` for the fixed timescale), and `input_map` column `j` is
/// `transitions[k-1-j] M̄_j`.
#[derive(Debug, Clone)]
pub struct BlockKernel {
    k: usize,
    start_index: Option<usize>,
    transitions: Vec<DMatrix<f64>>,
    input_map: DMatrix<f64>,
}

impl BlockKernel {
    /// `start_index` is only significant for the scaled timescale, where the
    /// kernel is valid for states at exactly that step index.
    pub fn new(basis: &HippoBasis, k: usize, start_index: usize) -> Result<Self> {
        if k == 0 {
            return Err(KoobaError::Config("block length must be at least 1".into()));
        }
        let dim = basis.dim();
        let steps = (0..k)
            .map(|j| {
                basis
                    .step_matrices(start_index + j)
                    .map(|(n, m)| (n.into_owned(), m.into_owned()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut transitions = Vec::with_capacity(k + 1);
        transitions.push(DMatrix::identity(dim, dim));
        for j in 1..=k {
            let next = &transitions[j - 1] * &steps[k - j].0;
            transitions.push(next);
        }
        let mut input_map = DMatrix::zeros(dim, k);
        for (j, (_, m_bar)) in steps.iter().enumerate() {
            input_map.set_column(j, &(&transitions[k - 1 - j] * m_bar));
        }
        let start_index = match basis.timescale() {
            Timescale::Fixed => None,
            Timescale::Scaled => Some(start_index),
        };
        Ok(Self {
            k,
            start_index,
            transitions,
            input_map,
        })
    }

    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    pub fn start_index(&self) -> Option<usize> {
        self.start_index
    }

    /// `transitions()[j]`: see the type-level docs.
    pub fn transitions(&self) -> &[DMatrix<f64>] {
        &self.transitions
    }

    pub fn input_map(&self) -> &DMatrix<f64> {
        &self.input_map
    }
}

/// Consumes `block` in one shot; equivalent to `block.len()` calls of [`step`].
pub fn block_step(state: &CoefficientState, block: &[f64], kernel: &BlockKernel) -> Result<CoefficientState> {
    if block.len() != kernel.k {
        return Err(KoobaError::Input(format!(
            "block has {} samples, kernel expects {}",
            block.len(),
            kernel.k
        )));
    }
    if let Some(start) = kernel.start_index {
        if state.step_index != start {
            return Err(KoobaError::Input(format!(
                "kernel built for step {start}, state is at step {}",
                state.step_index
            )));
        }
    }
    if block.iter().any(|g| !g.is_finite()) {
        return Err(KoobaError::Input("non-finite sample in block".into()));
    }
    if state.c.len() != kernel.input_map.nrows() {
        return Err(KoobaError::Dimension(format!(
            "state has {} coefficients, kernel expects {}",
            state.c.len(),
            kernel.input_map.nrows()
        )));
    }
    let gamma = DVector::from_column_slice(block);
    let c = &kernel.transitions[kernel.k] * &state.c + &kernel.input_map * gamma;
    Ok(CoefficientState {
        c,
        step_index: state.step_index + kernel.k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn legs(order: usize) -> HippoBasis {
        HippoBasis::new(&BasisConfig {
            order,
            ..BasisConfig::default()
        })
        .unwrap()
    }

    fn legt(order: usize, omega: f64, dt: f64) -> HippoBasis {
        HippoBasis::new(&BasisConfig {
            method: Method::LegT,
            order,
            omega: Some(omega),
            dt,
            ..BasisConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn legt_order_one_fixture() {
        let (n, m) = build_continuous(Method::LegT, 1, Some(1.0)).unwrap();
        let r3 = 3f64.sqrt();
        let expected = DMatrix::from_row_slice(2, 2, &[-1.0, r3, -r3, -3.0]);
        assert_abs_diff_eq!(n, expected, epsilon = 1e-15);
        assert_abs_diff_eq!(m[0], 2f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(m[1], 6f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn legs_order_two_fixture() {
        let (n, m) = build_continuous(Method::LegS, 2, None).unwrap();
        assert_eq!(n.diagonal().as_slice(), &[-1.0, -2.0, -3.0]);
        assert_abs_diff_eq!(n[(1, 0)], -3f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(n[(2, 1)], -15f64.sqrt(), epsilon = 1e-15);
        assert_eq!(n[(0, 2)], 0.0);
        for (i, want) in [2f64, 6.0, 10.0].iter().enumerate() {
            assert_abs_diff_eq!(m[i], want.sqrt(), epsilon = 1e-15);
        }
    }

    #[test]
    fn rescaled_forms() {
        let (n, m) = build_continuous_form(Method::LegS, 2, None, MatrixForm::Rescaled).unwrap();
        assert_eq!(n[(2, 2)], 3.0);
        assert_abs_diff_eq!(n[(1, 0)], 3f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(m[2], 10f64.sqrt(), epsilon = 1e-15);
        let (n, m) = build_continuous_form(Method::LegT, 2, Some(2.0), MatrixForm::Rescaled).unwrap();
        assert_eq!(n[(2, 0)], -2.5);
        assert_eq!(n[(1, 2)], 1.5);
        assert_eq!(m[1], 1.5);
    }

    #[test]
    fn legt_requires_positive_window() {
        assert!(matches!(build_continuous(Method::LegT, 3, None), Err(KoobaError::Config(_))));
        assert!(matches!(build_continuous(Method::LegT, 3, Some(0.0)), Err(KoobaError::Config(_))));
        assert!(matches!(build_continuous(Method::LegT, 3, Some(-2.0)), Err(KoobaError::Config(_))));
        assert!(build_continuous(Method::LegS, 3, None).is_ok());
    }

    #[test]
    fn bilinear_examples() {
        let zero = DMatrix::zeros(3, 3);
        let m = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let (nb, mb) = discretize_bilinear(&zero, &m, 0.2).unwrap();
        assert_eq!(nb, DMatrix::identity(3, 3));
        assert_abs_diff_eq!(mb, &m * 0.2, epsilon = 1e-15);

        let scalar = DMatrix::from_element(1, 1, -1.0);
        let (nb, _) = discretize_bilinear(&scalar, &DVector::from_element(1, 1.0), 0.1).unwrap();
        assert_abs_diff_eq!(nb[(0, 0)], 0.9047619047619048, epsilon = 1e-15);
    }

    #[test]
    fn bilinear_is_second_order_close_to_euler() {
        let (n, m) = build_continuous(Method::LegT, 4, Some(1.0)).unwrap();
        let dim = n.nrows();
        let err = |dt: f64| {
            let (nb, _) = discretize_bilinear(&n, &m, dt).unwrap();
            (nb - (DMatrix::identity(dim, dim) + &n * dt)).norm()
        };
        let (e2, e3) = (err(1e-2), err(1e-3));
        // O(dt^2): a tenfold smaller step gives roughly a hundredfold smaller gap
        let ratio = e2 / e3;
        assert!((80.0..120.0).contains(&ratio), "ratio {ratio}");
        assert!(e2 < n.norm().powi(2) * 1e-4);
    }

    #[test]
    fn singular_discretization_reports_dt() {
        let n = DMatrix::from_element(1, 1, 4.0);
        let err = discretize_bilinear(&n, &DVector::from_element(1, 1.0), 0.5).unwrap_err();
        assert_eq!(err, KoobaError::SingularBilinear { dt: 0.5 });
    }

    #[test]
    fn step_examples() {
        let basis = legt(5, 1.0, 0.01);
        let zero = CoefficientState::zeros(&basis);
        let s = step(&zero, 0.0, &basis).unwrap();
        assert!(s.c.iter().all(|v| *v == 0.0));
        assert_eq!(s.step_index, 1);
        let s = step(&zero, 1.0, &basis).unwrap();
        assert_eq!(&s.c, basis.discrete().1);
        assert!(matches!(step(&zero, f64::INFINITY, &basis), Err(KoobaError::Input(_))));
    }

    #[test]
    fn step_matches_dense_evaluation() {
        let basis = legt(7, 2.0, 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (nb, mb) = basis.discrete();
        for _ in 0..20 {
            let c: Vec<f64> = (0..basis.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let g: f64 = rng.gen_range(-2.0..2.0);
            let state = CoefficientState::warm_start(&basis, DVector::from_vec(c.clone()), 3).unwrap();
            let got = step(&state, g, &basis).unwrap();
            for i in 0..basis.dim() {
                let want: f64 = (0..basis.dim()).map(|j| nb[(i, j)] * c[j]).sum::<f64>() + mb[i] * g;
                assert!((got.c[i] - want).abs() < 1e-12);
            }
            assert_eq!(got.step_index, 4);
        }
    }

    #[test]
    fn scaled_legs_holds_constant_signal() {
        let basis = HippoBasis::new(&BasisConfig {
            order: 10,
            dt: 1.0 / 512.0,
            ..BasisConfig::default()
        })
        .unwrap();
        let state = project(&CoefficientState::zeros(&basis), &[1.0; 512], &basis).unwrap();
        for s in [-0.5, 0.0, 0.5] {
            let v = crate::legendre::reconstruct(state.coefficients(), s).unwrap();
            assert!((v - 1.0).abs() < 0.02, "s = {s}: {v}");
        }
    }

    #[test]
    fn fixed_bases_are_stable() {
        for order in 0..=16 {
            for dt in [1.0 / 32.0, 1.0 / 100.0, 1.0 / 1000.0] {
                let basis = legt(order, 1.0, dt);
                assert!(basis.spectral_radius() <= 1.0 + 1e-6);
            }
        }
        let legs_fixed = HippoBasis::new(&BasisConfig {
            order: 8,
            timescale: Some(Timescale::Fixed),
            ..BasisConfig::default()
        })
        .unwrap();
        assert!(legs_fixed.spectral_radius() < 1.0);
    }

    #[test]
    fn scaled_legt_is_rejected() {
        let cfg = BasisConfig {
            method: Method::LegT,
            omega: Some(4.0),
            timescale: Some(Timescale::Scaled),
            ..BasisConfig::default()
        };
        assert!(matches!(HippoBasis::new(&cfg), Err(KoobaError::Config(_))));
    }

    #[test]
    fn block_kernel_powers() {
        let basis = legt(4, 1.0, 0.05);
        let kernel = BlockKernel::new(&basis, 6, 0).unwrap();
        let n_bar = basis.discrete().0;
        for j in 1..=6 {
            let want = n_bar * &kernel.transitions()[j - 1];
            assert_abs_diff_eq!(kernel.transitions()[j], want, epsilon = 1e-13);
        }
    }

    #[test]
    fn block_of_one_equals_step() {
        let basis = legs(6);
        let kernel = BlockKernel::new(&basis, 1, 0).unwrap();
        let zero = CoefficientState::zeros(&basis);
        let a = block_step(&zero, &[0.3], &kernel).unwrap();
        let b = step(&zero, 0.3, &basis).unwrap();
        assert_abs_diff_eq!(a.c, b.c, epsilon = 1e-15);
        assert_eq!(a.step_index, 1);
    }

    #[test]
    fn zero_block_is_homogeneous() {
        let basis = legt(5, 1.0, 0.1);
        let kernel = BlockKernel::new(&basis, 9, 0).unwrap();
        let state = CoefficientState::warm_start(&basis, DVector::from_fn(6, |i, _| i as f64 - 2.0), 0).unwrap();
        let got = block_step(&state, &[0.0; 9], &kernel).unwrap();
        let want = basis.discrete().0.pow(9) * &state.c;
        assert_abs_diff_eq!(got.c, want, epsilon = 1e-12);
    }

    #[test]
    fn block_errors() {
        let basis = legs(3);
        let kernel = BlockKernel::new(&basis, 4, 0).unwrap();
        let zero = CoefficientState::zeros(&basis);
        assert!(matches!(block_step(&zero, &[1.0; 3], &kernel), Err(KoobaError::Input(_))));
        let later = CoefficientState { step_index: 2, ..zero };
        assert!(matches!(block_step(&later, &[1.0; 4], &kernel), Err(KoobaError::Input(_))));
        assert!(BlockKernel::new(&basis, 0, 0).is_err());
    }

    #[test]
    fn block_matches_loop_k64() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for basis in [legt(8, 1.0, 1.0 / 64.0), legs(8)] {
            let start = 3;
            let kernel = BlockKernel::new(&basis, 64, start).unwrap();
            let c = DVector::from_fn(9, |_, _| rng.gen_range(-1.0..1.0));
            let block: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let state = CoefficientState::warm_start(&basis, c, start).unwrap();
            let fast = block_step(&state, &block, &kernel).unwrap();
            let slow = project(&state, &block, &basis).unwrap();
            assert!((fast.c - slow.c).amax() < 1e-9);
            assert_eq!(fast.step_index, slow.step_index);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn step_is_affine(
            c1 in prop::collection::vec(-1.0f64..1.0, 7),
            c2 in prop::collection::vec(-1.0f64..1.0, 7),
            g1 in -1.0f64..1.0,
            g2 in -1.0f64..1.0,
            alpha in -2.0f64..2.0,
        ) {
            let basis = legt(6, 1.5, 0.05);
            let s1 = CoefficientState::warm_start(&basis, DVector::from_vec(c1), 0).unwrap();
            let s2 = CoefficientState::warm_start(&basis, DVector::from_vec(c2), 0).unwrap();
            let mix = CoefficientState::warm_start(&basis, &s1.c * alpha + &s2.c, 0).unwrap();
            let lhs = step(&mix, alpha * g1 + g2, &basis).unwrap().c;
            let rhs = step(&s1, g1, &basis).unwrap().c * alpha + step(&s2, g2, &basis).unwrap().c;
            prop_assert!((lhs - rhs).amax() < 1e-12);
        }

        #[test]
        fn half_blocks_compose(order in 1usize..=16, half in 1usize..=32, seed in 0u64..1000, scaled in any::<bool>()) {
            let basis = if scaled { legs(order) } else { legt(order, 1.0, 1.0 / 64.0) };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let block: Vec<f64> = (0..2 * half).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let c = DVector::from_fn(order + 1, |_, _| rng.gen_range(-1.0..1.0));
            let state = CoefficientState::warm_start(&basis, c, 0).unwrap();
            let whole = BlockKernel::new(&basis, 2 * half, 0).unwrap();
            let first = BlockKernel::new(&basis, half, 0).unwrap();
            let second = BlockKernel::new(&basis, half, half).unwrap();
            let once = block_step(&state, &block, &whole).unwrap();
            let mid = block_step(&state, &block[..half], &first).unwrap();
            let twice = block_step(&mid, &block[half..], &second).unwrap();
            prop_assert!((once.c - twice.c).amax() < 1e-9);
        }
    }
}
