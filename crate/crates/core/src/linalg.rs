//! Small dense helpers shared by the HiPPO and companion-system code.

use nalgebra::{DMatrix, DVector};

use crate::error::{KoobaError, Result};

/// Bilinear (Tustin) discretization of `x' = N x + M u` with step `dt`.
///
/// Returns `((I - dt/2 N)^-1 (I + dt/2 N), dt (I - dt/2 N)^-1 M)`. The left
/// factor is LU-factorized once with partial pivoting and reused for both
/// right-hand sides.
pub fn bilinear(n: &DMatrix<f64>, m: &DMatrix<f64>, dt: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(KoobaError::Config(format!("step size must be positive, got {dt}")));
    }
    if !n.is_square() || m.nrows() != n.nrows() {
        return Err(KoobaError::Dimension(format!(
            "N is {}x{}, M is {}x{}",
            n.nrows(),
            n.ncols(),
            m.nrows(),
            m.ncols()
        )));
    }
    let dim = n.nrows();
    let eye = DMatrix::<f64>::identity(dim, dim);
    let half = n * (dt / 2.0);
    let lhs = &eye - &half;
    let lu = lhs.clone().lu();
    if is_singular(&lhs, &lu) {
        return Err(KoobaError::SingularBilinear { dt });
    }
    let n_bar = lu.solve(&(&eye + &half)).ok_or(KoobaError::SingularBilinear { dt })?;
    let m_bar = lu.solve(&(m * dt)).ok_or(KoobaError::SingularBilinear { dt })?;
    Ok((n_bar, m_bar))
}

fn is_singular(lhs: &DMatrix<f64>, lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>) -> bool {
    let scale = lhs.amax().max(1.0);
    let u = lu.u();
    u.diagonal().iter().any(|d| !(d.abs() > 1e-13 * scale))
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn vector_from(values: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_bilinear() {
        let n = DMatrix::from_element(1, 1, -1.0);
        let m = DMatrix::from_element(1, 1, 2.0);
        let (nb, mb) = bilinear(&n, &m, 0.1).unwrap();
        assert!((nb[(0, 0)] - 0.95 / 1.05).abs() < 1e-15);
        assert!((mb[(0, 0)] - 0.1 * 2.0 / 1.05).abs() < 1e-15);
    }

    #[test]
    fn singular_left_factor_is_reported() {
        // I - dt/2 * 2 = 0 at dt = 1
        let n = DMatrix::from_element(1, 1, 2.0);
        let m = DMatrix::from_element(1, 1, 1.0);
        assert_eq!(bilinear(&n, &m, 1.0), Err(KoobaError::SingularBilinear { dt: 1.0 }));
    }

    #[test]
    fn rejects_bad_step() {
        let n = DMatrix::<f64>::zeros(2, 2);
        let m = DMatrix::<f64>::zeros(2, 1);
        assert!(bilinear(&n, &m, 0.0).is_err());
        assert!(bilinear(&n, &m, f64::NAN).is_err());
    }

    #[test]
    fn rotation_has_unit_radius() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!((spectral_radius(&a) - 1.0).abs() < 1e-12);
    }
}
