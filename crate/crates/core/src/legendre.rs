//! Legendre polynomials on the canonical interval `[-1, 1]`.
//!
//! `p_n` are the classical Legendre polynomials and
//! `g_n(s) = sqrt((2n+1)/2) p_n(s)` their orthonormal counterparts under the
//! unit weight. A signal is reconstructed from coefficients `c` as
//! `sum_k c_k g_k(s)`.

use serde::{Deserialize, Serialize};

use crate::error::{KoobaError, Result};

/// Highest order allowed with direct factorial products.
pub const DIRECT_ORDER_LIMIT: usize = 32;
/// Highest order allowed once log-domain products are enabled.
pub const LOG_DOMAIN_ORDER_LIMIT: usize = 64;

/// Highest polynomial degree used by a basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolyOrder(usize);

impl PolyOrder {
    /// Validates `n` against the factorial range of the selected product mode.
    pub fn new(n: usize, log_domain: bool) -> Result<Self> {
        let limit = if log_domain { LOG_DOMAIN_ORDER_LIMIT } else { DIRECT_ORDER_LIMIT };
        if n > limit {
            return Err(KoobaError::OrderTooLarge {
                order: n,
                limit,
                log_limit: LOG_DOMAIN_ORDER_LIMIT,
            });
        }
        Ok(Self(n))
    }

    pub fn get(self) -> usize {
        self.0
    }

    /// Number of coefficients, `n + 1`.
    pub fn len(self) -> usize {
        self.0 + 1
    }
}

fn check_domain(s: f64) -> Result<()> {
    if s.is_nan() || s.abs() > 1.0 {
        return Err(KoobaError::Domain(s));
    }
    Ok(())
}

/// `p_n(s)` by the three-term recurrence
/// `(k+1) p_{k+1} = (2k+1) s p_k - k p_{k-1}`.
pub fn legendre_eval(n: usize, s: f64) -> Result<f64> {
    check_domain(s)?;
    Ok(legendre_unchecked(n, s))
}

pub(crate) fn legendre_unchecked(n: usize, s: f64) -> f64 {
    match n {
        0 => 1.0,
        1 => s,
        _ => {
            let (mut prev, mut cur) = (1.0, s);
            for k in 1..n {
                let kf = k as f64;
                let next = ((2.0 * kf + 1.0) * s * cur - kf * prev) / (kf + 1.0);
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

/// Normalization factor `sqrt((2n+1)/2)`.
pub fn norm_factor(n: usize) -> f64 {
    ((2 * n + 1) as f64 / 2.0).sqrt()
}

/// `g_n(s) = sqrt((2n+1)/2) p_n(s)`.
pub fn normalized_eval(n: usize, s: f64) -> Result<f64> {
    Ok(norm_factor(n) * legendre_eval(n, s)?)
}

/// All of `p_0(s) .. p_n(s)` in one pass.
pub fn legendre_all(n: usize, s: f64) -> Result<Vec<f64>> {
    check_domain(s)?;
    let mut out = Vec::with_capacity(n + 1);
    out.push(1.0);
    if n >= 1 {
        out.push(s);
    }
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * s * out[k] - kf * out[k - 1]) / (kf + 1.0);
        out.push(next);
    }
    Ok(out)
}

/// `sum_k c_k g_k(s)`.
pub fn reconstruct(c: &[f64], s: f64) -> Result<f64> {
    if c.is_empty() {
        return Err(KoobaError::EmptyCoefficients);
    }
    let p = legendre_all(c.len() - 1, s)?;
    Ok(c.iter()
        .zip(&p)
        .enumerate()
        .map(|(k, (ck, pk))| ck * norm_factor(k) * pk)
        .sum())
}
