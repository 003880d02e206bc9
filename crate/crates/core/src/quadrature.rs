//! Gauss-Legendre quadrature via the Golub-Welsch eigenvalue method.
//!
//! Nodes are the eigenvalues of the symmetric Jacobi matrix of the Legendre
//! recurrence, so the rule does not depend on [`crate::legendre`]. This makes
//! it usable as an independent check of that module.

use nalgebra::DMatrix;

/// Nodes and weights of the `points`-point rule on `[-1, 1]`, sorted by node.
pub fn gauss_legendre(points: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(points > 0, "quadrature needs at least one point");
    let mut jacobi = DMatrix::<f64>::zeros(points, points);
    for k in 1..points {
        let kf = k as f64;
        let beta = kf / (4.0 * kf * kf - 1.0).sqrt();
        jacobi[(k, k - 1)] = beta;
        jacobi[(k - 1, k)] = beta;
    }
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..points)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], 2.0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Integrates `f` over `[-1, 1]`.
pub fn integrate(points: usize, f: impl Fn(f64) -> f64) -> f64 {
    let (nodes, weights) = gauss_legendre(points);
    nodes.iter().zip(&weights).map(|(x, w)| w * f(*x)).sum()
}
