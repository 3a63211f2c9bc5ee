//! Dense complex helpers shared by the quantum modules.

use nalgebra::DMatrix;
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;

pub(crate) fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub(crate) fn dagger(m: &CMat) -> CMat {
    m.adjoint()
}

pub(crate) fn commutator(a: &CMat, b: &CMat) -> CMat {
    a * b - b * a
}

/// `(m + m†)/2`.
pub(crate) fn hermitize(m: &CMat) -> CMat {
    (m + m.adjoint()) * c(0.5)
}

/// Largest entry modulus.
pub(crate) fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub(crate) fn hermiticity_error(m: &CMat) -> f64 {
    max_abs(&(m - m.adjoint()))
}

/// Eigenvalues (ascending) and eigenvectors (columns) of a Hermitian matrix.
pub(crate) fn herm_eig(m: &CMat) -> (Vec<f64>, CMat) {
    let eig = hermitize(m).symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = CMat::from_fn(n, n, |r, col| eig.eigenvectors[(r, order[col])]);
    (vals, vecs)
}

pub(crate) fn is_diagonal(m: &CMat) -> bool {
    let n = m.nrows();
    (0..n).all(|i| (0..n).all(|j| i == j || m[(i, j)] == Complex64::new(0.0, 0.0)))
}

/// Trace norm `½‖a − b‖₁` for Hermitian arguments.
#[cfg(test)]
pub(crate) fn trace_distance(a: &CMat, b: &CMat) -> f64 {
    let (vals, _) = herm_eig(&(a - b));
    0.5 * vals.iter().map(|v| v.abs()).sum::<f64>()
}
