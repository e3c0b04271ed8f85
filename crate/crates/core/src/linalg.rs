//! Dense symmetric helpers on top of nalgebra.

use nalgebra::SymmetricEigen;

use crate::model::{Matrix, Vector};

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(m: &Matrix) -> Vec<f64> {
    let mut vals: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    vals
}

/// `(eigmin, eigmax)` of a symmetric matrix.
pub fn extreme_eigenvalues(m: &Matrix) -> (f64, f64) {
    let vals = sym_eigenvalues(m);
    (vals[0], vals[vals.len() - 1])
}

/// Spectral norm of a symmetric matrix.
pub fn sym_spectral_norm(m: &Matrix) -> f64 {
    let (lo, hi) = extreme_eigenvalues(m);
    lo.abs().max(hi.abs())
}

/// Spectral norm of an arbitrary matrix (largest singular value).
pub fn spectral_norm(m: &Matrix) -> f64 {
    m.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Largest absolute entry of `M − Mᵀ` relative to the largest entry of `M`.
pub fn asymmetry(m: &Matrix) -> f64 {
    let scale = m.amax();
    if scale == 0.0 {
        return 0.0;
    }
    (m - m.transpose()).amax() / scale
}

/// Eigendecomposition with eigenvalues sorted ascending and eigenvector signs
/// fixed so the largest-magnitude entry of each is positive.
pub fn sorted_eigh(m: &Matrix) -> (Vector, Matrix) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = Vector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let cols: Vec<Vector> = order
        .iter()
        .map(|&i| canonical_sign(eig.eigenvectors.column(i).into_owned()))
        .collect();
    (vals, Matrix::from_columns(&cols))
}

/// Flips `v` so its largest-magnitude entry is positive.
pub fn canonical_sign(v: Vector) -> Vector {
    let pivot = v
        .iter()
        .copied()
        .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
    if pivot < 0.0 {
        -v
    } else {
        v
    }
}

/// Relative error `max|a − b| / max(1, max|a|, max|b|)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let num = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let den = a.iter().chain(b).map(|v| v.abs()).fold(1.0, f64::max);
    num / den
}
