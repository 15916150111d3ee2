//! Small dense helpers shared by the kernel, Gram and RKHS modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative tolerance below which a computed eigenvalue still counts as nonnegative.
pub const PSD_REL_TOL: f64 = 1e-10;

/// Roundoff floor for quantities that are nonnegative in exact arithmetic.
pub const CLAMP_TOL: f64 = 1e-12;

/// `1e-10 · max(λ_max, 1)`
pub fn psd_tolerance(lambda_max: f64) -> f64 {
    PSD_REL_TOL * lambda_max.max(1.0)
}

/// Clamp values in `[-CLAMP_TOL, 0)` to zero; leave anything else untouched.
pub fn clamp_roundoff(v: f64) -> f64 {
    if (-CLAMP_TOL..0.0).contains(&v) {
        0.0
    } else {
        v
    }
}

/// `max |M - Mᵀ|`; infinite for non-square input.
pub fn symmetry_defect(m: &DMatrix<f64>) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn is_symmetric(m: &DMatrix<f64>) -> bool {
    symmetry_defect(m) <= 1e-12 * (1.0 + m.amax())
}

/// `(M + Mᵀ)/2`
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Extreme eigenvalues of the symmetric part of `m`.
pub fn min_max_sym_eig(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Spectral norm of a symmetric matrix, `max |λ|`.
pub fn sym_op_norm(m: &DMatrix<f64>) -> f64 {
    let (min, max) = min_max_sym_eig(m);
    min.abs().max(max.abs())
}

/// Eigenpairs of a symmetric matrix sorted by nonincreasing eigenvalue.
pub fn sorted_sym_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// `a · M · b`
pub fn bilinear(a: &DVector<f64>, m: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
    a.dot(&(m * b))
}

/// Largest absolute entry of `a - b`; infinite when shapes differ.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_nonincreasing() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, -1.0]);
        let (vals, vecs) = sorted_sym_eigen(&m);
        assert_eq!(vals, vec![5.0, 2.0, -1.0]);
        assert!((vecs[(1, 0)].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn clamp_only_touches_roundoff() {
        assert_eq!(clamp_roundoff(-1e-13), 0.0);
        assert_eq!(clamp_roundoff(-1e-9), -1e-9);
        assert_eq!(clamp_roundoff(0.5), 0.5);
    }

    #[test]
    fn symmetry_defect_of_rectangular_is_infinite() {
        assert!(symmetry_defect(&DMatrix::zeros(2, 3)).is_infinite());
        assert!(is_symmetric(&DMatrix::identity(3, 3)));
    }
}
