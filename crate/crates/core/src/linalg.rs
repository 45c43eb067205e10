//! Small dense linear-algebra helpers on top of nalgebra.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

/// Dynamically sized real matrix.
pub type Mat = DMatrix<f64>;
/// Dynamically sized real vector.
pub type Vector = DVector<f64>;

/// Largest singular value (operator 2-norm).
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].abs();
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0, |a: f64, &s| a.max(s))
}

/// Smallest singular value.
pub fn min_singular(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].abs();
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(f64::INFINITY, |a: f64, &s| a.min(s))
}

/// Orthonormal basis of the column space of a full-column-rank matrix.
pub fn orthonormal_basis(m: &Mat) -> Mat {
    let k = m.ncols();
    if k == 0 {
        return Mat::zeros(m.nrows(), 0);
    }
    let q = m.clone().qr().q();
    q.columns(0, k).into_owned()
}

/// Orthogonal projector onto the span of an orthonormal basis.
pub fn projector(basis: &Mat) -> Mat {
    basis * basis.transpose()
}

/// Largest principal angle (radians) between two subspaces of equal dimension.
pub fn principal_angle(a: &Mat, b: &Mat) -> f64 {
    if a.ncols() == 0 && b.ncols() == 0 {
        return 0.0;
    }
    let qa = orthonormal_basis(a);
    let qb = orthonormal_basis(b);
    let n = qa.nrows();
    let residual = (Mat::identity(n, n) - projector(&qb)) * &qa;
    spectral_norm(&residual).clamp(0.0, 1.0).asin()
}

/// Orthonormal basis of the orthogonal complement of `small` inside `big`.
pub fn complement_in(big: &Mat, small: &Mat) -> Mat {
    let n = big.nrows();
    let want = big.ncols().saturating_sub(small.ncols());
    if want == 0 {
        return Mat::zeros(n, 0);
    }
    let qb = orthonormal_basis(big);
    if small.ncols() == 0 {
        return qb;
    }
    let qs = orthonormal_basis(small);
    let m = (Mat::identity(n, n) - projector(&qs)) * qb;
    let svd = m.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let mut out = Mat::zeros(n, want);
    for (c, &i) in order.iter().take(want).enumerate() {
        out.set_column(c, &u.column(i));
    }
    out
}

/// Upper-triangular Cholesky factor `R` with `gram = RᵀR`.
pub fn gram_factor(gram: &Mat) -> Option<Mat> {
    let sym = (gram + gram.transpose()) * 0.5;
    sym.cholesky().map(|c| c.l().transpose())
}

/// Euclidean norm of a difference relative to `1 + ‖b‖`.
pub fn relative_gap(a: &Vector, b: &Vector) -> f64 {
    (a - b).norm() / (1.0 + b.norm())
}

/// Apply the row-major flattened matrix `m` (n×n) to `x`.
pub(crate) fn row_major_apply(m: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..n {
            s += m[i * n + j] * x[j];
        }
        out[i] = s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_norm_of_diagonal() {
        let m = Mat::from_diagonal(&Vector::from_vec(alloc::vec![3.0, -5.0, 1.0]));
        assert!((spectral_norm(&m) - 5.0).abs() < 1e-12);
        assert!((min_singular(&m) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn angle_between_axes() {
        let a = Mat::from_column_slice(2, 1, &[1.0, 0.0]);
        let b = Mat::from_column_slice(2, 1, &[0.0, 1.0]);
        assert!((principal_angle(&a, &b) - core::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!(principal_angle(&a, &a) < 1e-12);
    }

    #[test]
    fn complement_of_line_in_plane() {
        let big = Mat::identity(2, 2);
        let small = Mat::from_column_slice(2, 1, &[1.0, 1.0]);
        let w = complement_in(&big, &small);
        assert_eq!(w.ncols(), 1);
        let dot = w[(0, 0)] + w[(1, 0)];
        assert!(dot.abs() < 1e-12);
    }

    #[test]
    fn cholesky_factor_reproduces_gram() {
        let g = Mat::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let r = gram_factor(&g).unwrap();
        assert!((r.transpose() * &r - g).norm() < 1e-12);
        assert_eq!(r[(1, 0)], 0.0);
    }
}
