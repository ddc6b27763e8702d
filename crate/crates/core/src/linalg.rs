//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen, SVD};

use crate::error::{HintError, Result};
use crate::scalar::{count, lit, Real};

/// Symmetric eigendecomposition with eigenvalues sorted in decreasing order.
///
/// Each eigenvector is sign-fixed so that its largest-magnitude entry is
/// positive (first such entry on ties), which makes the result reproducible.
pub fn sym_eigen_desc<T: Real>(m: &DMatrix<T>) -> (DVector<T>, DMatrix<T>) {
    let n = m.nrows();
    let sym = (m + m.transpose()) * lit::<T>(0.5);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).clone_owned();
        fix_sign(&mut col);
        vectors.set_column(dst, &col);
    }
    (values, vectors)
}

/// Flips `v` so that its largest-magnitude entry is positive.
pub fn fix_sign<T: Real>(v: &mut DVector<T>) {
    let mut best = 0;
    for k in 1..v.len() {
        if v[k].abs() > v[best].abs() {
            best = k;
        }
    }
    if !v.is_empty() && v[best] < T::zero() {
        v.neg_mut();
    }
}

/// Row-wise (across columns) centering.
pub fn center_rows<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let mut out = m.clone();
    let n = count::<T>(m.ncols().max(1));
    for mut row in out.row_iter_mut() {
        let mean = row.sum() / n;
        row.add_scalar_mut(-mean);
    }
    out
}

/// Column-wise (across rows) centering.
pub fn center_columns<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let mut out = m.clone();
    let n = count::<T>(m.nrows().max(1));
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
    out
}

/// Orthogonal factor `U Vᵀ` of the SVD `m = U Σ Vᵀ` of a square matrix.
///
/// This is the orthogonal `A` minimising `‖Y − A S‖_F` when `m = Y Sᵀ`.
/// A warning is logged when `m` is (numerically) rank deficient; the SVD
/// still completes the basis, so the result is orthogonal either way.
pub fn procrustes_rotation<T: Real>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    if m.nrows() != m.ncols() {
        return Err(HintError::Dimension(format!(
            "procrustes expects a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(HintError::Numerical("non-finite procrustes input".into()));
    }
    let svd = SVD::new(m.clone(), true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= smax * lit(1e-12) {
        log::warn!("procrustes input is rank deficient; completing the basis from the SVD");
    }
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    Ok(u * vt)
}

/// `m^{-1/2}` for a symmetric positive-definite matrix.
pub fn inv_sqrt_spd<T: Real>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    let (vals, vecs) = sym_eigen_desc(m);
    let tiny = vals.iter().copied().fold(T::zero(), |a, b| a.max(b.abs())) * lit(1e-13);
    if vals.iter().any(|&v| v <= tiny) {
        return Err(HintError::Rank("matrix is not positive definite".into()));
    }
    let d = DMatrix::from_diagonal(&vals.map(|v| T::one() / v.sqrt()));
    Ok(&vecs * d * vecs.transpose())
}

/// Symmetric decorrelation `W ← (W Wᵀ)^{-1/2} W`.
pub fn symmetric_decorrelate<T: Real>(w: &DMatrix<T>) -> Result<DMatrix<T>> {
    let g = w * w.transpose();
    Ok(inv_sqrt_spd(&g)? * w)
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse<T: Real>(m: &DMatrix<T>) -> Option<DMatrix<T>> {
    Cholesky::new(m.clone()).map(|c| c.inverse())
}

/// `max |MᵀM − I|` over all entries.
pub fn orthogonality_error<T: Real>(m: &DMatrix<T>) -> T {
    let g = m.transpose() * m;
    let mut worst = T::zero();
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { T::one() } else { T::zero() };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

/// Pearson correlation of two equally long sequences.
pub fn correlation<T: Real>(a: &[T], b: &[T]) -> T {
    let n = count::<T>(a.len());
    let ma = a.iter().copied().fold(T::zero(), |s, x| s + x) / n;
    let mb = b.iter().copied().fold(T::zero(), |s, x| s + x) / n;
    let (mut sab, mut saa, mut sbb) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_and_sign_fixed() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 1.0]);
        let (vals, vecs) = sym_eigen_desc(&m);
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
        for k in 0..3 {
            let col = vecs.column(k);
            let imax = col.iamax();
            assert!(col[imax] > 0.0);
            let r = &m * col - col * vals[k];
            assert!(r.norm() < 1e-12);
        }
    }

    #[test]
    fn procrustes_fixed_point_on_orthogonal_input() {
        let theta = 0.3_f64;
        let r = DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()]);
        let a = procrustes_rotation(&r).unwrap();
        assert!((a - &r).abs().max() < 1e-14);
    }

    #[test]
    fn procrustes_rank_deficient_still_orthogonal() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let a = procrustes_rotation(&m).unwrap();
        assert!(orthogonality_error(&a) < 1e-12);
    }

    #[test]
    fn inverse_sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let s = inv_sqrt_spd(&m).unwrap();
        let back = &s * &m * &s;
        assert!((back - DMatrix::identity(2, 2)).abs().max() < 1e-12);
    }
}
