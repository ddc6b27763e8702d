use nalgebra::{DMatrix, DVector};

use crate::error::{HintError, Result};
use crate::linalg::{center_rows, sym_eigen_desc};
use crate::scalar::{count, Real};

/// Two-stage reduction for temporal-concatenation group ICA. Stage one
/// whitens each subject to its top `R` components, stage two reduces the
/// stacked `NR × V` matrix to `q` whitened rows. Both stages keep the
/// projections so subject maps can be back-reconstructed.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStagePca<T: Real> {
    /// Per subject, `R × T` whitening projection `Λ_R^{-1/2} U_Rᵀ`.
    pub stage1: Vec<DMatrix<T>>,
    /// Per subject, `R × V` reduced data.
    pub subject_reduced: Vec<DMatrix<T>>,
    /// `q × NR` whitening projection of the stacked data.
    pub stage2: DMatrix<T>,
    /// `NR × q` pseudo-inverse `U₂ Λ₂^{1/2}` of `stage2`.
    pub stage2_pinv: DMatrix<T>,
    /// Leading eigenvalues of the second stage.
    pub stage2_eigenvalues: DVector<T>,
    /// `q × V` group-reduced data with identity row covariance.
    pub reduced: DMatrix<T>,
}

impl<T: Real> TwoStagePca<T> {
    pub fn n_components(&self) -> usize {
        self.reduced.nrows()
    }

    pub fn rank(&self) -> usize {
        self.stage1.first().map(|f| f.nrows()).unwrap_or(0)
    }

    /// Rows `iR..(i+1)R` of the stage-two pseudo-inverse.
    pub fn subject_block(&self, i: usize) -> DMatrix<T> {
        let r = self.rank();
        self.stage2_pinv.rows(i * r, r).clone_owned()
    }
}

/// Whitening PCA of the centred rows of `x`, keeping `k` components.
/// Returns the `k × rows` projection, its `rows × k` pseudo-inverse and the
/// eigenvalues.
fn whitening_pca<T: Real>(x: &DMatrix<T>, k: usize, what: &str) -> Result<(DMatrix<T>, DMatrix<T>, DVector<T>)> {
    let v = x.ncols();
    let cov = (x * x.transpose()) / count::<T>(v);
    let (vals, vecs) = sym_eigen_desc(&cov);
    let tol = vals[0].abs().max(T::default_epsilon()) * T::default_epsilon() * count::<T>(x.nrows().max(16));
    if let Some(j) = (0..k).find(|&j| vals[j] <= tol) {
        return Err(HintError::Rank(format!(
            "{what}: component {} has eigenvalue {} (data rank below {k})",
            j + 1,
            vals[j]
        )));
    }
    let u = vecs.columns(0, k).clone_owned();
    let lead = vals.rows(0, k).clone_owned();
    let mut proj = u.transpose();
    let mut pinv = u;
    for j in 0..k {
        let s = lead[j].sqrt();
        proj.row_mut(j).unscale_mut(s);
        pinv.column_mut(j).scale_mut(s);
    }
    Ok((proj, pinv, lead))
}

/// Two-stage PCA of `N` subject matrices (`T_i × V`, rows are time points).
/// Rows are centred across voxels first.
pub fn two_stage_pca<T: Real>(subjects: &[DMatrix<T>], r: usize, q: usize) -> Result<TwoStagePca<T>> {
    let n = subjects.len();
    if n == 0 {
        return Err(HintError::InvalidArgument("no subjects".into()));
    }
    if q == 0 || r < q {
        return Err(HintError::InvalidArgument(format!(
            "number of PCs R = {r} must be at least q = {q} >= 1"
        )));
    }
    let v = subjects[0].ncols();
    if subjects.iter().any(|s| s.ncols() != v) {
        return Err(HintError::Dimension("subjects differ in voxel count".into()));
    }
    let mut stage1 = Vec::with_capacity(n);
    let mut subject_reduced = Vec::with_capacity(n);
    for (i, s) in subjects.iter().enumerate() {
        if s.nrows() < r {
            return Err(HintError::Rank(format!(
                "subject {} has {} time points, fewer than R = {r}",
                i + 1,
                s.nrows()
            )));
        }
        let c = center_rows(s);
        let (proj, _, _) = whitening_pca(&c, r, &format!("subject {}", i + 1))?;
        subject_reduced.push(&proj * &c);
        stage1.push(proj);
    }
    let mut stacked = DMatrix::zeros(n * r, v);
    for (i, z) in subject_reduced.iter().enumerate() {
        stacked.rows_mut(i * r, r).copy_from(z);
    }
    let (stage2, stage2_pinv, stage2_eigenvalues) = whitening_pca(&stacked, q, "stacked data")?;
    let reduced = &stage2 * &stacked;
    Ok(TwoStagePca {
        stage1,
        subject_reduced,
        stage2,
        stage2_pinv,
        stage2_eigenvalues,
        reduced,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn subspace_cosines(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
        // orthonormal bases of the row spaces, then singular values of QaᵀQb
        let qa = a.transpose().qr().q();
        let qb = b.transpose().qr().q();
        (qa.transpose() * qb).singular_values().iter().copied().collect()
    }

    #[test]
    fn reduced_rows_are_white() {
        let mut rng = synth::rng(1);
        let subjects: Vec<DMatrix<f64>> = (0..3).map(|_| synth::gaussian_matrix(12, 100, &mut rng)).collect();
        let pca = two_stage_pca(&subjects, 6, 4).unwrap();
        assert_eq!(pca.stage2.shape(), (4, 18));
        assert_eq!(pca.subject_reduced[0].shape(), (6, 100));
        let c = &pca.reduced * pca.reduced.transpose() / 100.0;
        assert!((c - DMatrix::<f64>::identity(4, 4)).amax() < 1e-10);
    }

    #[test]
    fn single_subject_keeps_its_top_subspace() {
        let mut rng = synth::rng(2);
        let s = synth::gaussian_matrix::<f64, _>(10, 300, &mut rng);
        let pca = two_stage_pca(&[s.clone()], 3, 3).unwrap();
        let c = center_rows(&s);
        let (_, vecs) = sym_eigen_desc(&(&c * c.transpose()));
        let top = vecs.columns(0, 3).transpose() * &c;
        for cos in subspace_cosines(&pca.reduced, &top) {
            assert!((cos - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn shared_sources_lie_in_the_reduced_space() {
        let mut rng = synth::rng(3);
        let (n, q, t, v) = (5, 4, 30, 2000);
        let sources = synth::gaussian_matrix::<f64, _>(q, v, &mut rng);
        let subjects: Vec<DMatrix<f64>> = (0..n)
            .map(|_| synth::gaussian_matrix::<f64, _>(t, q, &mut rng) * &sources + synth::gaussian_matrix::<f64, _>(t, v, &mut rng) * 1e-6)
            .collect();
        let pca = two_stage_pca(&subjects, 10, q).unwrap();
        let centered = center_rows(&sources);
        for cos in subspace_cosines(&pca.reduced, &centered) {
            // principal angle below 1e-3
            assert!(cos.acos() < 1e-3, "angle {}", cos.acos());
        }
    }

    #[test]
    fn r_below_q_is_rejected() {
        let s = DMatrix::<f64>::zeros(5, 10);
        assert!(matches!(two_stage_pca(&[s], 2, 3), Err(HintError::InvalidArgument(_))));
    }
}
