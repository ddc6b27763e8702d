//! Per-subject centering, dimension reduction and whitening.
//!
//! For a `T × V` subject matrix `Ỹ`, the whitened `q × V` data are
//! `Y = (Λ_q − σ² I)^{-1/2} U_qᵀ Ỹ`, where `Λ_q`/`U_q` are the leading
//! eigenpairs of `Ỹ Ỹᵀ / V` and `σ²` is the mean of the `T − q` trailing
//! eigenvalues.

use nalgebra::{DMatrix, DVector};

use crate::error::{HintError, Result};
use crate::linalg::{center_columns, center_rows, sym_eigen_desc};
use crate::scalar::{count, lit, Real};

/// Which axis is mean-centred before the decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Centering {
    /// Each time point (row) has zero mean across voxels.
    #[default]
    PerTimepoint,
    /// Each voxel time series (column) has zero mean.
    PerVoxel,
}

/// Relative gap below which a retained eigenvalue counts as degenerate.
pub const RANK_JITTER: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct WhitenedSubject<T: Real> {
    /// `q × V` whitened data.
    pub data: DMatrix<T>,
    /// Mean of the discarded eigenvalues.
    pub residual_variance: T,
    /// Leading `q` eigenvalues, decreasing.
    pub eigenvalues: DVector<T>,
    /// `T × q` orthonormal eigenvectors.
    pub eigenvectors: DMatrix<T>,
}

impl<T: Real> WhitenedSubject<T> {
    /// Expected `Y Yᵀ / V` diagonal: `λ_k / (λ_k − σ²)`.
    pub fn expected_second_moment(&self) -> DVector<T> {
        self.eigenvalues.map(|l| l / (l - self.residual_variance))
    }
}

pub fn reduce_and_whiten<T: Real>(raw: &DMatrix<T>, q: usize) -> Result<WhitenedSubject<T>> {
    reduce_and_whiten_with(raw, q, Centering::PerTimepoint)
}

pub fn reduce_and_whiten_with<T: Real>(
    raw: &DMatrix<T>,
    q: usize,
    centering: Centering,
) -> Result<WhitenedSubject<T>> {
    let (t, v) = raw.shape();
    if q == 0 {
        return Err(HintError::InvalidArgument("q must be positive".into()));
    }
    if q >= t {
        return Err(HintError::Rank(format!(
            "q = {q} must be smaller than the number of time points T = {t}"
        )));
    }
    let centered = match centering {
        Centering::PerTimepoint => center_rows(raw),
        Centering::PerVoxel => center_columns(raw),
    };
    let cov = (&centered * centered.transpose()) / count::<T>(v);
    let (vals, vecs) = sym_eigen_desc(&cov);
    let tail = vals.rows(q, t - q);
    let sigma_sq = (tail.sum() / count::<T>(t - q)).max(T::zero());
    let lead = vals.rows(0, q).clone_owned();
    let jitter = lit::<T>(RANK_JITTER) * vals[0].abs().max(T::default_epsilon());
    if let Some(k) = (0..q).find(|&k| lead[k] - sigma_sq <= jitter) {
        return Err(HintError::Rank(format!(
            "eigenvalue {} ({}) does not exceed the residual variance ({}); the spectrum is degenerate",
            k + 1,
            lead[k],
            sigma_sq
        )));
    }
    let u = vecs.columns(0, q).clone_owned();
    let scale = lead.map(|l| T::one() / (l - sigma_sq).sqrt());
    let mut data = u.transpose() * &centered;
    for (k, mut row) in data.row_iter_mut().enumerate() {
        row *= scale[k];
    }
    Ok(WhitenedSubject {
        data,
        residual_variance: sigma_sq,
        eigenvalues: lead,
        eigenvectors: u,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn q_equal_t_minus_one_uses_smallest_eigenvalue() {
        let y = randn(6, 200, 3);
        let w = reduce_and_whiten(&y, 5).unwrap();
        let c = center_rows(&y);
        let (vals, _) = sym_eigen_desc(&((&c * c.transpose()) / 200.0));
        assert!((w.residual_variance - vals[5]).abs() < 1e-14);
    }

    #[test]
    fn q_not_below_t_is_rank_error() {
        let y = randn(4, 50, 1);
        assert!(matches!(reduce_and_whiten(&y, 4), Err(HintError::Rank(_))));
    }

    #[test]
    fn exactly_rank_deficient_spectrum_errors() {
        // every row identical: after centring only one nonzero eigenvalue
        let base = randn(1, 40, 5);
        let y = DMatrix::from_fn(4, 40, |_, c| base[(0, c)]);
        assert!(matches!(reduce_and_whiten(&y, 2), Err(HintError::Rank(_))));
    }

    #[test]
    fn exact_rank_three_with_q_three_is_accepted() {
        let a = randn(4, 3, 7);
        let s = randn(3, 80, 8);
        let y = a * s;
        let w = reduce_and_whiten(&y, 3).unwrap();
        assert!(w.residual_variance.abs() < 1e-10);
    }

    #[test]
    fn deterministic_and_orthonormal() {
        let y = randn(10, 120, 9);
        let a = reduce_and_whiten(&y, 4).unwrap();
        let b = reduce_and_whiten(&y, 4).unwrap();
        assert_eq!(a, b);
        let g = a.eigenvectors.transpose() * &a.eigenvectors;
        assert!((g - DMatrix::identity(4, 4)).abs().max() < 1e-12);
    }

    #[test]
    fn per_voxel_centering_also_whitens() {
        let y = randn(8, 300, 10);
        let w = reduce_and_whiten_with(&y, 3, Centering::PerVoxel).unwrap();
        let m = (&w.data * w.data.transpose()) / 300.0;
        let d = w.expected_second_moment();
        for i in 0..3 {
            assert!((m[(i, i)] / d[i] - 1.0).abs() < 1e-10);
        }
    }
}
