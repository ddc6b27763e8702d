//! Conditional moments of the latent sources given the data at one voxel.

mod exact;
mod factorized;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HintError, Result};
use crate::model::{HcicaData, HcicaParams};
use crate::scalar::Real;

pub use exact::estep_voxel_exact;
pub use factorized::estep_voxel_factorized;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstepMode {
    /// Per-IC closed form that uses the orthogonality of every `A_i`.
    #[default]
    Factorized,
    /// Enumerates all `m^q` latent-state configurations with the full joint
    /// Gaussian. Exponential in `q`; meant for validation.
    ExactEnumeration,
}

/// Posterior moments at one voxel.
///
/// `state_*` matrices are `q × m`; `subject_*` matrices are `q × N` with
/// column `i` for subject `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelPosterior<T: Real> {
    /// `p(z_ℓ = j | y)`.
    pub state_prob: DMatrix<T>,
    /// `E[s₀ℓ | z_ℓ = j, y]`.
    pub state_mean: DMatrix<T>,
    /// `Var[s₀ℓ | z_ℓ = j, y]`.
    pub state_var: DMatrix<T>,
    pub s0_mean: DVector<T>,
    pub s0_var: DVector<T>,
    pub subject_mean: DMatrix<T>,
    pub subject_var: DMatrix<T>,
    /// `E[s_iℓ s₀ℓ | y]`.
    pub subject_s0_cross: DMatrix<T>,
    /// `log p(y(v))` under the parameters used.
    pub log_likelihood: T,
}

impl<T: Real> VoxelPosterior<T> {
    pub fn n_ics(&self) -> usize {
        self.s0_mean.len()
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_mean.ncols()
    }

    /// `E[s₀ℓ²]`.
    pub fn s0_second(&self, l: usize) -> T {
        self.s0_var[l] + self.s0_mean[l] * self.s0_mean[l]
    }

    /// `E[s_iℓ²]`.
    pub fn subject_second(&self, l: usize, i: usize) -> T {
        self.subject_var[(l, i)] + self.subject_mean[(l, i)] * self.subject_mean[(l, i)]
    }

    /// Largest absolute difference over every moment field.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        let pairs = [
            (&self.state_prob, &other.state_prob),
            (&self.state_mean, &other.state_mean),
            (&self.state_var, &other.state_var),
            (&self.subject_mean, &other.subject_mean),
            (&self.subject_var, &other.subject_var),
            (&self.subject_s0_cross, &other.subject_s0_cross),
        ];
        let mut worst = T::zero();
        for (a, b) in pairs {
            worst = worst.max((a - b).abs().max());
        }
        worst = worst.max((&self.s0_mean - &other.s0_mean).abs().max());
        worst.max((&self.s0_var - &other.s0_var).abs().max())
    }
}

/// E-step at one voxel. `y` holds one q-vector per subject and `x` is the
/// `N × p` design.
pub fn estep_voxel<T: Real>(
    y: &[DVector<T>],
    x: &DMatrix<T>,
    params: &HcicaParams<T>,
    v: usize,
    mode: EstepMode,
) -> Result<VoxelPosterior<T>> {
    let post = match mode {
        EstepMode::Factorized => estep_voxel_factorized(y, x, params, v)?,
        EstepMode::ExactEnumeration => estep_voxel_exact(y, x, params, v)?,
    };
    if !post.log_likelihood.is_finite() {
        return Err(HintError::Numerical(format!(
            "non-finite marginal likelihood at voxel {v}"
        )));
    }
    Ok(post)
}

/// E-step over every voxel (in parallel, output in voxel order).
pub fn estep_all<T: Real>(
    data: &HcicaData<T>,
    params: &HcicaParams<T>,
    mode: EstepMode,
) -> Result<Vec<VoxelPosterior<T>>> {
    data.check_params(params)?;
    (0..data.n_voxels())
        .into_par_iter()
        .map(|v| estep_voxel(&data.voxel(v), &data.design, params, v, mode))
        .collect()
}

/// Observed-data log-likelihood: sum of per-voxel marginals.
pub fn observed_log_likelihood<T: Real>(posteriors: &[VoxelPosterior<T>]) -> T {
    posteriors.iter().fold(T::zero(), |s, p| s + p.log_likelihood)
}

/// Covariate shift `β_ℓ(v)ᵀ x_i` for all `(ℓ, i)` as a `q × N` matrix.
pub(crate) fn covariate_shift<T: Real>(x: &DMatrix<T>, params: &HcicaParams<T>, v: usize) -> DMatrix<T> {
    // (N × p)(p × q) → N × q, transposed to q × N
    (x * params.beta.voxel(v)).transpose()
}

#[cfg(test)]
mod tests;
