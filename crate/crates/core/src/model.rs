//! Parameter and data containers for the two-level hc-ICA model.
//!
//! Level one: `y_i(v) = A_i s_i(v) + e_i(v)` with `A_i` orthogonal and
//! `e_i(v) ~ N(0, σ₀² I)`. Level two: `s_i(v) = s₀(v) + β(v)ᵀ x_i + γ_i(v)`
//! with `γ_i(v) ~ N(0, diag(ν²))`. Each population source `s₀ℓ(v)` follows an
//! `m`-component Gaussian mixture.

use nalgebra::{DMatrix, DVector};

use crate::error::{HintError, Result};
use crate::linalg::orthogonality_error;
use crate::scalar::{lit, Real};

/// Gaussian-mixture prior parameters, one row per IC, one column per component.
#[derive(Debug, Clone, PartialEq)]
pub struct MogParams<T: Real> {
    pub weights: DMatrix<T>,
    pub means: DMatrix<T>,
    pub variances: DMatrix<T>,
}

impl<T: Real> MogParams<T> {
    pub fn n_ics(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_components(&self) -> usize {
        self.weights.ncols()
    }

    pub fn from_rows(rows: &[MogRow<T>]) -> Self {
        let q = rows.len();
        let m = rows.first().map(|r| r.weights.len()).unwrap_or(0);
        MogParams {
            weights: DMatrix::from_fn(q, m, |l, j| rows[l].weights[j]),
            means: DMatrix::from_fn(q, m, |l, j| rows[l].means[j]),
            variances: DMatrix::from_fn(q, m, |l, j| rows[l].variances[j]),
        }
    }

    pub fn row(&self, l: usize) -> MogRow<T> {
        MogRow {
            weights: self.weights.row(l).iter().copied().collect(),
            means: self.means.row(l).iter().copied().collect(),
            variances: self.variances.row(l).iter().copied().collect(),
        }
    }

    /// Component order of IC `l` by ascending `|μ|` (stable: lower index wins ties).
    pub fn background_order(&self, l: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.n_components()).collect();
        order.sort_by(|&a, &b| {
            self.means[(l, a)]
                .abs()
                .partial_cmp(&self.means[(l, b)].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        order
    }

    pub fn validate(&self) -> Result<()> {
        let (q, m) = self.weights.shape();
        if self.means.shape() != (q, m) || self.variances.shape() != (q, m) {
            return Err(HintError::Dimension("MoG parameter blocks differ in shape".into()));
        }
        for l in 0..q {
            let s = self.weights.row(l).sum();
            if (s - T::one()).abs() > lit(1e-9) || self.weights.row(l).iter().any(|&w| w < T::zero()) {
                return Err(HintError::Numerical(format!("MoG weights of IC {l} are not on the simplex")));
            }
            if self.variances.row(l).iter().any(|&v| !(v > T::zero())) {
                return Err(HintError::Numerical(format!("MoG variance of IC {l} is not positive")));
            }
        }
        Ok(())
    }
}

/// One IC's scalar mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MogRow<T: Real> {
    pub weights: Vec<T>,
    pub means: Vec<T>,
    pub variances: Vec<T>,
}

impl<T: Real> MogRow<T> {
    /// Reorders components by ascending `|μ|`; component 0 is the background.
    pub fn sort_background_first(&mut self) {
        let mut order: Vec<usize> = (0..self.means.len()).collect();
        order.sort_by(|&a, &b| {
            self.means[a]
                .abs()
                .partial_cmp(&self.means[b].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        self.weights = order.iter().map(|&k| self.weights[k]).collect();
        self.means = order.iter().map(|&k| self.means[k]).collect();
        self.variances = order.iter().map(|&k| self.variances[k]).collect();
    }
}

/// Voxel-specific covariate effects. Entry `(k, ℓ)` of voxel `v` is the
/// effect of design column `k` on IC `ℓ`; stored as a `(p·q) × V` matrix
/// whose column `v` is the column-major flattening of the `p × q` block.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaMaps<T: Real> {
    p: usize,
    q: usize,
    data: DMatrix<T>,
}

impl<T: Real> BetaMaps<T> {
    pub fn zeros(p: usize, q: usize, v: usize) -> Self {
        BetaMaps {
            p,
            q,
            data: DMatrix::zeros(p * q, v),
        }
    }

    pub fn from_matrix(p: usize, q: usize, data: DMatrix<T>) -> Result<Self> {
        if data.nrows() != p * q {
            return Err(HintError::Dimension(format!(
                "beta storage has {} rows, expected p*q = {}",
                data.nrows(),
                p * q
            )));
        }
        Ok(BetaMaps { p, q, data })
    }

    pub fn n_covariates(&self) -> usize {
        self.p
    }

    pub fn n_ics(&self) -> usize {
        self.q
    }

    pub fn n_voxels(&self) -> usize {
        self.data.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<T> {
        &self.data
    }

    #[inline]
    pub fn get(&self, v: usize, k: usize, l: usize) -> T {
        self.data[(k + self.p * l, v)]
    }

    #[inline]
    pub fn set(&mut self, v: usize, k: usize, l: usize, val: T) {
        self.data[(k + self.p * l, v)] = val;
    }

    /// The `p × q` block of voxel `v`.
    pub fn voxel(&self, v: usize) -> DMatrix<T> {
        DMatrix::from_column_slice(self.p, self.q, self.data.column(v).as_slice())
    }

    pub fn set_voxel(&mut self, v: usize, block: &DMatrix<T>) {
        self.data.set_column(v, &DVector::from_column_slice(block.as_slice()));
    }

    /// Map over voxels of covariate `k` on IC `l`.
    pub fn map(&self, k: usize, l: usize) -> Vec<T> {
        self.data.row(k + self.p * l).iter().copied().collect()
    }

    /// Restricts to the ICs listed in `keep`.
    pub fn select_ics(&self, keep: &[usize]) -> Self {
        let v = self.n_voxels();
        let mut out = BetaMaps::zeros(self.p, keep.len(), v);
        for (nl, &l) in keep.iter().enumerate() {
            for k in 0..self.p {
                out.data.set_row(k + self.p * nl, &self.data.row(k + self.p * l));
            }
        }
        out
    }
}

/// Full parameter set. The global block is everything except `beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct HcicaParams<T: Real> {
    /// `N` orthogonal `q × q` mixing matrices.
    pub mixing: Vec<DMatrix<T>>,
    /// Isotropic first-level noise variance σ₀².
    pub noise_variance: T,
    /// Between-subject variances ν²ℓ (diagonal of `D`).
    pub subject_variance: DVector<T>,
    pub mog: MogParams<T>,
    pub beta: BetaMaps<T>,
}

impl<T: Real> HcicaParams<T> {
    pub fn n_subjects(&self) -> usize {
        self.mixing.len()
    }

    pub fn n_ics(&self) -> usize {
        self.subject_variance.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.beta.n_covariates()
    }

    pub fn n_voxels(&self) -> usize {
        self.beta.n_voxels()
    }

    pub fn n_components(&self) -> usize {
        self.mog.n_components()
    }

    /// Concatenated global block: all `A_i`, σ₀², ν², then π, μ, σ² (row-major per IC).
    pub fn global_vector(&self) -> Vec<T> {
        let mut out = Vec::new();
        for a in &self.mixing {
            out.extend(a.iter().copied());
        }
        out.push(self.noise_variance);
        out.extend(self.subject_variance.iter().copied());
        for block in [&self.mog.weights, &self.mog.means, &self.mog.variances] {
            out.extend(block.iter().copied());
        }
        out
    }

    pub fn validate(&self, orthogonality_tol: T) -> Result<()> {
        let q = self.n_ics();
        for (i, a) in self.mixing.iter().enumerate() {
            if a.shape() != (q, q) {
                return Err(HintError::Dimension(format!("A_{i} is not {q}x{q}")));
            }
            if orthogonality_error(a) > orthogonality_tol {
                return Err(HintError::Numerical(format!("A_{i} is not orthogonal")));
            }
        }
        if !(self.noise_variance > T::zero()) {
            return Err(HintError::Numerical("noise variance must be positive".into()));
        }
        if self.subject_variance.iter().any(|&v| !(v > T::zero())) {
            return Err(HintError::Numerical("between-subject variances must be positive".into()));
        }
        if self.mog.n_ics() != q || self.beta.n_ics() != q {
            return Err(HintError::Dimension("parameter blocks disagree on q".into()));
        }
        self.mog.validate()?;
        if self.beta.as_matrix().iter().any(|x| !x.is_finite()) {
            return Err(HintError::Numerical("beta contains non-finite values".into()));
        }
        Ok(())
    }
}

/// Whitened multi-subject data with the design.
#[derive(Debug, Clone, PartialEq)]
pub struct HcicaData<T: Real> {
    /// `N` matrices of shape `q × V`.
    pub subjects: Vec<DMatrix<T>>,
    /// `N × p` design.
    pub design: DMatrix<T>,
}

impl<T: Real> HcicaData<T> {
    pub fn new(subjects: Vec<DMatrix<T>>, design: DMatrix<T>) -> Result<Self> {
        let n = subjects.len();
        if n == 0 {
            return Err(HintError::InvalidArgument("no subjects".into()));
        }
        let shape = subjects[0].shape();
        if subjects.iter().any(|s| s.shape() != shape) {
            return Err(HintError::Dimension("subjects differ in shape".into()));
        }
        if design.nrows() != n {
            return Err(HintError::Dimension(format!(
                "design has {} rows for {n} subjects",
                design.nrows()
            )));
        }
        if design.ncols() == 0 {
            return Err(HintError::InvalidArgument("the model requires p >= 1 covariates".into()));
        }
        Ok(HcicaData { subjects, design })
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_ics(&self) -> usize {
        self.subjects[0].nrows()
    }

    pub fn n_voxels(&self) -> usize {
        self.subjects[0].ncols()
    }

    pub fn n_covariates(&self) -> usize {
        self.design.ncols()
    }

    /// Stacked observations at voxel `v`, one q-vector per subject.
    pub fn voxel(&self, v: usize) -> Vec<DVector<T>> {
        self.subjects.iter().map(|s| s.column(v).clone_owned()).collect()
    }

    /// Mean squared entry over all subjects and voxels.
    pub fn mean_square(&self) -> T {
        let mut s = T::zero();
        let mut n = 0usize;
        for y in &self.subjects {
            s += y.norm_squared();
            n += y.len();
        }
        s / crate::scalar::count(n.max(1))
    }

    pub fn check_params(&self, params: &HcicaParams<T>) -> Result<()> {
        if params.n_subjects() != self.n_subjects()
            || params.n_ics() != self.n_ics()
            || params.n_covariates() != self.n_covariates()
            || params.n_voxels() != self.n_voxels()
        {
            return Err(HintError::Dimension(format!(
                "params (N={}, q={}, p={}, V={}) do not match data (N={}, q={}, p={}, V={})",
                params.n_subjects(),
                params.n_ics(),
                params.n_covariates(),
                params.n_voxels(),
                self.n_subjects(),
                self.n_ics(),
                self.n_covariates(),
                self.n_voxels()
            )));
        }
        Ok(())
    }
}
