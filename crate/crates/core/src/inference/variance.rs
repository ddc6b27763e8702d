use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

use crate::em::FittedModel;
use crate::error::{HintError, Result};
use crate::linalg::spd_inverse;
use crate::scalar::{count, Real};

/// Source of the per-voxel residual covariance `W(v)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceMode {
    /// `W = (D + σ₀²I)·N/(N − p − 1)`: the model variance of `γ_i + A_iᵀe_i`
    /// with the ML estimates rescaled for the per-voxel ŝ₀ and β̂ fits.
    #[default]
    PlugIn,
    /// Sample covariance over subjects of the fitted residuals.
    Empirical,
}

impl VarianceMode {
    pub fn as_str(self) -> &'static str {
        match self {
            VarianceMode::PlugIn => "plug-in",
            VarianceMode::Empirical => "empirical",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "plug-in" | "plugin" => Some(VarianceMode::PlugIn),
            "empirical" => Some(VarianceMode::Empirical),
            _ => None,
        }
    }
}

/// How the design and the s₀ prior enter the covariance of β̂.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceForm {
    /// β-block of `(Σ X̃_iᵀ W⁻¹ X̃_i + P)⁻¹` with `X̃_i = [1, x_iᵀ] ⊗ I_q` and
    /// `P` the MoG prior precision of s₀(v) on the intercept block.
    #[default]
    Hierarchical,
    /// The same without the prior term (flat intercept).
    InterceptAdjusted,
    /// `(1/N)(Σ X_iᵀ W⁻¹ X_i)⁻¹` with `X_i = x_iᵀ ⊗ I_q`, as printed.
    Literal,
}

impl VarianceForm {
    pub fn as_str(self) -> &'static str {
        match self {
            VarianceForm::Hierarchical => "hierarchical",
            VarianceForm::InterceptAdjusted => "intercept-adjusted",
            VarianceForm::Literal => "literal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hierarchical" => Some(VarianceForm::Hierarchical),
            "intercept-adjusted" => Some(VarianceForm::InterceptAdjusted),
            "literal" => Some(VarianceForm::Literal),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VarianceOptions {
    pub mode: VarianceMode,
    pub form: VarianceForm,
}

fn augmented<T: Real>(design: &DMatrix<T>) -> DMatrix<T> {
    let (n, p) = design.shape();
    DMatrix::from_fn(n, p + 1, |i, k| if k == 0 { T::one() } else { design[(i, k - 1)] })
}

/// Design factor `C` with `Var(vec[β̂(v)ᵀ]) = C ⊗ W(v)` (`p × p`) for the
/// forms that have one.
pub fn design_factor<T: Real>(design: &DMatrix<T>, form: VarianceForm) -> Result<DMatrix<T>> {
    let (n, p) = design.shape();
    let singular = || HintError::SingularDesign("design cross-product is not invertible".into());
    match form {
        VarianceForm::Hierarchical | VarianceForm::InterceptAdjusted => {
            let aug = augmented(design);
            let inv = spd_inverse(&aug.tr_mul(&aug)).ok_or_else(singular)?;
            Ok(inv.view((1, 1), (p, p)).clone_owned())
        }
        VarianceForm::Literal => {
            let inv = spd_inverse(&design.tr_mul(design)).ok_or_else(singular)?;
            Ok(inv / count::<T>(n))
        }
    }
}

/// Residual covariance model resolved for a fitted analysis.
#[derive(Debug, Clone)]
pub struct ResidualCovariance<'a, T: Real> {
    fitted: &'a FittedModel<T>,
    plug_in: DMatrix<T>,
    /// Mode actually in effect after any fallback.
    pub mode: VarianceMode,
}

impl<'a, T: Real> ResidualCovariance<'a, T> {
    /// Empirical mode falls back to plug-in (with a warning) when the fitted
    /// model carries no residual covariance, i.e. for too few subjects.
    pub fn new(fitted: &'a FittedModel<T>, mode: VarianceMode) -> Self {
        let q = fitted.n_ics();
        let d = &fitted.params.subject_variance;
        let s2 = fitted.params.noise_variance;
        let (n, p) = (fitted.n_subjects(), fitted.n_covariates());
        let df_scale = if n > p + 1 {
            count::<T>(n) / count::<T>(n - p - 1)
        } else {
            T::one()
        };
        let plug_in = DMatrix::from_fn(q, q, |a, b| if a == b { (d[a] + s2) * df_scale } else { T::zero() });
        let mode = if mode == VarianceMode::Empirical && fitted.residual_cov.is_none() {
            log::warn!(
                "empirical residual covariance unavailable for N = {}, p = {}; using plug-in",
                fitted.n_subjects(),
                fitted.n_covariates()
            );
            VarianceMode::PlugIn
        } else {
            mode
        };
        ResidualCovariance { fitted, plug_in, mode }
    }

    /// `W(v)`. In empirical mode a voxel whose sample covariance is not
    /// positive definite uses the plug-in value.
    pub fn at(&self, v: usize) -> DMatrix<T> {
        if self.mode == VarianceMode::Empirical {
            if let Some(w) = self.fitted.residual_cov_at(v) {
                if Cholesky::new(w.clone()).is_some() {
                    return w;
                }
                log::debug!("empirical W at voxel {v} is not positive definite; using plug-in");
            }
        }
        self.plug_in.clone()
    }
}

/// Kronecker product `a ⊗ b`.
pub fn kron<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    DMatrix::from_fn(ar * br, ac * bc, |r, c| a[(r / br, c / bc)] * b[(r % br, c % bc)])
}

/// Covariance of `vec[β̂(v)ᵀ]` for a fitted analysis, entry `k·q + ℓ` for
/// covariate `k` and IC `ℓ`.
#[derive(Debug, Clone)]
pub struct BetaVariance<'a, T: Real> {
    fitted: &'a FittedModel<T>,
    residual: ResidualCovariance<'a, T>,
    form: VarianceForm,
    factor: DMatrix<T>,
    gram: DMatrix<T>,
}

impl<'a, T: Real> BetaVariance<'a, T> {
    pub fn new(fitted: &'a FittedModel<T>, opts: VarianceOptions) -> Result<Self> {
        let factor = design_factor(&fitted.design, opts.form)?;
        let aug = augmented(&fitted.design);
        Ok(BetaVariance {
            fitted,
            residual: ResidualCovariance::new(fitted, opts.mode),
            form: opts.form,
            factor,
            gram: aug.tr_mul(&aug),
        })
    }

    pub fn mode(&self) -> VarianceMode {
        self.residual.mode
    }

    pub fn residual_at(&self, v: usize) -> DMatrix<T> {
        self.residual.at(v)
    }

    /// Full `pq × pq` covariance at voxel `v`.
    pub fn covariance(&self, v: usize) -> Result<DMatrix<T>> {
        let w = self.residual.at(v);
        if self.form != VarianceForm::Hierarchical {
            return Ok(kron(&self.factor, &w));
        }
        let q = w.nrows();
        let p = self.gram.nrows() - 1;
        let winv = spd_inverse(&w).ok_or_else(|| HintError::Numerical(format!("W at voxel {v} is singular")))?;
        let mut info = kron(&self.gram, &winv);
        for l in 0..q {
            info[(l, l)] += self.fitted.s0_prior_precision(l, v);
        }
        let inv = spd_inverse(&info)
            .ok_or_else(|| HintError::Numerical(format!("information matrix at voxel {v} is singular")))?;
        Ok(inv.view((q, q), (p * q, p * q)).clone_owned())
    }

    /// The `p × p` sub-blocks of each IC at voxel `v`.
    pub fn ic_blocks(&self, v: usize) -> Result<Vec<DMatrix<T>>> {
        let w = self.residual.at(v);
        let q = w.nrows();
        let p = self.gram.nrows() - 1;
        let diagonal = (0..q).all(|a| (0..q).all(|b| a == b || w[(a, b)] == T::zero()));
        if self.form != VarianceForm::Hierarchical {
            return Ok((0..q).map(|l| &self.factor * w[(l, l)]).collect());
        }
        if !diagonal {
            let full = self.covariance(v)?;
            return Ok((0..q)
                .map(|l| DMatrix::from_fn(p, p, |a, b| full[(a * q + l, b * q + l)]))
                .collect());
        }
        (0..q)
            .map(|l| {
                let mut info = &self.gram / w[(l, l)];
                info[(0, 0)] += self.fitted.s0_prior_precision(l, v);
                let inv = spd_inverse(&info)
                    .ok_or_else(|| HintError::Numerical(format!("information matrix at voxel {v} is singular")))?;
                Ok(inv.view((1, 1), (p, p)).clone_owned())
            })
            .collect()
    }
}

/// Per-voxel `pq × pq` covariance of `vec[β̂(v)ᵀ]`.
pub fn beta_covariance<T: Real>(fitted: &FittedModel<T>, opts: VarianceOptions) -> Result<Vec<DMatrix<T>>> {
    let bv = BetaVariance::new(fitted, opts)?;
    (0..fitted.n_voxels()).map(|v| bv.covariance(v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::{em_run, EmConfig, EmHooks};
    use crate::synth;

    /// Σ_i M_iᵀ W⁻¹ M_i assembled from explicit Kronecker products.
    fn brute_force(design: &DMatrix<f64>, w: &DMatrix<f64>, form: VarianceForm, prior: &[f64]) -> DMatrix<f64> {
        let (n, p) = design.shape();
        let q = w.nrows();
        let winv = w.clone().try_inverse().unwrap();
        let eye = DMatrix::<f64>::identity(q, q);
        let width = match form {
            VarianceForm::Literal => p,
            _ => p + 1,
        };
        let mut info = DMatrix::zeros(width * q, width * q);
        for i in 0..n {
            let row = match form {
                VarianceForm::Literal => DMatrix::from_fn(1, p, |_, k| design[(i, k)]),
                _ => DMatrix::from_fn(1, p + 1, |_, k| if k == 0 { 1.0 } else { design[(i, k - 1)] }),
            };
            let m = kron(&row, &eye);
            info += m.transpose() * &winv * m;
        }
        if form == VarianceForm::Hierarchical {
            for l in 0..q {
                info[(l, l)] += prior[l];
            }
        }
        let inv = info.try_inverse().unwrap();
        match form {
            VarianceForm::Literal => inv / n as f64,
            _ => inv.view((q, q), (p * q, p * q)).clone_owned(),
        }
    }

    fn small_fit(n: usize, q: usize, p: usize, seed: u64) -> FittedModel<f64> {
        let mut rng = synth::rng(seed);
        let params = synth::random_params(n, q, 2, p, 60, &mut rng);
        let x = synth::gaussian_matrix(n, p, &mut rng);
        let (data, _, _) = synth::sample_from_params(&params, &x, &mut rng);
        let cfg = EmConfig {
            max_iterations: 3,
            ..EmConfig::default()
        };
        em_run(&data, params, &cfg, EmHooks::default()).unwrap().fitted
    }

    #[test]
    fn matches_direct_kronecker_assembly() {
        for seed in 0..5 {
            let fit = small_fit(7, 2, 3, seed);
            for mode in [VarianceMode::PlugIn, VarianceMode::Empirical] {
                let opts_w = ResidualCovariance::new(&fit, mode);
                for form in [VarianceForm::Hierarchical, VarianceForm::InterceptAdjusted, VarianceForm::Literal] {
                    let opts = VarianceOptions { mode, form };
                    let all = beta_covariance(&fit, opts).unwrap();
                    let bv = BetaVariance::new(&fit, opts).unwrap();
                    for v in [0, 17, 59] {
                        let prior: Vec<f64> = (0..fit.n_ics()).map(|l| fit.s0_prior_precision(l, v)).collect();
                        let expect = brute_force(&fit.design, &opts_w.at(v), form, &prior);
                        assert!((&all[v] - &expect).amax() < 1e-12 * expect.amax().max(1.0));
                        let q = fit.n_ics();
                        for (l, block) in bv.ic_blocks(v).unwrap().iter().enumerate() {
                            for a in 0..3 {
                                for b in 0..3 {
                                    let e = all[v][(a * q + l, b * q + l)];
                                    assert!((block[(a, b)] - e).abs() < 1e-12 * e.abs().max(1.0));
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn orthonormal_design_closed_form() {
        let n = 4;
        let design = DMatrix::from_row_slice(n, 2, &[1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0]);
        let c = design_factor(&design, VarianceForm::Literal).unwrap();
        let v = kron(&c, &DMatrix::<f64>::identity(3, 3));
        let expect = DMatrix::<f64>::identity(6, 6) / (n * n) as f64;
        assert!((v - expect).amax() < 1e-15);
    }

    #[test]
    fn too_few_subjects_fall_back_to_plug_in() {
        let fit = small_fit(2, 2, 1, 3);
        assert!(fit.residual_cov.is_none());
        let w = ResidualCovariance::new(&fit, VarianceMode::Empirical);
        assert_eq!(w.mode, VarianceMode::PlugIn);
    }

    #[test]
    fn covariance_is_positive_definite() {
        let fit = small_fit(8, 3, 2, 4);
        for mode in [VarianceMode::PlugIn, VarianceMode::Empirical] {
            for m in beta_covariance(&fit, VarianceOptions { mode, ..Default::default() }).unwrap() {
                assert!((&m - m.transpose()).amax() < 1e-14);
                assert!(Cholesky::new(m).is_some());
            }
        }
    }
}
