use nalgebra::{DMatrix, DVector};

use super::{covariate_shift, VoxelPosterior};
use crate::error::{HintError, Result};
use crate::model::HcicaParams;
use crate::scalar::{count, lit, log_sum_exp, Real};

/// Rotating each subject by `A_iᵀ` decouples the ICs: given `s₀ℓ` and the
/// state, `ỹ_iℓ = (A_iᵀ y_i)_ℓ ~ N(s₀ℓ + β_ℓᵀ x_i, ν²_ℓ + σ₀²)` independently,
/// so every IC reduces to a scalar conjugate update.
pub fn estep_voxel_factorized<T: Real>(
    y: &[DVector<T>],
    x: &DMatrix<T>,
    params: &HcicaParams<T>,
    v: usize,
) -> Result<VoxelPosterior<T>> {
    let n = y.len();
    let q = params.n_ics();
    let m = params.n_components();
    if n != params.n_subjects() || x.nrows() != n {
        return Err(HintError::Dimension("voxel data and params disagree on N".into()));
    }
    let rotated: Vec<DVector<T>> = y
        .iter()
        .zip(&params.mixing)
        .map(|(yi, a)| a.tr_mul(yi))
        .collect();
    let shift = covariate_shift(x, params, v);
    let nf = count::<T>(n);
    let two_pi = lit::<T>(std::f64::consts::TAU);
    let half = lit::<T>(0.5);
    let sigma0 = params.noise_variance;

    let mut post = VoxelPosterior {
        state_prob: DMatrix::zeros(q, m),
        state_mean: DMatrix::zeros(q, m),
        state_var: DMatrix::zeros(q, m),
        s0_mean: DVector::zeros(q),
        s0_var: DVector::zeros(q),
        subject_mean: DMatrix::zeros(q, n),
        subject_var: DMatrix::zeros(q, n),
        subject_s0_cross: DMatrix::zeros(q, n),
        log_likelihood: T::zero(),
    };
    let mut logw = vec![T::zero(); m];

    for l in 0..q {
        let nu = params.subject_variance[l];
        let tau = nu + sigma0;
        let r: Vec<T> = (0..n).map(|i| rotated[i][l] - shift[(l, i)]).collect();
        let rbar = r.iter().fold(T::zero(), |s, &x| s + x) / nf;
        let ss = r.iter().fold(T::zero(), |s, &x| s + (x - rbar) * (x - rbar));
        let base = -half * nf * two_pi.ln() - half * (nf - T::one()) * tau.ln() - ss / (lit::<T>(2.0) * tau);
        for j in 0..m {
            let mu = params.mog.means[(l, j)];
            let s2 = params.mog.variances[(l, j)];
            let denom = tau + nf * s2;
            let d = rbar - mu;
            logw[j] = params.mog.weights[(l, j)].ln() + base
                - half * denom.ln()
                - nf * d * d / (lit::<T>(2.0) * denom);
            post.state_mean[(l, j)] = (mu * tau + nf * s2 * rbar) / denom;
            post.state_var[(l, j)] = s2 * tau / denom;
        }
        let lse = log_sum_exp(&logw);
        if !lse.is_finite() {
            return Err(HintError::Numerical(format!(
                "state weights underflowed at voxel {v}, IC {l}"
            )));
        }
        post.log_likelihood += lse;
        let mut mean = T::zero();
        for j in 0..m {
            let p = (logw[j] - lse).exp();
            post.state_prob[(l, j)] = p;
            mean += p * post.state_mean[(l, j)];
        }
        let mut var = T::zero();
        for j in 0..m {
            let d = post.state_mean[(l, j)] - mean;
            var += post.state_prob[(l, j)] * (post.state_var[(l, j)] + d * d);
        }
        post.s0_mean[l] = mean;
        post.s0_var[l] = var;

        let w = sigma0 / tau;
        let cond_var = nu * sigma0 / tau;
        for i in 0..n {
            let mi = w * (mean + shift[(l, i)]) + (T::one() - w) * rotated[i][l];
            post.subject_mean[(l, i)] = mi;
            post.subject_var[(l, i)] = cond_var + w * w * var;
            post.subject_s0_cross[(l, i)] = w * var + mi * mean;
        }
    }
    Ok(post)
}
