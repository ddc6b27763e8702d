use nalgebra::{Cholesky, DMatrix, DVector};

use super::{covariate_shift, VoxelPosterior};
use crate::error::{HintError, Result};
use crate::model::HcicaParams;
use crate::scalar::{count, lit, log_sum_exp, Real};

struct Config<T: Real> {
    log_weight: T,
    states: Vec<usize>,
    mean: DVector<T>,
    cov: DMatrix<T>,
}

/// Brute-force E-step: for every joint state `z ∈ {1..m}^q`, condition the
/// joint Gaussian of `(s₀, s₁, …, s_N)` and `(y₁, …, y_N)` on the observed
/// data, then mix the `m^q` conditionals by their posterior weights.
pub fn estep_voxel_exact<T: Real>(
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
    let n_configs = m
        .checked_pow(q as u32)
        .filter(|&c| c <= 1 << 16)
        .ok_or_else(|| HintError::InvalidArgument(format!("m^q = {m}^{q} is too large to enumerate")))?;
    let shift = covariate_shift(x, params, v);
    let latent = (n + 1) * q;
    let obs = n * q;
    let yvec = DVector::from_iterator(obs, y.iter().flat_map(|yi| yi.iter().copied()));
    let d = &params.subject_variance;
    let two_pi = lit::<T>(std::f64::consts::TAU);

    let mut configs = Vec::with_capacity(n_configs);
    for code in 0..n_configs {
        let mut states = vec![0usize; q];
        let mut c = code;
        for s in states.iter_mut() {
            *s = c % m;
            c /= m;
        }
        let mu0 = DVector::from_fn(q, |l, _| params.mog.means[(l, states[l])]);
        let sig0 = DVector::from_fn(q, |l, _| params.mog.variances[(l, states[l])]);

        let mut mean_u = DVector::zeros(latent);
        let mut cov_u = DMatrix::zeros(latent, latent);
        for a in 0..=n {
            for l in 0..q {
                mean_u[a * q + l] = mu0[l] + if a == 0 { T::zero() } else { shift[(l, a - 1)] };
            }
            for b in 0..=n {
                for l in 0..q {
                    let mut c = sig0[l];
                    if a == b && a > 0 {
                        c += d[l];
                    }
                    cov_u[(a * q + l, b * q + l)] = c;
                }
            }
        }
        // observation operator H: y_i = A_i s_i + e_i
        let mut h = DMatrix::zeros(obs, latent);
        for (i, a) in params.mixing.iter().enumerate() {
            h.view_mut((i * q, (i + 1) * q), (q, q)).copy_from(a);
        }
        let mean_y = &h * &mean_u;
        let cov_yu = &h * &cov_u;
        let mut cov_y = &cov_yu * h.transpose();
        for k in 0..obs {
            cov_y[(k, k)] += params.noise_variance;
        }
        let chol = Cholesky::new(cov_y)
            .ok_or_else(|| HintError::Numerical(format!("observation covariance not SPD at voxel {v}")))?;
        let resid = &yvec - &mean_y;
        let alpha = chol.solve(&resid);
        let logdet = chol.l().diagonal().iter().fold(T::zero(), |s, &x| s + x.ln()) * lit(2.0);
        let loglik = -(count::<T>(obs) * two_pi.ln() + logdet + resid.dot(&alpha)) * lit(0.5);
        let logprior = (0..q).fold(T::zero(), |s, l| s + params.mog.weights[(l, states[l])].ln());
        let mean = &mean_u + cov_yu.transpose() * &alpha;
        let gain = chol.solve(&cov_yu);
        let cov = &cov_u - cov_yu.transpose() * gain;
        configs.push(Config {
            log_weight: logprior + loglik,
            states,
            mean,
            cov,
        });
    }

    let lw: Vec<T> = configs.iter().map(|c| c.log_weight).collect();
    let lse = log_sum_exp(&lw);
    if !lse.is_finite() {
        return Err(HintError::Numerical(format!("configuration weights underflowed at voxel {v}")));
    }
    let w: Vec<T> = lw.iter().map(|&x| (x - lse).exp()).collect();

    let mix_mean = |idx: usize| configs.iter().zip(&w).fold(T::zero(), |s, (c, &wz)| s + wz * c.mean[idx]);
    let mix_cov = |a: usize, b: usize, ma: T, mb: T| {
        configs.iter().zip(&w).fold(T::zero(), |s, (c, &wz)| {
            s + wz * (c.cov[(a, b)] + (c.mean[a] - ma) * (c.mean[b] - mb))
        })
    };

    let mut post = VoxelPosterior {
        state_prob: DMatrix::zeros(q, m),
        state_mean: DMatrix::zeros(q, m),
        state_var: DMatrix::zeros(q, m),
        s0_mean: DVector::zeros(q),
        s0_var: DVector::zeros(q),
        subject_mean: DMatrix::zeros(q, n),
        subject_var: DMatrix::zeros(q, n),
        subject_s0_cross: DMatrix::zeros(q, n),
        log_likelihood: lse,
    };
    for l in 0..q {
        let m0 = mix_mean(l);
        post.s0_mean[l] = m0;
        post.s0_var[l] = mix_cov(l, l, m0, m0);
        for i in 0..n {
            let idx = (i + 1) * q + l;
            let mi = mix_mean(idx);
            post.subject_mean[(l, i)] = mi;
            post.subject_var[(l, i)] = mix_cov(idx, idx, mi, mi);
            post.subject_s0_cross[(l, i)] = mix_cov(idx, l, mi, m0) + mi * m0;
        }
        for j in 0..m {
            let mut pj = T::zero();
            let mut mj = T::zero();
            for (c, &wz) in configs.iter().zip(&w) {
                if c.states[l] == j {
                    pj += wz;
                    mj += wz * c.mean[l];
                }
            }
            post.state_prob[(l, j)] = pj;
            if pj > T::zero() {
                mj /= pj;
                let mut vj = T::zero();
                for (c, &wz) in configs.iter().zip(&w) {
                    if c.states[l] == j {
                        let dm = c.mean[l] - mj;
                        vj += wz * (c.cov[(l, l)] + dm * dm);
                    }
                }
                post.state_mean[(l, j)] = mj;
                post.state_var[(l, j)] = vj / pj;
            } else {
                // unreachable component: report its prior-free conditional from any config
                let c = configs.iter().find(|c| c.states[l] == j).expect("every state enumerated");
                post.state_mean[(l, j)] = c.mean[l];
                post.state_var[(l, j)] = c.cov[(l, l)];
            }
        }
    }
    Ok(post)
}
