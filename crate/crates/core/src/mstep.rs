//! Closed-form maximization of the expected complete-data log-likelihood.

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{HintError, Result};
use crate::estep::VoxelPosterior;
use crate::linalg::procrustes_rotation;
use crate::model::{BetaMaps, HcicaData, HcicaParams, MogParams};
use crate::scalar::{count, lit, Real};

/// σ₀² and ν² floor, relative to the mean square of the data.
pub const NOISE_FLOOR_REL: f64 = 1e-10;
/// MoG variance floor, relative to the spread of the posterior s₀ means.
pub const MOG_FLOOR_REL: f64 = 1e-6;
/// Mixture weights are kept at least this large so no state becomes impossible.
pub const WEIGHT_FLOOR: f64 = 1e-12;

/// One M-step followed by relabeling of the MoG components by ascending `|μ|`.
pub fn mstep_update<T: Real>(
    posteriors: &[VoxelPosterior<T>],
    data: &HcicaData<T>,
    params: &HcicaParams<T>,
) -> Result<HcicaParams<T>> {
    let mut next = mstep_maximize(posteriors, data, params)?;
    relabel_background_first(&mut next.mog);
    Ok(next)
}

/// The M-step proper. Every block is the exact maximizer of `Q` given the
/// others: β by per-IC OLS, `A_i` by Procrustes, σ₀² and ν² by their residual
/// second moments, and the MoG blocks by posterior-weighted moments. MoG
/// components keep the labeling of the posteriors, so `Q` can be compared
/// before and after.
pub fn mstep_maximize<T: Real>(
    posteriors: &[VoxelPosterior<T>],
    data: &HcicaData<T>,
    params: &HcicaParams<T>,
) -> Result<HcicaParams<T>> {
    data.check_params(params)?;
    let (n, q, p, v) = (data.n_subjects(), data.n_ics(), data.n_covariates(), data.n_voxels());
    let m = params.n_components();
    if posteriors.len() != v {
        return Err(HintError::Dimension(format!("{} posteriors for {v} voxels", posteriors.len())));
    }
    let x = &data.design;
    let gram = x.tr_mul(x);
    let gram_chol = Cholesky::new(gram)
        .ok_or_else(|| HintError::SingularDesign("XᵀX is not positive definite".into()))?;

    // β(v) = (XᵀX)⁻¹ Xᵀ R(v), R[i, ℓ] = E[s_iℓ] − E[s₀ℓ]
    let blocks: Vec<DMatrix<T>> = posteriors
        .par_iter()
        .map(|post| {
            let r = DMatrix::from_fn(n, q, |i, l| post.subject_mean[(l, i)] - post.s0_mean[l]);
            gram_chol.solve(&x.tr_mul(&r))
        })
        .collect();
    let mut beta = BetaMaps::zeros(p, q, v);
    for (vv, b) in blocks.iter().enumerate() {
        beta.set_voxel(vv, b);
    }

    let data_scale = data.mean_square().max(T::default_epsilon() * T::default_epsilon());
    let floor = data_scale * lit(NOISE_FLOOR_REL);

    // A_i from SVD of Σ_v y_i E[s_i]ᵀ, then σ₀²
    let mut mixing = Vec::with_capacity(n);
    let mut noise_acc = T::zero();
    for i in 0..n {
        let means = DMatrix::from_fn(q, v, |l, vv| posteriors[vv].subject_mean[(l, i)]);
        let cross = &data.subjects[i] * means.transpose();
        let a = procrustes_rotation(&cross)?;
        let y = &data.subjects[i];
        let mut second = T::zero();
        for post in posteriors {
            for l in 0..q {
                second += post.subject_second(l, i);
            }
        }
        // Σ_v yᵀ A E[s] = tr(Aᵀ Σ_v y E[s]ᵀ)
        let fit = (a.transpose() * &cross).trace();
        noise_acc += y.norm_squared() - lit::<T>(2.0) * fit + second;
        mixing.push(a);
    }
    let noise_variance = (noise_acc / count::<T>(n * q * v)).max(floor);

    // ν²_ℓ with the new β
    let mut subject_variance: DVector<T> = DVector::zeros(q);
    for (vv, post) in posteriors.iter().enumerate() {
        let shift = x * &blocks[vv];
        for l in 0..q {
            for i in 0..n {
                let c = shift[(i, l)];
                subject_variance[l] += post.subject_second(l, i) - lit::<T>(2.0) * post.subject_s0_cross[(l, i)]
                    + post.s0_second(l)
                    - lit::<T>(2.0) * c * (post.subject_mean[(l, i)] - post.s0_mean[l])
                    + c * c;
            }
        }
    }
    let subject_variance = subject_variance.map(|s| (s / count::<T>(n * v)).max(floor));

    let mog = update_mog(posteriors, q, m, &params.mog);
    Ok(HcicaParams {
        mixing,
        noise_variance,
        subject_variance,
        mog,
        beta,
    })
}

fn update_mog<T: Real>(posteriors: &[VoxelPosterior<T>], q: usize, m: usize, prev: &MogParams<T>) -> MogParams<T> {
    let vf = count::<T>(posteriors.len());
    let mut weights = DMatrix::zeros(q, m);
    let mut means = DMatrix::zeros(q, m);
    let mut variances = DMatrix::zeros(q, m);
    for l in 0..q {
        let mean_s0 = posteriors.iter().fold(T::zero(), |s, p| s + p.s0_mean[l]) / vf;
        let spread = posteriors
            .iter()
            .fold(T::zero(), |s, p| s + (p.s0_mean[l] - mean_s0) * (p.s0_mean[l] - mean_s0))
            / vf;
        let var_floor = (spread * lit(MOG_FLOOR_REL)).max(T::default_epsilon() * T::default_epsilon());
        for j in 0..m {
            let mut mass = T::zero();
            let mut first = T::zero();
            for post in posteriors {
                let pj = post.state_prob[(l, j)];
                mass += pj;
                first += pj * post.state_mean[(l, j)];
            }
            if mass > T::zero() {
                let mu = first / mass;
                let mut second = T::zero();
                for post in posteriors {
                    let d = post.state_mean[(l, j)] - mu;
                    second += post.state_prob[(l, j)] * (post.state_var[(l, j)] + d * d);
                }
                means[(l, j)] = mu;
                variances[(l, j)] = (second / mass).max(var_floor);
            } else {
                means[(l, j)] = prev.means[(l, j)];
                variances[(l, j)] = prev.variances[(l, j)];
            }
            weights[(l, j)] = (mass / vf).max(lit(WEIGHT_FLOOR));
        }
        let total = weights.row(l).sum();
        for j in 0..m {
            weights[(l, j)] /= total;
        }
    }
    MogParams {
        weights,
        means,
        variances,
    }
}

/// Reorders each IC's components by ascending `|μ|` (ties keep index order).
pub fn relabel_background_first<T: Real>(mog: &mut MogParams<T>) {
    for l in 0..mog.n_ics() {
        let order = mog.background_order(l);
        let w: Vec<T> = order.iter().map(|&k| mog.weights[(l, k)]).collect();
        let mu: Vec<T> = order.iter().map(|&k| mog.means[(l, k)]).collect();
        let s2: Vec<T> = order.iter().map(|&k| mog.variances[(l, k)]).collect();
        for j in 0..order.len() {
            mog.weights[(l, j)] = w[j];
            mog.means[(l, j)] = mu[j];
            mog.variances[(l, j)] = s2[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estep::{estep_all, EstepMode};
    use crate::linalg::orthogonality_error;
    use crate::objective::q_function;
    use crate::synth;

    /// Posteriors that put all mass on the true latent values.
    fn point_mass(
        s0: &DMatrix<f64>,
        sources: &[DMatrix<f64>],
        states: &[Vec<usize>],
        m: usize,
    ) -> Vec<VoxelPosterior<f64>> {
        let (q, v) = s0.shape();
        let n = sources.len();
        (0..v)
            .map(|vv| {
                let mut state_prob = DMatrix::zeros(q, m);
                let mut state_mean = DMatrix::zeros(q, m);
                for l in 0..q {
                    state_prob[(l, states[l][vv])] = 1.0;
                    for j in 0..m {
                        state_mean[(l, j)] = s0[(l, vv)];
                    }
                }
                let subject_mean = DMatrix::from_fn(q, n, |l, i| sources[i][(l, vv)]);
                VoxelPosterior {
                    state_prob,
                    state_mean,
                    state_var: DMatrix::zeros(q, m),
                    s0_mean: s0.column(vv).clone_owned(),
                    s0_var: DVector::zeros(q),
                    subject_s0_cross: DMatrix::from_fn(q, n, |l, i| sources[i][(l, vv)] * s0[(l, vv)]),
                    subject_mean,
                    subject_var: DMatrix::zeros(q, n),
                    log_likelihood: 0.0,
                }
            })
            .collect()
    }

    #[test]
    fn point_mass_posteriors_give_complete_data_estimates() {
        let mut rng = synth::rng(21);
        let (n, q, p, v) = (6, 2, 2, 40);
        let params: HcicaParams<f64> = synth::random_params(n, q, 2, p, v, &mut rng);
        let x: DMatrix<f64> = synth::gaussian_matrix(n, p, &mut rng);
        let s0: DMatrix<f64> = synth::gaussian_matrix(q, v, &mut rng);
        let states: Vec<Vec<usize>> = (0..q).map(|l| (0..v).map(|vv| (vv + l) % 2).collect()).collect();
        // noiseless second level: s_i = s₀ + βᵀx_i exactly
        let sources: Vec<DMatrix<f64>> = (0..n)
            .map(|i| {
                DMatrix::from_fn(q, v, |l, vv| {
                    let b = params.beta.voxel(vv);
                    s0[(l, vv)] + (0..p).map(|k| b[(k, l)] * x[(i, k)]).sum::<f64>()
                })
            })
            .collect();
        let sigma0: f64 = 0.2;
        let noise: Vec<DMatrix<f64>> = (0..n).map(|_| synth::gaussian_matrix(q, v, &mut rng)).collect();
        let subjects: Vec<DMatrix<f64>> = (0..n)
            .map(|i| &params.mixing[i] * &sources[i] + &noise[i] * sigma0.sqrt())
            .collect();
        let data = HcicaData::new(subjects, x).unwrap();
        let post = point_mass(&s0, &sources, &states, 2);
        let next = mstep_update(&post, &data, &params).unwrap();

        let diff = (next.beta.as_matrix() - params.beta.as_matrix()).amax();
        assert!(diff < 1e-10, "beta diff {diff}");
        // ν² hits the floor because the second level has no residual
        assert!(next.subject_variance.iter().all(|&d| d < 1e-6));
        // σ₀² equals the complete-data residual mean square at the fitted A_i
        let mut resid = 0.0;
        for i in 0..n {
            resid += (&data.subjects[i] - &next.mixing[i] * &sources[i]).norm_squared();
        }
        assert!((next.noise_variance - resid / (n * q * v) as f64).abs() < 1e-10);
        for a in &next.mixing {
            assert!(orthogonality_error(a) < 1e-12);
        }
    }

    #[test]
    fn mog_moments_from_point_masses() {
        let s0 = DMatrix::from_row_slice(1, 6, &[0.1, -0.1, 0.0, 3.0, 4.0, 5.0]);
        let states = vec![vec![0, 0, 0, 1, 1, 1]];
        let sources = vec![s0.clone()];
        let post = point_mass(&s0, &sources, &states, 2);
        let mog = update_mog(&post, 1, 2, &MogParams {
            weights: DMatrix::from_element(1, 2, 0.5),
            means: DMatrix::zeros(1, 2),
            variances: DMatrix::from_element(1, 2, 1.0),
        });
        assert!((mog.weights[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((mog.means[(0, 1)] - 4.0).abs() < 1e-12);
        assert!((mog.variances[(0, 1)] - 2.0 / 3.0).abs() < 1e-12);
        assert!((mog.variances[(0, 0)] - 0.02 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn procrustes_fixed_point() {
        let mut rng = synth::rng(2);
        let a: DMatrix<f64> = synth::random_orthogonal(3, &mut rng);
        assert!((procrustes_rotation(&a).unwrap() - &a).amax() < 1e-12);
    }

    #[test]
    fn uniform_state_probabilities_give_uniform_weights() {
        let mut rng = synth::rng(6);
        let params: HcicaParams<f64> = synth::random_params(3, 2, 2, 1, 20, &mut rng);
        let x = synth::gaussian_matrix(3, 1, &mut rng);
        let (data, _, _) = synth::sample_from_params(&params, &x, &mut rng);
        let mut post = estep_all(&data, &params, EstepMode::Factorized).unwrap();
        for p in post.iter_mut() {
            p.state_prob.fill(0.5);
        }
        let next = mstep_update(&post, &data, &params).unwrap();
        assert!(next.mog.weights.iter().all(|&w| (w - 0.5).abs() < 1e-12));
    }

    #[test]
    fn relabeling_orders_by_absolute_mean() {
        let mut mog = MogParams {
            weights: DMatrix::from_row_slice(2, 3, &[0.2, 0.3, 0.5, 0.1, 0.1, 0.8]),
            means: DMatrix::from_row_slice(2, 3, &[-3.0, 0.5, 1.0, 2.0, -2.0, 0.0]),
            variances: DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
        };
        relabel_background_first(&mut mog);
        assert_eq!(mog.means.row(0).iter().copied().collect::<Vec<_>>(), vec![0.5, 1.0, -3.0]);
        assert_eq!(mog.variances.row(0).iter().copied().collect::<Vec<_>>(), vec![2.0, 3.0, 1.0]);
        // tie between 2 and −2 keeps the earlier index first
        assert_eq!(mog.means.row(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 2.0, -2.0]);
    }

    #[test]
    fn singular_design_is_reported() {
        let mut rng = synth::rng(9);
        let params: HcicaParams<f64> = synth::random_params(3, 1, 2, 2, 5, &mut rng);
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let (data, _, _) = synth::sample_from_params(&params, &x, &mut rng);
        let post = estep_all(&data, &params, EstepMode::Factorized).unwrap();
        assert!(matches!(mstep_update(&post, &data, &params), Err(HintError::SingularDesign(_))));
    }

    #[test]
    fn q_ascends_over_one_step() {
        let mut rng = synth::rng(13);
        let params: HcicaParams<f64> = synth::random_params(5, 3, 2, 2, 60, &mut rng);
        let x = synth::gaussian_matrix(5, 2, &mut rng);
        let (data, _, _) = synth::sample_from_params(&params, &x, &mut rng);
        let post = estep_all(&data, &params, EstepMode::Factorized).unwrap();
        let before = q_function(&post, &data, &params).unwrap();
        let next = mstep_maximize(&post, &data, &params).unwrap();
        let after = q_function(&post, &data, &next).unwrap();
        assert!(after >= before - 1e-8 * before.abs());
        next.validate(1e-10).unwrap();
    }
}
