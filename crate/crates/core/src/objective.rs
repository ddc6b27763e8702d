//! Expected complete-data log-likelihood.

use crate::error::{HintError, Result};
use crate::estep::VoxelPosterior;
use crate::model::{HcicaData, HcicaParams};
use crate::scalar::{count, lit, Real};

/// `Q(Θ | Θ̂) = Σ_v E[l_v(Θ)]`, with the expectation taken under posteriors
/// computed at `Θ̂`. Uses only first and second posterior moments; valid for
/// any orthogonal `A_i` in `params`.
pub fn q_function<T: Real>(posteriors: &[VoxelPosterior<T>], data: &HcicaData<T>, params: &HcicaParams<T>) -> Result<T> {
    data.check_params(params)?;
    if posteriors.len() != data.n_voxels() {
        return Err(HintError::Dimension(format!(
            "{} posteriors for {} voxels",
            posteriors.len(),
            data.n_voxels()
        )));
    }
    let (n, q, m) = (data.n_subjects(), data.n_ics(), params.n_components());
    if posteriors
        .iter()
        .any(|p| p.n_ics() != q || p.n_subjects() != n || p.state_prob.ncols() != m)
    {
        return Err(HintError::Dimension("posterior moments do not match params".into()));
    }
    let half = lit::<T>(0.5);
    let log_2pi = lit::<T>(std::f64::consts::TAU).ln();
    let sigma0 = params.noise_variance;
    let x = &data.design;

    let mut total = T::zero();
    for (v, post) in posteriors.iter().enumerate() {
        let b = params.beta.voxel(v);
        let shift = x * &b;
        for i in 0..n {
            let y = data.subjects[i].column(v);
            let rotated = params.mixing[i].tr_mul(&y);
            // E‖y − A s‖² with A orthogonal
            let mut sq = y.norm_squared();
            for l in 0..q {
                sq += post.subject_second(l, i) - lit::<T>(2.0) * rotated[l] * post.subject_mean[(l, i)];
            }
            total -= half * count::<T>(q) * (log_2pi + sigma0.ln()) + sq / (lit::<T>(2.0) * sigma0);

            for l in 0..q {
                let nu = params.subject_variance[l];
                let c = shift[(i, l)];
                let e = post.subject_second(l, i) - lit::<T>(2.0) * post.subject_s0_cross[(l, i)] + post.s0_second(l)
                    - lit::<T>(2.0) * c * (post.subject_mean[(l, i)] - post.s0_mean[l])
                    + c * c;
                total -= half * (log_2pi + nu.ln()) + e / (lit::<T>(2.0) * nu);
            }
        }
        for l in 0..q {
            for j in 0..m {
                let pj = post.state_prob[(l, j)];
                if pj == T::zero() {
                    continue;
                }
                let mu = params.mog.means[(l, j)];
                let s2 = params.mog.variances[(l, j)];
                let d = post.state_mean[(l, j)] - mu;
                let e = post.state_var[(l, j)] + d * d;
                total += pj * (params.mog.weights[(l, j)].ln() - half * (log_2pi + s2.ln()) - e / (lit::<T>(2.0) * s2));
            }
        }
    }
    if !total.is_finite() {
        return Err(HintError::Numerical("expected log-likelihood is not finite".into()));
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use nalgebra::{DMatrix, DVector};
    use statrs::distribution::{Continuous, Normal};

    use super::*;
    use crate::estep::{estep_all, EstepMode};
    use crate::model::{BetaMaps, MogParams};
    use crate::synth;

    fn toy_params() -> HcicaParams<f64> {
        HcicaParams {
            mixing: vec![DMatrix::from_element(1, 1, -1.0)],
            noise_variance: 0.25,
            subject_variance: DVector::from_element(1, 0.5),
            mog: MogParams {
                weights: DMatrix::from_row_slice(1, 2, &[0.6, 0.4]),
                means: DMatrix::from_row_slice(1, 2, &[0.0, 2.0]),
                variances: DMatrix::from_row_slice(1, 2, &[1.0, 0.5]),
            },
            beta: BetaMaps::from_matrix(1, 1, DMatrix::from_element(1, 1, 0.3)).unwrap(),
        }
    }

    fn toy_posterior() -> VoxelPosterior<f64> {
        VoxelPosterior {
            state_prob: DMatrix::from_row_slice(1, 2, &[0.3, 0.7]),
            state_mean: DMatrix::from_row_slice(1, 2, &[0.2, 1.6]),
            state_var: DMatrix::from_row_slice(1, 2, &[0.1, 0.2]),
            s0_mean: DVector::from_element(1, 1.18),
            s0_var: DVector::from_element(1, 0.5816),
            subject_mean: DMatrix::from_element(1, 1, 1.4),
            subject_var: DMatrix::from_element(1, 1, 0.3),
            subject_s0_cross: DMatrix::from_element(1, 1, 1.9),
            log_likelihood: 0.0,
        }
    }

    #[test]
    fn toy_matches_hand_calculation() {
        let params = toy_params();
        let post = toy_posterior();
        let data = HcicaData::new(vec![DMatrix::from_element(1, 1, -1.5)], DMatrix::from_element(1, 1, 2.0)).unwrap();
        let got = q_function(&[post], &data, &params).unwrap();

        // Each Gaussian term as log pdf at the mean, minus the variance correction.
        let y: f64 = -1.5;
        let (es, vs) = (1.4, 0.3);
        let es2 = vs + es * es;
        let e_sq = y * y - 2.0 * (-1.0 * y) * es + es2;
        let noise = Normal::new(0.0, 0.5).unwrap();
        let t1 = noise.ln_pdf(0.0) - e_sq / (2.0 * 0.25);

        let c = 0.3 * 2.0;
        let es0 = 1.18;
        let es02 = 0.5816 + es0 * es0;
        let e_gamma = es2 - 2.0 * 1.9 + es02 - 2.0 * c * (es - es0) + c * c;
        let t2 = Normal::new(0.0, 0.5f64.sqrt()).unwrap().ln_pdf(0.0) - e_gamma / (2.0 * 0.5);

        let c0 = Normal::new(0.0, 1.0).unwrap();
        let c1 = Normal::new(2.0, 0.5f64.sqrt()).unwrap();
        let t3 = 0.3 * (0.6f64.ln() + c0.ln_pdf(0.2) - 0.1 / 2.0) + 0.7 * (0.4f64.ln() + c1.ln_pdf(1.6) - 0.2 / (2.0 * 0.5));
        let want = t1 + t2 + t3;
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn zero_data_leaves_prior_and_variance_terms() {
        let mut params = toy_params();
        params.mog.means.fill(0.0);
        params.beta = BetaMaps::zeros(1, 1, 1);
        let mut post = toy_posterior();
        post.state_mean.fill(0.0);
        post.s0_mean.fill(0.0);
        post.subject_mean.fill(0.0);
        post.subject_s0_cross.fill(0.0);
        let data = HcicaData::new(vec![DMatrix::zeros(1, 1)], DMatrix::from_element(1, 1, 2.0)).unwrap();
        let got = q_function(&[post.clone()], &data, &params).unwrap();
        let l2p = std::f64::consts::TAU.ln();
        let mut want = -0.5 * (l2p + 0.25f64.ln()) - 0.3 / 0.5;
        want += -0.5 * (l2p + 0.5f64.ln()) - (0.3 + 0.5816) / 1.0;
        for j in 0..2 {
            let (p, s2) = (post.state_prob[(0, j)], params.mog.variances[(0, j)]);
            want += p * (params.mog.weights[(0, j)].ln() - 0.5 * (l2p + s2.ln()) - post.state_var[(0, j)] / (2.0 * s2));
        }
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let params = toy_params();
        let data = HcicaData::new(vec![DMatrix::zeros(1, 1)], DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert!(matches!(q_function(&[], &data, &params), Err(HintError::Dimension(_))));
    }

    #[test]
    fn mstep_maximizes_q() {
        let mut rng = synth::rng(4);
        let params: HcicaParams<f64> = synth::random_params(4, 2, 2, 1, 30, &mut rng);
        let x = synth::gaussian_matrix(4, 1, &mut rng);
        let (data, _, _) = synth::sample_from_params(&params, &x, &mut rng);
        let post = estep_all(&data, &params, EstepMode::Factorized).unwrap();
        let base = q_function(&post, &data, &params).unwrap();
        let mut shifted = params.clone();
        let mut bm = shifted.beta.as_matrix().clone();
        bm.add_scalar_mut(0.7);
        shifted.beta = BetaMaps::from_matrix(1, 2, bm).unwrap();
        let q2 = q_function(&post, &data, &shifted).unwrap();
        assert!(q2.is_finite());
        let mstep = crate::mstep::mstep_maximize(&post, &data, &params).unwrap();
        let q3 = q_function(&post, &data, &mstep).unwrap();
        assert!(q3 >= base - 1e-9 * base.abs());
        assert!(q3 >= q2 - 1e-9 * q2.abs());
    }
}
