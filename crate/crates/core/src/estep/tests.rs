use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use super::*;
use crate::model::{BetaMaps, MogParams};
use crate::synth;

fn one_ic_params(noise: f64, nu: f64, beta: f64) -> HcicaParams<f64> {
    HcicaParams {
        mixing: vec![DMatrix::identity(1, 1)],
        noise_variance: noise,
        subject_variance: DVector::from_element(1, nu),
        mog: MogParams {
            weights: DMatrix::from_row_slice(1, 2, &[0.7, 0.3]),
            means: DMatrix::from_row_slice(1, 2, &[0.0, 3.0]),
            variances: DMatrix::from_row_slice(1, 2, &[0.5, 1.5]),
        },
        beta: BetaMaps::from_matrix(1, 1, DMatrix::from_element(1, 1, beta)).unwrap(),
    }
}

fn normal_pdf(x: f64, var: f64) -> f64 {
    (-x * x / (2.0 * var)).exp() / (std::f64::consts::TAU * var).sqrt()
}

#[test]
fn noise_free_single_subject_collapses() {
    let nu = 0.8;
    let params = one_ic_params(1e-14, nu, 0.5);
    let y = vec![DVector::from_element(1, 2.1)];
    let x = DMatrix::from_element(1, 1, 2.0);
    let post = estep_voxel(&y, &x, &params, 0, EstepMode::Factorized).unwrap();
    assert!((post.subject_mean[(0, 0)] - 2.1).abs() < 1e-12);
    let r = 2.1 - 0.5 * 2.0;
    let w: Vec<f64> = (0..2)
        .map(|j| params.mog.weights[(0, j)] * normal_pdf(r - params.mog.means[(0, j)], nu + params.mog.variances[(0, j)]))
        .collect();
    let total: f64 = w.iter().sum();
    for j in 0..2 {
        assert!((post.state_prob[(0, j)] - w[j] / total).abs() < 1e-10);
    }
}

#[test]
fn zero_data_symmetry() {
    let mut rng = synth::rng(3);
    let mut params: HcicaParams<f64> = synth::random_params(4, 2, 2, 1, 1, &mut rng);
    params.mog.means.fill(0.0);
    params.beta = BetaMaps::zeros(1, 2, 1);
    let y = vec![DVector::zeros(2); 4];
    let x = DMatrix::from_element(4, 1, 1.0);
    let post = estep_voxel(&y, &x, &params, 0, EstepMode::Factorized).unwrap();
    assert!(post.s0_mean.amax() < 1e-15);
    assert!(post.subject_mean.amax() < 1e-15);
    let tau = params.subject_variance.map(|d| d + params.noise_variance);
    for l in 0..2 {
        // marginal of the mean at zero: only the state-dependent factor matters
        let w: Vec<f64> = (0..2)
            .map(|j| params.mog.weights[(l, j)] / (tau[l] + 4.0 * params.mog.variances[(l, j)]).sqrt())
            .collect();
        let total: f64 = w.iter().sum();
        for j in 0..2 {
            assert!((post.state_prob[(l, j)] - w[j] / total).abs() < 1e-12);
        }
    }
}

#[test]
fn factorized_matches_enumeration_small() {
    let mut rng = synth::rng(11);
    let params: HcicaParams<f64> = synth::random_params(3, 2, 2, 2, 4, &mut rng);
    let x = synth::gaussian_matrix(3, 2, &mut rng);
    let (data, _, _) = synth::sample_from_params(&params, &x, &mut rng);
    for v in 0..4 {
        let y = data.voxel(v);
        let a = estep_voxel(&y, &x, &params, v, EstepMode::Factorized).unwrap();
        let b = estep_voxel(&y, &x, &params, v, EstepMode::ExactEnumeration).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-10, "voxel {v}: {}", a.max_abs_diff(&b));
        assert!((a.log_likelihood - b.log_likelihood).abs() < 1e-9);
    }
}

#[test]
fn three_components_agree_too() {
    let mut rng = synth::rng(12);
    let params: HcicaParams<f64> = synth::random_params(2, 2, 3, 1, 3, &mut rng);
    let x = synth::gaussian_matrix(2, 1, &mut rng);
    let (data, _, _) = synth::sample_from_params(&params, &x, &mut rng);
    for v in 0..3 {
        let y = data.voxel(v);
        let a = estep_voxel(&y, &x, &params, v, EstepMode::Factorized).unwrap();
        let b = estep_voxel(&y, &x, &params, v, EstepMode::ExactEnumeration).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-10);
    }
}

#[test]
fn extreme_voxel_stays_finite() {
    let params = one_ic_params(0.1, 0.1, 0.0);
    let y = vec![DVector::from_element(1, 1e4)];
    let x = DMatrix::from_element(1, 1, 1.0);
    let post = estep_voxel(&y, &x, &params, 0, EstepMode::Factorized).unwrap();
    assert!((post.state_prob.row(0).sum() - 1.0).abs() < 1e-12);
    assert!(post.state_prob[(0, 1)] > 0.999);
}

#[test]
fn single_precision_path() {
    let mut rng = synth::rng(5);
    let p64: HcicaParams<f64> = synth::random_params(3, 2, 2, 1, 2, &mut rng);
    let x64 = synth::gaussian_matrix::<f64, _>(3, 1, &mut rng);
    let (data, _, _) = synth::sample_from_params(&p64, &x64, &mut rng);
    let p32 = HcicaParams::<f32> {
        mixing: p64.mixing.iter().map(|a| a.map(|v| v as f32)).collect(),
        noise_variance: p64.noise_variance as f32,
        subject_variance: p64.subject_variance.map(|v| v as f32),
        mog: MogParams {
            weights: p64.mog.weights.map(|v| v as f32),
            means: p64.mog.means.map(|v| v as f32),
            variances: p64.mog.variances.map(|v| v as f32),
        },
        beta: BetaMaps::from_matrix(1, 2, p64.beta.as_matrix().map(|v| v as f32)).unwrap(),
    };
    let y64 = data.voxel(0);
    let y32: Vec<DVector<f32>> = y64.iter().map(|y| y.map(|v| v as f32)).collect();
    let a = estep_voxel(&y64, &x64, &p64, 0, EstepMode::Factorized).unwrap();
    let b = estep_voxel(&y32, &x64.map(|v| v as f32), &p32, 0, EstepMode::Factorized).unwrap();
    for l in 0..2 {
        assert!((a.s0_mean[l] - b.s0_mean[l] as f64).abs() < 1e-4);
    }
}

#[test]
fn all_voxels_in_order() {
    let mut rng = synth::rng(8);
    let params: HcicaParams<f64> = synth::random_params(3, 2, 2, 1, 10, &mut rng);
    let x = synth::gaussian_matrix(3, 1, &mut rng);
    let (data, _, _) = synth::sample_from_params(&params, &x, &mut rng);
    let all = estep_all(&data, &params, EstepMode::Factorized).unwrap();
    for (v, post) in all.iter().enumerate() {
        let single = estep_voxel(&data.voxel(v), &x, &params, v, EstepMode::Factorized).unwrap();
        assert_eq!(post, &single);
    }
    let total = observed_log_likelihood(&all);
    let direct: f64 = all.iter().map(|p| p.log_likelihood).sum();
    assert_eq!(total, direct);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn posterior_is_well_formed(seed in 0u64..10_000, n in 1usize..5, q in 1usize..4) {
        let mut rng = synth::rng(seed);
        let params: HcicaParams<f64> = synth::random_params(n, q, 2, 1, 1, &mut rng);
        let x = synth::gaussian_matrix(n, 1, &mut rng);
        let (data, _, _) = synth::sample_from_params(&params, &x, &mut rng);
        let post = estep_voxel(&data.voxel(0), &x, &params, 0, EstepMode::Factorized).unwrap();
        for l in 0..q {
            prop_assert!((post.state_prob.row(l).sum() - 1.0).abs() < 1e-12);
            prop_assert!(post.s0_var[l] >= 0.0);
            for i in 0..n {
                prop_assert!(post.subject_var[(l, i)] >= 0.0);
            }
        }
        let exact = estep_voxel(&data.voxel(0), &x, &params, 0, EstepMode::ExactEnumeration).unwrap();
        prop_assert!(post.max_abs_diff(&exact) < 1e-10);
    }
}
