use nalgebra::{Cholesky, DMatrix, DVector};

use super::mog::fit_scalar_mog;
use crate::error::{HintError, Result};
use crate::linalg::procrustes_rotation;
use crate::model::{BetaMaps, HcicaParams, MogParams, MogRow};
use crate::mstep::NOISE_FLOOR_REL;
use crate::scalar::{count, lit, Real};

/// Starting values for EM from back-reconstructed subject maps.
///
/// `A_i` is the Procrustes rotation of the whitened data onto the subject
/// maps and σ₀² their mean squared residual. The subject IC values `A_iᵀY_i`
/// (the maps on the scale of the whitened data) are regressed voxelwise on
/// `[1, X]`: the intercept is the s₀ map, the slopes β⁰, and ν² the per-IC
/// residual variance. Each IC's MoG is fitted to its s₀ map.
pub fn initialize_params<T: Real>(
    subject_ics: &[DMatrix<T>],
    design: &DMatrix<T>,
    whitened: &[DMatrix<T>],
    m: usize,
) -> Result<HcicaParams<T>> {
    let n = subject_ics.len();
    let p = design.ncols();
    if p == 0 {
        return Err(HintError::InvalidArgument("the model requires p >= 1 covariates".into()));
    }
    if n == 0 || design.nrows() != n || whitened.len() != n {
        return Err(HintError::Dimension(format!(
            "{n} subject maps, {} design rows, {} whitened subjects",
            design.nrows(),
            whitened.len()
        )));
    }
    let (q, v) = subject_ics[0].shape();
    if subject_ics.iter().chain(whitened).any(|s| s.shape() != (q, v)) {
        return Err(HintError::Dimension("subject maps and whitened data must all be q x V".into()));
    }
    let aug = DMatrix::from_fn(n, p + 1, |i, k| if k == 0 { T::one() } else { design[(i, k - 1)] });
    let chol = Cholesky::new(aug.tr_mul(&aug))
        .ok_or_else(|| HintError::SingularDesign("[1, X] is rank deficient".into()))?;

    let data_scale = whitened.iter().fold(T::zero(), |s, y| s + y.norm_squared()) / count::<T>(n * q * v);
    let floor = data_scale.max(T::default_epsilon()) * lit(NOISE_FLOOR_REL);

    let mut mixing = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    let mut resid = T::zero();
    for i in 0..n {
        let a = procrustes_rotation(&(&whitened[i] * subject_ics[i].transpose()))?;
        resid += (&whitened[i] - &a * &subject_ics[i]).norm_squared();
        values.push(a.tr_mul(&whitened[i]));
        mixing.push(a);
    }
    let noise_variance = (resid / count::<T>(n * q * v)).max(floor);

    let mut s0 = DMatrix::zeros(q, v);
    let mut beta = BetaMaps::zeros(p, q, v);
    let mut rss: DVector<T> = DVector::zeros(q);
    for vv in 0..v {
        let y = DMatrix::from_fn(n, q, |i, l| values[i][(l, vv)]);
        let coef = chol.solve(&aug.tr_mul(&y));
        let res = &y - &aug * &coef;
        for l in 0..q {
            s0[(l, vv)] = coef[(0, l)];
            for k in 0..p {
                beta.set(vv, k, l, coef[(k + 1, l)]);
            }
            rss[l] += res.column(l).norm_squared();
        }
    }
    let df = if n > p + 1 { n - p - 1 } else { n };
    let subject_variance = rss.map(|r| (r / count::<T>(df * v)).max(floor));

    let rows: Vec<MogRow<T>> = (0..q)
        .map(|l| fit_scalar_mog(&s0.row(l).iter().copied().collect::<Vec<_>>(), m))
        .collect::<Result<_>>()?;
    let mog = MogParams::from_rows(&rows);
    Ok(HcicaParams {
        mixing,
        noise_variance,
        subject_variance,
        mog,
        beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::group_ica;
    use crate::linalg::{correlation, orthogonality_error};
    use crate::synth::{self, align_components, StudyConfig, SyntheticStudy};

    #[test]
    fn two_point_regression() {
        let mut rng = synth::rng(1);
        let s1: DMatrix<f64> = synth::gaussian_matrix::<f64, _>(2, 50, &mut rng).map(|x| x.abs().powi(3));
        let s2: DMatrix<f64> = synth::gaussian_matrix::<f64, _>(2, 50, &mut rng).map(|x| x.abs().powi(3));
        let design = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let params = initialize_params(&[s1.clone(), s2.clone()], &design, &[s1.clone(), s2.clone()], 2).unwrap();
        for vv in 0..50 {
            for l in 0..2 {
                assert!((params.beta.get(vv, 0, l) - (s2[(l, vv)] - s1[(l, vv)])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_design_is_rejected() {
        let s = DMatrix::<f64>::zeros(1, 40);
        let design = DMatrix::<f64>::zeros(1, 0);
        assert!(matches!(
            initialize_params(&[s.clone()], &design, &[s], 2),
            Err(HintError::InvalidArgument(_))
        ));
    }

    #[test]
    fn rank_deficient_design_is_rejected() {
        let s = DMatrix::<f64>::from_fn(1, 40, |_, v| v as f64);
        let design = DMatrix::from_element(3, 1, 1.0);
        let r = initialize_params(&[s.clone(), s.clone(), s.clone()], &design, &[s.clone(), s.clone(), s], 2);
        assert!(matches!(r, Err(HintError::SingularDesign(_))));
    }

    #[test]
    fn initial_effects_track_the_truth() {
        let study = SyntheticStudy::generate(&StudyConfig::default());
        let g = group_ica(&study.whitened, 3, 3, 1).unwrap();
        let params = initialize_params(&g.subject_ics, &study.design, &study.whitened, 2).unwrap();
        params.validate(1e-10).unwrap();
        for a in &params.mixing {
            assert!(orthogonality_error(a) < 1e-10);
        }
        let align = align_components(&study.s0, &g.s0_hat);
        for (l, &(k, _, _)) in align.iter().enumerate() {
            for cov in 0..2 {
                let truth = study.beta.map(cov, l);
                let est = params.beta.map(cov, k);
                let c = correlation(&truth, &est).abs();
                assert!(c > 0.7, "IC {l} covariate {cov}: {c}");
            }
        }
    }
}
