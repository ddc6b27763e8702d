use nalgebra::DMatrix;

use super::contrast::two_sided_p;
use crate::error::{HintError, Result};
use crate::linalg::{center_rows, spd_inverse};
use crate::scalar::{count, lit, to_f64, Real};

/// Dual-regression subject maps and the voxelwise group-level GLM.
#[derive(Debug, Clone, PartialEq)]
pub struct DualRegressionResult<T: Real> {
    /// Per subject, `T_i × q` time courses.
    pub time_courses: Vec<DMatrix<T>>,
    /// Per subject, `q × V` maps.
    pub subject_maps: Vec<DMatrix<T>>,
    /// Per covariate, `q × V` OLS coefficients.
    pub estimate: Vec<DMatrix<T>>,
    pub standard_error: Vec<DMatrix<T>>,
    pub z: Vec<DMatrix<T>>,
    pub p: Vec<DMatrix<T>>,
}

fn least_squares<T: Real>(basis: &DMatrix<T>, target: &DMatrix<T>, what: &str) -> Result<DMatrix<T>> {
    let inv = spd_inverse(&basis.tr_mul(basis)).ok_or_else(|| HintError::Rank(format!("{what} is rank deficient")))?;
    Ok(inv * basis.tr_mul(target))
}

/// Spatial then temporal regression of each subject (`T_i × V`, rows are
/// time points, centred across voxels) on the group maps, followed by OLS of
/// the subject maps on `[1, X]` at every voxel. The t statistics are
/// reported as z values.
pub fn dual_regression<T: Real>(
    subjects: &[DMatrix<T>],
    group_maps: &DMatrix<T>,
    design: &DMatrix<T>,
) -> Result<DualRegressionResult<T>> {
    let n = subjects.len();
    let (q, v) = group_maps.shape();
    let p = design.ncols();
    if n == 0 || design.nrows() != n {
        return Err(HintError::Dimension(format!("{n} subjects but {} design rows", design.nrows())));
    }
    if subjects.iter().any(|s| s.ncols() != v) {
        return Err(HintError::Dimension("subjects and group maps differ in voxel count".into()));
    }
    let maps_t = group_maps.transpose();
    let mut time_courses = Vec::with_capacity(n);
    let mut subject_maps = Vec::with_capacity(n);
    for (i, y) in subjects.iter().enumerate() {
        let c = center_rows(y);
        let tc = least_squares(&maps_t, &c.transpose(), &format!("spatial regression of subject {}", i + 1))?
            .transpose();
        let maps = least_squares(&tc, &c, &format!("temporal regression of subject {}", i + 1))?;
        time_courses.push(tc);
        subject_maps.push(maps);
    }

    if n <= p + 1 {
        return Err(HintError::Rank(format!("group GLM needs more than {} subjects", p + 1)));
    }
    let aug = DMatrix::from_fn(n, p + 1, |i, k| if k == 0 { T::one() } else { design[(i, k - 1)] });
    let ginv = spd_inverse(&aug.tr_mul(&aug)).ok_or_else(|| HintError::SingularDesign("[1, X] is rank deficient".into()))?;
    let df = count::<T>(n - p - 1);
    let mut estimate = vec![DMatrix::zeros(q, v); p];
    let mut standard_error = vec![DMatrix::zeros(q, v); p];
    let mut z = vec![DMatrix::zeros(q, v); p];
    let mut pv = vec![DMatrix::from_element(q, v, T::one()); p];
    for vv in 0..v {
        let y = DMatrix::from_fn(n, q, |i, l| subject_maps[i][(l, vv)]);
        let coef = &ginv * aug.tr_mul(&y);
        let resid = &y - &aug * &coef;
        for l in 0..q {
            let s2 = resid.column(l).norm_squared() / df;
            for k in 0..p {
                let b = coef[(k + 1, l)];
                let se = (s2 * ginv[(k + 1, k + 1)]).sqrt();
                estimate[k][(l, vv)] = b;
                standard_error[k][(l, vv)] = se;
                if se > T::zero() {
                    let zz = b / se;
                    z[k][(l, vv)] = zz;
                    pv[k][(l, vv)] = lit(two_sided_p(to_f64(zz)));
                }
            }
        }
    }
    Ok(DualRegressionResult {
        time_courses,
        subject_maps,
        estimate,
        standard_error,
        z,
        p: pv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn own_sources_are_reproduced() {
        let mut rng = synth::rng(1);
        let s = center_rows(&synth::gaussian_matrix::<f64, _>(3, 400, &mut rng));
        let tc: DMatrix<f64> = synth::gaussian_matrix(30, 3, &mut rng);
        let y = &tc * &s;
        let design = DMatrix::from_element(1, 1, 0.0);
        let err = dual_regression(&[y.clone()], &s, &design).unwrap_err();
        assert!(matches!(err, HintError::Rank(_)));
        let design = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.5]);
        let r = dual_regression(&[y.clone(), y.clone(), y], &s, &design).unwrap();
        assert!((&r.subject_maps[0] - &s).amax() < 1e-8);
        assert!((&r.time_courses[0] - &tc).amax() < 1e-8);
    }

    #[test]
    fn two_group_design_gives_two_sample_t() {
        let mut rng = synth::rng(2);
        let n = 10;
        let v = 50;
        let s = synth::gaussian_matrix::<f64, _>(2, v, &mut rng);
        let group: Vec<f64> = (0..n).map(|i| if i < 4 { 1.0 } else { 0.0 }).collect();
        let subjects: Vec<DMatrix<f64>> = (0..n)
            .map(|_| {
                let tc: DMatrix<f64> = synth::gaussian_matrix(20, 2, &mut rng);
                let noise: DMatrix<f64> = synth::gaussian_matrix::<f64, _>(20, v, &mut rng) * 0.5;
                &tc * &s + noise
            })
            .collect();
        let design = DMatrix::from_column_slice(n, 1, &group);
        let r = dual_regression(&subjects, &s, &design).unwrap();
        for vv in 0..v {
            for l in 0..2 {
                let a: Vec<f64> = (0..4).map(|i| r.subject_maps[i][(l, vv)]).collect();
                let b: Vec<f64> = (4..n).map(|i| r.subject_maps[i][(l, vv)]).collect();
                let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
                let ss = |x: &[f64]| {
                    let m = mean(x);
                    x.iter().map(|y| (y - m).powi(2)).sum::<f64>()
                };
                let pooled = (ss(&a) + ss(&b)) / (n - 2) as f64;
                let t = (mean(&a) - mean(&b)) / (pooled * (1.0 / 4.0 + 1.0 / 6.0)).sqrt();
                assert!((r.z[0][(l, vv)] - t).abs() < 1e-9 * t.abs().max(1.0));
            }
        }
    }
}
