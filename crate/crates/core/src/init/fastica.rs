use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{HintError, Result};
use crate::linalg::symmetric_decorrelate;
use crate::scalar::{count, lit, to_f64, Real};
use crate::synth::gaussian_matrix;

pub const TOLERANCE: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 500;
pub const RESTARTS: u64 = 3;

/// `E[log cosh Z]` and `Var[log cosh Z]` for standard normal `Z`.
const GAUSS_LOGCOSH_MEAN: f64 = 0.374_567_207_491_438_1;
const GAUSS_LOGCOSH_VAR: f64 = 0.189_767_449_172_365_46;

#[derive(Debug, Clone, PartialEq)]
pub struct FastIcaResult<T: Real> {
    /// `q × q` orthogonal unmixing: `sources = unmixing · input`.
    pub unmixing: DMatrix<T>,
    /// `q × V` unit-variance sources, each with positive skewness.
    pub sources: DMatrix<T>,
    pub iterations: usize,
}

/// Symmetric fixed-point fastICA with the `tanh` contrast on whitened rows.
///
/// Deterministic given `seed`. A non-converging start is retried with seeds
/// `seed + 1`, `seed + 2`, `seed + 3`.
pub fn fast_ica_extract<T: Real>(z: &DMatrix<T>, seed: u64) -> Result<FastIcaResult<T>> {
    let (q, v) = z.shape();
    if q == 0 || v == 0 {
        return Err(HintError::InvalidArgument("empty input to fastICA".into()));
    }
    if looks_gaussian(z) {
        return Err(HintError::Convergence(
            "every whitened component is indistinguishable from Gaussian; ICA is not identifiable".into(),
        ));
    }
    let mut last = 0.0;
    for attempt in 0..=RESTARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
        let mut w = symmetric_decorrelate(&gaussian_matrix::<T, _>(q, q, &mut rng))?;
        for it in 1..=MAX_ITERATIONS {
            let next = fixed_point_step(&w, z)?;
            let gap = (&next * w.transpose())
                .diagonal()
                .iter()
                .fold(T::zero(), |m, &d| m.max((T::one() - d.abs()).abs()));
            w = next;
            last = to_f64(gap);
            if gap < lit(TOLERANCE) {
                let mut sources = &w * z;
                for l in 0..q {
                    if skewness(&sources.row(l).iter().copied().collect::<Vec<_>>()) < T::zero() {
                        sources.row_mut(l).neg_mut();
                        w.row_mut(l).neg_mut();
                    }
                }
                return Ok(FastIcaResult {
                    unmixing: w,
                    sources,
                    iterations: it,
                });
            }
        }
        log::warn!("fastICA start {attempt} did not converge (gap {last:.3e})");
    }
    Err(HintError::Convergence(format!(
        "fastICA did not converge after {} starts (last gap {last:.3e})",
        RESTARTS + 1
    )))
}

/// `W ← E[g(WZ) Zᵀ] − diag(E[g'(WZ)]) W`, then symmetric decorrelation.
fn fixed_point_step<T: Real>(w: &DMatrix<T>, z: &DMatrix<T>) -> Result<DMatrix<T>> {
    let v = count::<T>(z.ncols());
    let y = w * z;
    let g = y.map(|x| x.tanh());
    let dg: Vec<T> = g
        .row_iter()
        .map(|row| row.iter().fold(T::zero(), |s, &t| s + T::one() - t * t) / v)
        .collect();
    let mut next = (&g * z.transpose()) / v;
    for l in 0..w.nrows() {
        for c in 0..w.ncols() {
            next[(l, c)] -= dg[l] * w[(l, c)];
        }
    }
    symmetric_decorrelate(&next)
}

/// True when every row's `E[log cosh]`, skewness and excess kurtosis are all
/// within four standard errors of their Gaussian values.
fn looks_gaussian<T: Real>(z: &DMatrix<T>) -> bool {
    let v = z.ncols() as f64;
    let band = 4.0 * (GAUSS_LOGCOSH_VAR / v).sqrt();
    z.row_iter().all(|row| {
        let x: Vec<f64> = row.iter().map(|&a| to_f64(a)).collect();
        let logcosh = x.iter().map(|a| a.cosh().ln()).sum::<f64>() / v;
        let mean = x.iter().sum::<f64>() / v;
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for a in &x {
            let d = a - mean;
            m2 += d * d;
            m3 += d * d * d;
            m4 += d * d * d * d;
        }
        let (m2, m3, m4) = (m2 / v, m3 / v, m4 / v);
        let skew = m3 / m2.powf(1.5);
        let kurt = m4 / (m2 * m2) - 3.0;
        (logcosh - GAUSS_LOGCOSH_MEAN).abs() < band
            && skew.abs() < 4.0 * (6.0 / v).sqrt()
            && kurt.abs() < 4.0 * (24.0 / v).sqrt()
    })
}

pub(crate) fn skewness<T: Real>(x: &[T]) -> T {
    let n = count::<T>(x.len());
    let mean = x.iter().fold(T::zero(), |s, &a| s + a) / n;
    let (mut m2, mut m3) = (T::zero(), T::zero());
    for &a in x {
        let d = a - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= n;
    m3 /= n;
    if m2 <= T::zero() {
        return T::zero();
    }
    m3 / (m2 * m2.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::correlation;
    use crate::synth;
    use rand::Rng;

    fn laplace_sources(v: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = synth::rng(seed);
        DMatrix::from_fn(2, v, |_, _| {
            let u: f64 = rng.random::<f64>() - 0.5;
            -u.signum() * (1.0 - 2.0 * u.abs()).ln() / std::f64::consts::SQRT_2
        })
    }

    fn whiten(x: &DMatrix<f64>) -> DMatrix<f64> {
        let c = crate::linalg::center_rows(x);
        let cov = &c * c.transpose() / c.ncols() as f64;
        crate::linalg::inv_sqrt_spd(&cov).unwrap() * c
    }

    #[test]
    fn separates_laplace_mixture() {
        let s = laplace_sources(20_000, 1);
        let mut rng = synth::rng(2);
        let a: DMatrix<f64> = synth::random_orthogonal(2, &mut rng);
        let z = whiten(&(&a * &s));
        let out = fast_ica_extract(&z, 7).unwrap();
        for l in 0..2 {
            let truth: Vec<f64> = s.row(l).iter().copied().collect();
            let best = (0..2)
                .map(|k| correlation(&truth, &out.sources.row(k).iter().copied().collect::<Vec<_>>()).abs())
                .fold(0.0, f64::max);
            assert!(best > 0.99, "IC {l}: {best}");
        }
        for l in 0..2 {
            assert!(skewness(&out.sources.row(l).iter().copied().collect::<Vec<_>>()) >= 0.0);
        }
    }

    #[test]
    fn gaussian_input_is_unidentifiable() {
        let mut rng = synth::rng(3);
        let z = whiten(&synth::gaussian_matrix(3, 20_000, &mut rng));
        assert!(matches!(fast_ica_extract(&z, 1), Err(HintError::Convergence(_))));
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let s = laplace_sources(5_000, 4);
        let z = whiten(&s);
        let a = fast_ica_extract(&z, 11).unwrap();
        let b = fast_ica_extract(&z, 11).unwrap();
        assert_eq!(a, b);
    }
}
