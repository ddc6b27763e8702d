use crate::error::{HintError, Result};
use crate::model::MogRow;
use crate::scalar::{count, lit, log_sum_exp, Real};

/// Scalar EM stops when the mean log-likelihood per sample changes by less.
pub const MOG_TOLERANCE: f64 = 1e-8;
pub const MOG_MAX_ITERATIONS: usize = 2000;
/// Component variances are floored at this fraction of the sample variance.
pub const MOG_VARIANCE_FLOOR: f64 = 1e-6;

/// Univariate `m`-component Gaussian mixture by EM, initialised by splitting
/// the sorted sample into `m` equal-count groups. Components come back in
/// background-first order (ascending `|μ|`).
pub fn fit_scalar_mog<T: Real>(values: &[T], m: usize) -> Result<MogRow<T>> {
    if !(2..=3).contains(&m) {
        return Err(HintError::InvalidArgument(format!("MoG needs 2 or 3 components, got {m}")));
    }
    let v = values.len();
    if v <= 10 * m {
        return Err(HintError::InvalidArgument(format!(
            "MoG fit needs more than {} values, got {v}",
            10 * m
        )));
    }
    let vf = count::<T>(v);
    let mean = values.iter().fold(T::zero(), |s, &x| s + x) / vf;
    let var = values.iter().fold(T::zero(), |s, &x| s + (x - mean) * (x - mean)) / vf;
    if !(var > T::zero()) {
        return Err(HintError::Numerical(
            "sample variance is zero; the MoG variance floor would be zero".into(),
        ));
    }
    let floor = var * lit(MOG_VARIANCE_FLOOR);

    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mut row = MogRow {
        weights: vec![T::one() / count::<T>(m); m],
        means: vec![T::zero(); m],
        variances: vec![T::zero(); m],
    };
    for j in 0..m {
        let chunk = &sorted[j * v / m..(j + 1) * v / m];
        let cn = count::<T>(chunk.len());
        let mu = chunk.iter().fold(T::zero(), |s, &x| s + x) / cn;
        let s2 = chunk.iter().fold(T::zero(), |s, &x| s + (x - mu) * (x - mu)) / cn;
        row.means[j] = mu;
        row.variances[j] = s2.max(floor);
    }

    let half_log_2pi = lit::<T>(0.5) * lit::<T>(std::f64::consts::TAU).ln();
    let mut resp = vec![T::zero(); v * m];
    let mut prev = lit::<T>(f64::NEG_INFINITY);
    let mut logw = vec![T::zero(); m];
    for _ in 0..MOG_MAX_ITERATIONS {
        let mut ll = T::zero();
        for (k, &x) in values.iter().enumerate() {
            for j in 0..m {
                let d = x - row.means[j];
                logw[j] = row.weights[j].ln()
                    - half_log_2pi
                    - lit::<T>(0.5) * row.variances[j].ln()
                    - d * d / (lit::<T>(2.0) * row.variances[j]);
            }
            let lse = log_sum_exp(&logw);
            ll += lse;
            for j in 0..m {
                resp[k * m + j] = (logw[j] - lse).exp();
            }
        }
        let ll = ll / vf;
        for j in 0..m {
            let mass = (0..v).fold(T::zero(), |s, k| s + resp[k * m + j]);
            if mass <= T::zero() {
                row.weights[j] = T::zero();
                continue;
            }
            let mu = values.iter().enumerate().fold(T::zero(), |s, (k, &x)| s + resp[k * m + j] * x) / mass;
            let s2 = values
                .iter()
                .enumerate()
                .fold(T::zero(), |s, (k, &x)| s + resp[k * m + j] * (x - mu) * (x - mu))
                / mass;
            row.weights[j] = mass / vf;
            row.means[j] = mu;
            row.variances[j] = s2.max(floor);
        }
        let total = row.weights.iter().fold(T::zero(), |s, &w| s + w);
        for w in row.weights.iter_mut() {
            *w = (*w / total).max(lit(1e-12));
        }
        let total = row.weights.iter().fold(T::zero(), |s, &w| s + w);
        for w in row.weights.iter_mut() {
            *w /= total;
        }
        if (ll - prev).abs() < lit(MOG_TOLERANCE) {
            break;
        }
        prev = ll;
    }
    row.sort_background_first();
    Ok(row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use rand::Rng;

    #[test]
    fn recovers_a_sparse_mixture() {
        let mut rng = synth::rng(1);
        let x: Vec<f64> = (0..100_000)
            .map(|_| {
                let z: f64 = synth::normal(&mut rng);
                if rng.random::<f64>() < 0.9 {
                    z
                } else {
                    4.0 + z
                }
            })
            .collect();
        let row = fit_scalar_mog(&x, 2).unwrap();
        assert!((row.weights[0] - 0.9).abs() < 0.02);
        assert!((row.weights[1] - 0.1).abs() < 0.02);
        assert!(row.means[0].abs() < 0.1);
        assert!((row.means[1] - 4.0).abs() < 0.1);
    }

    #[test]
    fn constant_sample_is_rejected() {
        assert!(matches!(fit_scalar_mog(&[2.0; 50], 2), Err(HintError::Numerical(_))));
    }

    #[test]
    fn component_count_is_checked() {
        let x: Vec<f64> = (0..100).map(|k| k as f64).collect();
        assert!(matches!(fit_scalar_mog(&x, 4), Err(HintError::InvalidArgument(_))));
        assert!(matches!(fit_scalar_mog(&x[..20], 2), Err(HintError::InvalidArgument(_))));
    }

    #[test]
    fn symmetric_gaussian_still_valid() {
        let mut rng = synth::rng(2);
        let x: Vec<f64> = (0..5000).map(|_| synth::normal(&mut rng)).collect();
        for m in [2, 3] {
            let row = fit_scalar_mog(&x, m).unwrap();
            let s: f64 = row.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(row.variances.iter().all(|&v| v > 0.0));
            for w in row.means.windows(2) {
                assert!(w[0].abs() <= w[1].abs());
            }
        }
    }
}
