use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::maps::{MapUnit, VolumeMap};
use super::variance::{BetaVariance, VarianceMode, VarianceOptions};
use crate::em::FittedModel;
use crate::error::{HintError, Result};
use crate::scalar::{lit, to_f64, Real};

/// Linear combination of the `p` covariate effects, applied to every IC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastSpec {
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub name: String,
}

impl ContrastSpec {
    pub fn new(lambda: Vec<f64>, name: impl Into<String>) -> Self {
        ContrastSpec {
            lambda,
            name: name.into(),
        }
    }

    /// Contrast selecting covariate `k` alone.
    pub fn unit(p: usize, k: usize) -> Self {
        let mut lambda = vec![0.0; p];
        lambda[k] = 1.0;
        ContrastSpec::new(lambda, format!("beta{}", k + 1))
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.lambda.len() != p {
            return Err(HintError::InvalidArgument(format!(
                "contrast has {} coefficients, the model has {p} covariates",
                self.lambda.len()
            )));
        }
        if self.lambda.iter().any(|x| !x.is_finite()) {
            return Err(HintError::InvalidArgument("contrast coefficients must be finite".into()));
        }
        if self.lambda.iter().all(|&x| x == 0.0) {
            return Err(HintError::InvalidArgument("contrast needs at least one nonzero coefficient".into()));
        }
        Ok(())
    }
}

/// Per-IC maps of a contrast test.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastResult<T: Real> {
    pub spec: ContrastSpec,
    pub estimate: Vec<VolumeMap<T>>,
    pub standard_error: Vec<VolumeMap<T>>,
    pub z: Vec<VolumeMap<T>>,
    pub p: Vec<VolumeMap<T>>,
    /// `(ic, voxel)` pairs where `λᵀVarλ ≤ 0`; reported as z = 0, p = 1.
    pub invalid: Vec<(usize, usize)>,
    /// Variance mode after any fallback.
    pub mode: VarianceMode,
}

/// Two-sided standard normal p-value.
pub fn two_sided_p(z: f64) -> f64 {
    let n = Normal::standard();
    (2.0 * n.sf(z.abs())).min(1.0)
}

/// `z(v) = λᵀvec[β̂ᵀ] / sqrt(λᵀ Var λ)` per IC, using the IC's own `p × p`
/// sub-block of the covariance of `vec[β̂(v)ᵀ]`.
pub fn contrast_test<T: Real>(
    fitted: &FittedModel<T>,
    spec: &ContrastSpec,
    opts: VarianceOptions,
) -> Result<ContrastResult<T>> {
    let p = fitted.n_covariates();
    spec.validate(p)?;
    let (q, v) = (fitted.n_ics(), fitted.n_voxels());
    let lam: Vec<T> = spec.lambda.iter().map(|&x| lit(x)).collect();
    let bv = BetaVariance::new(fitted, opts)?;
    let beta = &fitted.params.beta;
    let mut est = vec![Vec::with_capacity(v); q];
    let mut se = vec![Vec::with_capacity(v); q];
    let mut z = vec![Vec::with_capacity(v); q];
    let mut pv = vec![Vec::with_capacity(v); q];
    let mut invalid = Vec::new();
    for vv in 0..v {
        let blocks = bv.ic_blocks(vv)?;
        for (l, c) in blocks.iter().enumerate() {
            let e = (0..p).fold(T::zero(), |s, k| s + lam[k] * beta.get(vv, k, l));
            let mut var = T::zero();
            for a in 0..p {
                for b in 0..p {
                    var += lam[a] * c[(a, b)] * lam[b];
                }
            }
            est[l].push(e);
            if var > T::zero() && var.is_finite() {
                let s = var.sqrt();
                let zz = e / s;
                se[l].push(s);
                z[l].push(zz);
                pv[l].push(lit(two_sided_p(to_f64(zz))));
            } else {
                invalid.push((l, vv));
                se[l].push(T::zero());
                z[l].push(T::zero());
                pv[l].push(T::one());
            }
        }
    }
    if !invalid.is_empty() {
        log::warn!("contrast {}: non-positive variance at {} IC voxels", spec.name, invalid.len());
    }
    let wrap = |maps: Vec<Vec<T>>, unit: MapUnit, kind: &str| -> Vec<VolumeMap<T>> {
        maps.into_iter()
            .enumerate()
            .map(|(l, vals)| VolumeMap::new(vals, unit, l, format!("{}:{kind}", spec.name)))
            .collect()
    };
    Ok(ContrastResult {
        spec: spec.clone(),
        estimate: wrap(est, MapUnit::Intensity, "estimate"),
        standard_error: wrap(se, MapUnit::Intensity, "se"),
        z: wrap(z, MapUnit::Z, "z"),
        p: wrap(pv, MapUnit::P, "p"),
        invalid,
        mode: bv.mode(),
    })
}
