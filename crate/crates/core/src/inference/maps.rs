use serde::{Deserialize, Serialize};

use crate::em::FittedModel;
use crate::error::{HintError, Result};
use crate::ingest::MaskVolume;
use crate::scalar::{count, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapUnit {
    Intensity,
    Z,
    P,
}

impl MapUnit {
    pub fn as_str(self) -> &'static str {
        match self {
            MapUnit::Intensity => "intensity",
            MapUnit::Z => "z",
            MapUnit::P => "p",
        }
    }
}

/// One value per masked voxel for a single IC.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeMap<T: Real> {
    pub values: Vec<T>,
    pub unit: MapUnit,
    /// 0-based IC index.
    pub ic: usize,
    pub label: String,
}

impl<T: Real> VolumeMap<T> {
    pub fn new(values: Vec<T>, unit: MapUnit, ic: usize, label: impl Into<String>) -> Self {
        VolumeMap {
            values,
            unit,
            ic,
            label: label.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Smallest and largest value; `(0, 0)` for an empty map.
    pub fn range(&self) -> (T, T) {
        let mut it = self.values.iter().copied();
        let Some(first) = it.next() else {
            return (T::zero(), T::zero());
        };
        it.fold((first, first), |(lo, hi), x| (lo.min(x), hi.max(x)))
    }
}

/// `ŝ₀(v) + β̂(v)ᵀx*` per IC.
pub fn subpopulation_map<T: Real>(fitted: &FittedModel<T>, x_star: &[T]) -> Result<Vec<VolumeMap<T>>> {
    let p = fitted.n_covariates();
    if x_star.len() != p {
        return Err(HintError::Dimension(format!(
            "covariate setting has {} entries, the model has {p} covariates",
            x_star.len()
        )));
    }
    let (q, v) = (fitted.n_ics(), fitted.n_voxels());
    let beta = &fitted.params.beta;
    let label = format!(
        "subpop[{}]",
        x_star.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",")
    );
    Ok((0..q)
        .map(|l| {
            let values = (0..v)
                .map(|vv| {
                    x_star
                        .iter()
                        .enumerate()
                        .fold(fitted.s0_mean[(l, vv)], |s, (k, &x)| s + beta.get(vv, k, l) * x)
                })
                .collect();
            VolumeMap::new(values, MapUnit::Intensity, l, label.clone())
        })
        .collect())
}

/// Posterior-mean population maps ŝ₀.
pub fn s0_maps<T: Real>(fitted: &FittedModel<T>) -> Vec<VolumeMap<T>> {
    (0..fitted.n_ics())
        .map(|l| VolumeMap::new(fitted.s0_mean.row(l).iter().copied().collect(), MapUnit::Intensity, l, "s0"))
        .collect()
}

/// Posterior-mean subject maps `E[s_i]` of subject `i`.
pub fn subject_maps<T: Real>(fitted: &FittedModel<T>, i: usize) -> Result<Vec<VolumeMap<T>>> {
    let m = fitted
        .subject_means
        .get(i)
        .ok_or_else(|| HintError::InvalidArgument(format!("subject {} out of range", i + 1)))?;
    Ok((0..m.nrows())
        .map(|l| {
            VolumeMap::new(
                m.row(l).iter().copied().collect(),
                MapUnit::Intensity,
                l,
                format!("subject{}", i + 1),
            )
        })
        .collect())
}

/// Covariate-effect maps β̂_k.
pub fn beta_maps<T: Real>(fitted: &FittedModel<T>, k: usize) -> Result<Vec<VolumeMap<T>>> {
    if k >= fitted.n_covariates() {
        return Err(HintError::InvalidArgument(format!("covariate {} out of range", k + 1)));
    }
    Ok((0..fitted.n_ics())
        .map(|l| VolumeMap::new(fitted.params.beta.map(k, l), MapUnit::Intensity, l, format!("beta{}", k + 1)))
        .collect())
}

/// Average over subjects of the posterior-mean subject maps.
pub fn population_average_map<T: Real>(fitted: &FittedModel<T>) -> Vec<VolumeMap<T>> {
    let n = count::<T>(fitted.n_subjects());
    let (q, v) = (fitted.n_ics(), fitted.n_voxels());
    (0..q)
        .map(|l| {
            let values = (0..v)
                .map(|vv| fitted.subject_means.iter().fold(T::zero(), |s, m| s + m[(l, vv)]) / n)
                .collect();
            VolumeMap::new(values, MapUnit::Intensity, l, "population")
        })
        .collect()
}

/// Standardizes a map over the mask with the sample standard deviation.
pub fn zscore_map<T: Real>(map: &VolumeMap<T>) -> Result<VolumeMap<T>> {
    if map.unit != MapUnit::Intensity {
        return Err(HintError::InvalidArgument(format!(
            "z-scoring expects an intensity map, got a {} map",
            map.unit.as_str()
        )));
    }
    let n = map.values.len();
    if n < 2 {
        return Err(HintError::InvalidArgument("z-scoring needs at least two voxels".into()));
    }
    let mean = map.values.iter().fold(T::zero(), |s, &x| s + x) / count::<T>(n);
    let ss = map.values.iter().fold(T::zero(), |s, &x| s + (x - mean) * (x - mean));
    let sd = (ss / count::<T>(n - 1)).sqrt();
    if !(sd > T::zero()) {
        return Err(HintError::Numerical(format!("map {} has zero standard deviation", map.label)));
    }
    Ok(VolumeMap::new(
        map.values.iter().map(|&x| (x - mean) / sd).collect(),
        MapUnit::Z,
        map.ic,
        map.label.clone(),
    ))
}

/// Mask of the voxels of `mask` where `|z| ≥ cutoff`.
pub fn threshold_mask<T: Real>(zmap: &VolumeMap<T>, cutoff: f64, mask: &MaskVolume) -> Result<MaskVolume> {
    if !(cutoff > 0.0) {
        return Err(HintError::InvalidArgument(format!("cutoff must be positive, got {cutoff}")));
    }
    if zmap.unit != MapUnit::Z {
        return Err(HintError::InvalidArgument("thresholding expects a z map".into()));
    }
    if zmap.values.len() != mask.count() {
        return Err(HintError::Dimension(format!(
            "map has {} voxels, mask has {}",
            zmap.values.len(),
            mask.count()
        )));
    }
    let mut flags = vec![false; mask.flags().len()];
    for (&lin, &z) in mask.voxel_indices().iter().zip(&zmap.values) {
        flags[lin] = crate::scalar::to_f64(z).abs() >= cutoff;
    }
    MaskVolume::from_flags(mask.dims(), flags, mask.header().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::NiftiHeader;
    use crate::synth;

    fn map(values: Vec<f64>) -> VolumeMap<f64> {
        VolumeMap::new(values, MapUnit::Intensity, 0, "test")
    }

    #[test]
    fn zscore_definition_and_affine_invariance() {
        let mut rng = synth::rng(1);
        let x: Vec<f64> = (0..500).map(|_| synth::normal(&mut rng)).collect();
        let z = zscore_map(&map(x.clone())).unwrap();
        let n = z.values.len() as f64;
        let mean = z.values.iter().sum::<f64>() / n;
        let sd = (z.values.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 1e-12 && (sd - 1.0).abs() < 1e-12);
        let za = zscore_map(&map(x.iter().map(|a| 3.5 * a - 2.0).collect())).unwrap();
        for (a, b) in z.values.iter().zip(&za.values) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(z.unit, MapUnit::Z);
    }

    #[test]
    fn constant_map_has_no_zscore() {
        assert!(matches!(zscore_map(&map(vec![1.0; 10])), Err(HintError::Numerical(_))));
    }

    #[test]
    fn thresholds_are_nested() {
        let dims = [4, 3, 2];
        let mask = MaskVolume::from_flags(dims, vec![true; 24], NiftiHeader::new(&dims)).unwrap();
        let mut rng = synth::rng(2);
        let z = VolumeMap::new((0..24).map(|_| 2.0 * synth::normal::<f64, _>(&mut rng)).collect(), MapUnit::Z, 0, "z");
        let min_abs = z.values.iter().fold(f64::INFINITY, |m, a| m.min(a.abs()));
        assert_eq!(threshold_mask(&z, min_abs * 0.999, &mask).unwrap().count(), 24);
        assert!(threshold_mask(&z, 1e300, &mask).unwrap().is_empty());
        let lo = threshold_mask(&z, 1.0, &mask).unwrap();
        let hi = threshold_mask(&z, 2.0, &mask).unwrap();
        for (a, b) in lo.flags().iter().zip(hi.flags()) {
            assert!(!*b || *a);
        }
        assert!(threshold_mask(&z, 0.0, &mask).is_err());
        let at3 = threshold_mask(&z, 3.0, &mask).unwrap();
        assert_eq!(at3.count(), z.values.iter().filter(|a| a.abs() >= 3.0).count());
    }
}
