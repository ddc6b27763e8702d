use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{HintError, Result};
use crate::ingest::nifti::{read_nifti_volume, NiftiHeader, Volume4D};

/// Boolean brain mask over a 3D grid together with the voxel → column map.
///
/// Columns follow the NIfTI linear order (x fastest). A mask built by
/// thresholding may be empty; masks used to extract data may not.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskVolume {
    dims: [usize; 3],
    flags: Vec<bool>,
    voxels: Vec<usize>,
    header: NiftiHeader,
}

impl MaskVolume {
    pub fn from_flags(dims: [usize; 3], flags: Vec<bool>, header: NiftiHeader) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(HintError::Geometry(format!("mask dims {dims:?} must be positive")));
        }
        if flags.len() != dims.iter().product::<usize>() {
            return Err(HintError::Geometry(format!(
                "mask flag count {} does not match dims {dims:?}",
                flags.len()
            )));
        }
        let voxels = flags
            .iter()
            .enumerate()
            .filter_map(|(k, &f)| f.then_some(k))
            .collect();
        Ok(MaskVolume {
            dims,
            flags,
            voxels,
            header,
        })
    }

    /// Nonzero finite voxels of the first frame are included.
    pub fn from_volume(vol: &Volume4D) -> Result<Self> {
        let flags = vol
            .frame(0)
            .iter()
            .map(|&v| v != 0.0 && v.is_finite())
            .collect();
        Self::from_flags(vol.spatial_dims(), flags, vol.header().clone())
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn header(&self) -> &NiftiHeader {
        &self.header
    }

    /// Number of included voxels `V`.
    pub fn count(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    /// Grid linear index of each included voxel, in column order.
    pub fn voxel_indices(&self) -> &[usize] {
        &self.voxels
    }

    /// Column of the grid voxel at `linear`, if included.
    pub fn column_of(&self, linear: usize) -> Option<usize> {
        if !self.flags.get(linear).copied().unwrap_or(false) {
            return None;
        }
        self.voxels.binary_search(&linear).ok()
    }

    pub fn linear_index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    /// Scatters `values` (length `V`) onto the full grid; excluded voxels get `fill`.
    pub fn scatter(&self, values: &[f64], fill: f64) -> Result<Vec<f64>> {
        if values.len() != self.count() {
            return Err(HintError::Geometry(format!(
                "map has {} values, mask has {} voxels",
                values.len(),
                self.count()
            )));
        }
        let mut grid = vec![fill; self.flags.len()];
        for (&lin, &v) in self.voxels.iter().zip(values) {
            grid[lin] = v;
        }
        Ok(grid)
    }

    /// As a single-frame volume with 1 for included voxels.
    pub fn to_volume(&self) -> Volume4D {
        let data = self.flags.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect();
        let d = self.dims;
        Volume4D::new([d[0], d[1], d[2], 1], data, self.header.clone()).expect("consistent dims")
    }
}

/// Reads a mask file; it must contain at least one included voxel.
pub fn read_mask(path: impl AsRef<Path>) -> Result<MaskVolume> {
    let mask = MaskVolume::from_volume(&read_nifti_volume(path)?)?;
    if mask.is_empty() {
        return Err(HintError::Geometry("mask contains no included voxels".into()));
    }
    Ok(mask)
}

/// Extracts the `T × V` data matrix: column `v` is the time series at the
/// `v`-th included voxel.
pub fn apply_mask(vol: &Volume4D, mask: &MaskVolume) -> Result<DMatrix<f64>> {
    if vol.spatial_dims() != mask.dims() {
        return Err(HintError::Geometry(format!(
            "volume spatial dims {:?} differ from mask dims {:?}",
            vol.spatial_dims(),
            mask.dims()
        )));
    }
    if mask.is_empty() {
        return Err(HintError::Geometry("mask contains no included voxels".into()));
    }
    let t = vol.n_frames();
    let cols = mask.voxel_indices();
    Ok(DMatrix::from_fn(t, cols.len(), |r, c| vol.at(cols[c], r)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn full_mask_preserves_order() {
        let vol = Volume4D::from_data([1, 1, 2, 3], (0..6).map(|v| v as f64).collect()).unwrap();
        let mask = MaskVolume::from_flags([1, 1, 2], vec![true, true], NiftiHeader::new(&[1, 1, 2])).unwrap();
        let m = apply_mask(&vol, &mask).unwrap();
        assert_eq!(m.shape(), (3, 2));
        assert_eq!(m[(0, 0)], 0.0);
        assert_eq!(m[(0, 1)], 1.0);
        assert_eq!(m[(2, 1)], 5.0);
    }

    #[test]
    fn empty_mask_rejected() {
        let vol = Volume4D::from_data([1, 1, 2, 3], vec![0.0; 6]).unwrap();
        let mask = MaskVolume::from_flags([1, 1, 2], vec![false, false], NiftiHeader::new(&[1, 1, 2])).unwrap();
        assert!(matches!(apply_mask(&vol, &mask), Err(HintError::Geometry(_))));
    }

    #[test]
    fn geometry_mismatch_rejected() {
        let vol = Volume4D::from_data([2, 1, 1, 1], vec![0.0; 2]).unwrap();
        let mask = MaskVolume::from_flags([1, 2, 1], vec![true, true], NiftiHeader::new(&[1, 2, 1])).unwrap();
        assert!(matches!(apply_mask(&vol, &mask), Err(HintError::Geometry(_))));
    }

    #[test]
    fn random_mask_matches_brute_force_gather() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut flags = vec![false; 64];
        let mut chosen = 0;
        while chosen < 20 {
            let k = rng.random_range(0..64);
            if !flags[k] {
                flags[k] = true;
                chosen += 1;
            }
        }
        let t = 5;
        let data: Vec<f64> = (0..64 * t).map(|_| rng.random::<f64>()).collect();
        let vol = Volume4D::from_data([4, 4, 4, t], data.clone()).unwrap();
        let mask = MaskVolume::from_flags([4, 4, 4], flags.clone(), NiftiHeader::new(&[4, 4, 4])).unwrap();
        assert_eq!(mask.count(), 20);
        let m = apply_mask(&vol, &mask).unwrap();
        let mut col = 0;
        for z in 0..4 {
            for y in 0..4 {
                for x in 0..4 {
                    let lin = x + 4 * (y + 4 * z);
                    if flags[lin] {
                        for tt in 0..t {
                            assert_eq!(m[(tt, col)], data[lin + 64 * tt]);
                        }
                        assert_eq!(mask.column_of(lin), Some(col));
                        col += 1;
                    } else {
                        assert_eq!(mask.column_of(lin), None);
                    }
                }
            }
        }
        assert_eq!(col, 20);
    }
}
