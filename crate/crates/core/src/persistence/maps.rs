use std::path::Path;

use crate::error::{HintError, Result};
use crate::inference::VolumeMap;
use crate::ingest::{write_nifti_volume, Datatype, MaskVolume, NiftiHeader, Volume4D};
use crate::scalar::{to_f64, Real};

/// `<prefix>_<kind>_IC<ℓ>.nii` with a 1-based IC number.
pub fn map_file_name(prefix: &str, kind: &str, ic: usize) -> String {
    format!("{prefix}_{kind}_IC{}.nii", ic + 1)
}

/// Writes a float32 volume on the mask grid with zeros outside the mask.
/// Geometry comes from `reference`, whose spatial dims must match the mask.
pub fn write_map_nifti<T: Real>(
    map: &VolumeMap<T>,
    mask: &MaskVolume,
    reference: &NiftiHeader,
    path: impl AsRef<Path>,
) -> Result<()> {
    let dims = mask.dims();
    let rd = reference.dim();
    let ref_dims: Vec<usize> = (1..=3).map(|k| rd[k].max(1) as usize).collect();
    if ref_dims != dims {
        return Err(HintError::Geometry(format!(
            "reference header dims {ref_dims:?} differ from mask dims {dims:?}"
        )));
    }
    let values: Vec<f64> = map.values.iter().map(|&x| to_f64(x)).collect();
    let data = mask.scatter(&values, 0.0)?;
    let vol = Volume4D::new([dims[0], dims[1], dims[2], 1], data, reference.clone())?;
    write_nifti_volume(&vol, path, Datatype::Float32)
}
