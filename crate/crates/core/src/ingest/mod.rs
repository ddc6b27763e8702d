//! Reading subject volumes, the brain mask, and the covariate file.

pub mod covariates;
pub mod design;
pub mod mask;
pub mod nifti;

pub use covariates::{parse_covariate_table, CovariateColumn, CovariateKind, CovariateTable};
pub use design::{build_design_matrix, ColumnOrigin, DesignMatrix, DesignSpec};
pub use mask::{apply_mask, read_mask, MaskVolume};
pub use nifti::{read_nifti_volume, write_nifti_volume, Datatype, NiftiHeader, Volume4D};
