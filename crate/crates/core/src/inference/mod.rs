//! Post-fit maps, covariate-effect tests and the dual-regression baseline.

mod contrast;
mod dual;
mod fdr;
mod maps;
mod variance;

pub use contrast::{contrast_test, two_sided_p, ContrastResult, ContrastSpec};
pub use dual::{dual_regression, DualRegressionResult};
pub use fdr::{bh_fdr, FdrResult};
pub use maps::{
    beta_maps, population_average_map, s0_maps, subject_maps, subpopulation_map, threshold_mask, zscore_map,
    MapUnit, VolumeMap,
};
pub use variance::{
    beta_covariance, design_factor, kron, BetaVariance, ResidualCovariance, VarianceForm, VarianceMode, VarianceOptions,
};
