//! Initial group ICA and starting values for EM.

mod backrecon;
mod fastica;
mod mog;
mod params;
mod pca;
mod select;

pub use backrecon::{back_reconstruct, group_ica, GroupIcaResult};
pub use fastica::{fast_ica_extract, FastIcaResult};
pub use mog::fit_scalar_mog;
pub use params::initialize_params;
pub use pca::{two_stage_pca, TwoStagePca};
pub use select::{residual_data, select_ics, ReducedProblem};
