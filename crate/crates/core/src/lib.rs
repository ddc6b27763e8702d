//! Hierarchical covariate-adjusted ICA for multi-subject fMRI.
//!
//! The numerical core is generic over the scalar type (`f32` or `f64`);
//! the aliases at the bottom name the double-precision instantiations used
//! by the pipeline, the CLI, and the service.

pub mod em;
pub mod error;
pub mod estep;
pub mod ingest;
pub mod inference;
pub mod init;
pub mod linalg;
pub mod model;
pub mod mstep;
pub mod objective;
pub mod persistence;
pub mod pipeline;
pub mod preprocess;
pub mod scalar;
pub mod synth;

pub use error::{ErrorClass, HintError, Result};
pub use scalar::Real;

pub type Params = model::HcicaParams<f64>;
pub type Data = model::HcicaData<f64>;
pub type Fitted = em::FittedModel<f64>;
pub type State = em::EmState<f64>;
pub type Map = inference::VolumeMap<f64>;
pub type Params32 = model::HcicaParams<f32>;
pub type Data32 = model::HcicaData<f32>;
pub type Fitted32 = em::FittedModel<f32>;
