//! End-to-end analysis: files on disk to fitted model and output maps.

mod analysis;
mod config;
pub mod demo;
mod setup;

pub use analysis::{resume_analysis, run_analysis, stack_maps, Analysis, AnalysisSetup, MapFamily, RunHooks};
pub use config::PipelineConfig;
pub use setup::{prepare, Prepared};

#[cfg(test)]
mod tests;
