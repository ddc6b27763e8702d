use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::em::EmConfig;
use crate::error::{HintError, Result};
use crate::estep::EstepMode;
use crate::ingest::DesignSpec;
use crate::inference::VarianceOptions;
use crate::preprocess::Centering;

/// Everything a batch run needs. Field names follow the command-line
/// parameters; relative subject and mask paths resolve against `datadir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "camelCase")]
pub struct PipelineConfig {
    pub datadir: PathBuf,
    pub outdir: PathBuf,
    pub q: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "numberOfPCs")]
    pub number_of_pcs: usize,
    pub maskf: PathBuf,
    pub covf: PathBuf,
    pub prefix: String,
    pub maxit: usize,
    pub epsilon1: f64,
    pub epsilon2: f64,
    pub mog_components: usize,
    pub seed: u64,
    pub design: DesignSpec,
    /// 0-based ICs kept after the initial group ICA; all when absent.
    pub keep_ics: Option<Vec<usize>>,
    pub embed_data: bool,
    pub snapshot_every: usize,
    pub centering: Centering,
    pub estep_mode: EstepMode,
    pub variance: VarianceOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            datadir: PathBuf::from("."),
            outdir: PathBuf::from("."),
            q: 0,
            n: 0,
            number_of_pcs: 0,
            maskf: PathBuf::new(),
            covf: PathBuf::new(),
            prefix: "hint".into(),
            maxit: 100,
            epsilon1: 1e-3,
            epsilon2: 1e-3,
            mog_components: 2,
            seed: 1,
            design: DesignSpec::default(),
            keep_ics: None,
            embed_data: true,
            snapshot_every: 10,
            centering: Centering::default(),
            estep_mode: EstepMode::default(),
            variance: VarianceOptions::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HintError::InvalidArgument(m));
        if self.q == 0 {
            return bad("q must be positive".into());
        }
        if self.number_of_pcs < self.q {
            return bad(format!("numberOfPCs ({}) must be at least q ({})", self.number_of_pcs, self.q));
        }
        if self.n == 0 {
            return bad("N must be positive".into());
        }
        if self.prefix.is_empty() || self.prefix.contains(['/', '\\']) {
            return bad(format!("prefix {:?} must be a plain folder name", self.prefix));
        }
        if !(2..=3).contains(&self.mog_components) {
            return bad(format!("mog components must be 2 or 3, got {}", self.mog_components));
        }
        if let Some(keep) = &self.keep_ics {
            if keep.is_empty() || keep.iter().any(|&l| l >= self.q) {
                return bad("kept ICs must be a nonempty subset of 1..q".into());
            }
        }
        self.em_config().validate()
    }

    pub fn em_config(&self) -> EmConfig {
        EmConfig {
            max_iterations: self.maxit,
            eps_global: self.epsilon1,
            eps_local: self.epsilon2,
            estep_mode: self.estep_mode,
            snapshot_every: self.snapshot_every,
            seed: self.seed,
        }
    }

    pub fn resolve(&self, p: &std::path::Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.datadir.join(p)
        }
    }
}
