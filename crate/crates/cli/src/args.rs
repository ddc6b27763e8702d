use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use hint_core::ingest::CovariateKind;
use hint_core::pipeline::PipelineConfig;
use hint_core::preprocess::Centering;
use hint_core::{HintError, Result};

#[derive(Debug, Parser)]
#[command(name = "hint", version, about = "Hierarchical covariate-adjusted ICA for multi-subject fMRI")]
pub struct Cli {
    /// Worker threads for voxelwise computations.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Preprocess, initialize, fit and write the default maps.
    Run(Box<RunArgs>),
    /// Contrast test on a fitted analysis.
    Contrast {
        dir: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        lambda: Vec<f64>,
        #[arg(long, default_value = "contrast")]
        name: String,
        #[command(flatten)]
        variance: VarianceArgs,
    },
    /// Predicted maps for one covariate setting.
    Subpop {
        dir: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        x: Vec<f64>,
        #[arg(long, default_value = "Subpop")]
        name: String,
    },
    /// Rewrite the default maps of a fitted analysis.
    Export { dir: PathBuf },
    /// Continue EM from a snapshot.
    Resume {
        dir: PathBuf,
        /// Snapshot file; the latest numbered snapshot by default.
        #[arg(long)]
        snapshot: Option<PathBuf>,
        /// Total iteration cap, counting the iterations already done.
        #[arg(long)]
        maxit: Option<usize>,
    },
    /// HTTP service for the viewer.
    Serve {
        dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Continue EM from the latest snapshot while serving.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        maxit: Option<usize>,
    },
    /// Write a synthetic study (volumes, mask, covariate file).
    Synth {
        dir: PathBuf,
        #[arg(long, default_value_t = 24)]
        subjects: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
pub struct VarianceArgs {
    /// plug-in or empirical.
    #[arg(long)]
    pub variance_mode: Option<String>,
    /// hierarchical, intercept-adjusted or literal.
    #[arg(long)]
    pub variance_form: Option<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON file with any of the settings below; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub datadir: Option<PathBuf>,
    #[arg(long)]
    pub outdir: Option<PathBuf>,
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long = "N")]
    pub n: Option<usize>,
    #[arg(long = "numberOfPCs")]
    pub number_of_pcs: Option<usize>,
    #[arg(long)]
    pub maskf: Option<PathBuf>,
    #[arg(long)]
    pub covf: Option<PathBuf>,
    #[arg(long)]
    pub prefix: Option<String>,
    #[arg(long)]
    pub maxit: Option<usize>,
    #[arg(long)]
    pub epsilon1: Option<f64>,
    #[arg(long)]
    pub epsilon2: Option<f64>,
    #[arg(long)]
    pub mog_components: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// 1-based ICs to keep after the initial group ICA.
    #[arg(long, value_delimiter = ',')]
    pub keep_ics: Option<Vec<usize>>,
    /// Store a hash and path for the preprocessed data instead of the data.
    #[arg(long)]
    pub no_embed_data: bool,
    #[arg(long)]
    pub snapshot_every: Option<usize>,
    /// per-timepoint or per-voxel.
    #[arg(long)]
    pub centering: Option<String>,
    /// Treat a numeric covariate as categorical.
    #[arg(long = "categorical")]
    pub categorical: Vec<String>,
    /// Treat a covariate as continuous.
    #[arg(long = "continuous")]
    pub continuous: Vec<String>,
    /// Reference level as `covariate=level`.
    #[arg(long = "reference")]
    pub reference: Vec<String>,
    /// Pairwise interaction as `a:b`.
    #[arg(long = "interaction")]
    pub interaction: Vec<String>,
    /// Leave a covariate out of the model.
    #[arg(long = "exclude")]
    pub exclude: Vec<String>,
    /// Center continuous covariates.
    #[arg(long)]
    pub center: bool,
    #[command(flatten)]
    pub variance: VarianceArgs,
}

fn split_pair(s: &str, sep: char, what: &str) -> Result<(String, String)> {
    match s.split_once(sep) {
        Some((a, b)) if !a.is_empty() && !b.is_empty() => Ok((a.into(), b.into())),
        _ => Err(HintError::InvalidArgument(format!("{what} must look like a{sep}b, got {s:?}"))),
    }
}

impl RunArgs {
    pub fn to_config(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| HintError::io(path, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| HintError::InvalidArgument(format!("config file {}: {e}", path.display())))?
            }
            None => PipelineConfig::default(),
        };
        macro_rules! take {
            ($($field:ident),*) => { $( if let Some(v) = &self.$field { c.$field = v.clone(); } )* };
        }
        take!(datadir, outdir, q, n, number_of_pcs, maskf, covf, prefix, maxit, epsilon1, epsilon2, mog_components, seed, snapshot_every);
        if let Some(keep) = &self.keep_ics {
            if keep.contains(&0) {
                return Err(HintError::InvalidArgument("--keep-ics indices start at 1".into()));
            }
            c.keep_ics = Some(keep.iter().map(|k| k - 1).collect());
        }
        if self.no_embed_data {
            c.embed_data = false;
        }
        if let Some(s) = &self.centering {
            c.centering = match s.as_str() {
                "per-timepoint" => Centering::PerTimepoint,
                "per-voxel" => Centering::PerVoxel,
                other => return Err(HintError::InvalidArgument(format!("unknown centering {other:?}"))),
            };
        }
        for name in &self.categorical {
            c.design.type_overrides.insert(name.clone(), CovariateKind::Categorical);
        }
        for name in &self.continuous {
            c.design.type_overrides.insert(name.clone(), CovariateKind::Continuous);
        }
        for r in &self.reference {
            let (k, v) = split_pair(r, '=', "--reference")?;
            c.design.reference_overrides.insert(k, v);
        }
        for i in &self.interaction {
            let (a, b) = split_pair(i, ':', "--interaction")?;
            c.design.interactions.push(vec![a, b]);
        }
        c.design.excluded.extend(self.exclude.iter().cloned());
        if self.center {
            c.design.center_continuous = true;
        }
        c.variance = super::variance(c.variance, &self.variance)?;
        Ok(c)
    }
}
