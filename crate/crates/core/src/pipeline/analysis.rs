use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;

use nalgebra::DMatrix;

use super::setup::prepare;
use super::PipelineConfig;
use crate::em::{em_continue, EmConfig, EmHooks, EmState, FittedModel, ProgressEvent};
use crate::error::{HintError, Result};
use crate::inference::{
    beta_maps, contrast_test, population_average_map, s0_maps, subpopulation_map, ContrastResult, ContrastSpec,
    VarianceOptions, VolumeMap,
};
use crate::ingest::{read_mask, write_nifti_volume, Datatype, MaskVolume};
use crate::model::HcicaData;
use crate::persistence::{
    data_digest, read_runinfo, read_snapshot, write_map_nifti, write_runinfo, write_snapshot, AnalysisLayout,
    ContainerWriter, DataPayload, RunInfo,
};

/// Observer channels for a pipeline run.
#[derive(Default)]
pub struct RunHooks<'a> {
    pub progress: Option<&'a mut dyn FnMut(&ProgressEvent)>,
    pub stop: Option<&'a AtomicBool>,
}

/// The four map families written after every fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapFamily {
    S0,
    Beta,
    StandardError,
    Aggregate,
}

impl MapFamily {
    pub const ALL: [MapFamily; 4] = [MapFamily::S0, MapFamily::Beta, MapFamily::StandardError, MapFamily::Aggregate];

    /// File kind; `k` is the 0-based covariate for per-covariate families.
    pub fn kind(self, k: usize) -> String {
        match self {
            MapFamily::S0 => "S0".into(),
            MapFamily::Beta => format!("Beta{}", k + 1),
            MapFamily::StandardError => format!("SE{}", k + 1),
            MapFamily::Aggregate => "Aggregate".into(),
        }
    }

    pub fn per_covariate(self) -> bool {
        matches!(self, MapFamily::Beta | MapFamily::StandardError)
    }
}

/// Setup side of an analysis folder: everything but the fit.
#[derive(Debug, Clone)]
pub struct AnalysisSetup {
    pub layout: AnalysisLayout,
    pub config: PipelineConfig,
    pub run: RunInfo,
    pub mask: MaskVolume,
}

impl AnalysisSetup {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let layout = AnalysisLayout::open(dir)?;
        let config = read_config(&layout)?;
        let run = read_runinfo(layout.runinfo())?;
        let mask = read_mask(mask_path(&layout))?;
        if mask.count() != run.n_voxels() {
            return Err(HintError::Geometry(format!(
                "stored mask has {} voxels, the data have {}",
                mask.count(),
                run.n_voxels()
            )));
        }
        Ok(AnalysisSetup {
            layout,
            config,
            run,
            mask,
        })
    }

    pub fn is_fitted(&self) -> bool {
        self.layout.final_snapshot().is_file()
    }
}

/// A fitted analysis folder.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub layout: AnalysisLayout,
    pub config: PipelineConfig,
    pub run: RunInfo,
    pub mask: MaskVolume,
    pub state: EmState<f64>,
    pub fitted: FittedModel<f64>,
}

fn config_path(layout: &AnalysisLayout) -> PathBuf {
    layout.root.join(format!("{}_config.json", layout.prefix))
}

fn mask_path(layout: &AnalysisLayout) -> PathBuf {
    layout.root.join(format!("{}_mask.nii", layout.prefix))
}

fn read_config(layout: &AnalysisLayout) -> Result<PipelineConfig> {
    let path = config_path(layout);
    let text = std::fs::read_to_string(&path).map_err(|e| HintError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| HintError::Schema(format!("{}: {e}", path.display())))
}

fn write_config(layout: &AnalysisLayout, cfg: &PipelineConfig) -> Result<()> {
    let path = config_path(layout);
    let text = serde_json::to_string_pretty(cfg).map_err(|e| HintError::Format(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| HintError::io(&path, e))
}

fn f64_bytes(m: &DMatrix<f64>) -> Vec<u8> {
    m.iter().flat_map(|x| x.to_le_bytes()).collect()
}

/// Rebuilds the whitened data stored with (or next to) the setup file.
pub(crate) fn load_data(layout: &AnalysisLayout, run: &RunInfo) -> Result<HcicaData<f64>> {
    let y = match &run.ytilde_star {
        DataPayload::Embedded(m) => m.clone(),
        DataPayload::External { path, sha256, rows, cols } => {
            let full = layout.root.join(path);
            let bytes = std::fs::read(&full).map_err(|e| HintError::io(&full, e))?;
            if bytes.len() != rows * cols * 8 {
                return Err(HintError::Checksum(format!("YtildeStar ({})", full.display())));
            }
            let vals = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let m = DMatrix::from_vec(*rows, *cols, vals);
            if &data_digest(&m) != sha256 {
                return Err(HintError::Checksum(format!("YtildeStar ({})", full.display())));
            }
            m
        }
    };
    let subjects = (0..run.n).map(|i| y.rows(i * run.q, run.q).clone_owned()).collect();
    HcicaData::new(subjects, run.x.clone())
}

fn fit(
    layout: &AnalysisLayout,
    data: &HcicaData<f64>,
    state: EmState<f64>,
    cfg: &EmConfig,
    hooks: RunHooks<'_>,
) -> Result<(EmState<f64>, FittedModel<f64>)> {
    let mut snap = |s: &EmState<f64>, f: Option<&FittedModel<f64>>| -> Result<()> {
        write_snapshot(s, None, layout.snapshot(s.iteration))?;
        if let Some(f) = f {
            write_snapshot(s, Some(f), layout.final_snapshot())?;
        }
        Ok(())
    };
    let mut progress = hooks.progress;
    let em_hooks = EmHooks {
        progress: match progress.as_mut() {
            Some(p) => Some(&mut **p as &mut dyn FnMut(&ProgressEvent)),
            None => None,
        },
        stop: hooks.stop,
        snapshot: Some(&mut snap),
    };
    let out = em_continue(data, state, cfg, em_hooks)?;
    Ok((out.state, out.fitted))
}

/// Runs the whole pipeline and writes the default maps.
pub fn run_analysis(cfg: &PipelineConfig, hooks: RunHooks<'_>) -> Result<Analysis> {
    let prep = prepare(cfg)?;
    let layout = prep.layout;
    layout.create()?;
    write_config(&layout, cfg)?;
    write_nifti_volume(&prep.mask.to_volume(), mask_path(&layout), Datatype::Uint8)?;
    if let DataPayload::External { path, .. } = &prep.run.ytilde_star {
        let full = layout.root.join(path);
        let y = super::setup::stack(&prep.data);
        std::fs::write(&full, f64_bytes(&y)).map_err(|e| HintError::io(&full, e))?;
    }
    write_runinfo(&prep.run, layout.runinfo())?;
    let init = EmState::new(prep.run.theta_star.clone());
    let (state, fitted) = fit(&layout, &prep.data, init, &cfg.em_config(), hooks)?;
    let analysis = Analysis {
        layout,
        config: cfg.clone(),
        run: prep.run,
        mask: prep.mask,
        state,
        fitted,
    };
    analysis.write_default_maps()?;
    Ok(analysis)
}

/// Continues EM from a snapshot (the latest numbered one by default) up to
/// `maxit` total iterations, then rewrites the final snapshot and maps.
pub fn resume_analysis(
    dir: impl AsRef<Path>,
    from: Option<&Path>,
    maxit: Option<usize>,
    hooks: RunHooks<'_>,
) -> Result<Analysis> {
    let AnalysisSetup {
        layout,
        mut config,
        run,
        mask,
    } = AnalysisSetup::open(dir)?;
    if let Some(m) = maxit {
        config.maxit = m;
    }
    let data = load_data(&layout, &run)?;
    let snapshot = match from {
        Some(p) => p.to_path_buf(),
        None => layout
            .snapshots()?
            .pop()
            .map(|(_, p)| p)
            .ok_or_else(|| HintError::InvalidArgument(format!("no snapshots under {}", layout.root.display())))?,
    };
    let state = read_snapshot::<f64>(&snapshot)?.state;
    let (state, fitted) = fit(&layout, &data, state, &config.em_config(), hooks)?;
    write_config(&layout, &config)?;
    let analysis = Analysis {
        mask,
        layout,
        config,
        run,
        state,
        fitted,
    };
    analysis.write_default_maps()?;
    Ok(analysis)
}

impl Analysis {
    /// Loads a finished analysis folder.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let AnalysisSetup {
            layout,
            config,
            run,
            mask,
        } = AnalysisSetup::open(dir)?;
        let final_path = layout.final_snapshot();
        if !final_path.is_file() {
            return Err(HintError::InvalidArgument(format!(
                "{} has no finished fit; resume it first",
                layout.root.display()
            )));
        }
        let snap = read_snapshot::<f64>(&final_path)?;
        let fitted = snap
            .fitted
            .ok_or_else(|| HintError::Schema(format!("{} lacks posterior summaries", final_path.display())))?;
        Ok(Analysis {
            layout,
            config,
            run,
            mask,
            state: snap.state,
            fitted,
        })
    }

    pub fn data(&self) -> Result<HcicaData<f64>> {
        load_data(&self.layout, &self.run)
    }

    pub fn n_covariates(&self) -> usize {
        self.run.n_covariates()
    }

    /// Writes one NIfTI per IC under the map folder.
    pub fn write_maps(&self, maps: &[VolumeMap<f64>], kind: &str) -> Result<Vec<PathBuf>> {
        maps.iter()
            .map(|m| {
                let path = self.layout.map(kind, m.ic);
                write_map_nifti(m, &self.mask, self.mask.header(), &path)?;
                Ok(path)
            })
            .collect()
    }

    /// Maps of one default family; per-covariate families need `k`.
    pub fn family_maps(&self, family: MapFamily, k: usize) -> Result<Vec<VolumeMap<f64>>> {
        match family {
            MapFamily::S0 => Ok(s0_maps(&self.fitted)),
            MapFamily::Aggregate => Ok(population_average_map(&self.fitted)),
            MapFamily::Beta => beta_maps(&self.fitted, k),
            MapFamily::StandardError => {
                let spec = ContrastSpec::unit(self.n_covariates(), k);
                Ok(contrast_test(&self.fitted, &spec, self.config.variance)?.standard_error)
            }
        }
    }

    pub fn write_default_maps(&self) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        for family in MapFamily::ALL {
            let ks = if family.per_covariate() { self.n_covariates() } else { 1 };
            for k in 0..ks {
                out.extend(self.write_maps(&self.family_maps(family, k)?, &family.kind(k))?);
            }
        }
        Ok(out)
    }

    pub fn contrast(&self, spec: &ContrastSpec, opts: VarianceOptions) -> Result<ContrastResult<f64>> {
        contrast_test(&self.fitted, spec, opts)
    }

    /// Contrast maps as NIfTI (`<name>-Est`, `-SE`, `-Z`, `-P`) plus a
    /// container `<prefix>_<name>.hint` holding the same maps in full
    /// precision as `q × V` arrays.
    pub fn write_contrast(
        &self,
        spec: &ContrastSpec,
        opts: VarianceOptions,
    ) -> Result<(ContrastResult<f64>, Vec<PathBuf>)> {
        let res = self.contrast(spec, opts)?;
        let name = if spec.name.is_empty() { "contrast" } else { spec.name.as_str() };
        let mut paths = Vec::new();
        let mut w = ContainerWriter::new("contrast");
        w.value("lambda", &spec.lambda)?;
        w.value("name", name)?;
        w.value("varianceMode", res.mode.as_str())?;
        w.value("varianceForm", opts.form.as_str())?;
        for (suffix, maps) in [
            ("Est", &res.estimate),
            ("SE", &res.standard_error),
            ("Z", &res.z),
            ("P", &res.p),
        ] {
            paths.extend(self.write_maps(maps, &format!("{name}-{suffix}"))?);
            w.array(suffix, &stack_maps(maps));
        }
        let path = self.layout.map_dir().join(format!("{}_{name}.hint", self.layout.prefix));
        w.write(&path)?;
        paths.push(path);
        Ok((res, paths))
    }

    pub fn write_subpop(&self, x: &[f64], name: &str) -> Result<Vec<PathBuf>> {
        let maps = subpopulation_map(&self.fitted, x)?;
        self.write_maps(&maps, name)
    }
}

/// `q × V` matrix with one map per row.
pub fn stack_maps(maps: &[VolumeMap<f64>]) -> DMatrix<f64> {
    let v = maps.first().map(|m| m.len()).unwrap_or(0);
    DMatrix::from_fn(maps.len(), v, |l, k| maps[l].values[k])
}
