use nalgebra::DMatrix;
use rayon::prelude::*;

use super::PipelineConfig;
use crate::error::{HintError, Result};
use crate::ingest::{apply_mask, build_design_matrix, parse_covariate_table, read_mask, read_nifti_volume, DesignMatrix, MaskVolume};
use crate::init::{group_ica, initialize_params, select_ics};
use crate::model::{HcicaData, HcicaParams};
use crate::persistence::{AnalysisLayout, DataPayload, RunInfo};
use crate::preprocess::reduce_and_whiten_with;

/// Inputs to EM after preprocessing and the initial group ICA.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub layout: AnalysisLayout,
    pub run: RunInfo,
    pub data: HcicaData<f64>,
    pub mask: MaskVolume,
    pub design: DesignMatrix,
}

/// Reads the covariates, volumes and mask, whitens every subject and
/// derives starting values. Preconditions on the configuration and the
/// covariate file are checked before any volume is read.
pub fn prepare(cfg: &PipelineConfig) -> Result<Prepared> {
    cfg.validate()?;
    let covf = cfg.resolve(&cfg.covf);
    let table = parse_covariate_table(&covf)?;
    if table.n_subjects() != cfg.n {
        return Err(HintError::InvalidArgument(format!(
            "N = {} but the covariate file lists {} subjects",
            cfg.n,
            table.n_subjects()
        )));
    }
    let design = build_design_matrix(&table, &cfg.design)?;
    let maskf = cfg.resolve(&cfg.maskf);
    let mask = read_mask(&maskf)?;
    let files: Vec<_> = table.subjects.iter().map(|s| cfg.resolve(std::path::Path::new(s))).collect();

    let loaded: Vec<(DMatrix<f64>, DMatrix<f64>, usize)> = files
        .par_iter()
        .map(|f| {
            let vol = read_nifti_volume(f)?;
            let raw = apply_mask(&vol, &mask)?;
            let w = reduce_and_whiten_with(&raw, cfg.q, cfg.centering)?;
            Ok((raw, w.data, vol.n_frames()))
        })
        .collect::<Result<_>>()?;
    let time_num = loaded.iter().map(|l| l.2).collect();
    let (raw, whitened): (Vec<_>, Vec<_>) = loaded.into_iter().map(|(r, w, _)| (r, w)).unzip();

    let g = group_ica(&raw, cfg.number_of_pcs, cfg.q, cfg.seed)?;
    drop(raw);
    let params = initialize_params(&g.subject_ics, &design.x, &whitened, cfg.mog_components)?;
    let mut data = HcicaData::new(whitened, design.x.clone())?;
    let params = match &cfg.keep_ics {
        Some(keep) => {
            let red = select_ics(&params, &data, &g.subject_ics, keep)?;
            data = red.data;
            red.params
        }
        None => params,
    };

    let layout = AnalysisLayout::new(&cfg.outdir, &cfg.prefix);
    let run = run_info(cfg, &design, &data, params, &files, time_num, &mask)?;
    Ok(Prepared {
        layout,
        run,
        data,
        mask,
        design,
    })
}

pub(crate) fn stack(data: &HcicaData<f64>) -> DMatrix<f64> {
    let (n, q, v) = (data.n_subjects(), data.n_ics(), data.n_voxels());
    let mut y = DMatrix::zeros(n * q, v);
    for (i, s) in data.subjects.iter().enumerate() {
        y.rows_mut(i * q, q).copy_from(s);
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn run_info(
    cfg: &PipelineConfig,
    design: &DesignMatrix,
    data: &HcicaData<f64>,
    theta: HcicaParams<f64>,
    files: &[std::path::PathBuf],
    time_num: Vec<usize>,
    mask: &MaskVolume,
) -> Result<RunInfo> {
    let y = stack(data);
    let ytilde_star = if cfg.embed_data {
        DataPayload::Embedded(y)
    } else {
        DataPayload::external(format!("{}_YtildeStar.f64", cfg.prefix), &y)
    };
    let run = RunInfo {
        n: data.n_subjects(),
        x: design.x.clone(),
        var_names_x: design.column_names.clone(),
        var_in_model: design.included.clone(),
        interactions: design.interaction_columns(),
        interactions_base: design.interactions_base.clone(),
        ytilde_star,
        beta0_star: theta.beta.as_matrix().clone(),
        covariates: design.covariate_names.clone(),
        covfile: cfg.resolve(&cfg.covf).display().to_string(),
        is_cat: design.categorical_columns(),
        maskfl: cfg.resolve(&cfg.maskf).display().to_string(),
        niifiles: files.iter().map(|f| f.display().to_string()).collect(),
        num_pca: cfg.number_of_pcs,
        outfolder: cfg.outdir.display().to_string(),
        prefix: cfg.prefix.clone(),
        q: data.n_ics(),
        theta_star: theta,
        time_num,
        vox_size: mask.dims(),
    };
    run.validate()?;
    Ok(run)
}
