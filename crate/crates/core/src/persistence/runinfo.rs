use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::codec::{read_params, write_params};
use super::container::{sha256_hex, ContainerReader, ContainerWriter};
use crate::error::{HintError, Result};
use crate::model::HcicaParams;

pub const RUNINFO_KIND: &str = "runinfo";

/// Every field of the analysis setup file, in index order.
pub const RUNINFO_FIELDS: [&str; 20] = [
    "N",
    "X",
    "varNamesX",
    "varInModel",
    "interactions",
    "interactionsBase",
    "YtildeStar",
    "beta0Star",
    "covariates",
    "covfile",
    "isCat",
    "maskfl",
    "niifiles",
    "numPCA",
    "outfolder",
    "prefix",
    "q",
    "thetaStar",
    "time_num",
    "voxSize",
];

/// Where the stacked preprocessed data live.
#[derive(Debug, Clone, PartialEq)]
pub enum DataPayload {
    /// `Nq × V` matrix stored in the container.
    Embedded(DMatrix<f64>),
    /// Stored elsewhere; identified by the SHA-256 of its f64 bytes.
    External {
        path: String,
        sha256: String,
        rows: usize,
        cols: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ExternalRef {
    path: String,
    sha256: String,
    rows: usize,
    cols: usize,
}

impl DataPayload {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            DataPayload::Embedded(m) => m.shape(),
            DataPayload::External { rows, cols, .. } => (*rows, *cols),
        }
    }

    /// Reference to `m` saved at `path` (relative to the analysis folder).
    pub fn external(path: impl Into<String>, m: &DMatrix<f64>) -> Self {
        DataPayload::External {
            path: path.into(),
            sha256: data_digest(m),
            rows: m.nrows(),
            cols: m.ncols(),
        }
    }
}

/// SHA-256 of the little-endian f64 bytes of `m` in column-major order.
pub fn data_digest(m: &DMatrix<f64>) -> String {
    let mut bytes = Vec::with_capacity(m.len() * 8);
    for x in m.iter() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    sha256_hex(&bytes)
}

/// Analysis setup: data, design and starting values.
#[derive(Debug, Clone, PartialEq)]
pub struct RunInfo {
    /// Number of subjects.
    pub n: usize,
    /// `N × p` design matrix.
    pub x: DMatrix<f64>,
    pub var_names_x: Vec<String>,
    /// Per original covariate, whether it enters the model.
    pub var_in_model: Vec<bool>,
    /// Interaction pairs as design-column indices.
    pub interactions: Vec<[usize; 2]>,
    /// Interaction pairs as original-covariate indices.
    pub interactions_base: Vec<[usize; 2]>,
    /// Stacked `Nq × V` whitened data.
    pub ytilde_star: DataPayload,
    /// Initial β maps, `(p·q) × V` with row `k + p·ℓ`.
    pub beta0_star: DMatrix<f64>,
    /// Original covariate names.
    pub covariates: Vec<String>,
    pub covfile: String,
    /// Per design column, whether it codes a categorical covariate.
    pub is_cat: Vec<bool>,
    pub maskfl: String,
    pub niifiles: Vec<String>,
    pub num_pca: usize,
    pub outfolder: String,
    pub prefix: String,
    pub q: usize,
    pub theta_star: HcicaParams<f64>,
    /// Time points per subject.
    pub time_num: Vec<usize>,
    /// Mask grid dimensions.
    pub vox_size: [usize; 3],
}

impl RunInfo {
    pub fn n_covariates(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_voxels(&self) -> usize {
        self.ytilde_star.shape().1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HintError::Schema(m));
        let (n, p, q) = (self.n, self.x.ncols(), self.q);
        if self.x.nrows() != n {
            return bad(format!("X has {} rows for N = {n}", self.x.nrows()));
        }
        let (rows, v) = self.ytilde_star.shape();
        if rows != n * q {
            return bad(format!("YtildeStar has {rows} rows, expected N*q = {}", n * q));
        }
        if self.vox_size.iter().product::<usize>() < v {
            return bad(format!("voxSize {:?} holds fewer than V = {v} voxels", self.vox_size));
        }
        if self.var_names_x.len() != p || self.is_cat.len() != p {
            return bad(format!("varNamesX and isCat must have p = {p} entries"));
        }
        if self.var_in_model.len() != self.covariates.len() {
            return bad("varInModel must have one entry per covariate".into());
        }
        if self.niifiles.len() != n || self.time_num.len() != n {
            return bad(format!("niifiles and time_num must have N = {n} entries"));
        }
        if self.beta0_star.shape() != (p * q, v) {
            return bad(format!("beta0Star is {:?}, expected ({}, {v})", self.beta0_star.shape(), p * q));
        }
        if self.interactions.iter().flatten().any(|&c| c >= p)
            || self.interactions_base.iter().flatten().any(|&c| c >= self.covariates.len())
        {
            return bad("interaction index out of range".into());
        }
        let t = &self.theta_star;
        if t.n_subjects() != n || t.n_ics() != q || t.n_covariates() != p || t.n_voxels() != v {
            return bad("thetaStar dimensions disagree with the run".into());
        }
        Ok(())
    }

    /// Subject `i`'s `q × V` block of the stacked data, when embedded.
    pub fn subject_data(&self, i: usize) -> Option<DMatrix<f64>> {
        match &self.ytilde_star {
            DataPayload::Embedded(m) => Some(m.rows(i * self.q, self.q).clone_owned()),
            DataPayload::External { .. } => None,
        }
    }
}

pub fn write_runinfo(run: &RunInfo, path: impl AsRef<Path>) -> Result<()> {
    run.validate()?;
    let mut w = ContainerWriter::new(RUNINFO_KIND);
    for f in RUNINFO_FIELDS {
        w.declare(f);
    }
    w.value("N", run.n)?;
    w.array("X", &run.x);
    w.value("varNamesX", &run.var_names_x)?;
    w.value("varInModel", &run.var_in_model)?;
    w.value("interactions", &run.interactions)?;
    w.value("interactionsBase", &run.interactions_base)?;
    match &run.ytilde_star {
        DataPayload::Embedded(m) => w.array("YtildeStar", m),
        DataPayload::External {
            path,
            sha256,
            rows,
            cols,
        } => w.value(
            "YtildeStar",
            ExternalRef {
                path: path.clone(),
                sha256: sha256.clone(),
                rows: *rows,
                cols: *cols,
            },
        )?,
    }
    w.array("beta0Star", &run.beta0_star);
    w.value("covariates", &run.covariates)?;
    w.value("covfile", &run.covfile)?;
    w.value("isCat", &run.is_cat)?;
    w.value("maskfl", &run.maskfl)?;
    w.value("niifiles", &run.niifiles)?;
    w.value("numPCA", run.num_pca)?;
    w.value("outfolder", &run.outfolder)?;
    w.value("prefix", &run.prefix)?;
    w.value("q", run.q)?;
    write_params(&mut w, "thetaStar", &run.theta_star)?;
    w.value("time_num", &run.time_num)?;
    w.value("voxSize", run.vox_size)?;
    w.write(path.as_ref())
}

pub fn read_runinfo(path: impl AsRef<Path>) -> Result<RunInfo> {
    let mut r = ContainerReader::open(path.as_ref(), RUNINFO_KIND)?;
    r.check_fields(&RUNINFO_FIELDS, &RUNINFO_FIELDS)?;
    let ytilde_star = if r.manifest.arrays.contains_key("YtildeStar") {
        DataPayload::Embedded(r.array("YtildeStar")?)
    } else {
        let e: ExternalRef = r.value("YtildeStar")?;
        DataPayload::External {
            path: e.path,
            sha256: e.sha256,
            rows: e.rows,
            cols: e.cols,
        }
    };
    let run = RunInfo {
        n: r.value("N")?,
        x: r.array("X")?,
        var_names_x: r.value("varNamesX")?,
        var_in_model: r.value("varInModel")?,
        interactions: r.value("interactions")?,
        interactions_base: r.value("interactionsBase")?,
        ytilde_star,
        beta0_star: r.array("beta0Star")?,
        covariates: r.value("covariates")?,
        covfile: r.value("covfile")?,
        is_cat: r.value("isCat")?,
        maskfl: r.value("maskfl")?,
        niifiles: r.value("niifiles")?,
        num_pca: r.value("numPCA")?,
        outfolder: r.value("outfolder")?,
        prefix: r.value("prefix")?,
        q: r.value("q")?,
        theta_star: read_params(&mut r, "thetaStar")?,
        time_num: r.value("time_num")?,
        vox_size: r.value("voxSize")?,
    };
    run.validate()?;
    Ok(run)
}
