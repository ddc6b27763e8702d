//! Small synthetic study on disk: subject volumes, a mask and a covariate
//! file with a continuous score, a treatment group and a 0/1 gender column.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{HintError, Result};
use crate::ingest::{write_nifti_volume, Datatype, NiftiHeader, Volume4D};
use crate::model::BetaMaps;
use crate::synth::{gaussian_matrix, normal, rng};

#[derive(Debug, Clone, PartialEq)]
pub struct DemoConfig {
    pub n_subjects: usize,
    pub dims: [usize; 3],
    pub n_timepoints: usize,
    pub n_ics: usize,
    /// Group effect inside half of each network.
    pub group_effect: f64,
    /// Effect per unit of score.
    pub score_effect: f64,
    pub gender_effect: f64,
    pub subject_sd: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            n_subjects: 24,
            dims: [16, 16, 8],
            n_timepoints: 40,
            n_ics: 3,
            group_effect: 1.0,
            score_effect: 0.08,
            gender_effect: 0.0,
            subject_sd: 0.2,
            noise_sd: 0.3,
            seed: 7,
        }
    }
}

/// Paths and ground truth of a written demo study. Design columns are
/// score, group (Trt = 1, reference Ctrl) and gender.
#[derive(Debug, Clone)]
pub struct DemoDataset {
    pub dir: PathBuf,
    pub mask: PathBuf,
    pub covariates: PathBuf,
    pub subjects: Vec<PathBuf>,
    pub design: DMatrix<f64>,
    pub s0: DMatrix<f64>,
    pub beta: BetaMaps<f64>,
}

fn in_mask(dims: [usize; 3], x: usize, y: usize, z: usize) -> bool {
    let c = |k: usize, d: usize| (k as f64 + 0.5) / d as f64 - 0.5;
    let (a, b, e) = (c(x, dims[0]), c(y, dims[1]), c(z, dims[2]));
    a * a + b * b + 0.5 * e * e < 0.22
}

/// Writes the study to `dir` (created if needed).
pub fn write_demo_dataset(dir: impl AsRef<Path>, cfg: &DemoConfig) -> Result<DemoDataset> {
    let dir = dir.as_ref().to_path_buf();
    std::fs::create_dir_all(&dir).map_err(|e| HintError::io(&dir, e))?;
    let [dx, dy, dz] = cfg.dims;
    let mut r = rng(cfg.seed);
    let mut flags = Vec::with_capacity(dx * dy * dz);
    let mut coords = Vec::new();
    for z in 0..dz {
        for y in 0..dy {
            for x in 0..dx {
                let f = in_mask(cfg.dims, x, y, z);
                flags.push(f);
                if f {
                    coords.push([x as f64, y as f64, z as f64]);
                }
            }
        }
    }
    let v = coords.len();
    let (n, q, t) = (cfg.n_subjects, cfg.n_ics, cfg.n_timepoints);

    // one compact network per IC, centres spread around the grid
    let mut s0 = DMatrix::zeros(q, v);
    let mut beta = BetaMaps::zeros(3, q, v);
    for l in 0..q {
        let angle = std::f64::consts::TAU * l as f64 / q as f64;
        let c = [
            (dx as f64 - 1.0) * (0.5 + 0.25 * angle.cos()),
            (dy as f64 - 1.0) * (0.5 + 0.25 * angle.sin()),
            (dz as f64 - 1.0) * 0.5,
        ];
        let radius = 1.8 + 0.3 * l as f64;
        for (k, p) in coords.iter().enumerate() {
            let d2: f64 = (0..3).map(|a| (p[a] - c[a]).powi(2)).sum();
            let bump = (-d2 / (2.0 * radius * radius)).exp();
            let active = bump > 0.3;
            s0[(l, k)] = if active { 2.5 * bump + 0.3 * normal::<f64, _>(&mut r) } else { 0.3 * normal::<f64, _>(&mut r) };
            if active {
                beta.set(k, 0, l, cfg.score_effect);
                if p[0] >= c[0] {
                    beta.set(k, 1, l, cfg.group_effect);
                }
                beta.set(k, 2, l, cfg.gender_effect);
            }
        }
    }

    let mut design = DMatrix::zeros(n, 3);
    let mut csv = String::from("subject,score,group,gender\n");
    let mut subjects = Vec::with_capacity(n);
    let header = NiftiHeader::new(&[dx, dy, dz, t]);
    for i in 0..n {
        let score = (30.0 + 5.0 * normal::<f64, _>(&mut r)).round();
        let trt = i % 2 == 0;
        let gender = ((i / 2) % 2) as f64;
        design[(i, 0)] = score;
        design[(i, 1)] = if trt { 1.0 } else { 0.0 };
        design[(i, 2)] = gender;
        let name = format!("sub{:02}.nii", i + 1);
        csv.push_str(&format!("{name},{score},{},{gender}\n", if trt { "Trt" } else { "Ctrl" }));

        let mut si = s0.clone();
        for k in 0..v {
            for l in 0..q {
                let shift: f64 = (0..3).map(|c| beta.get(k, c, l) * design[(i, c)]).sum();
                si[(l, k)] += shift + cfg.subject_sd * normal::<f64, _>(&mut r);
            }
        }
        let tc: DMatrix<f64> = gaussian_matrix(t, q, &mut r);
        let noise: DMatrix<f64> = gaussian_matrix::<f64, _>(t, v, &mut r) * cfg.noise_sd;
        let ts = tc * &si + noise;
        let mut data = vec![0.0; dx * dy * dz * t];
        let spatial = dx * dy * dz;
        let lin: Vec<usize> = flags.iter().enumerate().filter_map(|(k, &f)| f.then_some(k)).collect();
        for tt in 0..t {
            for (k, &g) in lin.iter().enumerate() {
                data[tt * spatial + g] = ts[(tt, k)];
            }
        }
        let path = dir.join(&name);
        write_nifti_volume(&Volume4D::new([dx, dy, dz, t], data, header.clone())?, &path, Datatype::Float32)?;
        subjects.push(path);
    }
    let covariates = dir.join("covariates.csv");
    std::fs::write(&covariates, csv).map_err(|e| HintError::io(&covariates, e))?;
    let mask = dir.join("mask.nii");
    let mask_data = flags.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect();
    write_nifti_volume(
        &Volume4D::new([dx, dy, dz, 1], mask_data, NiftiHeader::new(&[dx, dy, dz]))?,
        &mask,
        Datatype::Uint8,
    )?;
    Ok(DemoDataset {
        dir,
        mask,
        covariates,
        subjects,
        design,
        s0,
        beta,
    })
}
