//! Array encodings of model types inside a container.

use nalgebra::{DMatrix, DVector};

use super::container::{ContainerReader, ContainerWriter};
use crate::em::FittedModel;
use crate::error::{HintError, Result};
use crate::model::{BetaMaps, HcicaParams, MogParams};
use crate::scalar::{lit, to_f64, Real};

pub fn to_f64_matrix<T: Real>(m: &DMatrix<T>) -> DMatrix<f64> {
    m.map(|x| to_f64(x))
}

pub fn from_f64_matrix<T: Real>(m: &DMatrix<f64>) -> DMatrix<T> {
    m.map(|x| lit(x))
}

fn scalar_matrix(x: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, x)
}

fn read_scalar(r: &mut ContainerReader, name: &str) -> Result<f64> {
    let m = r.array(name)?;
    if m.shape() != (1, 1) {
        return Err(HintError::Schema(format!("{name} must be a 1 x 1 array")));
    }
    Ok(m[(0, 0)])
}

/// Horizontal concatenation of equally sized blocks.
pub fn hstack(blocks: &[DMatrix<f64>], rows: usize, cols: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows, cols * blocks.len());
    for (i, b) in blocks.iter().enumerate() {
        out.columns_mut(i * cols, cols).copy_from(b);
    }
    out
}

pub fn hsplit(m: &DMatrix<f64>, cols: usize, name: &str) -> Result<Vec<DMatrix<f64>>> {
    if cols == 0 || m.ncols() % cols != 0 {
        return Err(HintError::Schema(format!("{name}: {} columns do not split into blocks of {cols}", m.ncols())));
    }
    Ok((0..m.ncols() / cols).map(|i| m.columns(i * cols, cols).clone_owned()).collect())
}

pub fn write_params<T: Real>(w: &mut ContainerWriter, prefix: &str, p: &HcicaParams<T>) -> Result<()> {
    let q = p.n_ics();
    let mixing: Vec<DMatrix<f64>> = p.mixing.iter().map(to_f64_matrix).collect();
    w.array(&format!("{prefix}.mixing"), &hstack(&mixing, q, q));
    w.array(&format!("{prefix}.noise_variance"), &scalar_matrix(to_f64(p.noise_variance)));
    let d: DMatrix<f64> = DMatrix::from_iterator(q, 1, p.subject_variance.iter().map(|&x| to_f64(x)));
    w.array(&format!("{prefix}.subject_variance"), &d);
    w.array(&format!("{prefix}.mog.weights"), &to_f64_matrix(&p.mog.weights));
    w.array(&format!("{prefix}.mog.means"), &to_f64_matrix(&p.mog.means));
    w.array(&format!("{prefix}.mog.variances"), &to_f64_matrix(&p.mog.variances));
    w.value(&format!("{prefix}.beta.p"), p.beta.n_covariates())?;
    w.array(&format!("{prefix}.beta"), &to_f64_matrix(p.beta.as_matrix()));
    Ok(())
}

pub fn read_params<T: Real>(r: &mut ContainerReader, prefix: &str) -> Result<HcicaParams<T>> {
    let d = r.array(&format!("{prefix}.subject_variance"))?;
    let q = d.nrows();
    let mixing = hsplit(&r.array(&format!("{prefix}.mixing"))?, q, &format!("{prefix}.mixing"))?
        .iter()
        .map(from_f64_matrix)
        .collect();
    let noise_variance = lit(read_scalar(r, &format!("{prefix}.noise_variance"))?);
    let mog = MogParams {
        weights: from_f64_matrix(&r.array(&format!("{prefix}.mog.weights"))?),
        means: from_f64_matrix(&r.array(&format!("{prefix}.mog.means"))?),
        variances: from_f64_matrix(&r.array(&format!("{prefix}.mog.variances"))?),
    };
    let p: usize = r.value(&format!("{prefix}.beta.p"))?;
    let beta = BetaMaps::from_matrix(p, q, from_f64_matrix(&r.array(&format!("{prefix}.beta"))?))
        .map_err(|e| HintError::Schema(format!("{prefix}.beta: {e}")))?;
    Ok(HcicaParams {
        mixing,
        noise_variance,
        subject_variance: DVector::from_iterator(q, d.iter().map(|&x| lit(x))),
        mog,
        beta,
    })
}

pub fn write_fitted<T: Real>(w: &mut ContainerWriter, prefix: &str, f: &FittedModel<T>) -> Result<()> {
    write_params(w, &format!("{prefix}.params"), &f.params)?;
    w.array(&format!("{prefix}.design"), &to_f64_matrix(&f.design));
    w.array(&format!("{prefix}.s0_mean"), &to_f64_matrix(&f.s0_mean));
    w.array(&format!("{prefix}.s0_var"), &to_f64_matrix(&f.s0_var));
    w.array(&format!("{prefix}.state_prob"), &to_f64_matrix(&f.state_prob));
    let (q, v) = f.s0_mean.shape();
    let subjects: Vec<DMatrix<f64>> = f.subject_means.iter().map(to_f64_matrix).collect();
    w.array(&format!("{prefix}.subject_means"), &hstack(&subjects, q, v));
    if let Some(c) = &f.residual_cov {
        w.array(&format!("{prefix}.residual_cov"), &to_f64_matrix(c));
    }
    w.array(&format!("{prefix}.log_likelihood"), &scalar_matrix(to_f64(f.log_likelihood)));
    Ok(())
}

pub fn read_fitted<T: Real>(r: &mut ContainerReader, prefix: &str) -> Result<FittedModel<T>> {
    let params = read_params(r, &format!("{prefix}.params"))?;
    let s0_mean: DMatrix<T> = from_f64_matrix(&r.array(&format!("{prefix}.s0_mean"))?);
    let v = s0_mean.ncols();
    let name = format!("{prefix}.residual_cov");
    let residual_cov = if r.has(&name) {
        Some(from_f64_matrix(&r.array(&name)?))
    } else {
        None
    };
    Ok(FittedModel {
        params,
        design: from_f64_matrix(&r.array(&format!("{prefix}.design"))?),
        s0_var: from_f64_matrix(&r.array(&format!("{prefix}.s0_var"))?),
        state_prob: from_f64_matrix(&r.array(&format!("{prefix}.state_prob"))?),
        subject_means: hsplit(&r.array(&format!("{prefix}.subject_means"))?, v, &format!("{prefix}.subject_means"))?
            .iter()
            .map(from_f64_matrix)
            .collect(),
        s0_mean,
        residual_cov,
        log_likelihood: lit(read_scalar(r, &format!("{prefix}.log_likelihood"))?),
    })
}
