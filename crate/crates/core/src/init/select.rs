use nalgebra::{DMatrix, SVD};

use crate::error::{HintError, Result};
use crate::linalg::procrustes_rotation;
use crate::model::{HcicaData, HcicaParams, MogParams};
use crate::scalar::Real;

/// Problem restricted to a subset of ICs.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedProblem<T: Real> {
    pub data: HcicaData<T>,
    pub params: HcicaParams<T>,
    pub subject_ics: Vec<DMatrix<T>>,
    pub keep: Vec<usize>,
}

fn validate_keep(keep: &[usize], q: usize) -> Result<()> {
    if keep.is_empty() {
        return Err(HintError::InvalidArgument("at least one IC must be kept".into()));
    }
    let mut seen = vec![false; q];
    for &l in keep {
        if l >= q || seen[l] {
            return Err(HintError::InvalidArgument(format!("invalid or repeated IC index {}", l + 1)));
        }
        seen[l] = true;
    }
    Ok(())
}

/// `Y_i − A_i[:, drop] S_i[drop, :]`: whitened data with the estimated
/// contribution of the dropped ICs removed.
pub fn residual_data<T: Real>(
    whitened: &DMatrix<T>,
    mixing: &DMatrix<T>,
    subject_ics: &DMatrix<T>,
    keep: &[usize],
) -> DMatrix<T> {
    let q = mixing.ncols();
    let mut out = whitened.clone();
    for l in (0..q).filter(|l| !keep.contains(l)) {
        out -= mixing.column(l) * subject_ics.row(l);
    }
    out
}

/// Drops every IC not in `keep` (0-based indices, in the order given).
///
/// The residual data of subject `i` lie (up to noise) in the span of the
/// kept columns of `A_i`. They are expressed in the orthonormal basis of that
/// span closest to the kept coordinate axes, `B_i = A_K polar(A_Kᵀ E_K)`, so
/// keeping every IC leaves the data untouched. The new mixing matrices are
/// the Procrustes solutions of the projected data onto the kept subject maps.
pub fn select_ics<T: Real>(
    params: &HcicaParams<T>,
    data: &HcicaData<T>,
    subject_ics: &[DMatrix<T>],
    keep: &[usize],
) -> Result<ReducedProblem<T>> {
    data.check_params(params)?;
    let q = data.n_ics();
    validate_keep(keep, q)?;
    if subject_ics.len() != data.n_subjects() {
        return Err(HintError::Dimension("one subject IC map set per subject is required".into()));
    }
    let qk = keep.len();
    let mut subjects = Vec::with_capacity(data.n_subjects());
    let mut mixing = Vec::with_capacity(data.n_subjects());
    let mut kept_ics = Vec::with_capacity(data.n_subjects());
    for (i, y) in data.subjects.iter().enumerate() {
        let a = &params.mixing[i];
        let resid = residual_data(y, a, &subject_ics[i], keep);
        let a_keep = a.select_columns(keep);
        let axes = DMatrix::from_fn(q, qk, |r, c| if r == keep[c] { T::one() } else { T::zero() });
        let svd = SVD::new(a_keep.tr_mul(&axes), true, true);
        let polar = svd.u.expect("u requested") * svd.v_t.expect("v_t requested");
        let basis = &a_keep * polar;
        let projected = basis.tr_mul(&resid);
        let s_keep = subject_ics[i].select_rows(keep);
        mixing.push(procrustes_rotation(&(&projected * s_keep.transpose()))?);
        subjects.push(projected);
        kept_ics.push(s_keep);
    }
    let pick = |m: &DMatrix<T>| m.select_rows(keep);
    let params = HcicaParams {
        mixing,
        noise_variance: params.noise_variance,
        subject_variance: params.subject_variance.select_rows(keep),
        mog: MogParams {
            weights: pick(&params.mog.weights),
            means: pick(&params.mog.means),
            variances: pick(&params.mog.variances),
        },
        beta: params.beta.select_ics(keep),
    };
    Ok(ReducedProblem {
        data: HcicaData::new(subjects, data.design.clone())?,
        params,
        subject_ics: kept_ics,
        keep: keep.to_vec(),
    })
}
