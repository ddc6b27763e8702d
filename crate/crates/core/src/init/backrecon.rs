use nalgebra::DMatrix;

use super::fastica::{fast_ica_extract, FastIcaResult};
use super::pca::{two_stage_pca, TwoStagePca};
use crate::error::{HintError, Result};
use crate::linalg::spd_inverse;
use crate::scalar::Real;

/// Output of the initial temporal-concatenation group ICA.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupIcaResult<T: Real> {
    /// `q × V` group maps, unit sample variance per row.
    pub s0_hat: DMatrix<T>,
    /// `q × q` group mixing (`reduced = mixing · s0_hat`).
    pub mixing: DMatrix<T>,
    /// `N` back-reconstructed `q × V` subject maps.
    pub subject_ics: Vec<DMatrix<T>>,
    /// Per-subject PCA rank used in stage one.
    pub rank: usize,
}

/// Subject maps from the group decomposition: with `M_i` the rows of
/// `G⁻ Wᵀ` belonging to subject `i`, the stage-one data satisfy
/// `Z_i ≈ M_i S`, so `S_i = (M_iᵀM_i)⁻¹ M_iᵀ Z_i`.
pub fn back_reconstruct<T: Real>(pca: &TwoStagePca<T>, ica: &FastIcaResult<T>) -> Result<Vec<DMatrix<T>>> {
    let n = pca.subject_reduced.len();
    if n == 0 || pca.stage2_pinv.nrows() != n * pca.rank() {
        return Err(HintError::InvalidArgument("reduction projections are missing or inconsistent".into()));
    }
    let wt = ica.unmixing.transpose();
    (0..n)
        .map(|i| {
            let m = pca.subject_block(i) * &wt;
            let gram = m.tr_mul(&m);
            let inv = spd_inverse(&gram).ok_or_else(|| {
                HintError::Rank(format!("back-reconstruction system of subject {} is singular", i + 1))
            })?;
            Ok(inv * m.transpose() * &pca.subject_reduced[i])
        })
        .collect()
}

/// Two-stage PCA, fastICA and back-reconstruction in one call.
pub fn group_ica<T: Real>(subjects: &[DMatrix<T>], r: usize, q: usize, seed: u64) -> Result<GroupIcaResult<T>> {
    let pca = two_stage_pca(subjects, r, q)?;
    let ica = fast_ica_extract(&pca.reduced, seed)?;
    let subject_ics = back_reconstruct(&pca, &ica)?;
    Ok(GroupIcaResult {
        mixing: ica.unmixing.transpose(),
        s0_hat: ica.sources,
        subject_ics,
        rank: r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::correlation;
    use crate::synth::{align_components, StudyConfig, SyntheticStudy};

    #[test]
    fn identical_subjects_reproduce_group_maps() {
        let study = SyntheticStudy::generate(&StudyConfig {
            n_subjects: 1,
            n_voxels: 1500,
            ..StudyConfig::default()
        });
        let subjects = vec![study.raw[0].clone(); 3];
        let g = group_ica(&subjects, 5, 3, 1).unwrap();
        for s in &g.subject_ics {
            assert!((s - &g.s0_hat).amax() < 1e-8);
        }
    }

    #[test]
    fn single_subject_matches_group_maps() {
        let study = SyntheticStudy::generate(&StudyConfig {
            n_subjects: 1,
            n_voxels: 1500,
            ..StudyConfig::default()
        });
        let g = group_ica(&study.raw, 3, 3, 2).unwrap();
        for l in 0..3 {
            let a: Vec<f64> = g.subject_ics[0].row(l).iter().copied().collect();
            let b: Vec<f64> = g.s0_hat.row(l).iter().copied().collect();
            assert!((correlation(&a, &b) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn subject_maps_follow_subject_sources() {
        let study = SyntheticStudy::generate(&StudyConfig {
            n_subjects: 8,
            n_voxels: 3000,
            ..StudyConfig::default()
        });
        let g = group_ica(&study.raw, 6, 3, 3).unwrap();
        let align = align_components(&study.s0, &g.s0_hat);
        for (i, s) in g.subject_ics.iter().enumerate() {
            for (l, &(k, _, _)) in align.iter().enumerate() {
                let truth: Vec<f64> = study.sources[i].row(l).iter().copied().collect();
                let est: Vec<f64> = s.row(k).iter().copied().collect();
                let c = correlation(&truth, &est).abs();
                assert!(c > 0.9, "subject {i} IC {l}: {c}");
            }
        }
    }
}
