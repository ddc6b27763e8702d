//! Synthetic data drawn from the hc-ICA generative model.
//!
//! Used by the test suites, the acceptance checks, and the `synth` CLI
//! subcommand that writes a demonstration dataset.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::model::{BetaMaps, HcicaData, HcicaParams, MogParams};
use crate::scalar::{lit, Real};

pub type SynthRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SynthRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal<T: Real, R: Rng + ?Sized>(rng: &mut R) -> T {
    let z: f64 = StandardNormal.sample(rng);
    lit(z)
}

pub fn gaussian_matrix<T: Real, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<T> {
    DMatrix::from_fn(rows, cols, |_, _| normal(rng))
}

/// Haar-distributed orthogonal matrix via QR with sign correction.
pub fn random_orthogonal<T: Real, R: Rng + ?Sized>(q: usize, rng: &mut R) -> DMatrix<T> {
    let g: DMatrix<T> = gaussian_matrix(q, q, rng);
    let qr = g.qr();
    let mut qm = qr.q();
    let r = qr.r();
    for k in 0..q {
        if r[(k, k)] < T::zero() {
            let mut col = qm.column_mut(k);
            col.neg_mut();
        }
    }
    qm
}

/// Random but valid parameter set (for property tests of the EM machinery).
pub fn random_params<T: Real, R: Rng + ?Sized>(
    n: usize,
    q: usize,
    m: usize,
    p: usize,
    v: usize,
    rng: &mut R,
) -> HcicaParams<T> {
    let mixing = (0..n).map(|_| random_orthogonal(q, rng)).collect();
    let noise_variance = lit(0.1 + 0.4 * rng.random::<f64>());
    let subject_variance = DVector::from_fn(q, |_, _| lit(0.1 + 0.4 * rng.random::<f64>()));
    let mut weights = DMatrix::from_fn(q, m, |_, _| lit::<T>(0.2 + rng.random::<f64>()));
    for l in 0..q {
        let s = weights.row(l).sum();
        for j in 0..m {
            weights[(l, j)] /= s;
        }
    }
    let means = DMatrix::from_fn(q, m, |_, j| lit::<T>(j as f64 * 1.5 + 0.5 * (rng.random::<f64>() - 0.5)));
    let variances = DMatrix::from_fn(q, m, |_, _| lit::<T>(0.2 + 0.8 * rng.random::<f64>()));
    let beta = BetaMaps::from_matrix(p, q, gaussian_matrix::<T, _>(p * q, v, rng) * lit::<T>(0.5))
        .expect("consistent beta shape");
    HcicaParams {
        mixing,
        noise_variance,
        subject_variance,
        mog: MogParams {
            weights,
            means,
            variances,
        },
        beta,
    }
}

/// Draws observations from the model under `params` with design `x`.
/// Returns the data and the true `(s₀, {s_i})`.
pub fn sample_from_params<T: Real, R: Rng + ?Sized>(
    params: &HcicaParams<T>,
    x: &DMatrix<T>,
    rng: &mut R,
) -> (HcicaData<T>, DMatrix<T>, Vec<DMatrix<T>>) {
    let n = params.n_subjects();
    let q = params.n_ics();
    let v = params.n_voxels();
    let m = params.n_components();
    let mut s0 = DMatrix::zeros(q, v);
    for vv in 0..v {
        for l in 0..q {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut j = m - 1;
            for jj in 0..m {
                acc += crate::scalar::to_f64(params.mog.weights[(l, jj)]);
                if u < acc {
                    j = jj;
                    break;
                }
            }
            s0[(l, vv)] = params.mog.means[(l, j)] + params.mog.variances[(l, j)].sqrt() * normal::<T, _>(rng);
        }
    }
    let mut sources = Vec::with_capacity(n);
    let mut subjects = Vec::with_capacity(n);
    for i in 0..n {
        let mut si = DMatrix::zeros(q, v);
        for vv in 0..v {
            let b = params.beta.voxel(vv);
            for l in 0..q {
                let mut shift = T::zero();
                for k in 0..params.n_covariates() {
                    shift += b[(k, l)] * x[(i, k)];
                }
                si[(l, vv)] = s0[(l, vv)] + shift + params.subject_variance[l].sqrt() * normal::<T, _>(rng);
            }
        }
        let noise: DMatrix<T> = gaussian_matrix::<T, _>(q, v, rng) * params.noise_variance.sqrt();
        subjects.push(&params.mixing[i] * &si + noise);
        sources.push(si);
    }
    let data = HcicaData::new(subjects, x.clone()).expect("consistent synthetic data");
    (data, s0, sources)
}

/// Settings for a synthetic study with a group indicator and a continuous
/// covariate.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub n_subjects: usize,
    pub n_ics: usize,
    pub n_voxels: usize,
    /// Time points for raw (unwhitened) data.
    pub n_timepoints: usize,
    /// Fraction of voxels in each IC's active component.
    pub active_fraction: f64,
    pub active_mean: f64,
    pub active_sd: f64,
    pub background_sd: f64,
    /// Effect of the group indicator (applied on part of the active voxels).
    pub group_effect: f64,
    /// Effect of the continuous covariate.
    pub score_effect: f64,
    pub subject_sd: f64,
    pub noise_sd: f64,
    /// Noise added to raw `T × V` data.
    pub raw_noise_sd: f64,
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            n_subjects: 20,
            n_ics: 3,
            n_voxels: 2000,
            n_timepoints: 40,
            active_fraction: 0.1,
            active_mean: 2.5,
            active_sd: 0.6,
            background_sd: 0.3,
            group_effect: 1.0,
            score_effect: 0.5,
            subject_sd: 0.2,
            noise_sd: 0.3,
            raw_noise_sd: 0.3,
            seed: 1,
        }
    }
}

/// Ground truth plus observations of a synthetic study.
#[derive(Debug, Clone)]
pub struct SyntheticStudy {
    /// `N × 2` design: group indicator, standardized score.
    pub design: DMatrix<f64>,
    pub s0: DMatrix<f64>,
    pub beta: BetaMaps<f64>,
    pub sources: Vec<DMatrix<f64>>,
    /// Orthogonal mixing of the whitened-space model data.
    pub mixing: Vec<DMatrix<f64>>,
    /// `q × V` data following the whitened model directly.
    pub whitened: Vec<DMatrix<f64>>,
    /// `T × V` data: random time courses times sources plus noise.
    pub raw: Vec<DMatrix<f64>>,
    /// Voxels carrying a nonzero group effect, per IC.
    pub group_active: Vec<Vec<bool>>,
}

impl SyntheticStudy {
    pub fn generate(cfg: &StudyConfig) -> Self {
        let mut rng = rng(cfg.seed);
        let (n, q, v, t) = (cfg.n_subjects, cfg.n_ics, cfg.n_voxels, cfg.n_timepoints);
        let design = DMatrix::from_fn(n, 2, |i, k| if k == 0 { (i % 2) as f64 } else { 0.0 });
        let mut design = design;
        for i in 0..n {
            design[(i, 1)] = normal::<f64, _>(&mut rng);
        }
        let mut s0 = DMatrix::zeros(q, v);
        let mut beta = BetaMaps::zeros(2, q, v);
        let mut group_active = vec![vec![false; v]; q];
        for l in 0..q {
            for vv in 0..v {
                let active = rng.random::<f64>() < cfg.active_fraction;
                s0[(l, vv)] = if active {
                    cfg.active_mean + cfg.active_sd * normal::<f64, _>(&mut rng)
                } else {
                    cfg.background_sd * normal::<f64, _>(&mut rng)
                };
                if active && rng.random::<f64>() < 0.6 {
                    beta.set(vv, 0, l, cfg.group_effect);
                    group_active[l][vv] = cfg.group_effect != 0.0;
                }
                if rng.random::<f64>() < 0.2 {
                    beta.set(vv, 1, l, cfg.score_effect);
                }
            }
        }
        let mut sources = Vec::with_capacity(n);
        let mut mixing = Vec::with_capacity(n);
        let mut whitened = Vec::with_capacity(n);
        let mut raw = Vec::with_capacity(n);
        for i in 0..n {
            let mut si = s0.clone();
            for vv in 0..v {
                for l in 0..q {
                    let shift = beta.get(vv, 0, l) * design[(i, 0)] + beta.get(vv, 1, l) * design[(i, 1)];
                    si[(l, vv)] += shift + cfg.subject_sd * normal::<f64, _>(&mut rng);
                }
            }
            let a: DMatrix<f64> = random_orthogonal(q, &mut rng);
            let e: DMatrix<f64> = gaussian_matrix::<f64, _>(q, v, &mut rng) * cfg.noise_sd;
            whitened.push(&a * &si + e);
            mixing.push(a);
            let tc: DMatrix<f64> = gaussian_matrix(t, q, &mut rng);
            let noise: DMatrix<f64> = gaussian_matrix::<f64, _>(t, v, &mut rng) * cfg.raw_noise_sd;
            raw.push(tc * &si + noise);
            sources.push(si);
        }
        SyntheticStudy {
            design,
            s0,
            beta,
            sources,
            mixing,
            whitened,
            raw,
            group_active,
        }
    }

    pub fn whitened_data(&self) -> HcicaData<f64> {
        HcicaData::new(self.whitened.clone(), self.design.clone()).expect("consistent study")
    }
}

/// Best IC permutation and signs aligning `estimate` rows to `truth` rows by
/// absolute correlation (exhaustive over permutations; small `q` only).
/// Returns, for each true IC, `(estimated index, sign, |corr|)`.
pub fn align_components(truth: &DMatrix<f64>, estimate: &DMatrix<f64>) -> Vec<(usize, f64, f64)> {
    let q = truth.nrows();
    let corr = DMatrix::from_fn(q, q, |a, b| {
        let ta: Vec<f64> = truth.row(a).iter().copied().collect();
        let eb: Vec<f64> = estimate.row(b).iter().copied().collect();
        crate::linalg::correlation(&ta, &eb)
    });
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut perm: Vec<usize> = (0..q).collect();
    permute(&mut perm, 0, &mut |p| {
        let score: f64 = (0..q).map(|a| corr[(a, p[a])].abs()).sum();
        if best.as_ref().map(|b| score > b.0).unwrap_or(true) {
            best = Some((score, p.to_vec()));
        }
    });
    let perm = best.expect("at least one permutation").1;
    (0..q)
        .map(|a| {
            let c = corr[(a, perm[a])];
            (perm[a], c.signum(), c.abs())
        })
        .collect()
}

fn permute(p: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
    if k == p.len() {
        f(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, f);
        p.swap(k, i);
    }
}
