//! EM driver with separate global/local convergence criteria and a
//! cooperative stop flag.

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{HintError, Result};
use crate::estep::{estep_all, observed_log_likelihood, EstepMode, VoxelPosterior};
use crate::model::{HcicaData, HcicaParams};
use crate::mstep::mstep_update;
use crate::scalar::{count, to_f64, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub max_iterations: usize,
    pub eps_global: f64,
    pub eps_local: f64,
    pub estep_mode: EstepMode,
    /// Snapshot every `n` iterations (0 disables periodic snapshots; the
    /// initial and final states are always offered to the snapshot hook).
    pub snapshot_every: usize,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iterations: 100,
            eps_global: 1e-3,
            eps_local: 1e-3,
            estep_mode: EstepMode::Factorized,
            snapshot_every: 10,
            seed: 0,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(HintError::InvalidArgument("max_iterations must be at least 1".into()));
        }
        if !(self.eps_global > 0.0) || !(self.eps_local > 0.0) {
            return Err(HintError::InvalidArgument("convergence thresholds must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    MaxIterations,
    UserStop,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxIterations => "max-iterations",
            Termination::UserStop => "user-stop",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "converged" => Some(Termination::Converged),
            "max-iterations" => Some(Termination::MaxIterations),
            "user-stop" => Some(Termination::UserStop),
            _ => None,
        }
    }
}

/// One completed iteration. `log_likelihood` is the observed-data
/// log-likelihood of the parameters that entered the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub delta_global: f64,
    pub delta_local: f64,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmState<T: Real> {
    /// Number of completed iterations.
    pub iteration: usize,
    pub params: HcicaParams<T>,
    pub history: Vec<IterationRecord>,
    pub termination: Option<Termination>,
}

impl<T: Real> EmState<T> {
    pub fn new(params: HcicaParams<T>) -> Self {
        EmState {
            iteration: 0,
            params,
            history: Vec::new(),
            termination: None,
        }
    }
}

/// Posterior summaries at the final parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel<T: Real> {
    pub params: HcicaParams<T>,
    pub design: DMatrix<T>,
    /// `q × V` posterior means and variances of s₀.
    pub s0_mean: DMatrix<T>,
    pub s0_var: DMatrix<T>,
    /// `(q·m) × V` posterior MoG state probabilities, row `ℓ·m + j`.
    pub state_prob: DMatrix<T>,
    /// `N` matrices of `q × V` posterior means of `s_i`.
    pub subject_means: Vec<DMatrix<T>>,
    /// Per-voxel sample covariance of `A_iᵀy_i − E[s₀] − β̂ᵀx_i` over subjects,
    /// column-major `q × q` blocks stacked as a `q² × V` matrix. Absent when
    /// `N ≤ p + 1`.
    pub residual_cov: Option<DMatrix<T>>,
    pub log_likelihood: T,
}

impl<T: Real> FittedModel<T> {
    pub fn from_posteriors(data: &HcicaData<T>, params: &HcicaParams<T>, posteriors: &[VoxelPosterior<T>]) -> Self {
        let (n, q, p, v) = (data.n_subjects(), data.n_ics(), data.n_covariates(), data.n_voxels());
        let s0_mean = DMatrix::from_fn(q, v, |l, vv| posteriors[vv].s0_mean[l]);
        let s0_var = DMatrix::from_fn(q, v, |l, vv| posteriors[vv].s0_var[l]);
        let m = params.n_components();
        let state_prob = DMatrix::from_fn(q * m, v, |r, vv| posteriors[vv].state_prob[(r / m, r % m)]);
        let subject_means = (0..n)
            .map(|i| DMatrix::from_fn(q, v, |l, vv| posteriors[vv].subject_mean[(l, i)]))
            .collect();
        let rotated: Vec<DMatrix<T>> = (0..n).map(|i| params.mixing[i].tr_mul(&data.subjects[i])).collect();
        let mut residual_cov = None;
        if n > p + 1 {
            let mut cov = DMatrix::zeros(q * q, v);
            let df = count::<T>(n - p - 1);
            for vv in 0..v {
                let shift = &data.design * params.beta.voxel(vv);
                let r = DMatrix::from_fn(q, n, |l, i| rotated[i][(l, vv)] - s0_mean[(l, vv)] - shift[(i, l)]);
                let mean = r.column_mean();
                let mut c = DMatrix::zeros(q, q);
                for i in 0..n {
                    let d = r.column(i) - &mean;
                    c += &d * d.transpose();
                }
                c /= df;
                cov.column_mut(vv).copy_from_slice(c.as_slice());
            }
            residual_cov = Some(cov);
        }
        FittedModel {
            params: params.clone(),
            design: data.design.clone(),
            s0_mean,
            s0_var,
            state_prob,
            subject_means,
            residual_cov,
            log_likelihood: observed_log_likelihood(posteriors),
        }
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_means.len()
    }

    pub fn n_ics(&self) -> usize {
        self.s0_mean.nrows()
    }

    pub fn n_voxels(&self) -> usize {
        self.s0_mean.ncols()
    }

    pub fn n_covariates(&self) -> usize {
        self.design.ncols()
    }

    /// Prior precision of s₀ℓ(v) averaged over the posterior MoG states,
    /// `Σ_j p(z = j | y) / σ²_ℓj`.
    pub fn s0_prior_precision(&self, l: usize, v: usize) -> T {
        let mog = &self.params.mog;
        let m = mog.n_components();
        (0..m).fold(T::zero(), |s, j| s + self.state_prob[(l * m + j, v)] / mog.variances[(l, j)])
    }

    /// Empirical residual covariance at voxel `v`, if available.
    pub fn residual_cov_at(&self, v: usize) -> Option<DMatrix<T>> {
        let q = self.n_ics();
        let cov = self.residual_cov.as_ref()?;
        Some(DMatrix::from_column_slice(q, q, cov.column(v).as_slice()))
    }
}

/// Per-iteration progress record delivered to observers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProgressEvent {
    pub iteration: usize,
    pub delta_global: f64,
    pub delta_local: f64,
    pub log_likelihood: f64,
    pub elapsed_secs: f64,
}

/// Observer channels for a run. All are optional.
#[derive(Default)]
pub struct EmHooks<'a, T: Real> {
    pub progress: Option<&'a mut dyn FnMut(&ProgressEvent)>,
    pub stop: Option<&'a AtomicBool>,
    /// Receives the state at iteration 0, on cadence, and at termination.
    pub snapshot: Option<&'a mut dyn FnMut(&EmState<T>, Option<&FittedModel<T>>) -> Result<()>>,
}

#[derive(Debug, Clone)]
pub struct EmOutcome<T: Real> {
    pub state: EmState<T>,
    pub fitted: FittedModel<T>,
}

/// Relative change `(Δ_G, Δ_L)` between two parameter sets: Frobenius norm of
/// the difference over the norm of `prev`, per block. A zero denominator
/// falls back to the absolute change.
pub fn convergence_metrics<T: Real>(prev: &HcicaParams<T>, next: &HcicaParams<T>) -> Result<(f64, f64)> {
    let a = prev.global_vector();
    let b = next.global_vector();
    if a.len() != b.len() || prev.beta.as_matrix().shape() != next.beta.as_matrix().shape() {
        return Err(HintError::Dimension("parameter sets differ in shape".into()));
    }
    let global = relative_change(a.iter().map(|&x| to_f64(x)), b.iter().map(|&x| to_f64(x)), "global");
    let local = relative_change(
        prev.beta.as_matrix().iter().map(|&x| to_f64(x)),
        next.beta.as_matrix().iter().map(|&x| to_f64(x)),
        "local",
    );
    Ok((global, local))
}

fn relative_change(a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>, block: &str) -> f64 {
    let (mut diff, mut base) = (0.0, 0.0);
    for (x, y) in a.zip(b) {
        diff += (y - x) * (y - x);
        base += x * x;
    }
    if base == 0.0 {
        log::debug!("{block} parameter block has zero norm; using absolute change");
        diff.sqrt()
    } else {
        (diff / base).sqrt()
    }
}

/// Runs EM from `init`.
pub fn em_run<T: Real>(
    data: &HcicaData<T>,
    init: HcicaParams<T>,
    config: &EmConfig,
    hooks: EmHooks<'_, T>,
) -> Result<EmOutcome<T>> {
    em_continue(data, EmState::new(init), config, hooks)
}

/// Continues EM from a saved state. Starting from the state an unbroken run
/// had after `k` iterations reproduces that run bit for bit.
pub fn em_continue<T: Real>(
    data: &HcicaData<T>,
    mut state: EmState<T>,
    config: &EmConfig,
    mut hooks: EmHooks<'_, T>,
) -> Result<EmOutcome<T>> {
    config.validate()?;
    data.check_params(&state.params)?;
    state.params.validate(crate::scalar::lit::<T>(1e-8).max(T::default_epsilon() * crate::scalar::lit(100.0)))?;
    state.termination = None;
    if state.iteration == 0 {
        if let Some(snap) = hooks.snapshot.as_mut() {
            snap(&state, None)?;
        }
    }
    let start = Instant::now();
    let wrap = |iteration: usize| move |e: HintError| HintError::Em { iteration, source: Box::new(e) };

    while state.iteration < config.max_iterations {
        let k = state.iteration + 1;
        let posteriors = estep_all(data, &state.params, config.estep_mode).map_err(wrap(k))?;
        let loglik = to_f64(observed_log_likelihood(&posteriors));
        let next = mstep_update(&posteriors, data, &state.params).map_err(wrap(k))?;
        let (dg, dl) = convergence_metrics(&state.params, &next).map_err(wrap(k))?;
        state.params = next;
        state.iteration = k;
        state.history.push(IterationRecord {
            iteration: k,
            delta_global: dg,
            delta_local: dl,
            log_likelihood: loglik,
        });
        if dg < config.eps_global && dl < config.eps_local {
            state.termination = Some(Termination::Converged);
        } else if hooks.stop.map(|s| s.load(Ordering::SeqCst)).unwrap_or(false) {
            state.termination = Some(Termination::UserStop);
        } else if k >= config.max_iterations {
            state.termination = Some(Termination::MaxIterations);
        }
        if let Some(progress) = hooks.progress.as_mut() {
            progress(&ProgressEvent {
                iteration: k,
                delta_global: dg,
                delta_local: dl,
                log_likelihood: loglik,
                elapsed_secs: start.elapsed().as_secs_f64(),
            });
        }
        if state.termination.is_some() {
            break;
        }
        if config.snapshot_every > 0 && k % config.snapshot_every == 0 {
            if let Some(snap) = hooks.snapshot.as_mut() {
                snap(&state, None)?;
            }
        }
    }
    if state.termination.is_none() {
        // resumed at or beyond the iteration cap
        state.termination = Some(Termination::MaxIterations);
    }
    let posteriors = estep_all(data, &state.params, config.estep_mode).map_err(wrap(state.iteration + 1))?;
    let fitted = FittedModel::from_posteriors(data, &state.params, &posteriors);
    if let Some(snap) = hooks.snapshot.as_mut() {
        snap(&state, Some(&fitted))?;
    }
    Ok(EmOutcome { state, fitted })
}
