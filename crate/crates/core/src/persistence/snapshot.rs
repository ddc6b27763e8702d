use std::path::Path;

use nalgebra::DMatrix;

use super::codec::{read_fitted, read_params, write_fitted, write_params};
use super::container::{ContainerReader, ContainerWriter};
use crate::em::{EmState, FittedModel, IterationRecord, Termination};
use crate::error::{HintError, Result};
use crate::scalar::Real;

pub const SNAPSHOT_KIND: &str = "snapshot";
const FIELDS: [&str; 5] = ["iteration", "termination", "history", "params", "fitted"];

/// EM state after some iteration, with final posterior summaries when the
/// run had terminated.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot<T: Real> {
    pub state: EmState<T>,
    pub fitted: Option<FittedModel<T>>,
}

pub fn write_snapshot<T: Real>(state: &EmState<T>, fitted: Option<&FittedModel<T>>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = ContainerWriter::new(SNAPSHOT_KIND);
    for f in &FIELDS[..4] {
        w.declare(f);
    }
    w.value("iteration", state.iteration)?;
    w.value("termination", state.termination.map(|t| t.as_str()))?;
    let h = &state.history;
    let hist = DMatrix::from_fn(h.len(), 4, |r, c| match c {
        0 => h[r].iteration as f64,
        1 => h[r].delta_global,
        2 => h[r].delta_local,
        _ => h[r].log_likelihood,
    });
    w.array("history", &hist);
    write_params(&mut w, "params", &state.params)?;
    if let Some(f) = fitted {
        w.declare("fitted");
        write_fitted(&mut w, "fitted", f)?;
    }
    w.write(path.as_ref())
}

pub fn read_snapshot<T: Real>(path: impl AsRef<Path>) -> Result<Snapshot<T>> {
    let mut r = ContainerReader::open(path.as_ref(), SNAPSHOT_KIND)?;
    r.check_fields(&FIELDS[..4], &FIELDS)?;
    let termination: Option<String> = r.value("termination")?;
    let termination = match termination {
        None => None,
        Some(s) => Some(
            Termination::parse(&s).ok_or_else(|| HintError::Schema(format!("unknown termination reason {s:?}")))?,
        ),
    };
    let hist = r.array("history")?;
    if hist.ncols() != 4 && hist.nrows() > 0 {
        return Err(HintError::Schema("history must have 4 columns".into()));
    }
    let history = (0..hist.nrows())
        .map(|k| IterationRecord {
            iteration: hist[(k, 0)] as usize,
            delta_global: hist[(k, 1)],
            delta_local: hist[(k, 2)],
            log_likelihood: hist[(k, 3)],
        })
        .collect();
    let state = EmState {
        iteration: r.value("iteration")?,
        params: read_params(&mut r, "params")?,
        history,
        termination,
    };
    let fitted = if r.manifest.fields.iter().any(|f| f == "fitted") {
        Some(read_fitted(&mut r, "fitted")?)
    } else {
        None
    };
    Ok(Snapshot { state, fitted })
}
