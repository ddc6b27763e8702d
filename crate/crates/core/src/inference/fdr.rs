use crate::error::{HintError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FdrResult {
    pub rejected: Vec<bool>,
    pub adjusted: Vec<f64>,
}

/// Benjamini–Hochberg step-up at level `alpha`.
pub fn bh_fdr(pvals: &[f64], alpha: f64) -> Result<FdrResult> {
    let m = pvals.len();
    if m == 0 {
        return Err(HintError::InvalidArgument("no p-values".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(HintError::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if let Some(bad) = pvals.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(HintError::InvalidArgument(format!("p-value {bad} outside [0, 1]")));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0_f64;
    for rank in (0..m).rev() {
        let i = order[rank];
        running = running.min(pvals[i] * m as f64 / (rank + 1) as f64);
        adjusted[i] = running;
    }
    let rejected = adjusted.iter().map(|&a| a <= alpha).collect();
    Ok(FdrResult { rejected, adjusted })
}
