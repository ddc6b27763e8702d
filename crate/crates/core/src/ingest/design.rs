use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{HintError, Result};
use crate::ingest::covariates::{CovariateKind, CovariateTable};

/// Model specification applied on top of a parsed covariate table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    /// Covariate name → forced type.
    #[serde(default)]
    pub type_overrides: BTreeMap<String, CovariateKind>,
    /// Categorical covariate name → reference level.
    #[serde(default)]
    pub reference_overrides: BTreeMap<String, String>,
    /// Interaction terms, each a list of covariate names (only pairs are supported).
    #[serde(default)]
    pub interactions: Vec<Vec<String>>,
    /// Covariates left out of the model.
    #[serde(default)]
    pub excluded: BTreeSet<String>,
    /// Subtract column means from continuous main-effect columns.
    #[serde(default)]
    pub center_continuous: bool,
}

/// Where a design column comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnOrigin {
    Continuous { covariate: usize },
    Indicator { covariate: usize, level: String },
    Interaction { left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    /// `N × p` coded design.
    pub x: DMatrix<f64>,
    pub column_names: Vec<String>,
    pub origins: Vec<ColumnOrigin>,
    /// Reference level per included categorical covariate (by covariate index).
    pub reference_levels: BTreeMap<usize, String>,
    /// Covariate names in table order.
    pub covariate_names: Vec<String>,
    /// Whether each covariate is part of the model.
    pub included: Vec<bool>,
    /// Interactions as pairs of covariate indices.
    pub interactions_base: Vec<[usize; 2]>,
}

impl DesignMatrix {
    pub fn n_subjects(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_columns(&self) -> usize {
        self.x.ncols()
    }

    /// Interaction columns as pairs of parent design-column indices.
    pub fn interaction_columns(&self) -> Vec<[usize; 2]> {
        self.origins
            .iter()
            .filter_map(|o| match o {
                ColumnOrigin::Interaction { left, right } => Some([*left, *right]),
                _ => None,
            })
            .collect()
    }

    /// Whether each design column derives from a categorical covariate.
    pub fn categorical_columns(&self) -> Vec<bool> {
        self.origins
            .iter()
            .map(|o| match o {
                ColumnOrigin::Continuous { .. } => false,
                ColumnOrigin::Indicator { .. } => true,
                ColumnOrigin::Interaction { left, right } => {
                    matches!(self.origins[*left], ColumnOrigin::Indicator { .. })
                        && matches!(self.origins[*right], ColumnOrigin::Indicator { .. })
                }
            })
            .collect()
    }
}

/// Reference-cell coding of the covariate table with pairwise interactions.
pub fn build_design_matrix(table: &CovariateTable, spec: &DesignSpec) -> Result<DesignMatrix> {
    let mut table = table.clone();
    for (name, kind) in &spec.type_overrides {
        table.set_kind(name, *kind)?;
    }
    let names = table.names();
    let index_of = |name: &str| -> Result<usize> {
        names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| HintError::Covariate(format!("unknown covariate '{name}'")))
    };
    for name in &spec.excluded {
        index_of(name)?;
    }
    let included: Vec<bool> = names.iter().map(|n| !spec.excluded.contains(n)).collect();

    let n = table.n_subjects();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut col_names = Vec::new();
    let mut origins = Vec::new();
    let mut reference_levels = BTreeMap::new();
    // design columns contributed by each covariate
    let mut cov_cols: Vec<Vec<usize>> = vec![Vec::new(); names.len()];

    for (name, r) in &spec.reference_overrides {
        let ci = index_of(name)?;
        let col = &table.columns[ci];
        if col.kind != CovariateKind::Categorical {
            return Err(HintError::Covariate(format!(
                "reference level given for continuous covariate '{name}'"
            )));
        }
        if !col.levels().iter().any(|l| l == r) {
            return Err(HintError::Covariate(format!(
                "reference level '{r}' not observed for covariate '{name}'"
            )));
        }
    }

    for (ci, col) in table.columns.iter().enumerate() {
        if !included[ci] {
            continue;
        }
        match col.kind {
            CovariateKind::Continuous => {
                let mut vals = col.numeric.clone().expect("continuous column is numeric");
                if spec.center_continuous {
                    let mean = vals.iter().sum::<f64>() / n as f64;
                    vals.iter_mut().for_each(|v| *v -= mean);
                }
                cov_cols[ci].push(cols.len());
                cols.push(vals);
                col_names.push(col.name.clone());
                origins.push(ColumnOrigin::Continuous { covariate: ci });
            }
            CovariateKind::Categorical => {
                let levels = col.levels();
                let reference = spec
                    .reference_overrides
                    .get(&col.name)
                    .cloned()
                    .unwrap_or_else(|| levels[0].clone());
                let ref_idx = levels.iter().position(|l| *l == reference).expect("validated");
                let row_levels: Vec<usize> = (0..n).map(|i| col.level_of(i, &levels)).collect();
                for (li, level) in levels.iter().enumerate() {
                    if li == ref_idx {
                        continue;
                    }
                    cov_cols[ci].push(cols.len());
                    cols.push(row_levels.iter().map(|&l| if l == li { 1.0 } else { 0.0 }).collect());
                    col_names.push(format!("{}_{}", col.name, level));
                    origins.push(ColumnOrigin::Indicator {
                        covariate: ci,
                        level: level.clone(),
                    });
                }
                reference_levels.insert(ci, reference);
            }
        }
    }

    let mut interactions_base = Vec::new();
    for term in &spec.interactions {
        if term.len() != 2 {
            return Err(HintError::Covariate(format!(
                "only pairwise interactions are supported, got {} terms in {:?}",
                term.len(),
                term
            )));
        }
        let a = index_of(&term[0])?;
        let b = index_of(&term[1])?;
        if a == b {
            return Err(HintError::Covariate(format!("interaction of '{}' with itself", term[0])));
        }
        for &k in &[a, b] {
            if !included[k] {
                return Err(HintError::Covariate(format!(
                    "interaction uses excluded covariate '{}'",
                    names[k]
                )));
            }
        }
        interactions_base.push([a, b]);
        for &ca in &cov_cols[a].clone() {
            for &cb in &cov_cols[b].clone() {
                let prod: Vec<f64> = cols[ca].iter().zip(&cols[cb]).map(|(x, y)| x * y).collect();
                col_names.push(format!("{}:{}", col_names[ca], col_names[cb]));
                origins.push(ColumnOrigin::Interaction { left: ca, right: cb });
                cols.push(prod);
            }
        }
    }

    if cols.is_empty() {
        return Err(HintError::Covariate(
            "design has no columns; at least one covariate is required".into(),
        ));
    }
    for (k, c) in cols.iter().enumerate() {
        if c.iter().all(|&v| v == 0.0) {
            return Err(HintError::Covariate(format!(
                "design column '{}' is identically zero",
                col_names[k]
            )));
        }
    }
    let p = cols.len();
    let x = DMatrix::from_fn(n, p, |i, k| cols[k][i]);
    Ok(DesignMatrix {
        x,
        column_names: col_names,
        origins,
        reference_levels,
        covariate_names: names,
        included,
        interactions_base,
    })
}
