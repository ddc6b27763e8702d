use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HintError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateKind {
    Continuous,
    Categorical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateColumn {
    pub name: String,
    pub kind: CovariateKind,
    /// Raw cell text, one per subject row.
    pub cells: Vec<String>,
    /// Parsed values when every cell is numeric.
    pub numeric: Option<Vec<f64>>,
}

impl CovariateColumn {
    /// Distinct observed levels. Numeric columns sort numerically, text
    /// columns lexicographically; the first level is the default reference.
    pub fn levels(&self) -> Vec<String> {
        match &self.numeric {
            Some(vals) => {
                let mut pairs: Vec<(f64, &String)> = vals.iter().copied().zip(&self.cells).collect();
                pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                let mut out: Vec<String> = Vec::new();
                let mut last: Option<f64> = None;
                for (v, s) in pairs {
                    if last != Some(v) {
                        out.push(s.clone());
                        last = Some(v);
                    }
                }
                out
            }
            None => {
                let mut lv: Vec<String> = self.cells.to_vec();
                lv.sort();
                lv.dedup();
                lv
            }
        }
    }

    /// Level label of row `i` (numeric cells are canonicalised by value).
    pub(crate) fn level_of(&self, i: usize, levels: &[String]) -> usize {
        match &self.numeric {
            Some(vals) => levels
                .iter()
                .position(|l| l.trim().parse::<f64>().ok() == Some(vals[i]))
                .expect("row level observed"),
            None => levels.iter().position(|l| *l == self.cells[i]).expect("row level observed"),
        }
    }
}

/// Parsed covariate file: subject filenames plus typed covariate columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateTable {
    pub subjects: Vec<String>,
    pub columns: Vec<CovariateColumn>,
}

impl CovariateTable {
    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn column(&self, name: &str) -> Option<&CovariateColumn> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    /// Changes the type of a covariate. Turning a text column continuous is
    /// an error; categorical columns need at least two observed levels.
    pub fn set_kind(&mut self, name: &str, kind: CovariateKind) -> Result<()> {
        let col = self
            .columns
            .iter_mut()
            .find(|c| c.name == name)
            .ok_or_else(|| HintError::Covariate(format!("unknown covariate '{name}'")))?;
        if kind == CovariateKind::Continuous && col.numeric.is_none() {
            return Err(HintError::Covariate(format!(
                "covariate '{name}' has non-numeric values and cannot be continuous"
            )));
        }
        if kind == CovariateKind::Categorical && col.levels().len() < 2 {
            return Err(HintError::Covariate(format!(
                "categorical covariate '{name}' has fewer than two levels"
            )));
        }
        col.kind = kind;
        Ok(())
    }

    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut records = rdr.records();
        let header = match records.next() {
            Some(r) => r.map_err(csv_err)?,
            None => {
                return Err(HintError::Parse {
                    row: 1,
                    column: 1,
                    message: "missing header row".into(),
                })
            }
        };
        if header.get(0) != Some("subject") {
            return Err(HintError::Parse {
                row: 1,
                column: 1,
                message: format!(
                    "first header must be \"subject\", found {:?}",
                    header.get(0).unwrap_or("")
                ),
            });
        }
        let width = header.len();
        let names: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
        let mut seen_names = HashSet::new();
        for (k, n) in names.iter().enumerate() {
            if n.is_empty() || !seen_names.insert(n.clone()) {
                return Err(HintError::Parse {
                    row: 1,
                    column: k + 2,
                    message: format!("empty or duplicated covariate name {n:?}"),
                });
            }
        }
        let mut subjects = Vec::new();
        let mut cells: Vec<Vec<String>> = vec![Vec::new(); names.len()];
        let mut seen = HashSet::new();
        for (r, rec) in records.enumerate() {
            let row = r + 2;
            let rec = rec.map_err(csv_err)?;
            if rec.len() == 1 && rec.get(0) == Some("") {
                continue;
            }
            if rec.len() != width {
                return Err(HintError::Parse {
                    row,
                    column: rec.len().min(width) + 1,
                    message: format!("expected {width} fields, found {}", rec.len()),
                });
            }
            for (c, cell) in rec.iter().enumerate() {
                if cell.is_empty() {
                    return Err(HintError::Parse {
                        row,
                        column: c + 1,
                        message: "empty cell".into(),
                    });
                }
            }
            let subj = rec[0].to_owned();
            if !seen.insert(subj.clone()) {
                return Err(HintError::Parse {
                    row,
                    column: 1,
                    message: format!("duplicated subject filename {subj:?}"),
                });
            }
            subjects.push(subj);
            for (k, col) in cells.iter_mut().enumerate() {
                col.push(rec[k + 1].to_owned());
            }
        }
        let mut columns = Vec::with_capacity(names.len());
        for (name, cells) in names.into_iter().zip(cells) {
            let parsed: Option<Vec<f64>> = cells
                .iter()
                .map(|c| c.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect();
            let kind = if parsed.is_some() {
                CovariateKind::Continuous
            } else {
                CovariateKind::Categorical
            };
            let col = CovariateColumn {
                name,
                kind,
                cells,
                numeric: parsed,
            };
            if kind == CovariateKind::Categorical && col.levels().len() < 2 {
                return Err(HintError::Covariate(format!(
                    "categorical covariate '{}' has fewer than two levels",
                    col.name
                )));
            }
            columns.push(col);
        }
        Ok(CovariateTable { subjects, columns })
    }
}

fn csv_err(e: csv::Error) -> HintError {
    let (row, column) = e
        .position()
        .map(|p| (p.line() as usize, 0))
        .unwrap_or((0, 0));
    HintError::Parse {
        row,
        column,
        message: e.to_string(),
    }
}

/// Parses a covariate CSV file. The first header must be `subject`.
pub fn parse_covariate_table(path: impl AsRef<Path>) -> Result<CovariateTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| HintError::io(path, e))?;
    CovariateTable::from_reader(file)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE1: &str = "subject,Score,Group,Gender\n\
        subj1.nii,28,Trt,1\n\
        subj2.nii,36,Trt,1\n\
        subj3.nii,45,Ctrl,0\n\
        subj4.nii,30,Trt,0\n\
        subj5.nii,42,Ctrl,0\n";

    #[test]
    fn example_table_types() {
        let t = CovariateTable::from_reader(TABLE1.as_bytes()).unwrap();
        assert_eq!(t.n_subjects(), 5);
        assert_eq!(t.names(), vec!["Score", "Group", "Gender"]);
        assert_eq!(t.column("Score").unwrap().kind, CovariateKind::Continuous);
        let g = t.column("Group").unwrap();
        assert_eq!(g.kind, CovariateKind::Categorical);
        assert_eq!(g.levels(), vec!["Ctrl", "Trt"]);
        assert_eq!(t.column("Gender").unwrap().kind, CovariateKind::Continuous);
    }

    #[test]
    fn subject_only_file() {
        let t = CovariateTable::from_reader("subject\na.nii\nb.nii\n".as_bytes()).unwrap();
        assert!(t.columns.is_empty());
        assert_eq!(t.n_subjects(), 2);
    }

    #[test]
    fn numeric_column_retyped_categorical() {
        let mut t = CovariateTable::from_reader(TABLE1.as_bytes()).unwrap();
        t.set_kind("Gender", CovariateKind::Categorical).unwrap();
        let g = t.column("Gender").unwrap();
        assert_eq!(g.kind, CovariateKind::Categorical);
        assert_eq!(g.levels(), vec!["0", "1"]);
        assert!(t.set_kind("Group", CovariateKind::Continuous).is_err());
    }

    #[test]
    fn missing_subject_header() {
        let err = CovariateTable::from_reader("id,Score\na,1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, HintError::Parse { row: 1, column: 1, .. }));
    }

    #[test]
    fn ragged_and_empty_cells() {
        let err = CovariateTable::from_reader("subject,A,B\na,1,2\nb,1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, HintError::Parse { row: 3, .. }));
        let err = CovariateTable::from_reader("subject,A,B\na,1,2\nb,,3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, HintError::Parse { row: 3, column: 2, .. }));
    }

    #[test]
    fn duplicated_subject() {
        let err = CovariateTable::from_reader("subject,A\na,1\na,2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, HintError::Parse { row: 3, column: 1, .. }));
    }

    #[test]
    fn single_level_text_column_rejected() {
        let err = CovariateTable::from_reader("subject,G\na,x\nb,x\n".as_bytes()).unwrap_err();
        assert!(matches!(err, HintError::Covariate(_)));
    }
}
