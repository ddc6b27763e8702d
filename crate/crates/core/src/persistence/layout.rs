use std::path::{Path, PathBuf};

use crate::error::{HintError, Result};

/// Files of one analysis under `<outdir>/<prefix>/`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnalysisLayout {
    pub root: PathBuf,
    pub prefix: String,
}

impl AnalysisLayout {
    pub fn new(outdir: impl AsRef<Path>, prefix: &str) -> Self {
        AnalysisLayout {
            root: outdir.as_ref().join(prefix),
            prefix: prefix.into(),
        }
    }

    /// Opens an existing analysis folder; the prefix is the folder name.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let root = dir.as_ref().to_path_buf();
        let prefix = root
            .file_name()
            .and_then(|s| s.to_str())
            .ok_or_else(|| HintError::InvalidArgument(format!("bad analysis directory {}", root.display())))?
            .to_string();
        let layout = AnalysisLayout { root, prefix };
        if !layout.runinfo().is_file() {
            return Err(HintError::InvalidArgument(format!(
                "{} is not an analysis directory (no {})",
                layout.root.display(),
                layout.runinfo().display()
            )));
        }
        Ok(layout)
    }

    pub fn create(&self) -> Result<()> {
        std::fs::create_dir_all(self.snapshot_dir()).map_err(|e| HintError::io(&self.root, e))?;
        std::fs::create_dir_all(self.map_dir()).map_err(|e| HintError::io(&self.root, e))
    }

    pub fn runinfo(&self) -> PathBuf {
        self.root.join(format!("{}_runinfo.hint", self.prefix))
    }

    pub fn snapshot_dir(&self) -> PathBuf {
        self.root.join("snapshots")
    }

    pub fn snapshot(&self, iteration: usize) -> PathBuf {
        self.snapshot_dir().join(format!("iter_{iteration:05}.hint"))
    }

    /// Snapshot of the last completed iteration with final posteriors.
    pub fn final_snapshot(&self) -> PathBuf {
        self.root.join(format!("{}_final.hint", self.prefix))
    }

    pub fn map_dir(&self) -> PathBuf {
        self.root.join("maps")
    }

    pub fn map(&self, kind: &str, ic: usize) -> PathBuf {
        self.map_dir().join(super::map_file_name(&self.prefix, kind, ic))
    }

    /// Numbered snapshots on disk, ascending.
    pub fn snapshots(&self) -> Result<Vec<(usize, PathBuf)>> {
        let dir = self.snapshot_dir();
        let mut out = Vec::new();
        let entries = match std::fs::read_dir(&dir) {
            Ok(e) => e,
            Err(_) => return Ok(out),
        };
        for e in entries {
            let e = e.map_err(|err| HintError::io(&dir, err))?;
            let name = e.file_name().to_string_lossy().to_string();
            if let Some(k) = name
                .strip_prefix("iter_")
                .and_then(|s| s.strip_suffix(".hint"))
                .and_then(|s| s.parse().ok())
            {
                out.push((k, e.path()));
            }
        }
        out.sort();
        Ok(out)
    }
}
