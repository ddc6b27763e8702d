//! Zip container: `manifest.json` plus one little-endian f64 blob per array.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, ZipArchive, ZipWriter};

use crate::error::{HintError, Result};

pub const FORMAT: &str = "hint-container";
pub const VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub path: String,
    pub rows: usize,
    pub cols: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub kind: String,
    /// Top-level field names, in write order.
    pub fields: Vec<String>,
    pub values: BTreeMap<String, Value>,
    pub arrays: BTreeMap<String, ArrayEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn matrix_bytes(m: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(m.len() * 8);
    for x in m.iter() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub struct ContainerWriter {
    manifest: Manifest,
    blobs: Vec<(String, Vec<u8>)>,
}

impl ContainerWriter {
    pub fn new(kind: &str) -> Self {
        ContainerWriter {
            manifest: Manifest {
                format: FORMAT.into(),
                version: VERSION,
                kind: kind.into(),
                fields: Vec::new(),
                values: BTreeMap::new(),
                arrays: BTreeMap::new(),
            },
            blobs: Vec::new(),
        }
    }

    /// Registers a top-level field name in the index.
    pub fn declare(&mut self, field: &str) {
        if !self.manifest.fields.iter().any(|f| f == field) {
            self.manifest.fields.push(field.into());
        }
    }

    pub fn value(&mut self, name: &str, v: impl Serialize) -> Result<()> {
        let json = serde_json::to_value(v).map_err(|e| HintError::Format(format!("cannot encode {name}: {e}")))?;
        self.manifest.values.insert(name.into(), json);
        Ok(())
    }

    pub fn array(&mut self, name: &str, m: &DMatrix<f64>) {
        let bytes = matrix_bytes(m);
        let path = format!("arrays/{name}.f64");
        self.manifest.arrays.insert(
            name.into(),
            ArrayEntry {
                path: path.clone(),
                rows: m.nrows(),
                cols: m.ncols(),
                sha256: sha256_hex(&bytes),
            },
        );
        self.blobs.push((path, bytes));
    }

    pub fn write(self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| HintError::io(path, e))?;
        let mut zip = ZipWriter::new(file);
        let opts = SimpleFileOptions::default()
            .compression_method(CompressionMethod::Deflated)
            .large_file(true);
        let io = |e: std::io::Error| HintError::io(path, e);
        let zerr = |e: zip::result::ZipError| HintError::Format(format!("zip error writing {}: {e}", path.display()));
        let manifest = serde_json::to_vec_pretty(&self.manifest).map_err(|e| HintError::Format(e.to_string()))?;
        zip.start_file(MANIFEST, opts).map_err(zerr)?;
        zip.write_all(&manifest).map_err(io)?;
        for (name, bytes) in &self.blobs {
            zip.start_file(name.as_str(), opts).map_err(zerr)?;
            zip.write_all(bytes).map_err(io)?;
        }
        zip.finish().map_err(zerr)?;
        Ok(())
    }
}

pub struct ContainerReader {
    pub manifest: Manifest,
    archive: ZipArchive<File>,
    display: String,
}

impl ContainerReader {
    pub fn open(path: &Path, kind: &str) -> Result<Self> {
        let display = path.display().to_string();
        let file = File::open(path).map_err(|e| HintError::io(path, e))?;
        let mut archive =
            ZipArchive::new(file).map_err(|e| HintError::Format(format!("{display} is not a container: {e}")))?;
        let mut text = String::new();
        archive
            .by_name(MANIFEST)
            .map_err(|_| HintError::Schema(format!("{display} has no {MANIFEST}")))?
            .read_to_string(&mut text)
            .map_err(|e| HintError::io(path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| HintError::Schema(format!("malformed manifest in {display}: {e}")))?;
        if manifest.format != FORMAT {
            return Err(HintError::Schema(format!("{display}: unknown format {:?}", manifest.format)));
        }
        if manifest.version != VERSION {
            return Err(HintError::Schema(format!(
                "{display}: container version {} is not supported (expected {VERSION})",
                manifest.version
            )));
        }
        if manifest.kind != kind {
            return Err(HintError::Schema(format!(
                "{display} holds a {} container, expected {kind}",
                manifest.kind
            )));
        }
        Ok(ContainerReader {
            manifest,
            archive,
            display,
        })
    }

    /// Checks that every name in `required` is indexed and warns about
    /// indexed fields outside `known`.
    pub fn check_fields(&self, required: &[&str], known: &[&str]) -> Result<()> {
        for r in required {
            if !self.manifest.fields.iter().any(|f| f == r) {
                return Err(HintError::Schema(format!("{}: required field {r} is missing", self.display)));
            }
        }
        for f in &self.manifest.fields {
            if !known.contains(&f.as_str()) {
                log::warn!("{}: ignoring unknown field {f}", self.display);
            }
        }
        Ok(())
    }

    pub fn has(&self, name: &str) -> bool {
        self.manifest.values.contains_key(name) || self.manifest.arrays.contains_key(name)
    }

    pub fn value<T: DeserializeOwned>(&self, name: &str) -> Result<T> {
        let v = self
            .manifest
            .values
            .get(name)
            .ok_or_else(|| HintError::Schema(format!("{}: field {name} is missing", self.display)))?;
        serde_json::from_value(v.clone())
            .map_err(|e| HintError::Schema(format!("{}: field {name} is malformed: {e}", self.display)))
    }

    pub fn array(&mut self, name: &str) -> Result<DMatrix<f64>> {
        let entry = self
            .manifest
            .arrays
            .get(name)
            .ok_or_else(|| HintError::Schema(format!("{}: field {name} is missing", self.display)))?
            .clone();
        let mut bytes = Vec::new();
        self.archive
            .by_name(&entry.path)
            .map_err(|_| HintError::Schema(format!("{}: blob {} is missing", self.display, entry.path)))?
            .read_to_end(&mut bytes)
            .map_err(|_| HintError::Checksum(format!("{name} (unreadable blob)")))?;
        if bytes.len() != entry.rows * entry.cols * 8 || sha256_hex(&bytes) != entry.sha256 {
            return Err(HintError::Checksum(name.into()));
        }
        let vals: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(DMatrix::from_vec(entry.rows, entry.cols, vals))
    }
}
