//! Single-file NIfTI-1 (`.nii`, `.nii.gz`) reading and writing.
//!
//! Only little-endian files are supported. The 348-byte header is kept
//! verbatim so that output maps can reuse the input geometry.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{HintError, Result};

pub const HEADER_SIZE: usize = 348;
const SINGLE_FILE_OFFSET: usize = 352;

/// NIfTI datatype codes handled by the reader.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Datatype {
    Uint8,
    Int16,
    Float32,
    Float64,
}

impl Datatype {
    pub fn code(self) -> i16 {
        match self {
            Datatype::Uint8 => 2,
            Datatype::Int16 => 4,
            Datatype::Float32 => 16,
            Datatype::Float64 => 64,
        }
    }

    pub fn from_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(Datatype::Uint8),
            4 => Ok(Datatype::Int16),
            16 => Ok(Datatype::Float32),
            64 => Ok(Datatype::Float64),
            other => Err(HintError::UnsupportedDatatype(other)),
        }
    }

    pub fn bytes(self) -> usize {
        match self {
            Datatype::Uint8 => 1,
            Datatype::Int16 => 2,
            Datatype::Float32 => 4,
            Datatype::Float64 => 8,
        }
    }
}

/// Raw NIfTI-1 header with typed accessors for the fields used here.
#[derive(Clone, PartialEq, Eq)]
pub struct NiftiHeader {
    raw: [u8; HEADER_SIZE],
}

impl std::fmt::Debug for NiftiHeader {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NiftiHeader")
            .field("dim", &self.dim())
            .field("datatype", &self.datatype_code())
            .field("pixdim", &self.pixdim())
            .finish()
    }
}

impl NiftiHeader {
    /// Minimal valid header for a float32 volume with unit voxels.
    pub fn new(dims: &[usize]) -> Self {
        let mut raw = [0u8; HEADER_SIZE];
        raw[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
        raw[344..348].copy_from_slice(b"n+1\0");
        let mut h = NiftiHeader { raw };
        h.set_dims(dims);
        h.set_f32(76, 1.0);
        for k in 1..8 {
            h.set_f32(76 + 4 * k, 1.0);
        }
        h.set_datatype(Datatype::Float32);
        h.set_f32(108, SINGLE_FILE_OFFSET as f32);
        h
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_SIZE {
            return Err(HintError::Format(format!(
                "file too small for a NIfTI-1 header ({} bytes)",
                bytes.len()
            )));
        }
        let mut raw = [0u8; HEADER_SIZE];
        raw.copy_from_slice(&bytes[..HEADER_SIZE]);
        let h = NiftiHeader { raw };
        let sizeof_hdr = i32::from_le_bytes(raw[0..4].try_into().unwrap());
        if sizeof_hdr != HEADER_SIZE as i32 {
            if i32::from_be_bytes(raw[0..4].try_into().unwrap()) == HEADER_SIZE as i32 {
                return Err(HintError::Format("big-endian NIfTI files are not supported".into()));
            }
            return Err(HintError::Format(format!("bad sizeof_hdr {sizeof_hdr}")));
        }
        if &raw[344..348] != b"n+1\0" {
            return Err(HintError::Format(format!(
                "bad magic bytes {:?}; expected single-file NIfTI-1 \"n+1\\0\"",
                &raw[344..348]
            )));
        }
        Ok(h)
    }

    pub fn as_bytes(&self) -> &[u8; HEADER_SIZE] {
        &self.raw
    }

    fn i16_at(&self, off: usize) -> i16 {
        i16::from_le_bytes([self.raw[off], self.raw[off + 1]])
    }

    fn f32_at(&self, off: usize) -> f32 {
        f32::from_le_bytes(self.raw[off..off + 4].try_into().unwrap())
    }

    fn set_i16(&mut self, off: usize, v: i16) {
        self.raw[off..off + 2].copy_from_slice(&v.to_le_bytes());
    }

    fn set_f32(&mut self, off: usize, v: f32) {
        self.raw[off..off + 4].copy_from_slice(&v.to_le_bytes());
    }

    /// The raw `dim[0..8]` array.
    pub fn dim(&self) -> [i16; 8] {
        let mut d = [0i16; 8];
        for (k, v) in d.iter_mut().enumerate() {
            *v = self.i16_at(40 + 2 * k);
        }
        d
    }

    pub fn set_dims(&mut self, dims: &[usize]) {
        assert!(!dims.is_empty() && dims.len() <= 7);
        self.set_i16(40, dims.len() as i16);
        for k in 1..8 {
            let v = dims.get(k - 1).copied().unwrap_or(1);
            self.set_i16(40 + 2 * k, v as i16);
        }
    }

    pub fn datatype_code(&self) -> i16 {
        self.i16_at(70)
    }

    pub fn set_datatype(&mut self, dt: Datatype) {
        self.set_i16(70, dt.code());
        self.set_i16(72, (dt.bytes() * 8) as i16);
    }

    pub fn pixdim(&self) -> [f32; 8] {
        let mut p = [0f32; 8];
        for (k, v) in p.iter_mut().enumerate() {
            *v = self.f32_at(76 + 4 * k);
        }
        p
    }

    pub fn vox_offset(&self) -> f32 {
        self.f32_at(108)
    }

    pub fn scl_slope(&self) -> f32 {
        self.f32_at(112)
    }

    pub fn scl_inter(&self) -> f32 {
        self.f32_at(116)
    }

    pub fn set_scaling(&mut self, slope: f32, inter: f32) {
        self.set_f32(112, slope);
        self.set_f32(116, inter);
    }

    /// Voxel-to-world affine (3×4, row-major). Uses the sform when present,
    /// then the qform, then a pixdim scaling.
    pub fn affine(&self) -> [[f64; 4]; 3] {
        let sform_code = self.i16_at(254);
        let qform_code = self.i16_at(252);
        if sform_code > 0 {
            let mut a = [[0.0; 4]; 3];
            for (r, row) in a.iter_mut().enumerate() {
                for (c, v) in row.iter_mut().enumerate() {
                    *v = self.f32_at(280 + 16 * r + 4 * c) as f64;
                }
            }
            return a;
        }
        let pix = self.pixdim();
        if qform_code > 0 {
            let b = self.f32_at(256) as f64;
            let c = self.f32_at(260) as f64;
            let d = self.f32_at(264) as f64;
            let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
            let qfac = if pix[0] < 0.0 { -1.0 } else { 1.0 };
            let r = [
                [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
                [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
                [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - c * c - b * b],
            ];
            let scale = [pix[1] as f64, pix[2] as f64, pix[3] as f64 * qfac];
            let off = [
                self.f32_at(268) as f64,
                self.f32_at(272) as f64,
                self.f32_at(276) as f64,
            ];
            let mut out = [[0.0; 4]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    out[i][j] = r[i][j] * scale[j];
                }
                out[i][3] = off[i];
            }
            return out;
        }
        [
            [pix[1] as f64, 0.0, 0.0, 0.0],
            [0.0, pix[2] as f64, 0.0, 0.0],
            [0.0, 0.0, pix[3] as f64, 0.0],
        ]
    }

    /// Spatial and temporal extents as `(x, y, z, t)`.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        let d = self.dim();
        let ndim = d[0];
        if !(1..=7).contains(&ndim) {
            return Err(HintError::Format(format!("invalid dim[0] = {ndim}")));
        }
        let mut out = [1usize; 4];
        for k in 1..=ndim as usize {
            let v = d[k];
            if v < 1 {
                return Err(HintError::Format(format!("dim[{k}] = {v} must be positive")));
            }
            if k <= 4 {
                out[k - 1] = v as usize;
            } else if v != 1 {
                return Err(HintError::Format(format!(
                    "volumes with more than four dimensions are not supported (dim[{k}] = {v})"
                )));
            }
        }
        Ok(out)
    }
}

/// A 4D volume converted to `f64`, stored with x varying fastest, then y, z, t.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume4D {
    dims: [usize; 4],
    data: Vec<f64>,
    header: NiftiHeader,
}

impl Volume4D {
    pub fn new(dims: [usize; 4], data: Vec<f64>, header: NiftiHeader) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(HintError::Geometry(format!("dims {dims:?} must all be positive")));
        }
        let expect: usize = dims.iter().product();
        if data.len() != expect {
            return Err(HintError::Geometry(format!(
                "data length {} does not match dims {dims:?}",
                data.len()
            )));
        }
        Ok(Volume4D { dims, data, header })
    }

    /// Builds a volume with a fresh header describing `dims`.
    pub fn from_data(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let header = if dims[3] == 1 {
            NiftiHeader::new(&dims[..3])
        } else {
            NiftiHeader::new(&dims)
        };
        Self::new(dims, data, header)
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn spatial_dims(&self) -> [usize; 3] {
        [self.dims[0], self.dims[1], self.dims[2]]
    }

    pub fn n_frames(&self) -> usize {
        self.dims[3]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn header(&self) -> &NiftiHeader {
        &self.header
    }

    pub fn n_spatial(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Value at spatial linear index `voxel` and frame `t`.
    pub fn at(&self, voxel: usize, t: usize) -> f64 {
        self.data[voxel + self.n_spatial() * t]
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.n_spatial();
        &self.data[n * t..n * (t + 1)]
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut file = File::open(path).map_err(|e| HintError::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| HintError::io(path, e))?;
    if bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(&bytes[..])
            .read_to_end(&mut out)
            .map_err(|e| HintError::Format(format!("gzip decode failed: {e}")))?;
        return Ok(out);
    }
    Ok(bytes)
}

/// Parses an in-memory single-file NIfTI-1 image.
pub fn parse_nifti(bytes: &[u8]) -> Result<Volume4D> {
    let header = NiftiHeader::from_bytes(bytes)?;
    let dims = header.dims4()?;
    let dt = Datatype::from_code(header.datatype_code())?;
    let offset = header.vox_offset().max(SINGLE_FILE_OFFSET as f32) as usize;
    let n: usize = dims.iter().product();
    let need = offset + n * dt.bytes();
    if bytes.len() < need {
        return Err(HintError::Format(format!(
            "truncated voxel data: need {need} bytes, have {}",
            bytes.len()
        )));
    }
    let payload = &bytes[offset..need];
    let mut data: Vec<f64> = match dt {
        Datatype::Uint8 => payload.iter().map(|&b| b as f64).collect(),
        Datatype::Int16 => payload
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64)
            .collect(),
        Datatype::Float32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Datatype::Float64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    let slope = header.scl_slope() as f64;
    let inter = header.scl_inter() as f64;
    if slope != 0.0 && slope.is_finite() && !(slope == 1.0 && inter == 0.0) {
        for v in &mut data {
            *v = *v * slope + inter;
        }
    }
    Volume4D::new(dims, data, header)
}

/// Reads a `.nii` or `.nii.gz` file (gzip is detected from the content).
pub fn read_nifti_volume(path: impl AsRef<Path>) -> Result<Volume4D> {
    let path = path.as_ref();
    let bytes = read_all(path)?;
    parse_nifti(&bytes)
}

/// Serialises a volume with the given on-disk datatype. Geometry fields are
/// taken from the volume's header; scaling is reset to identity.
pub fn encode_nifti(vol: &Volume4D, dt: Datatype) -> Result<Vec<u8>> {
    let mut header = vol.header().clone();
    let dims = vol.dims();
    if dims[3] == 1 {
        header.set_dims(&dims[..3]);
    } else {
        header.set_dims(&dims);
    }
    header.set_datatype(dt);
    header.set_scaling(0.0, 0.0);
    header.set_f32(108, SINGLE_FILE_OFFSET as f32);
    header.raw[344..348].copy_from_slice(b"n+1\0");
    let mut out = Vec::with_capacity(SINGLE_FILE_OFFSET + vol.data().len() * dt.bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&[0u8; 4]);
    match dt {
        Datatype::Uint8 => out.extend(vol.data().iter().map(|&v| v.round().clamp(0.0, 255.0) as u8)),
        Datatype::Int16 => {
            for &v in vol.data() {
                out.extend_from_slice(&(v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16).to_le_bytes());
            }
        }
        Datatype::Float32 => {
            for &v in vol.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Datatype::Float64 => {
            for &v in vol.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Writes a volume; a path ending in `.gz` is gzip-compressed.
pub fn write_nifti_volume(vol: &Volume4D, path: impl AsRef<Path>, dt: Datatype) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_nifti(vol, dt)?;
    let file = File::create(path).map_err(|e| HintError::io(path, e))?;
    let gz = path.extension().map(|e| e == "gz").unwrap_or(false);
    let res = if gz {
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(&bytes).and_then(|_| enc.finish().map(|_| ()))
    } else {
        let mut file = file;
        file.write_all(&bytes)
    };
    res.map_err(|e| HintError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw_file(dt: Datatype, dims: &[usize], payload: &[u8], slope: f32, inter: f32) -> Vec<u8> {
        let mut h = NiftiHeader::new(dims);
        h.set_datatype(dt);
        h.set_scaling(slope, inter);
        let mut bytes = h.as_bytes().to_vec();
        bytes.extend_from_slice(&[0u8; 4]);
        bytes.extend_from_slice(payload);
        bytes
    }

    #[test]
    fn reads_float32_identity() {
        let payload: Vec<u8> = (0..24).flat_map(|v| (v as f32).to_le_bytes()).collect();
        let bytes = raw_file(Datatype::Float32, &[2, 2, 2, 3], &payload, 0.0, 0.0);
        let vol = parse_nifti(&bytes).unwrap();
        assert_eq!(vol.dims(), [2, 2, 2, 3]);
        let expect: Vec<f64> = (0..24).map(|v| v as f64).collect();
        assert_eq!(vol.data(), &expect[..]);
    }

    #[test]
    fn applies_affine_scaling() {
        let payload = 3i16.to_le_bytes();
        let bytes = raw_file(Datatype::Int16, &[1, 1, 1], &payload, 2.0, 1.0);
        let vol = parse_nifti(&bytes).unwrap();
        assert_eq!(vol.data(), &[7.0]);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = raw_file(Datatype::Float32, &[1, 1, 1], &0f32.to_le_bytes(), 0.0, 0.0);
        bytes[344..348].copy_from_slice(b"ni1\0");
        assert!(matches!(parse_nifti(&bytes), Err(HintError::Format(_))));
    }

    #[test]
    fn rejects_unsupported_datatype_with_code() {
        let mut bytes = raw_file(Datatype::Float32, &[1, 1, 1], &0f32.to_le_bytes(), 0.0, 0.0);
        bytes[70..72].copy_from_slice(&8i16.to_le_bytes());
        match parse_nifti(&bytes) {
            Err(HintError::UnsupportedDatatype(8)) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_a_format_error() {
        let bytes = raw_file(Datatype::Float64, &[2, 1, 1], &0f64.to_le_bytes(), 0.0, 0.0);
        assert!(matches!(parse_nifti(&bytes), Err(HintError::Format(_))));
    }

    #[test]
    fn float64_encoding_round_trips_exactly() {
        let data: Vec<f64> = (0..30).map(|v| (v as f64).sin() * 1e3).collect();
        let vol = Volume4D::from_data([5, 3, 1, 2], data).unwrap();
        let back = parse_nifti(&encode_nifti(&vol, Datatype::Float64).unwrap()).unwrap();
        assert_eq!(back.data(), vol.data());
        assert_eq!(back.dims(), vol.dims());
    }
}
