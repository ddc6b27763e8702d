use hint_core::inference::{subject_maps, MapUnit, VolumeMap};
use hint_core::pipeline::{Analysis, MapFamily};
use serde::Serialize;

use crate::error::ApiError;

/// A stored map, addressed as `s0/<ic>`, `population/<ic>`,
/// `subject/<i>/<ic>`, `beta/<k>/<ic>`, `se/<k>/<ic>` or `mask/<id>`.
/// Indices are 1-based in the textual form and 0-based here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MapRef {
    S0 { ic: usize },
    Population { ic: usize },
    Subject { subject: usize, ic: usize },
    Beta { k: usize, ic: usize },
    Se { k: usize, ic: usize },
    Mask { id: usize },
}

fn index(s: &str) -> Result<usize, ApiError> {
    match s.parse::<usize>() {
        Ok(k) if k >= 1 => Ok(k - 1),
        _ => Err(ApiError::not_found(format!("bad index {s:?} (indices start at 1)"))),
    }
}

impl MapRef {
    pub fn parse(id: &str) -> Result<Self, ApiError> {
        let parts: Vec<&str> = id.trim_matches('/').split('/').collect();
        Ok(match parts.as_slice() {
            ["s0", ic] => MapRef::S0 { ic: index(ic)? },
            ["population", ic] => MapRef::Population { ic: index(ic)? },
            ["subject", i, ic] => MapRef::Subject {
                subject: index(i)?,
                ic: index(ic)?,
            },
            ["beta", k, ic] => MapRef::Beta { k: index(k)?, ic: index(ic)? },
            ["se", k, ic] => MapRef::Se { k: index(k)?, ic: index(ic)? },
            ["mask", id] => MapRef::Mask { id: index(id)? },
            _ => return Err(ApiError::not_found(format!("unknown map {id:?}"))),
        })
    }

    pub fn ic(self) -> Option<usize> {
        match self {
            MapRef::S0 { ic }
            | MapRef::Population { ic }
            | MapRef::Subject { ic, .. }
            | MapRef::Beta { ic, .. }
            | MapRef::Se { ic, .. } => Some(ic),
            MapRef::Mask { .. } => None,
        }
    }

    pub fn key(self) -> String {
        match self {
            MapRef::S0 { ic } => format!("s0/{}", ic + 1),
            MapRef::Population { ic } => format!("population/{}", ic + 1),
            MapRef::Subject { subject, ic } => format!("subject/{}/{}", subject + 1, ic + 1),
            MapRef::Beta { k, ic } => format!("beta/{}/{}", k + 1, ic + 1),
            MapRef::Se { k, ic } => format!("se/{}/{}", k + 1, ic + 1),
            MapRef::Mask { id } => format!("mask/{}", id + 1),
        }
    }

    /// Computes the map from a fitted analysis (masks live in the session).
    pub fn compute(self, a: &Analysis) -> Result<VolumeMap<f64>, ApiError> {
        let (q, n, p) = (a.run.q, a.run.n, a.n_covariates());
        let ic = self.ic().ok_or_else(|| ApiError::not_found("masks are not model maps"))?;
        if ic >= q {
            return Err(ApiError::not_found(format!("IC {} out of range 1..={q}", ic + 1)));
        }
        let check_k = |k: usize| {
            if k >= p {
                Err(ApiError::not_found(format!("covariate {} out of range 1..={p}", k + 1)))
            } else {
                Ok(())
            }
        };
        let mut maps = match self {
            MapRef::S0 { .. } => a.family_maps(MapFamily::S0, 0)?,
            MapRef::Population { .. } => a.family_maps(MapFamily::Aggregate, 0)?,
            MapRef::Subject { subject, .. } => {
                if subject >= n {
                    return Err(ApiError::not_found(format!("subject {} out of range 1..={n}", subject + 1)));
                }
                subject_maps(&a.fitted, subject)?
            }
            MapRef::Beta { k, .. } => {
                check_k(k)?;
                a.family_maps(MapFamily::Beta, k)?
            }
            MapRef::Se { k, .. } => {
                check_k(k)?;
                a.family_maps(MapFamily::StandardError, k)?
            }
            MapRef::Mask { .. } => unreachable!("handled above"),
        };
        Ok(maps.swap_remove(ic))
    }
}

/// JSON description of a binary map payload.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Sidecar {
    /// 1-based ICs, one per concatenated map.
    pub ics: Vec<usize>,
    pub unit: &'static str,
    pub label: String,
    /// Values per map (the number of masked voxels).
    pub length: usize,
    pub dims: [usize; 3],
    /// `[min, max]` per map over the mask.
    pub ranges: Vec<[f32; 2]>,
    pub dtype: &'static str,
}

/// Float32 map values ready to send.
#[derive(Debug, Clone, PartialEq)]
pub struct MapPayload {
    pub values: Vec<f32>,
    pub sidecar: Sidecar,
}

fn range(v: &[f32]) -> [f32; 2] {
    v.iter()
        .fold([f32::INFINITY, f32::NEG_INFINITY], |[lo, hi], &x| [lo.min(x), hi.max(x)])
}

fn unit_name(u: MapUnit) -> &'static str {
    u.as_str()
}

impl MapPayload {
    /// Concatenates `maps` (all the same length) in order.
    pub fn from_maps(maps: &[VolumeMap<f64>], dims: [usize; 3]) -> Self {
        let length = maps.first().map(|m| m.len()).unwrap_or(0);
        let mut values = Vec::with_capacity(length * maps.len());
        let mut ranges = Vec::with_capacity(maps.len());
        for m in maps {
            let v: Vec<f32> = m.values.iter().map(|&x| x as f32).collect();
            ranges.push(range(&v));
            values.extend(v);
        }
        MapPayload {
            values,
            sidecar: Sidecar {
                ics: maps.iter().map(|m| m.ic + 1).collect(),
                unit: maps.first().map(|m| unit_name(m.unit)).unwrap_or("intensity"),
                label: maps.first().map(|m| m.label.clone()).unwrap_or_default(),
                length,
                dims,
                ranges,
                dtype: "float32-le",
            },
        }
    }

    pub fn bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|x| x.to_le_bytes()).collect()
    }
}
