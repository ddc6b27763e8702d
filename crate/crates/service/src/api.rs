use std::convert::Infallible;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use hint_core::inference::{
    contrast_test, subpopulation_map, threshold_mask, zscore_map, ContrastSpec, MapUnit, VarianceForm, VarianceMode,
    VarianceOptions, VolumeMap,
};
use hint_core::ingest::MaskVolume;
use serde::Deserialize;
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;

use crate::error::ApiError;
use crate::maps::{MapPayload, MapRef};
use crate::session::{EmEvent, Session};

type Shared = State<Arc<Session>>;
type ApiResult<T> = Result<T, ApiError>;

pub fn router(session: Arc<Session>) -> Router {
    Router::new()
        .route("/api/meta", get(meta))
        .route("/api/maps/{*id}", get(get_map))
        .route("/api/subpop", post(subpop))
        .route("/api/contrast", post(contrast))
        .route("/api/slice", get(slice))
        .route("/api/em/status", get(em_status))
        .route("/api/em/events", get(em_events))
        .route("/api/em/stop", post(em_stop))
        .route("/api/masks", get(list_masks).post(create_mask))
        .route("/api/masks/{id}", get(get_mask))
        .with_state(session)
}

fn binary(payload: &MapPayload) -> ApiResult<Response> {
    let sidecar = serde_json::to_string(&payload.sidecar).map_err(|e| ApiError::from(hint_core::HintError::Format(e.to_string())))?;
    let mut resp = Response::new(Body::from(payload.bytes()));
    let h = resp.headers_mut();
    h.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/octet-stream"));
    h.insert(
        "x-hint-map",
        HeaderValue::from_str(&sidecar).map_err(|e| ApiError::unprocessable(e.to_string()))?,
    );
    Ok(resp)
}

async fn meta(State(s): Shared) -> Json<serde_json::Value> {
    let run = &s.setup.run;
    let st = s.status();
    Json(json!({
        "session": s.id,
        "prefix": s.prefix(),
        "q": run.q,
        "N": run.n,
        "p": run.n_covariates(),
        "covariates": run.var_names_x,
        "covariateNames": run.covariates,
        "isCat": run.is_cat,
        "maskDims": s.mask().dims(),
        "voxels": s.mask().count(),
        "affine": s.mask().header().affine(),
        "mapKinds": ["s0", "population", "subject", "beta", "se"],
        "fitted": s.fitted().is_ok(),
        "live": st.live,
        "iteration": st.iteration,
    }))
}

async fn get_map(State(s): Shared, Path(id): Path<String>) -> ApiResult<Response> {
    let r = MapRef::parse(&id)?;
    if let MapRef::Mask { .. } = r {
        return Err(ApiError::not_found("use /api/masks/{id} for masks"));
    }
    let p = s.map(r)?;
    binary(&p)
}

fn pick(maps: Vec<VolumeMap<f64>>, ic: Option<usize>) -> ApiResult<Vec<VolumeMap<f64>>> {
    match ic {
        None => Ok(maps),
        Some(0) => Err(ApiError::not_found("IC indices start at 1")),
        Some(k) if k > maps.len() => Err(ApiError::not_found(format!("IC {k} out of range 1..={}", maps.len()))),
        Some(k) => Ok(vec![maps.into_iter().nth(k - 1).expect("index checked")]),
    }
}

#[derive(Debug, Deserialize)]
struct SubpopRequest {
    x: Vec<f64>,
    ic: Option<usize>,
}

async fn subpop(State(s): Shared, Json(req): Json<SubpopRequest>) -> ApiResult<Response> {
    let a = s.fitted()?;
    let maps = subpopulation_map(&a.fitted, &req.x)?;
    binary(&MapPayload::from_maps(&pick(maps, req.ic)?, s.mask().dims()))
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct ContrastRequest {
    lambda: Vec<f64>,
    variance_mode: Option<String>,
    variance_form: Option<String>,
    ic: Option<usize>,
    /// `z` (default), `estimate`, `se` or `p`.
    stat: Option<String>,
}

async fn contrast(State(s): Shared, Json(req): Json<ContrastRequest>) -> ApiResult<Response> {
    let a = s.fitted()?;
    let mut opts: VarianceOptions = a.config.variance;
    if let Some(m) = &req.variance_mode {
        opts.mode = VarianceMode::parse(m).ok_or_else(|| ApiError::unprocessable(format!("unknown variance mode {m:?}")))?;
    }
    if let Some(f) = &req.variance_form {
        opts.form = VarianceForm::parse(f).ok_or_else(|| ApiError::unprocessable(format!("unknown variance form {f:?}")))?;
    }
    let spec = ContrastSpec::new(req.lambda, "contrast");
    let res = contrast_test(&a.fitted, &spec, opts)?;
    let maps = match req.stat.as_deref().unwrap_or("z") {
        "z" => res.z,
        "estimate" => res.estimate,
        "se" => res.standard_error,
        "p" => res.p,
        other => return Err(ApiError::unprocessable(format!("unknown statistic {other:?}"))),
    };
    binary(&MapPayload::from_maps(&pick(maps, req.ic)?, s.mask().dims()))
}

#[derive(Debug, Deserialize)]
struct SliceQuery {
    map: String,
    axis: String,
    index: usize,
}

/// Voxel axes spanned by a slice, and the fixed axis.
fn slice_axes(axis: &str) -> ApiResult<([usize; 2], usize)> {
    match axis {
        "axial" => Ok(([0, 1], 2)),
        "coronal" => Ok(([0, 2], 1)),
        "sagittal" => Ok(([1, 2], 0)),
        other => Err(ApiError::unprocessable(format!("axis must be axial, coronal or sagittal, got {other:?}"))),
    }
}

async fn slice(State(s): Shared, Query(q): Query<SliceQuery>) -> ApiResult<Json<serde_json::Value>> {
    let r = MapRef::parse(&q.map)?;
    let mask = s.mask();
    let dims = mask.dims();
    let ([a0, a1], fixed) = slice_axes(&q.axis)?;
    if q.index >= dims[fixed] {
        return Err(ApiError::unprocessable(format!(
            "index {} out of range for {} axis of length {}",
            q.index, q.axis, dims[fixed]
        )));
    }
    // full-grid values, None outside the analysis mask
    let (grid, unit, range): (Vec<Option<f32>>, &str, [f32; 2]) = match r {
        MapRef::Mask { id } => {
            let m = s.stored_mask(id)?;
            let g = mask
                .flags()
                .iter()
                .zip(m.mask.flags())
                .map(|(&inside, &sel)| inside.then_some(if sel { 1.0 } else { 0.0 }))
                .collect();
            (g, "mask", [0.0, 1.0])
        }
        _ => {
            let p = s.map(r)?;
            let mut g = vec![None; mask.flags().len()];
            for (&lin, &v) in mask.voxel_indices().iter().zip(&p.values) {
                g[lin] = Some(v);
            }
            (g, p.sidecar.unit, p.sidecar.ranges[0])
        }
    };
    let lin = |v: [usize; 3]| v[0] + dims[0] * (v[1] + dims[1] * v[2]);
    let values: Vec<Vec<Option<f32>>> = (0..dims[a0])
        .map(|i| {
            (0..dims[a1])
                .map(|j| {
                    let mut v = [0; 3];
                    v[a0] = i;
                    v[a1] = j;
                    v[fixed] = q.index;
                    grid[lin(v)]
                })
                .collect()
        })
        .collect();
    let names = ["x", "y", "z"];
    Ok(Json(json!({
        "map": r.key(),
        "axis": q.axis,
        "index": q.index,
        "shape": [dims[a0], dims[a1]],
        "axes": [names[a0], names[a1]],
        "fixedAxis": names[fixed],
        "unit": unit,
        "range": range,
        "affine": mask.header().affine(),
        "values": values,
    })))
}

async fn em_status(State(s): Shared) -> Json<crate::session::EmStatus> {
    Json(s.status())
}

fn sse_event(e: &EmEvent) -> Event {
    Event::default()
        .event(e.name())
        .json_data(e)
        .expect("events serialize")
}

async fn em_events(State(s): Shared) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let (status, rx) = s.subscribe();
    let replay: Vec<EmEvent> = status
        .history
        .iter()
        .map(|h| EmEvent::Iteration {
            iteration: h.iteration,
            delta_global: h.delta_global,
            delta_local: h.delta_local,
            log_likelihood: h.log_likelihood,
            elapsed_secs: 0.0,
        })
        .collect();
    let head = stream::iter(replay.into_iter().map(|e| Ok(sse_event(&e))));
    let tail = if status.live {
        stream::unfold(Some(rx), |rx| async move {
            let mut rx = rx?;
            loop {
                match rx.recv().await {
                    Ok(e) => {
                        let next = if e.is_terminal() { None } else { Some(rx) };
                        return Some((Ok(sse_event(&e)), next));
                    }
                    Err(RecvError::Lagged(_)) => continue,
                    Err(RecvError::Closed) => return None,
                }
            }
        })
        .boxed()
    } else {
        let done = match (status.termination, status.error) {
            (_, Some(message)) => EmEvent::Failed { message },
            (reason, None) => EmEvent::Finished {
                iteration: status.iteration,
                reason: reason.unwrap_or("none"),
            },
        };
        stream::iter(vec![Ok(sse_event(&done))]).boxed()
    };
    Sse::new(head.chain(tail)).keep_alive(KeepAlive::default())
}

async fn em_stop(State(s): Shared) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    s.request_stop()?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "stopping": true }))))
}

async fn list_masks(State(s): Shared) -> Json<serde_json::Value> {
    Json(json!({ "masks": s.masks() }))
}

#[derive(Debug, Deserialize)]
struct MaskRequest {
    cutoff: f64,
    source: String,
}

async fn create_mask(State(s): Shared, Json(req): Json<MaskRequest>) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let r = MapRef::parse(&req.source)?;
    let a = s.fitted()?;
    let map = r.compute(&a)?;
    let z = match map.unit {
        MapUnit::Intensity => zscore_map(&map)?,
        MapUnit::Z => map,
        MapUnit::P => return Err(ApiError::unprocessable("masks are built from intensity or z maps")),
    };
    let m: MaskVolume = threshold_mask(&z, req.cutoff, s.mask())?;
    let stored = s.add_mask(r.key(), req.cutoff, m);
    Ok((StatusCode::CREATED, Json(json!(stored))))
}

async fn get_mask(State(s): Shared, Path(id): Path<usize>) -> ApiResult<Response> {
    if id == 0 {
        return Err(ApiError::not_found("mask ids start at 1"));
    }
    let m = s.stored_mask(id - 1)?;
    let bytes: Vec<u8> = m.mask.flags().iter().map(|&f| f as u8).collect();
    let mut resp = Response::new(Body::from(bytes));
    resp.headers_mut()
        .insert(header::CONTENT_TYPE, HeaderValue::from_static("application/octet-stream"));
    resp.headers_mut().insert(
        "x-hint-mask",
        HeaderValue::from_str(&json!({"id": m.id, "source": m.source, "cutoff": m.cutoff, "count": m.count, "dims": s.mask().dims()}).to_string())
            .expect("ascii json"),
    );
    Ok(resp.into_response())
}
