//! Read-only JSON API over one checkpoint and one dataset directory.
//!
//! | route             | body                        |
//! |-------------------|-----------------------------|
//! | `GET /model/info` |                             |
//! | `GET /volumes`    |                             |
//! | `POST /screen`    | `{"volume_id", "delta"}`    |
//! | `POST /sweep`     | `{"volume_id", "deltas"}`   |
//!
//! Errors are `{"error": message}` with status 404 for unknown volumes and
//! 422 for invalid requests.

use std::collections::HashMap;
use std::sync::Arc;

use artran_core::screen::{
    coerce_odd, screen_volume, select_center_frames, sweep_means, uncertainty_scores,
    ScreeningReport, DEFAULT_SWEEP,
};
use artran_core::sst::{check_delta, extended_transition};
use artran_core::synth::Volume;
use artran_core::vit::{Artran, ModelConfig, PatchGeometry};
use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

pub struct AppState {
    model: Artran<f32>,
    volumes: Vec<Volume>,
    index: HashMap<String, usize>,
    center_frames: usize,
}

impl AppState {
    /// `center_frames` is coerced to an odd count.
    pub fn new(model: Artran<f32>, volumes: Vec<Volume>, center_frames: usize) -> Self {
        let index = volumes.iter().enumerate().map(|(i, v)| (v.id.clone(), i)).collect();
        Self {
            model,
            volumes,
            index,
            center_frames: coerce_odd(center_frames),
        }
    }

    fn volume(&self, id: &str) -> Result<&Volume, ApiError> {
        self.index
            .get(id)
            .map(|&i| &self.volumes[i])
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown volume {id:?}")))
    }

    fn frames<'a>(&self, v: &'a Volume) -> Result<&'a [artran_core::Image], ApiError> {
        let k = self.center_frames.min(coerce_odd(v.frames.len()));
        select_center_frames(&v.frames, k).map_err(ApiError::internal)
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }

    fn bad_delta() -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "delta must be in [-1,1]")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, r.body_text())
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/model/info", get(model_info))
        .route("/volumes", get(list_volumes))
        .route("/screen", post(screen))
        .route("/sweep", post(sweep))
        .with_state(state)
}

#[derive(Serialize)]
struct SstInfo {
    theta: [f64; 3],
    /// Diagonal of the extended transition matrix.
    extended_diagonals: [f64; 2],
}

#[derive(Serialize)]
struct ModelInfo {
    config: ModelConfig,
    geometry: PatchGeometry,
    tokens: usize,
    parameters: usize,
    sst: Option<SstInfo>,
    center_frames: usize,
    sweep_deltas: [f64; 9],
}

async fn model_info(State(s): State<Arc<AppState>>) -> Json<ModelInfo> {
    let config = s.model.config().clone();
    let sst = s.model.sst_params().map(|p| {
        let t = extended_transition(&p);
        SstInfo {
            theta: p.as_array(),
            extended_diagonals: [t.t11, t.t22],
        }
    });
    Json(ModelInfo {
        geometry: config.geometry,
        tokens: config.geometry.token_count(),
        parameters: s.model.params().numel(),
        config,
        sst,
        center_frames: s.center_frames,
        sweep_deltas: DEFAULT_SWEEP,
    })
}

#[derive(Serialize)]
struct VolumeEntry<'a> {
    volume_id: &'a str,
    split: &'static str,
    frames: usize,
    se_d: f64,
}

async fn list_volumes(State(s): State<Arc<AppState>>) -> Response {
    let entries: Vec<VolumeEntry<'_>> = s
        .volumes
        .iter()
        .map(|v| VolumeEntry {
            volume_id: &v.id,
            split: v.split.as_str(),
            frames: v.frames.len(),
            se_d: v.se_d,
        })
        .collect();
    Json(entries).into_response()
}

#[derive(Deserialize)]
struct ScreenRequest {
    volume_id: String,
    delta: f64,
}

async fn screen(
    State(s): State<Arc<AppState>>,
    body: Result<Json<ScreenRequest>, JsonRejection>,
) -> Result<Json<ScreeningReport>, ApiError> {
    let Json(req) = body?;
    check_delta(req.delta).map_err(|_| ApiError::bad_delta())?;
    s.volume(&req.volume_id)?;
    let report = tokio::task::spawn_blocking(move || {
        let v = s.volume(&req.volume_id)?;
        let frames = s.frames(v)?;
        screen_volume(&v.id, frames, req.delta, &s.model, &DEFAULT_SWEEP).map_err(ApiError::internal)
    })
    .await
    .map_err(ApiError::internal)??;
    Ok(Json(report))
}

#[derive(Deserialize)]
struct SweepRequest {
    volume_id: String,
    deltas: Vec<f64>,
}

#[derive(Serialize)]
struct SweepResponse {
    volume_id: String,
    /// `(δ, mean positive probability)` per requested δ.
    sweep: Vec<(f64, f64)>,
    u_sweep: f64,
}

async fn sweep(
    State(s): State<Arc<AppState>>,
    body: Result<Json<SweepRequest>, JsonRejection>,
) -> Result<Json<SweepResponse>, ApiError> {
    let Json(req) = body?;
    if req.deltas.is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "deltas must not be empty"));
    }
    if req.deltas.iter().any(|&d| check_delta(d).is_err()) {
        return Err(ApiError::bad_delta());
    }
    s.volume(&req.volume_id)?;
    let response = tokio::task::spawn_blocking(move || {
        let v = s.volume(&req.volume_id)?;
        let frames = s.frames(v)?;
        let sweep = sweep_means(frames, &req.deltas, &s.model).map_err(ApiError::internal)?;
        let means: Vec<f64> = sweep.iter().map(|&(_, p)| p).collect();
        // frame probabilities only feed the other two scores, which are not reported here
        let u = uncertainty_scores(&means, &means).map_err(ApiError::internal)?;
        Ok::<_, ApiError>(SweepResponse {
            volume_id: v.id.clone(),
            sweep,
            u_sweep: u.u_sweep,
        })
    })
    .await
    .map_err(ApiError::internal)??;
    Ok(Json(response))
}

/// Binds `0.0.0.0:port` and serves until the process exits.
pub async fn serve(state: AppState, port: u16) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state))).await?;
    Ok(())
}
