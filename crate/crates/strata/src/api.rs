//! HTTP routes.
//!
//! ```text
//! GET    /healthz
//! POST   /sessions                     {background_prompt, seed?, config?}
//! GET    /sessions/{id}
//! DELETE /sessions/{id}
//! POST   /sessions/{id}/edits          {prompt, mask: {rle: ..} | {png: base64}}
//! DELETE /sessions/{id}/edits/{i}
//! GET    /sessions/{id}/image          image/png
//! GET    /sessions/{id}/layers
//! GET    /sessions/{id}/stats
//! GET    /sessions/{id}/log            replayable config + edit log
//! GET    /images/{image_id}            image/png
//! ```

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use strata_core::bcg::CostReport;
use strata_core::persist::ReplayLog;
use strata_core::session::EditStats;
use strata_core::{Backend, EditSession, SessionConfig};

use crate::error::ApiError;
use crate::mask_input::{fit_mask, MaskInput};
use crate::registry::{AppState, LayerView, SessionSlot, Snapshot};

type ApiResult<T> = Result<T, ApiError>;

/// Per-session overrides of the service defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub backend: Option<Backend>,
    pub steps: Option<usize>,
    /// Latent side length; the image is `size * decode_scale` pixels square.
    pub size: Option<usize>,
    pub blocks: Option<usize>,
    pub guidance_scale: Option<f32>,
    pub weight_seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub background_prompt: String,
    pub seed: Option<u64>,
    #[serde(default)]
    pub config: ConfigOverrides,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    pub url: String,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionHandle {
    pub id: String,
    pub created_at: u64,
    pub config: SessionConfig,
    pub layers: usize,
    pub image_ref: ImageRef,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditRequest {
    pub prompt: String,
    pub mask: MaskInput,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EditResponse {
    pub layer_index: usize,
    pub layers: usize,
    pub image_ref: ImageRef,
    pub cost: CostReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeleteResponse {
    pub deleted: usize,
    pub layers: usize,
    pub image_ref: ImageRef,
    pub cost: CostReport,
    pub blended_steps: usize,
    pub plain_steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Totals {
    pub denoiser_calls: u64,
    pub omega: u64,
    pub forward_cost: u64,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsResponse {
    pub id: String,
    pub layers: usize,
    pub memory_bytes: usize,
    pub edits: Vec<EditStats>,
    pub totals: Totals,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(drop_session))
        .route("/sessions/{id}/edits", post(add_edit))
        .route("/sessions/{id}/edits/{index}", delete(delete_edit))
        .route("/sessions/{id}/image", get(session_image))
        .route("/sessions/{id}/layers", get(layers))
        .route("/sessions/{id}/stats", get(stats))
        .route("/sessions/{id}/log", get(log))
        .route("/images/{image_id}", get(image_by_id))
        .with_state(state)
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    payload
        .map(|Json(v)| v)
        .map_err(|r| ApiError::new(r.status(), r.body_text()))
}

fn slot(state: &AppState, id: &str) -> ApiResult<Arc<SessionSlot>> {
    state
        .get(id)
        .ok_or_else(|| ApiError::not_found(format!("unknown session {id}")))
}

fn image_ref(snap: &Snapshot) -> ImageRef {
    ImageRef {
        id: snap.image_id.clone(),
        url: format!("/images/{}", snap.image_id),
        width: snap.image_size.0,
        height: snap.image_size.1,
    }
}

fn handle(slot: &SessionSlot, snap: &Snapshot) -> SessionHandle {
    SessionHandle {
        id: slot.id.clone(),
        created_at: slot.created_at,
        config: snap.log.config.clone(),
        layers: snap.layers.len(),
        image_ref: image_ref(snap),
    }
}

fn png(bytes: Arc<Vec<u8>>) -> Response {
    (
        [(header::CONTENT_TYPE, "image/png")],
        Bytes::from(bytes.as_ref().clone()),
    )
        .into_response()
}

fn join_error(e: tokio::task::JoinError) -> ApiError {
    ApiError::internal(format!("edit task failed: {e}"))
}

fn session_config(state: &AppState, req: &CreateSession) -> ApiResult<SessionConfig> {
    let limits = &state.config;
    let mut cfg = limits.defaults.clone();
    let o = &req.config;
    if let Some(seed) = req.seed {
        cfg.seed = seed;
    }
    if let Some(b) = o.backend {
        cfg.backend = b;
    }
    if let Some(steps) = o.steps {
        if steps > limits.max_steps {
            return Err(ApiError::unprocessable(format!(
                "steps {steps} exceeds the limit {}",
                limits.max_steps
            )));
        }
        cfg.denoiser.steps = steps;
    }
    if let Some(size) = o.size {
        if size > limits.max_latent_size {
            return Err(ApiError::unprocessable(format!(
                "size {size} exceeds the limit {}",
                limits.max_latent_size
            )));
        }
        cfg.latent_width = size;
        cfg.latent_height = size;
    }
    if let Some(blocks) = o.blocks {
        cfg.denoiser.blocks = blocks;
    }
    if let Some(g) = o.guidance_scale {
        cfg.denoiser.guidance_scale = g;
    }
    if let Some(w) = o.weight_seed {
        cfg.denoiser.weight_seed = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(serde_json::json!({
        "status": "ok",
        "sessions": state.len(),
        "images": state.images.len(),
    }))
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    payload: Result<Json<CreateSession>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<SessionHandle>)> {
    let req = body(payload)?;
    if req.background_prompt.trim().is_empty() {
        return Err(ApiError::unprocessable("background_prompt is empty"));
    }
    let cfg = session_config(&state, &req)?;
    let st = state.clone();
    let (session, snap) = tokio::task::spawn_blocking(move || {
        let session = EditSession::create(&req.background_prompt, cfg)?;
        let snap = Snapshot::capture(&session, &st.images)?;
        Ok::<_, strata_core::Error>((session, snap))
    })
    .await
    .map_err(join_error)??;
    let view = snap.clone();
    let slot = state.insert(session, snap);
    tracing::info!(id = %slot.id, "session created");
    Ok((StatusCode::CREATED, Json(handle(&slot, &view))))
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<SessionHandle>> {
    let slot = slot(&state, &id)?;
    Ok(Json(handle(&slot, &slot.snapshot())))
}

async fn drop_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<StatusCode> {
    let slot = slot(&state, &id)?;
    // Refuse while an edit is running, like a second edit would be.
    let _guard = slot
        .session
        .try_lock()
        .map_err(|_| ApiError::conflict(format!("session {id} has an edit in progress")))?;
    state.remove(&id);
    Ok(StatusCode::NO_CONTENT)
}

/// Runs `op` on the session under its edit lock, off the async runtime, and
/// publishes the resulting snapshot.
async fn locked_edit<F>(
    state: Arc<AppState>,
    slot: Arc<SessionSlot>,
    op: F,
) -> ApiResult<(EditStats, Arc<Snapshot>)>
where
    F: FnOnce(&mut EditSession) -> strata_core::Result<()> + Send + 'static,
{
    let guard = slot.session.clone().try_lock_owned().map_err(|_| {
        ApiError::conflict(format!("session {} has an edit in progress", slot.id))
    })?;
    tokio::task::spawn_blocking(move || {
        let mut session = guard;
        op(&mut session)?;
        let snap = Snapshot::capture(&session, &state.images)?;
        slot.publish(snap);
        let stats = session
            .stats()
            .last()
            .cloned()
            .expect("a session always has stats");
        Ok((stats, slot.snapshot()))
    })
    .await
    .map_err(join_error)?
}

async fn add_edit(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    payload: Result<Json<EditRequest>, JsonRejection>,
) -> ApiResult<Json<EditResponse>> {
    let slot = slot(&state, &id)?;
    let req = body(payload)?;
    let config = slot.snapshot().log.config.clone();
    let mask = fit_mask(&req.mask.decode()?, &config)?;
    let prompt = req.prompt;
    let (stats, snap) = locked_edit(state, slot, move |s| {
        s.add_edit(&prompt, &mask).map(|_| ())
    })
    .await?;
    Ok(Json(EditResponse {
        layer_index: stats.layer,
        layers: snap.layers.len(),
        image_ref: image_ref(&snap),
        cost: stats.cost,
    }))
}

async fn delete_edit(
    State(state): State<Arc<AppState>>,
    Path((id, index)): Path<(String, usize)>,
) -> ApiResult<Json<DeleteResponse>> {
    let slot = slot(&state, &id)?;
    let (stats, snap) = locked_edit(state, slot, move |s| s.delete_edit(index).map(|_| ())).await?;
    Ok(Json(DeleteResponse {
        deleted: stats.layer,
        layers: snap.layers.len(),
        image_ref: image_ref(&snap),
        cost: stats.cost,
        blended_steps: stats.blended_steps,
        plain_steps: stats.plain_steps,
    }))
}

async fn session_image(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    let snap = slot(&state, &id)?.snapshot();
    let bytes = state
        .images
        .get(&snap.image_id)
        .ok_or_else(|| ApiError::internal("snapshot image missing from the store"))?;
    Ok(png(bytes))
}

async fn image_by_id(
    State(state): State<Arc<AppState>>,
    Path(image_id): Path<String>,
) -> ApiResult<Response> {
    state
        .images
        .get(&image_id)
        .map(png)
        .ok_or_else(|| ApiError::not_found(format!("unknown image {image_id}")))
}

async fn layers(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<Vec<LayerView>>> {
    Ok(Json(slot(&state, &id)?.snapshot().layers.clone()))
}

async fn stats(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<StatsResponse>> {
    let snap = slot(&state, &id)?.snapshot();
    let totals = snap.stats.iter().fold(
        Totals {
            denoiser_calls: 0,
            omega: 0,
            forward_cost: 0,
            wall_time_ms: 0.0,
        },
        |mut t, s| {
            t.denoiser_calls += s.cost.denoiser_calls;
            t.omega += s.cost.omega;
            t.forward_cost += s.cost.forward_cost;
            t.wall_time_ms += s.cost.wall_time_ms;
            t
        },
    );
    Ok(Json(StatsResponse {
        id,
        layers: snap.layers.len(),
        memory_bytes: snap.memory_bytes,
        edits: snap.stats.clone(),
        totals,
    }))
}

async fn log(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<ReplayLog>> {
    Ok(Json(slot(&state, &id)?.snapshot().log.clone()))
}

/// Binds `addr` and serves until the process exits.
pub async fn serve(addr: std::net::SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state)).await
}
