//! Read-only HTTP API over a [`Workspace`].
//!
//! | route                      | response                                   |
//! |----------------------------|--------------------------------------------|
//! | `GET /api/classes`         | class names                                |
//! | `GET /api/samples?class=`  | sample records, optionally one class (id or name) |
//! | `GET /api/image/{id}`      | PNG                                        |
//! | `POST /api/explain`        | [`ExplainResponse`]                        |
//! | `POST /api/relative_drop`  | [`RelativeDropResponse`]                   |
//! | `GET /api/similarity`      | head weight-similarity profile             |
//!
//! Errors are `{"error": message}` with status 400 (bad request), 404
//! (unknown sample), 503 (no backend) or 500.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use finercam_core::head::{weight_similarity_profile, SimilarityProfile};
use finercam_core::tensor_store::{BBox, Split};

use crate::config::ServiceConfig;
use crate::error::{AppError, AppResult, ErrorKind};
use crate::overlay::image_png;
use crate::request::{run_explain, run_relative_drop, ExplainRequest, RelativeDropRequest, RelativeDropResponse};
use crate::workspace::Workspace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainResponse {
    /// Base64 FCT `[H, W]` f32.
    pub saliency: String,
    /// Base64 PNG.
    pub overlay: String,
    pub logits: Vec<f32>,
    pub target_class: usize,
    pub references_used: Vec<usize>,
    /// The request as received.
    pub metadata: ExplainRequest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleInfo {
    pub sample_id: String,
    pub class_id: usize,
    pub class_name: String,
    pub split: Split,
    pub bbox: Option<BBox>,
}

pub fn explain_response(ws: &Workspace, req: ExplainRequest) -> AppResult<ExplainResponse> {
    let e = run_explain(ws, &req)?;
    Ok(ExplainResponse {
        saliency: BASE64.encode(e.saliency.to_tensor().encode()),
        overlay: BASE64.encode(&e.overlay_png),
        logits: e.logits,
        target_class: e.target_class,
        references_used: e.references_used,
        metadata: req,
    })
}

pub fn list_samples(ws: &Workspace, class: Option<&str>) -> AppResult<Vec<SampleInfo>> {
    let m = &ws.dataset.manifest;
    let wanted = match class {
        None => None,
        Some(c) => Some(
            c.parse::<usize>()
                .ok()
                .filter(|&i| i < m.num_classes())
                .or_else(|| m.classes.iter().position(|n| n == c))
                .ok_or_else(|| AppError::usage(format!("unknown class {c:?}")))?,
        ),
    };
    Ok(m.samples
        .iter()
        .filter(|s| wanted.is_none_or(|c| s.class_id == c))
        .map(|s| SampleInfo {
            sample_id: s.sample_id.clone(),
            class_id: s.class_id,
            class_name: m.classes[s.class_id].clone(),
            split: s.split,
            bbox: s.bbox,
        })
        .collect())
}

impl IntoResponse for AppError {
    fn into_response(self) -> Response {
        let status = match self.kind {
            ErrorKind::Usage | ErrorKind::Input => StatusCode::BAD_REQUEST,
            ErrorKind::NotFound => StatusCode::NOT_FOUND,
            ErrorKind::Unavailable => StatusCode::SERVICE_UNAVAILABLE,
            ErrorKind::Compute => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type Shared = Arc<Workspace>;

async fn blocking<T: Send + 'static>(
    ws: Shared,
    f: impl FnOnce(&Workspace) -> AppResult<T> + Send + 'static,
) -> AppResult<T> {
    tokio::task::spawn_blocking(move || f(&ws))
        .await
        .map_err(|e| AppError::compute(format!("worker failed: {e}")))?
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> AppResult<T> {
    serde_json::from_slice(body).map_err(|e| AppError::usage(format!("invalid request: {e}")))
}

async fn classes(State(ws): State<Shared>) -> Json<Vec<String>> {
    Json(ws.dataset.manifest.classes.clone())
}

async fn samples(State(ws): State<Shared>, Query(q): Query<HashMap<String, String>>) -> AppResult<Json<Vec<SampleInfo>>> {
    list_samples(&ws, q.get("class").map(String::as_str)).map(Json)
}

async fn image(State(ws): State<Shared>, UrlPath(id): UrlPath<String>) -> AppResult<Response> {
    let png = blocking(ws, move |ws| {
        let s = ws.load_sample(&id)?;
        image_png(&s.image).map_err(AppError::compute)
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn explain(State(ws): State<Shared>, body: Bytes) -> AppResult<Json<ExplainResponse>> {
    let req: ExplainRequest = parse_body(&body)?;
    blocking(ws, move |ws| explain_response(ws, req)).await.map(Json)
}

async fn relative_drop(State(ws): State<Shared>, body: Bytes) -> AppResult<Json<RelativeDropResponse>> {
    let req: RelativeDropRequest = parse_body(&body)?;
    blocking(ws, move |ws| run_relative_drop(ws, &req)).await.map(Json)
}

async fn similarity(State(ws): State<Shared>) -> AppResult<Json<SimilarityProfile>> {
    weight_similarity_profile(&ws.head).map(Json).map_err(AppError::compute)
}

pub fn router(ws: Shared, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/classes", get(classes))
        .route("/api/samples", get(samples))
        .route("/api/image/{sample_id}", get(image))
        .route("/api/explain", post(explain))
        .route("/api/relative_drop", post(relative_drop))
        .route("/api/similarity", get(similarity))
        .with_state(ws);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// Validates `config`, opens the workspace and serves until the process
/// is stopped.
pub async fn serve(config: &ServiceConfig) -> AppResult<()> {
    config.validate()?;
    let spec = config.backend_spec()?;
    let ws = tokio::task::block_in_place(|| Workspace::open(&config.manifest, &config.head, spec.as_ref()))?;
    let addr: SocketAddr = config
        .bind
        .parse()
        .map_err(|e| AppError::usage(format!("bind address {:?}: {e}", config.bind)))?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| AppError::compute(format!("bind {addr}: {e}")))?;
    eprintln!("listening on http://{}", listener.local_addr().map(|a| a.to_string()).unwrap_or_default());
    axum::serve(listener, router(Arc::new(ws), config.static_dir.as_deref()))
        .await
        .map_err(|e| AppError::compute(format!("server: {e}")))
}
