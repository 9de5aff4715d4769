//! HTTP routes.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use mirror_core::backend::{Backend, BackendDescriptor, BackendError};
use mirror_core::bench::{run_cloze_bench, BenchReport, ClozeConfig, ClozeItem};
use mirror_core::canonical::to_canonical_json;
use mirror_core::memorization::{freerun_match, teacher_forced_overlay, ProbeMode, DEFAULT_PREFIX_TOKENS};
use mirror_core::{analyze_document, AnalysisError, AnalysisOptions};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::json;
use tokio::sync::Semaphore;

use crate::store::{run_id, Begin, RunStatus, RunStore};

/// Ceiling on concurrent calls to one backend, whatever it advertises.
const MAX_PERMITS: usize = 64;

/// An error response: status plus `{"error": message}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, axum::Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<AnalysisError> for ApiError {
    fn from(e: AnalysisError) -> Self {
        let status = match &e {
            AnalysisError::Backend(BackendError::Transport(_) | BackendError::Unavailable(_)) => StatusCode::BAD_GATEWAY,
            AnalysisError::Backend(BackendError::Io(_)) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError::new(status, e.to_string())
    }
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

struct Slot {
    backend: Arc<dyn Backend>,
    permits: Arc<Semaphore>,
}

/// Size caps and defaults applied to requests.
#[derive(Debug, Clone, Copy)]
pub struct Limits {
    pub max_text_bytes: usize,
    pub z_threshold: f64,
}

/// Shared state behind every route.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    backends: BTreeMap<String, Slot>,
    store: RunStore,
    limits: Limits,
}

impl AppState {
    pub fn new(backends: Vec<Arc<dyn Backend>>, store: RunStore, limits: Limits) -> Self {
        let backends = backends
            .into_iter()
            .map(|b| {
                let permits = b.descriptor().max_in_flight.clamp(1, MAX_PERMITS);
                (
                    b.descriptor().backend_id.clone(),
                    Slot {
                        backend: b,
                        permits: Arc::new(Semaphore::new(permits)),
                    },
                )
            })
            .collect();
        Self {
            inner: Arc::new(Inner {
                backends,
                store,
                limits,
            }),
        }
    }

    pub fn store(&self) -> &RunStore {
        &self.inner.store
    }

    fn slot(&self, id: &str) -> Result<&Slot, ApiError> {
        self.inner
            .backends
            .get(id)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown backend {id:?}")))
    }

    fn check_size(&self, text: &str) -> Result<(), ApiError> {
        let cap = self.inner.limits.max_text_bytes;
        if text.len() > cap {
            return Err(ApiError::new(
                StatusCode::PAYLOAD_TOO_LARGE,
                format!("text is {} bytes; the limit is {cap}", text.len()),
            ));
        }
        Ok(())
    }

    /// Request options layered over the defaults, with the configured
    /// threshold standing in for the engine default.
    fn options(&self, given: Option<serde_json::Value>) -> Result<AnalysisOptions, ApiError> {
        let unprocessable = |m: String| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, m);
        let mut merged = serde_json::to_value(AnalysisOptions {
            z_threshold: self.inner.limits.z_threshold,
            ..AnalysisOptions::default()
        })
        .map_err(internal)?;
        match given {
            None | Some(serde_json::Value::Null) => {}
            Some(serde_json::Value::Object(fields)) => {
                let target = merged.as_object_mut().expect("options serialize to an object");
                for (k, v) in fields {
                    if !target.contains_key(&k) {
                        return Err(unprocessable(format!("invalid options: unknown field {k:?}")));
                    }
                    target.insert(k, v);
                }
            }
            Some(_) => return Err(unprocessable("invalid options: expected an object".into())),
        }
        let options: AnalysisOptions =
            serde_json::from_value(merged).map_err(|e| unprocessable(format!("invalid options: {e}")))?;
        options.validate().map_err(|e| unprocessable(e.to_string()))?;
        Ok(options)
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| {
        let status = if e.is_syntax() || e.is_eof() {
            StatusCode::BAD_REQUEST
        } else {
            StatusCode::UNPROCESSABLE_ENTITY
        };
        ApiError::new(status, format!("invalid request body: {e}"))
    })
}

fn json_response(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

pub fn router(state: AppState) -> Router {
    // room for the text plus JSON escaping and options
    let body_limit = state.inner.limits.max_text_bytes.saturating_mul(6).saturating_add(1 << 16);
    Router::new()
        .route("/api/health", get(health))
        .route("/api/backends", get(list_backends))
        .route("/api/analyze", post(submit_analysis))
        .route("/api/runs/{id}", get(get_run))
        .route("/api/runs/{id}/result", get(get_result))
        .route("/api/bench", post(bench))
        .route("/api/memcheck", post(memcheck))
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(state)
}

async fn health(State(state): State<AppState>) -> Response {
    axum::Json(json!({
        "status": "ok",
        "backends": state.inner.backends.len(),
        "runs": state.store().len(),
    }))
    .into_response()
}

async fn list_backends(State(state): State<AppState>) -> Response {
    let descriptors: Vec<&BackendDescriptor> = state.inner.backends.values().map(|s| s.backend.descriptor()).collect();
    axum::Json(descriptors).into_response()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnalyzeRequest {
    text: String,
    backend_id: String,
    #[serde(default)]
    options: Option<serde_json::Value>,
}

async fn submit_analysis(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: AnalyzeRequest = parse_body(&body)?;
    let slot = state.slot(&req.backend_id)?;
    state.check_size(&req.text)?;
    let options = state.options(req.options)?;
    let id = run_id(&req.text, &options, &req.backend_id);
    let run = match state.store().begin(&id, &req.backend_id).map_err(internal)? {
        Begin::Existing(run) => {
            return Ok(json_response(
                StatusCode::OK,
                json!({ "run_id": run.run_id, "status": run.status }).to_string(),
            ))
        }
        Begin::Started(run) => run,
    };
    let backend = slot.backend.clone();
    let permits = slot.permits.clone();
    let job_state = state.clone();
    let job_id = id.clone();
    tokio::spawn(async move {
        let _permit = permits.acquire_owned().await.expect("semaphore is never closed");
        let outcome = tokio::task::spawn_blocking(move || {
            analyze_document(&req.text, backend.as_ref(), &options)
                .map(|a| a.to_canonical_json())
                .map_err(|e| e.to_string())
        })
        .await
        .unwrap_or_else(|e| Err(format!("analysis task failed: {e}")));
        if let Err(e) = job_state.store().finish(&job_id, outcome) {
            log::error!("run {job_id}: could not store result: {e}");
        }
    });
    Ok(json_response(
        StatusCode::ACCEPTED,
        json!({ "run_id": run.run_id, "status": RunStatus::Pending }).to_string(),
    ))
}

async fn get_run(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let run = state
        .store()
        .get(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown run {id:?}")))?;
    Ok(json_response(StatusCode::OK, serde_json::to_string(&run).map_err(internal)?))
}

/// The canonical analysis JSON of a done run, exactly as the engine wrote it.
async fn get_result(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let run = state
        .store()
        .get(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown run {id:?}")))?;
    match (run.status, run.result) {
        (RunStatus::Done, Some(result)) => Ok(json_response(StatusCode::OK, result.get().to_string())),
        (RunStatus::Failed, _) => Err(ApiError::new(
            StatusCode::CONFLICT,
            format!("run failed: {}", run.error.unwrap_or_default()),
        )),
        _ => Err(ApiError::new(StatusCode::CONFLICT, "run is still pending")),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchRequest {
    backend_ids: Vec<String>,
    items: Vec<ClozeItem>,
    #[serde(default)]
    config: ClozeConfig,
    /// Training compute per backend id, carried into the reports.
    #[serde(default)]
    flops: BTreeMap<String, f64>,
}

async fn bench(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: BenchRequest = parse_body(&body)?;
    if req.items.is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "no items"));
    }
    if req.backend_ids.is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "no backends"));
    }
    for item in &req.items {
        item.validate().map_err(ApiError::from)?;
    }
    let items = Arc::new(req.items);
    let mut reports: Vec<BenchReport> = Vec::new();
    for id in &req.backend_ids {
        let slot = state.slot(id)?;
        let _permit = slot.permits.acquire().await.expect("semaphore is never closed");
        let backend = slot.backend.clone();
        let items = items.clone();
        let config = req.config;
        let mut report = tokio::task::spawn_blocking(move || run_cloze_bench(&items, backend.as_ref(), config))
            .await
            .map_err(internal)??;
        report.flops = req.flops.get(id).copied();
        reports.push(report);
    }
    Ok(json_response(StatusCode::OK, to_canonical_json(&reports)))
}

fn default_prefix() -> usize {
    DEFAULT_PREFIX_TOKENS
}

fn default_mode() -> ProbeMode {
    ProbeMode::TeacherForced
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MemcheckRequest {
    text: String,
    backend_id: String,
    #[serde(default = "default_mode")]
    mode: ProbeMode,
    #[serde(default = "default_prefix")]
    prefix_tokens: usize,
}

async fn memcheck(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: MemcheckRequest = parse_body(&body)?;
    let slot = state.slot(&req.backend_id)?;
    state.check_size(&req.text)?;
    let _permit = slot.permits.acquire().await.expect("semaphore is never closed");
    let backend = slot.backend.clone();
    let report = tokio::task::spawn_blocking(move || match req.mode {
        ProbeMode::TeacherForced => teacher_forced_overlay(&req.text, backend.as_ref()),
        ProbeMode::FreeRun => freerun_match(&req.text, backend.as_ref(), req.prefix_tokens),
    })
    .await
    .map_err(internal)??;
    Ok(json_response(StatusCode::OK, to_canonical_json(&report)))
}
