//! HTTP API over merge-sort annotation sessions.
//!
//! Sessions live on disk under `<data_dir>/sessions`; every request reloads
//! the persisted snapshot, so the service can be killed and restarted
//! between any two calls. Responses must echo the `task_token` of the task
//! they answer; a stale token is rejected with 409 and changes nothing.

use std::collections::HashMap;
use std::future::Future;
use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::info;
use rankforge::annotation::{self, AnnotationSession, Phase, Progress, Task};
use rankforge::dataset::{save_rank_overlay, RankedDataset};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;
use tokio::net::TcpListener;

pub const API_VERSION: u32 = 1;

const IMAGE_EXTENSIONS: [(&str, &str); 5] = [
    ("png", "image/png"),
    ("jpg", "image/jpeg"),
    ("jpeg", "image/jpeg"),
    ("gif", "image/gif"),
    ("webp", "image/webp"),
];

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error(transparent)]
    Core(#[from] rankforge::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl ServiceError {
    fn status(&self) -> StatusCode {
        match self {
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Core(rankforge::Error::Io { .. } | rankforge::Error::Format { .. })
            | ServiceError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            ServiceError::Core(_) => StatusCode::BAD_REQUEST,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            log::error!("{self}");
        }
        (status, Json(json!({ "api_version": API_VERSION, "error": self.to_string() }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ServiceError>;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub data_dir: PathBuf,
    /// Directory holding `<item id>.<ext>` images.
    pub image_source: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SessionMeta {
    created_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub api_version: u32,
    pub session_id: String,
    pub item_count: usize,
    pub sublist_size: usize,
    pub phase: Phase,
    pub progress: Progress,
    pub image_source: Option<String>,
    pub created_ms: u64,
    pub updated_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPayload {
    pub api_version: u32,
    pub session_id: String,
    pub task_token: String,
    pub task: Task,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseAck {
    pub api_version: u32,
    pub session_id: String,
    pub phase: Phase,
    pub progress: Progress,
    /// Token of the next task; absent once the session is done.
    pub task_token: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub id: String,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportPayload {
    pub api_version: u32,
    pub session_id: String,
    pub ranking: Vec<RankEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    item_ids: Option<Vec<String>>,
    /// Dataset file relative to the data directory.
    dataset: Option<String>,
    #[serde(default = "default_n_sub")]
    n_sub: usize,
    #[serde(default)]
    seed: u64,
}

fn default_n_sub() -> usize {
    annotation::DEFAULT_SUBLIST_SIZE
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResponseRequest {
    task_token: Option<String>,
    response: Option<annotation::Response>,
    #[serde(default)]
    undo: bool,
}

/// Hex SHA-256 of the persisted snapshot.
pub fn task_token(session: &AnnotationSession) -> String {
    hex::encode(Sha256::digest(session.to_snapshot_json().as_bytes()))
}

struct Store {
    data_dir: PathBuf,
    image_source: Option<PathBuf>,
    locks: std::sync::Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

#[derive(Clone)]
pub struct AppState(Arc<Store>);

impl AppState {
    pub fn new(data_dir: impl Into<PathBuf>, image_source: Option<PathBuf>) -> std::io::Result<Self> {
        let data_dir = data_dir.into();
        std::fs::create_dir_all(data_dir.join("sessions"))?;
        std::fs::create_dir_all(data_dir.join("exports"))?;
        Ok(Self(Arc::new(Store { data_dir, image_source, locks: Default::default() })))
    }
}

impl Store {
    fn snapshot_path(&self, id: &str) -> PathBuf {
        self.data_dir.join("sessions").join(format!("{id}.json"))
    }

    fn meta_path(&self, id: &str) -> PathBuf {
        self.data_dir.join("sessions").join(format!("{id}.meta.json"))
    }

    fn overlay_path(&self, id: &str) -> PathBuf {
        self.data_dir.join("exports").join(format!("{id}.ranks.jsonl"))
    }

    fn lock(&self, id: &str) -> Arc<tokio::sync::Mutex<()>> {
        let mut locks = self.locks.lock().unwrap_or_else(|e| e.into_inner());
        locks.entry(id.to_string()).or_default().clone()
    }

    fn load(&self, id: &str) -> ApiResult<(AnnotationSession, SessionMeta)> {
        let path = self.snapshot_path(id);
        if !path.exists() {
            return Err(ServiceError::NotFound(format!("unknown session {id}")));
        }
        let session = AnnotationSession::load_snapshot(&path)?;
        let meta: SessionMeta = serde_json::from_slice(&std::fs::read(self.meta_path(id))?)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok((session, meta))
    }

    fn manifest(&self, session: &AnnotationSession, meta: &SessionMeta) -> SessionManifest {
        let last = session.comparison_log.last().map(|e| match e {
            annotation::LogEntry::Sort { timestamp, .. } | annotation::LogEntry::Compare { timestamp, .. } => {
                *timestamp
            }
        });
        SessionManifest {
            api_version: API_VERSION,
            session_id: session.session_id.clone(),
            item_count: session.item_ids.len(),
            sublist_size: session.sublist_size,
            phase: session.phase,
            progress: session.progress(),
            image_source: self.image_source.as_ref().map(|p| p.display().to_string()),
            created_ms: meta.created_ms,
            updated_ms: last.unwrap_or(meta.created_ms).max(meta.created_ms),
        }
    }
}

/// Session ids are UUIDs; anything else cannot name a session file.
fn check_session_id(id: &str) -> ApiResult<()> {
    uuid::Uuid::parse_str(id)
        .map(|_| ())
        .map_err(|_| ServiceError::NotFound(format!("unknown session {id}")))
}

fn relative_under(root: &Path, rel: &str) -> ApiResult<PathBuf> {
    let p = Path::new(rel);
    if p.components().any(|c| !matches!(c, Component::Normal(_))) {
        return Err(ServiceError::BadRequest(format!("dataset path {rel:?} must be relative to the data directory")));
    }
    Ok(root.join(p))
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(format!("malformed body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Io(std::io::Error::other(e.to_string())))?
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: CreateRequest = parse_body(&body)?;
    let store = state.0.clone();
    let manifest = blocking(move || {
        let ids = match (req.item_ids, req.dataset) {
            (Some(ids), None) => ids,
            (None, Some(rel)) => RankedDataset::load(relative_under(&store.data_dir, &rel)?)?.ids(),
            _ => return Err(ServiceError::BadRequest("give exactly one of item_ids or dataset".into())),
        };
        let id = uuid::Uuid::new_v4().to_string();
        let session = AnnotationSession::new(id.clone(), ids, req.n_sub, req.seed)?;
        let meta = SessionMeta { created_ms: annotation::now_millis() };
        annotation::write_atomic(&store.meta_path(&id), &serde_json::to_vec(&meta).expect("meta serialises"))?;
        session.save_snapshot(store.snapshot_path(&id))?;
        info!("created session {id} with {} items", session.item_ids.len());
        Ok(store.manifest(&session, &meta))
    })
    .await?;
    Ok((StatusCode::CREATED, Json(manifest)))
}

async fn get_session(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionManifest>> {
    check_session_id(&id)?;
    let store = state.0.clone();
    let lock = store.lock(&id);
    let _guard = lock.lock().await;
    blocking(move || {
        let (session, meta) = store.load(&id)?;
        Ok(Json(store.manifest(&session, &meta)))
    })
    .await
}

async fn get_task(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<TaskPayload>> {
    check_session_id(&id)?;
    let store = state.0.clone();
    let lock = store.lock(&id);
    let _guard = lock.lock().await;
    blocking(move || {
        let (session, _) = store.load(&id)?;
        if session.phase == Phase::Done {
            return Err(ServiceError::Conflict("session complete".into()));
        }
        Ok(Json(TaskPayload {
            api_version: API_VERSION,
            session_id: id,
            task_token: task_token(&session),
            task: session.current_task()?,
        }))
    })
    .await
}

async fn post_response(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<Json<ResponseAck>> {
    check_session_id(&id)?;
    let req: ResponseRequest = parse_body(&body)?;
    let store = state.0.clone();
    let lock = store.lock(&id);
    let _guard = lock.lock().await;
    blocking(move || {
        let (session, _) = store.load(&id)?;
        let current = task_token(&session);
        if let Some(token) = &req.task_token {
            if *token != current {
                return Err(ServiceError::Conflict("stale task token".into()));
            }
        }
        let next = if req.undo {
            if req.response.is_some() {
                return Err(ServiceError::BadRequest("undo request must not carry a response".into()));
            }
            if !session.can_undo() {
                return Err(ServiceError::Conflict("nothing to undo".into()));
            }
            session.undo()?
        } else {
            let response = req.response.ok_or_else(|| ServiceError::BadRequest("missing response".into()))?;
            if req.task_token.is_none() {
                return Err(ServiceError::BadRequest("missing task_token".into()));
            }
            if session.phase == Phase::Done {
                return Err(ServiceError::Conflict("session complete".into()));
            }
            session.submit_response(&response)?
        };
        next.save_snapshot(store.snapshot_path(&id))?;
        Ok(Json(ResponseAck {
            api_version: API_VERSION,
            session_id: id,
            phase: next.phase,
            progress: next.progress(),
            task_token: (next.phase != Phase::Done).then(|| task_token(&next)),
        }))
    })
    .await
}

async fn export(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<ExportPayload>> {
    check_session_id(&id)?;
    let store = state.0.clone();
    let lock = store.lock(&id);
    let _guard = lock.lock().await;
    blocking(move || {
        let (session, _) = store.load(&id)?;
        if session.phase != Phase::Done {
            return Err(ServiceError::Conflict("session is not complete".into()));
        }
        let ranking = session.export_ranking()?;
        save_rank_overlay(&ranking, store.overlay_path(&id))?;
        Ok(Json(ExportPayload {
            api_version: API_VERSION,
            session_id: id,
            ranking: ranking.into_iter().map(|(id, rank)| RankEntry { id, rank }).collect(),
        }))
    })
    .await
}

async fn item_image(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let missing = || ServiceError::NotFound(format!("no image for item {id:?}"));
    let dir = state.0.image_source.clone().ok_or_else(missing)?;
    if id.is_empty() || id.starts_with('.') || id.contains(['/', '\\']) {
        return Err(missing());
    }
    for (ext, mime) in IMAGE_EXTENSIONS {
        let path = dir.join(format!("{id}.{ext}"));
        if let Ok(bytes) = tokio::fs::read(&path).await {
            return Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response());
        }
    }
    Err(missing())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/task", get(get_task))
        .route("/sessions/{id}/response", post(post_response))
        .route("/sessions/{id}/export", get(export))
        .route("/items/{id}/image", get(item_image))
        .with_state(state)
}

/// Serves on an already bound listener until `shutdown` resolves.
pub async fn serve_on(
    listener: TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

/// Binds `config.listen` and serves until Ctrl-C.
pub async fn serve(config: &ServiceConfig) -> std::io::Result<()> {
    let state = AppState::new(&config.data_dir, config.image_source.clone())?;
    let listener = TcpListener::bind(config.listen).await?;
    info!("listening on {}", listener.local_addr()?);
    serve_on(listener, state, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
}
