//! Local HTTP API for live sessions.
//!
//! | method | path | body | reply |
//! |---|---|---|---|
//! | POST | `/sessions` | `{"design": {...}, "arms": 2, "seed": 7}` | 201, session state |
//! | GET | `/sessions` | | ids |
//! | GET | `/sessions/{id}` | | session state |
//! | POST | `/sessions/{id}/enroll` | | `{subject_index, assignment, burn_in}` |
//! | POST | `/sessions/{id}/subjects/{m}/outcome` | `{"success": true}` | session state |
//!
//! Errors are `{"error": "..."}` with 404 for an unknown session or
//! subject, 409 for a second outcome and 422 for a bad body.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use alloc_lab::session::{self, LogEvent, Session};
use alloc_lab::Error;
use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use tokio::sync::{Mutex, RwLock};

use crate::CliError;

struct Live {
    session: Session,
    log: File,
}

impl Live {
    fn append(&mut self, ev: &LogEvent) -> std::io::Result<()> {
        let mut line = ev.encode();
        line.push('\n');
        self.log.write_all(line.as_bytes())?;
        self.log.sync_data()
    }
}

struct AppState {
    dir: PathBuf,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<Live>>>>,
    next_id: Mutex<u64>,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::UnknownSubject(_) => StatusCode::NOT_FOUND,
            Error::DuplicateOutcome(_) => StatusCode::CONFLICT,
            Error::Io(_) | Error::ReplayMismatch { .. } => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError(status, e.to_string())
    }
}

fn io_error(e: std::io::Error) -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, format!("event log: {e}"))
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

fn log_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.jsonl"))
}

/// Replays every `*.jsonl` log in `dir`.
fn load_sessions(dir: &Path) -> Result<BTreeMap<String, Arc<Mutex<Live>>>, CliError> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
            continue;
        }
        let text = fs::read_to_string(&path)?;
        let session = Session::replay_log(&text)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        if session.id() != stem {
            return Err(CliError::Io(format!(
                "{}: log belongs to session `{}`",
                path.display(),
                session.id()
            )));
        }
        let log = OpenOptions::new().append(true).open(&path)?;
        out.insert(session.id().to_string(), Arc::new(Mutex::new(Live { session, log })));
    }
    Ok(out)
}

async fn lookup(state: &AppState, id: &str) -> Result<Arc<Mutex<Live>>, ApiError> {
    state
        .sessions
        .read()
        .await
        .get(id)
        .cloned()
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown session `{id}`")))
}

async fn create(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let config = session::parse_create_request(&body)?;
    let mut next = state.next_id.lock().await;
    let mut sessions = state.sessions.write().await;
    let id = loop {
        *next += 1;
        let id = format!("s{}", *next);
        if !sessions.contains_key(&id) && !log_path(&state.dir, &id).exists() {
            break id;
        }
    };
    let (session, ev) = Session::create(&id, config, now_ms())?;
    let log = OpenOptions::new()
        .create_new(true)
        .append(true)
        .open(log_path(&state.dir, &id))
        .map_err(io_error)?;
    let mut live = Live { session, log };
    live.append(&ev).map_err(io_error)?;
    let view = live.session.view();
    sessions.insert(id, Arc::new(Mutex::new(live)));
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn list(State(state): State<Arc<AppState>>) -> Json<Vec<String>> {
    Json(state.sessions.read().await.keys().cloned().collect())
}

async fn show(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let live = lookup(&state, &id).await?;
    let view = live.lock().await.session.view();
    Ok(Json(view).into_response())
}

async fn enroll(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let live = lookup(&state, &id).await?;
    let mut live = live.lock().await;
    let (enrollment, ev) = live.session.enroll(now_ms())?;
    live.append(&ev).map_err(io_error)?;
    Ok(Json(enrollment).into_response())
}

async fn outcome(
    State(state): State<Arc<AppState>>,
    UrlPath((id, subject)): UrlPath<(String, String)>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let live = lookup(&state, &id).await?;
    let subject: u64 = subject
        .parse()
        .map_err(|_| ApiError(StatusCode::NOT_FOUND, format!("unknown subject `{subject}`")))?;
    let req = session::parse_outcome_request(&body)?;
    let mut live = live.lock().await;
    let ev = live.session.record_outcome(subject, req.success, now_ms())?;
    live.append(&ev).map_err(io_error)?;
    Ok(Json(live.session.view()).into_response())
}

fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create).get(list))
        .route("/sessions/{id}", get(show))
        .route("/sessions/{id}/enroll", post(enroll))
        .route("/sessions/{id}/subjects/{m}/outcome", post(outcome))
        .with_state(state)
}

pub fn serve(addr: SocketAddr, dir: PathBuf) -> Result<(), CliError> {
    fs::create_dir_all(&dir)?;
    let sessions = load_sessions(&dir)?;
    let state = Arc::new(AppState {
        dir,
        next_id: Mutex::new(0),
        sessions: RwLock::new(sessions),
    });
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        let local = listener.local_addr()?;
        if !local.ip().is_loopback() {
            eprintln!("warning: serving on {local}, which is not a loopback address; the API has no authentication");
        }
        println!("listening on http://{local}");
        std::io::stdout().flush()?;
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })?;
    Ok(())
}
