//! JSON over HTTP. Reads take a shared lock on the store; every write goes
//! through its exclusive lock, so writes are applied in arrival order.
//! Scans run on the blocking pool and only lock the store to insert results.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::scan::{scan_events, Progress};
use super::store::{AlertDetail, AlertSummary, ExemplarSummary, Status, Store};
use super::ServiceError;
use crate::feed::read_feed_file;
use crate::oracle::Source;
use crate::tcn::load_checkpoint;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let code = match &self {
            ServiceError::UnknownAlert(_) => StatusCode::NOT_FOUND,
            ServiceError::InvalidLabel(_) | ServiceError::BadRequest(_) | ServiceError::MissingCheckpoint(_) => {
                StatusCode::BAD_REQUEST
            }
            ServiceError::AlreadyDismissed(_) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (code, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: u64,
    pub state: JobState,
    pub processed: usize,
    pub total: usize,
    pub progress: f64,
    pub alerts_added: usize,
    pub error: Option<String>,
}

#[derive(Default)]
struct Jobs {
    next: u64,
    map: BTreeMap<u64, JobStatus>,
}

#[derive(Clone)]
pub struct AppState {
    store: Arc<RwLock<Store>>,
    jobs: Arc<Mutex<Jobs>>,
    checkpoint: Option<PathBuf>,
    threshold: f64,
}

impl AppState {
    pub fn new(store: Store, checkpoint: Option<PathBuf>, threshold: f64) -> Self {
        AppState { store: Arc::new(RwLock::new(store)), jobs: Default::default(), checkpoint, threshold }
    }

    pub fn store(&self) -> Arc<RwLock<Store>> {
        self.store.clone()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/alerts", get(list_alerts))
        .route("/alerts/{id}", get(get_alert))
        .route("/alerts/{id}/annotation", post(annotate))
        .route("/exemplars", get(exemplars))
        .route("/scan", post(start_scan))
        .route("/jobs/{id}", get(job))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state)).with_graceful_shutdown(async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
}

fn poisoned() -> ServiceError {
    ServiceError::Corrupt("store lock poisoned".into())
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

#[derive(Deserialize)]
struct ListQuery {
    status: Option<String>,
    limit: Option<usize>,
}

async fn list_alerts(State(st): State<AppState>, Query(q): Query<ListQuery>) -> Result<Json<Vec<AlertSummary>>, ServiceError> {
    let status: Option<Status> = match q.status.as_deref() {
        None | Some("") => None,
        Some(s) => Some(s.parse()?),
    };
    Ok(Json(st.store.read().map_err(|_| poisoned())?.list(status, q.limit)))
}

async fn get_alert(State(st): State<AppState>, Path(id): Path<u64>) -> Result<Json<AlertDetail>, ServiceError> {
    Ok(Json(st.store.read().map_err(|_| poisoned())?.detail(id)?))
}

#[derive(Deserialize)]
struct AnnotationBody {
    label: i64,
    #[serde(default)]
    source: Option<Source>,
    #[serde(default)]
    notes: Option<String>,
}

async fn annotate(
    State(st): State<AppState>,
    Path(id): Path<u64>,
    body: Result<Json<AnnotationBody>, JsonRejection>,
) -> Result<(StatusCode, Json<AlertDetail>), ServiceError> {
    let Json(body) = body.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    let label = u8::try_from(body.label).ok().filter(|l| *l <= 2).ok_or(ServiceError::InvalidLabel(body.label.clamp(0, 255) as u8))?;
    let detail = tokio::task::spawn_blocking(move || {
        let mut store = st.store.write().map_err(|_| poisoned())?;
        store.annotate(id, label, body.source.unwrap_or(Source::Human), body.notes)
    })
    .await
    .map_err(|e| ServiceError::Corrupt(e.to_string()))??;
    Ok((StatusCode::CREATED, Json(detail)))
}

async fn exemplars(State(st): State<AppState>) -> Result<Json<Vec<ExemplarSummary>>, ServiceError> {
    Ok(Json(st.store.read().map_err(|_| poisoned())?.exemplars()))
}

#[derive(Deserialize)]
struct ScanBody {
    feed_path: PathBuf,
    #[serde(default)]
    checkpoint_path: Option<PathBuf>,
    #[serde(default)]
    threshold: Option<f64>,
}

async fn start_scan(
    State(st): State<AppState>,
    body: Result<Json<ScanBody>, JsonRejection>,
) -> Result<(StatusCode, Json<serde_json::Value>), ServiceError> {
    let Json(body) = body.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    let ckpt_path = body
        .checkpoint_path
        .or_else(|| st.checkpoint.clone())
        .ok_or_else(|| ServiceError::MissingCheckpoint("none configured".into()))?;
    if !ckpt_path.is_dir() {
        return Err(ServiceError::MissingCheckpoint(ckpt_path.display().to_string()));
    }
    if !body.feed_path.is_file() {
        return Err(ServiceError::BadRequest(format!("feed {} not found", body.feed_path.display())));
    }
    let threshold = body.threshold.unwrap_or(st.threshold);
    let job_id = {
        let mut jobs = st.jobs.lock().map_err(|_| poisoned())?;
        jobs.next += 1;
        let id = jobs.next;
        jobs.map.insert(
            id,
            JobStatus { job_id: id, state: JobState::Running, processed: 0, total: 0, progress: 0.0, alerts_added: 0, error: None },
        );
        id
    };
    let (jobs, store) = (st.jobs.clone(), st.store.clone());
    tokio::task::spawn_blocking(move || {
        let update = |f: &dyn Fn(&mut JobStatus)| {
            if let Ok(mut j) = jobs.lock() {
                if let Some(s) = j.map.get_mut(&job_id) {
                    f(s);
                }
            }
        };
        let run = || -> Result<usize, ServiceError> {
            let ckpt = load_checkpoint(&ckpt_path)?;
            let events = read_feed_file(&body.feed_path)?;
            let cands = scan_events(&events, &ckpt, threshold, |p: Progress| {
                update(&|s| {
                    s.processed = p.processed;
                    s.total = p.total;
                    s.progress = if p.total == 0 { 0.0 } else { p.processed as f64 / p.total as f64 };
                })
            })?;
            let added = store.write().map_err(|_| poisoned())?.add_candidates(cands)?;
            Ok(added.len())
        };
        match run() {
            Ok(n) => update(&|s| {
                s.state = JobState::Done;
                s.progress = 1.0;
                s.alerts_added = n;
            }),
            Err(e) => {
                tracing::error!(job_id, error = %e, "scan failed");
                update(&|s| {
                    s.state = JobState::Failed;
                    s.error = Some(e.to_string());
                })
            }
        }
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": job_id }))))
}

async fn job(State(st): State<AppState>, Path(id): Path<u64>) -> Response {
    match st.jobs.lock().ok().and_then(|j| j.map.get(&id).cloned()) {
        Some(s) => Json(s).into_response(),
        None => (StatusCode::NOT_FOUND, Json(json!({ "error": format!("unknown job {id}") }))).into_response(),
    }
}
