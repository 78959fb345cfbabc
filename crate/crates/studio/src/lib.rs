//! HTTP backend for interactively designing an encoder: sessions over a
//! dataset manifest, marker editing, background training jobs, saliency
//! overlays and metric history.

pub mod error;
pub mod session;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mlca::imagery::io::{encode_overlay_png, encode_png};
use mlca::imagery::Image;
use mlca::metrics::MetricRow;
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

pub use error::{ApiError, ApiResult};
pub use session::{CreateSession, ImageMetrics, LayerAggregate, MarkerInput, RevisionMetrics, Session, Stage};

use session::{marker_outputs, parse_markers, run_training, Snapshot};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Succeeded,
    Failed,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: String,
    pub session_id: String,
    pub state: JobState,
    pub progress: f64,
    pub message: String,
    /// Session revision committed by the job, once it succeeded.
    pub revision: Option<u64>,
}

#[derive(Default)]
struct Registry {
    sessions: BTreeMap<String, Session>,
    jobs: BTreeMap<String, JobStatus>,
    next_session: u64,
    next_job: u64,
}

impl Registry {
    fn session(&self, id: &str) -> ApiResult<&Session> {
        self.sessions.get(id).ok_or_else(|| ApiError::NotFound(format!("unknown session '{id}'")))
    }

    fn session_mut(&mut self, id: &str) -> ApiResult<&mut Session> {
        self.sessions.get_mut(id).ok_or_else(|| ApiError::NotFound(format!("unknown session '{id}'")))
    }

    /// The session holding `image_id`: the named one, or else the newest.
    fn session_for_image(&self, image_id: &str, session: Option<&str>) -> ApiResult<&Session> {
        let found = match session {
            Some(s) => Some(self.session(s)?).filter(|s| s.has_image(image_id)),
            None => self.sessions.values().filter(|s| s.has_image(image_id)).max_by_key(|s| s.sequence),
        };
        found.ok_or_else(|| ApiError::NotFound(format!("unknown image '{image_id}'")))
    }
}

/// Shared server state. Locks are held only for bookkeeping; image work
/// happens outside them.
#[derive(Clone, Default)]
pub struct AppState {
    registry: Arc<Mutex<Registry>>,
}

impl AppState {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> MutexGuard<'_, Registry> {
        self.registry.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn job(&self, id: &str) -> Option<JobStatus> {
        self.lock().jobs.get(id).cloned()
    }

    fn update_job(&self, id: &str, f: impl FnOnce(&mut JobStatus)) {
        if let Some(job) = self.lock().jobs.get_mut(id) {
            f(job);
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/images", get(list_images))
        .route("/sessions/{id}/train", post(start_training))
        .route("/sessions/{id}/metrics", get(metric_history))
        .route("/images/{id}/raw", get(raw_image))
        .route("/images/{id}/markers", get(get_markers).put(put_markers))
        .route("/images/{id}/saliency/{layer}", get(saliency_overlay))
        .route("/jobs/{id}", get(job_status))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Serves the API and, when given, the static files of a front end.
pub async fn serve(addr: SocketAddr, state: AppState, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let mut app = router(state);
    if let Some(dir) = static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, app).await
}

#[derive(Serialize)]
struct Created {
    session_id: String,
    revision: u64,
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Created>)> {
    let req: CreateSession =
        serde_json::from_slice(&body).map_err(|e| ApiError::Unprocessable(format!("malformed request: {e}")))?;
    // manifest loading checks every file, keep it off the async workers
    let sequence = {
        let mut reg = state.lock();
        reg.next_session += 1;
        reg.next_session
    };
    let id = format!("s{sequence}");
    let session = tokio::task::spawn_blocking({
        let id = id.clone();
        move || Session::create(id, sequence, req)
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))??;
    state.lock().sessions.insert(id.clone(), session);
    Ok((StatusCode::CREATED, Json(Created { session_id: id, revision: 0 })))
}

#[derive(Deserialize)]
struct ListQuery {
    sort: Option<String>,
    layer: Option<usize>,
}

#[derive(Serialize)]
struct ImageRow {
    image_id: String,
    splits: Vec<String>,
    markers: usize,
    thumbnail: String,
    has_ground_truth: bool,
    metrics: Option<ImageMetrics>,
}

async fn list_images(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ListQuery>,
) -> ApiResult<Json<Vec<ImageRow>>> {
    let reg = state.lock();
    let session = reg.session(&id)?;
    let snapshot = session.committed.clone();
    let mut rows: Vec<ImageRow> = session
        .manifest
        .entries
        .iter()
        .map(|e| ImageRow {
            image_id: e.image_id.clone(),
            splits: session
                .manifest
                .splits
                .iter()
                .filter(|(_, ids)| ids.contains(&e.image_id))
                .map(|(name, _)| name.clone())
                .collect(),
            markers: session.markers.get(&e.image_id).map_or(0, Vec::len),
            thumbnail: format!("/images/{}/raw?session={id}&max_side=128", e.image_id),
            has_ground_truth: e.gt_path.is_some(),
            metrics: snapshot.as_ref().and_then(|s| s.metrics.get(&e.image_id).cloned()),
        })
        .collect();
    match q.sort.as_deref() {
        None | Some("id") => {}
        Some("worst") => {
            let depth = session.architecture.layers.len();
            let layer = q.layer.unwrap_or(depth);
            if layer == 0 || layer > depth {
                return Err(ApiError::Unprocessable(format!("layer {layer} is outside 1..={depth}")));
            }
            let key = |r: &ImageRow| -> f64 {
                r.metrics
                    .as_ref()
                    .and_then(|m| m.ca.get(layer - 1))
                    .map_or(f64::INFINITY, |row: &MetricRow| row.dice)
            };
            rows.sort_by(|a, b| key(a).total_cmp(&key(b)));
        }
        Some(other) => return Err(ApiError::Unprocessable(format!("unknown sort '{other}'"))),
    }
    Ok(Json(rows))
}

#[derive(Deserialize)]
struct ImageQuery {
    session: Option<String>,
    max_side: Option<usize>,
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

/// Nearest-neighbour shrink so that the longer side is at most `max_side`.
fn shrink(img: &Image, max_side: usize) -> Image {
    let (w, h) = (img.width(), img.height());
    let longest = w.max(h);
    if max_side == 0 || longest <= max_side {
        return img.clone();
    }
    let (nw, nh) = ((w * max_side / longest).max(1), (h * max_side / longest).max(1));
    let c = img.channels();
    let mut data = Vec::with_capacity(nw * nh * c);
    for y in 0..nh {
        for x in 0..nw {
            data.extend_from_slice(img.pixel(x * w / nw, y * h / nh));
        }
    }
    Image::from_vec(nw, nh, c, data).expect("consistent buffer")
}

async fn raw_image(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ImageQuery>,
) -> ApiResult<Response> {
    let entry = {
        let reg = state.lock();
        let session = reg.session_for_image(&id, q.session.as_deref())?;
        session.manifest.entry(&id).cloned().expect("session holds the image")
    };
    let bytes = tokio::task::spawn_blocking(move || -> ApiResult<Vec<u8>> {
        let img = entry.read_image()?;
        let img = match q.max_side {
            Some(m) => shrink(&img, m),
            None => img,
        };
        Ok(encode_png(&img)?)
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))??;
    Ok(png(bytes))
}

#[derive(Deserialize)]
struct SessionQuery {
    session: Option<String>,
}

#[derive(Serialize)]
struct MarkerList {
    session_id: String,
    image_id: String,
    revision: u64,
    markers: Vec<MarkerInput>,
}

async fn get_markers(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<SessionQuery>,
) -> ApiResult<Json<MarkerList>> {
    let reg = state.lock();
    let session = reg.session_for_image(&id, q.session.as_deref())?;
    Ok(Json(MarkerList {
        session_id: session.id.clone(),
        image_id: id.clone(),
        revision: session.revision,
        markers: marker_outputs(session.markers.get(&id).map_or(&[], Vec::as_slice)),
    }))
}

async fn put_markers(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<SessionQuery>,
    body: Bytes,
) -> ApiResult<Json<MarkerList>> {
    let (session_id, entry) = {
        let reg = state.lock();
        let session = reg.session_for_image(&id, q.session.as_deref())?;
        (session.id.clone(), session.manifest.entry(&id).cloned().expect("session holds the image"))
    };
    let markers = tokio::task::spawn_blocking(move || -> ApiResult<_> {
        let img = entry.read_image()?;
        parse_markers(&body, &entry.image_id, img.width(), img.height())
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))??;
    let mut reg = state.lock();
    let session = reg.session_mut(&session_id)?;
    let echoed = marker_outputs(&markers);
    if markers.is_empty() {
        session.markers.remove(&id);
    } else {
        session.markers.insert(id.clone(), markers);
    }
    session.revision += 1;
    Ok(Json(MarkerList {
        session_id,
        image_id: id,
        revision: session.revision,
        markers: echoed,
    }))
}

#[derive(Serialize)]
struct JobCreated {
    job_id: String,
}

async fn start_training(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<(StatusCode, Json<JobCreated>)> {
    let (job_id, inputs) = {
        let mut reg = state.lock();
        let session = reg.session(&id)?;
        if let Some(running) = &session.running_job {
            return Err(ApiError::Conflict(format!("job '{running}' is still training this session")));
        }
        if session.marker_count() == 0 {
            return Err(ApiError::Unprocessable("place at least one marker before training".into()));
        }
        let inputs = session.training_inputs();
        reg.next_job += 1;
        let job_id = format!("j{}", reg.next_job);
        reg.jobs.insert(
            job_id.clone(),
            JobStatus {
                job_id: job_id.clone(),
                session_id: id.clone(),
                state: JobState::Queued,
                progress: 0.0,
                message: String::new(),
                revision: None,
            },
        );
        reg.session_mut(&id)?.running_job = Some(job_id.clone());
        (job_id, inputs)
    };
    let worker = state.clone();
    let jid = job_id.clone();
    tokio::task::spawn_blocking(move || {
        worker.update_job(&jid, |j| j.state = JobState::Running);
        let result = run_training(&inputs, |p| worker.update_job(&jid, |j| j.progress = p));
        let mut reg = worker.lock();
        let outcome = match (result, reg.sessions.get_mut(&id)) {
            (Ok(mut snapshot), Some(session)) => {
                session.revision += 1;
                snapshot.revision = session.revision;
                if !snapshot.layers.is_empty() {
                    session.history.push(RevisionMetrics {
                        revision: snapshot.revision,
                        layers: snapshot.layers.clone(),
                    });
                }
                let revision = snapshot.revision;
                session.committed = Some(Arc::new(snapshot));
                session.running_job = None;
                Ok(revision)
            }
            (Err(e), session) => {
                if let Some(s) = session {
                    s.running_job = None;
                }
                Err(e.to_string())
            }
            (Ok(_), None) => Err(format!("session '{id}' disappeared")),
        };
        if let Some(job) = reg.jobs.get_mut(&jid) {
            match outcome {
                Ok(revision) => {
                    job.state = JobState::Succeeded;
                    job.progress = 1.0;
                    job.message = format!("committed revision {revision}");
                    job.revision = Some(revision);
                }
                Err(msg) => {
                    job.state = JobState::Failed;
                    job.message = msg;
                }
            }
        }
    });
    Ok((StatusCode::ACCEPTED, Json(JobCreated { job_id })))
}

async fn job_status(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<JobStatus>> {
    state.job(&id).map(Json).ok_or_else(|| ApiError::NotFound(format!("unknown job '{id}'")))
}

#[derive(Deserialize)]
struct OverlayQuery {
    session: Option<String>,
    stage: Option<String>,
}

const FLIM_COLOR: [u8; 3] = [255, 96, 0];
const CA_COLOR: [u8; 3] = [0, 170, 255];

async fn saliency_overlay(
    State(state): State<AppState>,
    Path((id, layer)): Path<(String, usize)>,
    Query(q): Query<OverlayQuery>,
) -> ApiResult<Response> {
    let stage = match q.stage.as_deref() {
        None | Some("flim") => Stage::Flim,
        Some("ca") => Stage::Ca,
        Some(other) => return Err(ApiError::Unprocessable(format!("unknown stage '{other}', expected flim or ca"))),
    };
    let snapshot: Arc<Snapshot> = {
        let reg = state.lock();
        let session = reg.session_for_image(&id, q.session.as_deref())?;
        session
            .committed
            .clone()
            .ok_or_else(|| ApiError::NotFound(format!("session '{}' has no trained model yet", session.id)))?
    };
    let bytes = tokio::task::spawn_blocking(move || -> ApiResult<Vec<u8>> {
        let map = snapshot
            .overlay(&id, stage, layer)
            .ok_or_else(|| ApiError::NotFound(format!("no layer {layer} saliency for '{id}'")))?;
        let color = if stage == Stage::Flim { FLIM_COLOR } else { CA_COLOR };
        Ok(encode_overlay_png(map, color, 0.8)?)
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))??;
    Ok(png(bytes))
}

#[derive(Serialize)]
struct MetricHistory {
    session_id: String,
    revision: u64,
    history: Vec<RevisionMetrics>,
}

async fn metric_history(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<MetricHistory>> {
    let reg = state.lock();
    let session = reg.session(&id)?;
    Ok(Json(MetricHistory {
        session_id: id,
        revision: session.revision,
        history: session.history.clone(),
    }))
}
