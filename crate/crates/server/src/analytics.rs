use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderName};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};

use argus_core::mosaic::{encode_png, session_mosaic, MosaicMeta, MosaicRequest, DEFAULT_STRIDE, DEFAULT_WINDOW_US};
use argus_core::reasoning::{
    session_accuracy, train_from_sessions, AccuracyReport, EmissionModel, LiveReasoner, LiveStreams, Reasoner,
    ReasonerConfig, TaskDescription, DEFAULT_ALPHA, DEFAULT_SELF_STAY, DEFAULT_THETA,
};
use argus_core::session::SessionStore;
use argus_core::spatial::{
    session_heatmap, session_objects, session_world, Heatmap3D, HeatmapLayer, SessionObjects, VoxelGrid, VoxelKey,
    DEFAULT_LINK_M, DEFAULT_RESOLUTION,
};
use argus_core::synth::STREAM_RGB;
use argus_core::temporal::{
    build_matrix, session_observations, summarize, Category, ConfidenceMatrix, RowSummary, SliceEntry, Vocabulary,
    DEFAULT_BIN_US,
};

use crate::{blocking, ApiError, AppState};

pub(crate) fn routes() -> Router<Arc<AppState>> {
    Router::new()
        .route("/sessions/{id}/spatial/world", get(world))
        .route("/sessions/{id}/spatial/heatmap", get(heatmap))
        .route("/sessions/{id}/spatial/objects", get(objects))
        .route("/sessions/{id}/matrix", get(matrix))
        .route("/sessions/{id}/matrix/summary", get(matrix_summary))
        .route("/sessions/{id}/matrix/slice", get(matrix_slice))
        .route("/sessions/{id}/mosaic", get(mosaic))
        .route("/sessions/{id}/accuracy", get(accuracy))
        .route("/reasoning/train", post(train))
        .route("/reasoning/models", get(models))
        .route("/reasoning/live", get(live_status).post(live_start))
        .route("/reasoning/live/stop", post(live_stop))
}

// ------------------------------------------------------------------ spatial

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldCell {
    pub key: VoxelKey,
    pub count: u64,
    pub centroid: [f64; 3],
    pub color: Option<[u8; 3]>,
}

/// Voxelized world model as a sparse cell list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldDoc {
    pub resolution: f64,
    pub origin: [f64; 3],
    pub total_count: u64,
    pub cells: Vec<WorldCell>,
}

impl WorldDoc {
    pub fn from_grid(g: &VoxelGrid) -> WorldDoc {
        WorldDoc {
            resolution: g.resolution,
            origin: g.origin,
            total_count: g.total_count(),
            cells: g
                .cells
                .iter()
                .map(|(&key, c)| WorldCell {
                    key,
                    count: c.count,
                    centroid: g.centroid(key).expect("occupied"),
                    color: g.mean_color(key),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub key: VoxelKey,
    pub center: [f64; 3],
    pub count: u64,
    /// Relative to the busiest cell.
    pub density: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapDoc {
    pub layer: HeatmapLayer,
    pub resolution: f64,
    pub t0_us: u64,
    pub t1_us: u64,
    pub samples: u64,
    pub cells: Vec<HeatmapCell>,
}

impl HeatmapDoc {
    pub fn new(layer: HeatmapLayer, t0_us: u64, t1_us: u64, h: &Heatmap3D) -> HeatmapDoc {
        HeatmapDoc {
            layer,
            resolution: h.grid.resolution,
            t0_us,
            t1_us,
            samples: h.grid.total_count(),
            cells: h
                .grid
                .cells
                .iter()
                .map(|(&key, c)| HeatmapCell {
                    key,
                    center: h.grid.voxel_center(key).into(),
                    count: c.count,
                    density: h.densities[&key],
                })
                .collect(),
        }
    }
}

#[derive(Deserialize)]
struct WorldQuery {
    res: Option<f64>,
}

async fn world(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<WorldQuery>,
) -> Result<Json<WorldDoc>, ApiError> {
    let res = q.res.unwrap_or(DEFAULT_RESOLUTION);
    blocking(move || Ok(Json(WorldDoc::from_grid(&session_world(&st.store, &id, res)?)))).await
}

#[derive(Deserialize)]
struct HeatmapQuery {
    stream: Option<String>,
    /// Session-relative microseconds.
    t0: Option<u64>,
    t1: Option<u64>,
    res: Option<f64>,
}

async fn heatmap(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<HeatmapQuery>,
) -> Result<Json<HeatmapDoc>, ApiError> {
    let layer: HeatmapLayer = q.stream.as_deref().unwrap_or("gaze").parse()?;
    let (t0, t1) = (q.t0.unwrap_or(0), q.t1.unwrap_or(u64::MAX));
    if t0 > t1 {
        return Err(ApiError::BadRequest(format!("t0 {t0} > t1 {t1}")));
    }
    let res = q.res.unwrap_or(DEFAULT_RESOLUTION);
    blocking(move || {
        let h = session_heatmap(&st.store, &id, layer, t0, t1, res)?;
        Ok(Json(HeatmapDoc::new(layer, t0, t1, &h)))
    })
    .await
}

#[derive(Deserialize)]
struct ObjectsQuery {
    label: Option<String>,
    link_m: Option<f64>,
}

async fn objects(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<ObjectsQuery>,
) -> Result<Json<SessionObjects>, ApiError> {
    let link = q.link_m.unwrap_or(DEFAULT_LINK_M);
    if !(link.is_finite() && link > 0.0) {
        return Err(ApiError::BadRequest(format!("link_m must be positive, got {link}")));
    }
    blocking(move || {
        let label = q.label.as_deref().filter(|l| !l.is_empty());
        Ok(Json(session_objects(&st.store, &id, label, link)?))
    })
    .await
}

// ----------------------------------------------------------------- temporal

/// Every label of the task, so rows exist even when never observed.
pub fn task_vocabulary(task: &TaskDescription) -> Vocabulary {
    let mut v = Vocabulary::new();
    v.insert(Category::Objects, task.object_vocabulary().into_iter().collect());
    v.insert(Category::Actions, task.action_vocabulary().into_iter().collect());
    v.insert(Category::Steps, (0..task.len()).map(|i| format!("step {i}")).collect());
    v
}

fn session_vocabulary(st: &AppState, store: &SessionStore, id: &str) -> Result<Option<Vocabulary>, ApiError> {
    let meta = store.meta(id)?;
    Ok(meta.task_id.as_deref().and_then(|t| st.tasks.get(t)).map(task_vocabulary))
}

fn bin_us(bin_ms: Option<u64>) -> Result<u64, ApiError> {
    match bin_ms {
        None => Ok(DEFAULT_BIN_US),
        Some(0) => Err(ApiError::BadRequest("bin_ms must be positive".into())),
        Some(ms) => Ok(ms * 1000),
    }
}

fn session_matrix(st: &AppState, id: &str, bin_width_us: u64) -> Result<ConfidenceMatrix, ApiError> {
    let vocab = session_vocabulary(st, &st.store, id)?;
    let (obs, duration) = session_observations(&st.store, id)?;
    Ok(build_matrix(&obs, duration, bin_width_us, vocab.as_ref())?)
}

#[derive(Deserialize)]
struct MatrixQuery {
    bin_ms: Option<u64>,
}

async fn matrix(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<MatrixQuery>,
) -> Result<Json<ConfidenceMatrix>, ApiError> {
    let bin = bin_us(q.bin_ms)?;
    blocking(move || Ok(Json(session_matrix(&st, &id, bin)?))).await
}

async fn matrix_summary(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<Vec<RowSummary>>, ApiError> {
    blocking(move || {
        let vocab = session_vocabulary(&st, &st.store, &id)?;
        let (obs, _) = session_observations(&st.store, &id)?;
        Ok(Json(summarize(&obs, vocab.as_ref())))
    })
    .await
}

/// One matrix column split at a threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixSlice {
    pub t_us: u64,
    pub theta: f64,
    pub bin_width_us: u64,
    pub column: usize,
    /// Cells with confidence ≥ θ.
    pub kept: Vec<SliceEntry>,
    /// Cells present in the column but under θ.
    pub below: Vec<SliceEntry>,
}

#[derive(Deserialize)]
struct SliceQuery {
    t_ms: u64,
    theta: Option<f64>,
    bin_ms: Option<u64>,
}

async fn matrix_slice(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<SliceQuery>,
) -> Result<Json<MatrixSlice>, ApiError> {
    let theta = q.theta.unwrap_or(DEFAULT_THETA);
    if !(0.0..=1.0).contains(&theta) {
        return Err(ApiError::BadRequest(format!("theta {theta} outside [0, 1]")));
    }
    let bin = bin_us(q.bin_ms)?;
    let t_us = q.t_ms.saturating_mul(1000);
    blocking(move || {
        let m = session_matrix(&st, &id, bin)?;
        let (kept, below) = m.slice_at(t_us, 0.0).into_iter().partition(|e| e.confidence >= theta);
        Ok(Json(MatrixSlice {
            t_us,
            theta,
            bin_width_us: bin,
            column: argus_core::temporal::column_of(t_us, bin, m.columns),
            kept,
            below,
        }))
    })
    .await
}

// ------------------------------------------------------------------- mosaic

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MosaicDoc {
    pub meta: MosaicMeta,
    pub png_base64: String,
}

#[derive(Deserialize)]
struct MosaicQuery {
    t_ms: u64,
    window_ms: Option<u64>,
    seed: Option<u64>,
    stride: Option<usize>,
    stream: Option<String>,
    /// `json` (default) or `png`.
    format: Option<String>,
}

async fn mosaic(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<MosaicQuery>,
) -> Result<Response, ApiError> {
    let req = MosaicRequest {
        t_us: q.t_ms.saturating_mul(1000),
        window_us: q.window_ms.map_or(DEFAULT_WINDOW_US, |w| w.saturating_mul(1000)),
        stride: q.stride.unwrap_or(DEFAULT_STRIDE),
        seed: q.seed.unwrap_or(0),
        stream: q.stream.unwrap_or_else(|| STREAM_RGB.into()),
    };
    let png_only = match q.format.as_deref() {
        None | Some("json") => false,
        Some("png") => true,
        Some(f) => return Err(ApiError::BadRequest(format!("unknown format {f:?}"))),
    };
    let result = blocking(move || Ok(session_mosaic(&st.store, &id, &req)?)).await?;
    let png = encode_png(&result.image);
    if png_only {
        let used = HeaderName::from_static("x-mosaic-frames-used");
        let list = result.meta.frames_used.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",");
        return Ok(([(header::CONTENT_TYPE, "image/png".to_string()), (used, list)], png).into_response());
    }
    Ok(Json(MosaicDoc {
        meta: result.meta,
        png_base64: base64::engine::general_purpose::STANDARD.encode(png),
    })
    .into_response())
}

// ---------------------------------------------------------------- reasoning

#[derive(Deserialize)]
struct TrainBody {
    task_id: String,
    session_ids: Vec<String>,
    alpha: Option<f64>,
    self_stay: Option<f64>,
}

async fn train(State(st): State<Arc<AppState>>, Json(b): Json<TrainBody>) -> Result<Json<EmissionModel>, ApiError> {
    let task = st.task(&b.task_id)?;
    if b.session_ids.is_empty() {
        return Err(ApiError::BadRequest("session_ids must not be empty".into()));
    }
    blocking(move || {
        let alpha = b.alpha.unwrap_or(DEFAULT_ALPHA);
        let stay = b.self_stay.unwrap_or(DEFAULT_SELF_STAY);
        let model = train_from_sessions(&st.store, &task, &b.session_ids, alpha, stay)?;
        st.set_model(model.clone());
        Ok(Json(model))
    })
    .await
}

async fn models(State(st): State<Arc<AppState>>) -> Json<Vec<String>> {
    let mut ids: Vec<String> = st.models.read().keys().cloned().collect();
    ids.sort();
    Json(ids)
}

fn trained(st: &AppState, task_id: &str) -> Result<EmissionModel, ApiError> {
    st.model(task_id)
        .ok_or_else(|| ApiError::Conflict(format!("no trained model for task {task_id}; POST /reasoning/train first")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyDoc {
    pub session_id: String,
    pub task_id: String,
    pub theta: f64,
    pub report: AccuracyReport,
}

#[derive(Deserialize)]
struct AccuracyQuery {
    theta: Option<f64>,
    task: Option<String>,
}

async fn accuracy(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<AccuracyQuery>,
) -> Result<Json<AccuracyDoc>, ApiError> {
    let theta = q.theta.unwrap_or(DEFAULT_THETA);
    if !(0.0..=1.0).contains(&theta) {
        return Err(ApiError::BadRequest(format!("theta {theta} outside [0, 1]")));
    }
    blocking(move || {
        let task_id = match q.task {
            Some(t) => t,
            None => st
                .store
                .meta(&id)?
                .task_id
                .ok_or_else(|| ApiError::BadRequest(format!("session {id} has no task; pass ?task=")))?,
        };
        let task = st.task(&task_id)?;
        let model = trained(&st, &task_id)?;
        let report = session_accuracy(&st.store, &id, &task, &model, &ReasonerConfig::with_theta(theta))?;
        Ok(Json(AccuracyDoc {
            session_id: id,
            task_id,
            theta,
            report,
        }))
    })
    .await
}

#[derive(Deserialize)]
struct LiveBody {
    task_id: String,
    theta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiveStatus {
    pub task_id: Option<String>,
    pub output: String,
    pub published: u64,
}

fn status_of(slot: &Option<(String, LiveReasoner)>) -> LiveStatus {
    LiveStatus {
        task_id: slot.as_ref().map(|(t, _)| t.clone()),
        output: LiveStreams::default().output,
        published: slot.as_ref().map_or(0, |(_, r)| r.published()),
    }
}

async fn live_status(State(st): State<Arc<AppState>>) -> Json<LiveStatus> {
    Json(status_of(&st.live.lock()))
}

/// Starts step tracking on the live perception streams.
async fn live_start(State(st): State<Arc<AppState>>, Json(b): Json<LiveBody>) -> Result<Json<LiveStatus>, ApiError> {
    let task = st.task(&b.task_id)?;
    let model = trained(&st, &b.task_id)?;
    let reasoner = Reasoner::new(task, model, &ReasonerConfig::with_theta(b.theta.unwrap_or(DEFAULT_THETA)))?;
    let mut slot = st.live.lock();
    if let Some((t, _)) = slot.as_ref() {
        return Err(ApiError::Conflict(format!("live reasoning already running for {t}")));
    }
    *slot = Some((b.task_id, LiveReasoner::start(st.hub.clone(), reasoner, LiveStreams::default())?));
    Ok(Json(status_of(&slot)))
}

async fn live_stop(State(st): State<Arc<AppState>>) -> Result<Json<LiveStatus>, ApiError> {
    let running = st.live.lock().take();
    let Some((task_id, r)) = running else {
        return Err(ApiError::Conflict("live reasoning is not running".into()));
    };
    let published = r.published();
    blocking(move || {
        r.stop();
        Ok(())
    })
    .await?;
    Ok(Json(LiveStatus {
        task_id: Some(task_id),
        output: LiveStreams::default().output,
        published,
    }))
}
