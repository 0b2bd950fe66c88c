use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderName, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;

use argus_core::hub::CONTROL_STREAM;
use argus_core::session::{
    FieldRange, Histogram, HistogramSpec, ReplayOptions, ReplayReport, SessionField, SessionMeta, SessionQuery,
    VerifyReport, DEFAULT_MAX_REPLAY_GAP_US,
};

use crate::{blocking, ApiError, AppState};

pub const COUNT_HEADER: &str = "x-message-count";

pub(crate) fn routes() -> Router<Arc<AppState>> {
    Router::new()
        .route("/sessions", get(list).post(start))
        .route("/sessions/histogram", get(histogram))
        .route("/sessions/{id}", get(meta))
        .route("/sessions/{id}/stop", post(stop))
        .route("/sessions/{id}/verify", get(verify))
        .route("/sessions/{id}/replay", post(replay))
        .route("/sessions/{id}/streams/{sid}", get(slice))
}

#[derive(Deserialize)]
struct StartBody {
    name: String,
    /// Defaults to every live stream except the control and replay streams.
    #[serde(default)]
    streams: Vec<String>,
    task_id: Option<String>,
}

async fn start(
    State(st): State<Arc<AppState>>,
    Json(body): Json<StartBody>,
) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    let mut streams = body.streams;
    if streams.is_empty() {
        streams = st
            .hub
            .list_streams()
            .into_iter()
            .map(|s| s.stream_id)
            .filter(|s| s != CONTROL_STREAM && !s.contains(":replay:"))
            .collect();
        streams.sort();
    }
    if streams.is_empty() {
        return Err(ApiError::BadRequest("no streams to record".into()));
    }
    let id = blocking(move || Ok(st.store.start_recording(&st.hub, &body.name, &streams, body.task_id)?)).await?;
    Ok((StatusCode::CREATED, Json(serde_json::json!({ "session_id": id }))))
}

async fn stop(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionMeta>, ApiError> {
    blocking(move || Ok(Json(st.store.stop_recording(&id)?))).await
}

async fn meta(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionMeta>, ApiError> {
    blocking(move || Ok(Json(st.store.meta(&id)?))).await
}

async fn verify(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<VerifyReport>, ApiError> {
    blocking(move || Ok(Json(st.store.verify(&id)?))).await
}

/// Filters shared by the list and histogram endpoints, in the units of the
/// underlying fields: microseconds, UNIX nanoseconds, bytes.
#[derive(Default, Deserialize)]
struct Filters {
    name: Option<String>,
    duration_min: Option<f64>,
    duration_max: Option<f64>,
    date_min: Option<f64>,
    date_max: Option<f64>,
    size_min: Option<f64>,
    size_max: Option<f64>,
}

impl Filters {
    fn query(&self) -> SessionQuery {
        let mut ranges = Vec::new();
        for (field, lo, hi) in [
            (SessionField::DurationUs, self.duration_min, self.duration_max),
            (SessionField::StartedWallNs, self.date_min, self.date_max),
            (SessionField::BytesTotal, self.size_min, self.size_max),
        ] {
            if lo.is_some() || hi.is_some() {
                ranges.push(FieldRange::inclusive(field, lo.unwrap_or(f64::MIN), hi.unwrap_or(f64::MAX)));
            }
        }
        SessionQuery {
            ranges,
            name_contains: self.name.clone().filter(|n| !n.is_empty()),
        }
    }
}

async fn list(State(st): State<Arc<AppState>>, Query(f): Query<Filters>) -> Result<Json<Vec<SessionMeta>>, ApiError> {
    let q = f.query();
    blocking(move || Ok(Json(st.store.list_sessions(&q)?))).await
}

#[derive(Deserialize)]
struct HistogramQuery {
    field: Option<String>,
    bins: Option<usize>,
    #[serde(flatten)]
    filters: Filters,
}

async fn histogram(
    State(st): State<Arc<AppState>>,
    Query(h): Query<HistogramQuery>,
) -> Result<Json<Histogram>, ApiError> {
    let field: SessionField = h.field.as_deref().unwrap_or("duration").parse().map_err(ApiError::BadRequest)?;
    let spec = HistogramSpec {
        field,
        bin_count: h.bins.unwrap_or(10),
    };
    let q = h.filters.query();
    blocking(move || Ok(Json(st.store.histogram(&spec, &q)?))).await
}

#[derive(Deserialize)]
struct SliceQuery {
    t0: Option<u64>,
    t1: Option<u64>,
}

/// Concatenated wire envelopes of the records in `[t0, t1]` (session-relative
/// microseconds).
async fn slice(
    State(st): State<Arc<AppState>>,
    Path((id, sid)): Path<(String, String)>,
    Query(q): Query<SliceQuery>,
) -> Result<Response, ApiError> {
    let msgs = blocking(move || Ok(st.store.fetch_slice(&id, &sid, q.t0.unwrap_or(0), q.t1.unwrap_or(u64::MAX))?)).await?;
    let mut body = Vec::with_capacity(msgs.iter().map(|m| m.encoded_len()).sum());
    for m in &msgs {
        m.encode_into(&mut body);
    }
    let count = HeaderName::from_static(COUNT_HEADER);
    Ok((
        [
            (header::CONTENT_TYPE, "application/octet-stream".to_string()),
            (count, msgs.len().to_string()),
        ],
        body,
    )
        .into_response())
}

#[derive(Deserialize)]
struct ReplayQuery {
    speed: Option<f64>,
    /// Idle gaps are clamped to this many milliseconds; 0 keeps them whole.
    max_gap_ms: Option<u64>,
}

async fn replay(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<ReplayQuery>,
) -> Result<Json<ReplayReport>, ApiError> {
    let opts = ReplayOptions {
        speed: q.speed.unwrap_or(1.0),
        max_gap_us: match q.max_gap_ms {
            None => Some(DEFAULT_MAX_REPLAY_GAP_US),
            Some(0) => None,
            Some(ms) => Some(ms * 1000),
        },
    };
    blocking(move || Ok(Json(st.store.replay(&id, &st.hub, opts)?))).await
}
