use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::ws::{CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use argus_core::hub::{FeedError, StartAt, StreamInfo, SubscribeOptions, Subscription};
use argus_core::wire::ContentType;

use crate::{ApiError, AppState};

pub const TS_HEADER: &str = "x-ts-us";
/// WebSocket close code sent when a subscriber is dropped for lag.
pub const CLOSE_LAGGED: u16 = 4000;

pub(crate) fn routes() -> Router<Arc<AppState>> {
    Router::new()
        .route("/streams", get(list_streams))
        .route("/streams/{id}", get(stream_info).put(create_stream).post(publish))
        .route("/streams/{id}/latest", get(latest))
        .route("/streams/{id}/info", get(stream_info))
        .route("/hub/clock", get(clock))
        .route("/ws", get(ws_subscribe))
}

#[derive(Default, Deserialize)]
struct CreateBody {
    content_type: Option<String>,
}

#[derive(Deserialize)]
struct CreateQuery {
    content_type: Option<String>,
}

async fn create_stream(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<CreateQuery>,
    body: Bytes,
) -> Result<(StatusCode, Json<StreamInfo>), ApiError> {
    let from_body = if body.is_empty() {
        CreateBody::default()
    } else {
        serde_json::from_slice::<CreateBody>(&body).map_err(|e| ApiError::BadRequest(format!("bad body: {e}")))?
    };
    let name = from_body
        .content_type
        .or(q.content_type)
        .ok_or_else(|| ApiError::BadRequest("content_type is required".into()))?;
    let ct: ContentType = name.parse().map_err(ApiError::BadRequest)?;
    let existed = st.hub.contains(&id);
    let info = st.hub.create_stream(&id, ct)?;
    let status = if existed { StatusCode::OK } else { StatusCode::CREATED };
    Ok((status, Json(info)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublishReceipt {
    pub seq: u64,
    pub ts_us: u64,
}

async fn publish(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Json<PublishReceipt>, ApiError> {
    let ts = match headers.get(TS_HEADER) {
        Some(v) => Some(
            v.to_str()
                .ok()
                .and_then(|s| s.trim().parse::<u64>().ok())
                .ok_or_else(|| ApiError::BadRequest("X-TS-US must be an unsigned integer".into()))?,
        ),
        None => None,
    };
    let ts_us = match ts {
        Some(t) => t,
        None => st.hub.now_us().max(st.hub.info(&id)?.last_ts_us),
    };
    let seq = st.hub.publish(&id, ts_us, body)?;
    Ok(Json(PublishReceipt { seq, ts_us }))
}

async fn latest(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(match st.hub.latest(&id)? {
        Some(m) => ([(header::CONTENT_TYPE, "application/octet-stream")], m.encode()).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn stream_info(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<StreamInfo>, ApiError> {
    Ok(Json(st.hub.info(&id)?))
}

async fn list_streams(State(st): State<Arc<AppState>>) -> Json<Vec<StreamInfo>> {
    let mut all = st.hub.list_streams();
    all.sort_by(|a, b| a.stream_id.cmp(&b.stream_id));
    Json(all)
}

async fn clock(State(st): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(serde_json::json!({
        "now_us": st.hub.now_us(),
        "epoch_wall_ns": st.hub.epoch_wall_ns(),
    }))
}

#[derive(Deserialize)]
struct WsQuery {
    streams: String,
    from: Option<String>,
    /// Never disconnect this subscriber for lag.
    #[serde(default)]
    lossless: bool,
}

async fn ws_subscribe(
    State(st): State<Arc<AppState>>,
    Query(q): Query<WsQuery>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let ids: Vec<&str> = q.streams.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if ids.is_empty() {
        return Err(ApiError::BadRequest("streams must name at least one stream".into()));
    }
    let start: StartAt = q.from.as_deref().unwrap_or("latest").parse().map_err(ApiError::BadRequest)?;
    let max_lag = (!q.lossless).then(|| st.hub.config().max_lag);
    let sub = st.hub.subscribe_with(&ids, SubscribeOptions { start, max_lag })?;
    Ok(ws.on_upgrade(move |socket| pump(socket, sub)))
}

/// Forwards a blocking hub feed to the socket until either side ends.
async fn pump(mut socket: WebSocket, sub: Subscription) {
    let closer = sub.closer();
    let (tx, mut rx) = tokio::sync::mpsc::channel::<Result<Vec<u8>, FeedError>>(256);
    let reader = std::thread::Builder::new().name("ws-feed".into()).spawn(move || loop {
        match sub.recv() {
            Ok(m) => {
                if tx.blocking_send(Ok(m.encode())).is_err() {
                    break;
                }
            }
            Err(e) => {
                let _ = tx.blocking_send(Err(e));
                break;
            }
        }
    });
    if reader.is_err() {
        let _ = socket.send(Message::Close(None)).await;
        return;
    }
    loop {
        tokio::select! {
            item = rx.recv() => match item {
                Some(Ok(buf)) => {
                    if socket.send(Message::Binary(buf.into())).await.is_err() {
                        break;
                    }
                }
                Some(Err(FeedError::Lagged)) => {
                    let frame = CloseFrame { code: CLOSE_LAGGED, reason: "lagged".into() };
                    let _ = socket.send(Message::Close(Some(frame))).await;
                    break;
                }
                Some(Err(FeedError::Closed)) | None => {
                    let _ = socket.send(Message::Close(None)).await;
                    break;
                }
            },
            incoming = socket.recv() => match incoming {
                None | Some(Err(_)) | Some(Ok(Message::Close(_))) => break,
                Some(Ok(_)) => {}
            },
        }
    }
    closer.close();
}
