use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use thiserror::Error;

use argus_core::hub::HubError;
use argus_core::mosaic::MosaicError;
use argus_core::reasoning::ReasoningError;
use argus_core::session::SessionError;
use argus_core::spatial::{SpatialError, SpatialQueryError};
use argus_core::temporal::TemporalError;

/// Error returned by every endpoint; rendered as `{"error": "..."}`.
#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Gone(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Gone(_) => StatusCode::GONE,
            ApiError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.to_string() });
        (self.status(), Json(body)).into_response()
    }
}

impl From<HubError> for ApiError {
    fn from(e: HubError) -> Self {
        let msg = e.to_string();
        match e {
            HubError::InvalidStreamId(_) | HubError::EmptyPayload => ApiError::BadRequest(msg),
            HubError::ConflictingContentType { .. } | HubError::TimestampRegression { .. } => ApiError::Conflict(msg),
            HubError::UnknownStream(_) => ApiError::NotFound(msg),
            HubError::SeqEvicted { .. } => ApiError::Gone(msg),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let msg = e.to_string();
        match e {
            SessionError::Hub(h) => h.into(),
            SessionError::UnknownSession(_) | SessionError::UnknownStream(_) | SessionError::NoSessions => {
                ApiError::NotFound(msg)
            }
            SessionError::AlreadyRecording(_)
            | SessionError::NotRecording(_)
            | SessionError::ArchiveImmutable(_)
            | SessionError::SessionOpen(_) => ApiError::Conflict(msg),
            SessionError::InvalidRange(_) | SessionError::InvalidBinCount | SessionError::InvalidSpeed(_) => {
                ApiError::BadRequest(msg)
            }
            SessionError::Io(_)
            | SessionError::CorruptArchive { .. }
            | SessionError::Meta { .. }
            | SessionError::Record(_)
            | SessionError::Recorder { .. } => ApiError::Internal(msg),
        }
    }
}

impl From<SpatialQueryError> for ApiError {
    fn from(e: SpatialQueryError) -> Self {
        let msg = e.to_string();
        match e {
            SpatialQueryError::Session(s) => s.into(),
            SpatialQueryError::Spatial(SpatialError::NonPositiveResolution(_)) | SpatialQueryError::UnknownLayer(_) => {
                ApiError::BadRequest(msg)
            }
            SpatialQueryError::MissingStream(_) => ApiError::NotFound(msg),
            SpatialQueryError::Spatial(_) | SpatialQueryError::Payload { .. } => ApiError::Internal(msg),
        }
    }
}

impl From<TemporalError> for ApiError {
    fn from(e: TemporalError) -> Self {
        let msg = e.to_string();
        match e {
            TemporalError::Session(s) => s.into(),
            TemporalError::NoModelOutputs => ApiError::NotFound(msg),
            TemporalError::ZeroBinWidth | TemporalError::InvalidThreshold(_) => ApiError::BadRequest(msg),
            TemporalError::Payload { .. } => ApiError::Internal(msg),
        }
    }
}

impl From<MosaicError> for ApiError {
    fn from(e: MosaicError) -> Self {
        let msg = e.to_string();
        match e {
            MosaicError::Session(s) => s.into(),
            MosaicError::NoFrames => ApiError::NotFound(msg),
            MosaicError::ZeroStride => ApiError::BadRequest(msg),
            MosaicError::DegenerateConfiguration(_)
            | MosaicError::InsufficientInliers { .. }
            | MosaicError::CanvasTooLarge { .. } => ApiError::Unprocessable(msg),
            MosaicError::Frame { .. } => ApiError::Internal(msg),
        }
    }
}

impl From<ReasoningError> for ApiError {
    fn from(e: ReasoningError) -> Self {
        let msg = e.to_string();
        match e {
            ReasoningError::Session(s) => s.into(),
            ReasoningError::Hub(h) => h.into(),
            ReasoningError::MissingStream(..) => ApiError::NotFound(msg),
            ReasoningError::TaskMismatch { .. } => ApiError::Conflict(msg),
            ReasoningError::InvalidModel(_) => ApiError::BadRequest(msg),
            ReasoningError::MalformedTask(_) | ReasoningError::UnknownVocabulary { .. } | ReasoningError::Payload { .. } => {
                ApiError::Internal(msg)
            }
        }
    }
}
