//! Stream identifiers, message type and the binary wire envelope.
//!
//! Envelope layout (all integers little-endian):
//!
//! ```text
//! u8  version (= 1)
//! u8  content-type tag
//! u16 stream id length
//! ..  stream id bytes (ASCII, `[a-z0-9:_-]+`)
//! u64 seq
//! u64 ts_us
//! u64 wall_ns
//! u32 payload length
//! ..  payload bytes
//! ```

use std::fmt;
use std::str::FromStr;

use bytes::Bytes;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENVELOPE_VERSION: u8 = 1;

/// Fixed part of the envelope, excluding the stream id and payload.
pub const ENVELOPE_FIXED_LEN: usize = 1 + 1 + 2 + 8 + 8 + 8 + 4;

pub const MAX_STREAM_ID_LEN: usize = 255;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("truncated envelope: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("unsupported envelope version {0}")]
    Version(u8),
    #[error("unknown content-type tag {0}")]
    UnknownContentType(u8),
    #[error("invalid stream id {0:?}")]
    InvalidStreamId(String),
    #[error("empty payload")]
    EmptyPayload,
    #[error("json envelope is only defined for json content")]
    NotJson,
    #[error("malformed json envelope: {0}")]
    Json(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContentType {
    Json,
    JpegFrame,
    Depth16,
    Pointcloud,
    Gaze,
    Hand,
    Imu,
    Detections,
    Actions,
    StepState,
}

impl ContentType {
    pub const ALL: [ContentType; 10] = [
        ContentType::Json,
        ContentType::JpegFrame,
        ContentType::Depth16,
        ContentType::Pointcloud,
        ContentType::Gaze,
        ContentType::Hand,
        ContentType::Imu,
        ContentType::Detections,
        ContentType::Actions,
        ContentType::StepState,
    ];

    pub fn tag(self) -> u8 {
        match self {
            ContentType::Json => 0,
            ContentType::JpegFrame => 1,
            ContentType::Depth16 => 2,
            ContentType::Pointcloud => 3,
            ContentType::Gaze => 4,
            ContentType::Hand => 5,
            ContentType::Imu => 6,
            ContentType::Detections => 7,
            ContentType::Actions => 8,
            ContentType::StepState => 9,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ContentType::Json => "json",
            ContentType::JpegFrame => "jpeg-frame",
            ContentType::Depth16 => "depth16",
            ContentType::Pointcloud => "pointcloud",
            ContentType::Gaze => "gaze",
            ContentType::Hand => "hand",
            ContentType::Imu => "imu",
            ContentType::Detections => "detections",
            ContentType::Actions => "actions",
            ContentType::StepState => "step-state",
        }
    }
}

impl fmt::Display for ContentType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ContentType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown content type {s:?}"))
    }
}

/// A validated stream name: nonempty, at most 255 bytes of `[a-z0-9:_-]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct StreamId(String);

impl StreamId {
    pub fn new(s: impl Into<String>) -> Result<Self, WireError> {
        let s = s.into();
        if is_valid_stream_id(&s) {
            Ok(StreamId(s))
        } else {
            Err(WireError::InvalidStreamId(s))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

pub fn is_valid_stream_id(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= MAX_STREAM_ID_LEN
        && s.bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || matches!(b, b':' | b'_' | b'-'))
}

impl TryFrom<String> for StreamId {
    type Error = WireError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        StreamId::new(s)
    }
}

impl From<StreamId> for String {
    fn from(id: StreamId) -> String {
        id.0
    }
}

impl FromStr for StreamId {
    type Err = WireError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StreamId::new(s)
    }
}

impl fmt::Display for StreamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for StreamId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// One timestamped record on a named stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamMessage {
    pub stream_id: StreamId,
    pub seq: u64,
    /// Microseconds since the hub session epoch.
    pub ts_us: u64,
    /// UNIX nanoseconds at the time the hub accepted the message.
    pub wall_ns: u64,
    pub content_type: ContentType,
    pub payload: Bytes,
}

impl StreamMessage {
    pub fn encoded_len(&self) -> usize {
        ENVELOPE_FIXED_LEN + self.stream_id.as_str().len() + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        let id = self.stream_id.as_str().as_bytes();
        out.push(ENVELOPE_VERSION);
        out.push(self.content_type.tag());
        out.extend_from_slice(&(id.len() as u16).to_le_bytes());
        out.extend_from_slice(id);
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&self.ts_us.to_le_bytes());
        out.extend_from_slice(&self.wall_ns.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
    }

    /// Decodes one envelope from the front of `buf`, returning the message
    /// and the number of bytes consumed.
    pub fn decode(buf: &[u8]) -> Result<(StreamMessage, usize), WireError> {
        let mut cur = Cursor { buf, pos: 0 };
        let version = cur.u8()?;
        if version != ENVELOPE_VERSION {
            return Err(WireError::Version(version));
        }
        let tag = cur.u8()?;
        let content_type = ContentType::from_tag(tag).ok_or(WireError::UnknownContentType(tag))?;
        let id_len = cur.u16()? as usize;
        let id_bytes = cur.take(id_len)?;
        let id = std::str::from_utf8(id_bytes)
            .map_err(|_| WireError::InvalidStreamId(String::from_utf8_lossy(id_bytes).into_owned()))?;
        let stream_id = StreamId::new(id)?;
        let seq = cur.u64()?;
        let ts_us = cur.u64()?;
        let wall_ns = cur.u64()?;
        let len = cur.u32()? as usize;
        if len == 0 {
            return Err(WireError::EmptyPayload);
        }
        let payload = Bytes::copy_from_slice(cur.take(len)?);
        Ok((
            StreamMessage {
                stream_id,
                seq,
                ts_us,
                wall_ns,
                content_type,
                payload,
            },
            cur.pos,
        ))
    }

    /// Textual envelope; only defined for `json` content.
    pub fn to_json_envelope(&self) -> Result<String, WireError> {
        if self.content_type != ContentType::Json {
            return Err(WireError::NotJson);
        }
        let payload: serde_json::Value =
            serde_json::from_slice(&self.payload).map_err(|e| WireError::Json(e.to_string()))?;
        let env = JsonEnvelope {
            stream_id: self.stream_id.clone(),
            seq: self.seq,
            ts_us: self.ts_us,
            wall_ns: self.wall_ns,
            content_type: self.content_type,
            payload,
        };
        serde_json::to_string(&env).map_err(|e| WireError::Json(e.to_string()))
    }

    pub fn from_json_envelope(text: &str) -> Result<StreamMessage, WireError> {
        let env: JsonEnvelope = serde_json::from_str(text).map_err(|e| WireError::Json(e.to_string()))?;
        if env.content_type != ContentType::Json {
            return Err(WireError::NotJson);
        }
        let payload = serde_json::to_vec(&env.payload).map_err(|e| WireError::Json(e.to_string()))?;
        Ok(StreamMessage {
            stream_id: env.stream_id,
            seq: env.seq,
            ts_us: env.ts_us,
            wall_ns: env.wall_ns,
            content_type: env.content_type,
            payload: Bytes::from(payload),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct JsonEnvelope {
    stream_id: StreamId,
    seq: u64,
    ts_us: u64,
    wall_ns: u64,
    content_type: ContentType,
    payload: serde_json::Value,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(WireError::Truncated {
            needed: self.pos.saturating_add(n),
            available: self.buf.len(),
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
