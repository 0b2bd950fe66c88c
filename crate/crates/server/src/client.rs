//! Blocking HTTP client for the hub API, and a simulator sink that
//! publishes through it.

use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;
use ureq::http::Response;
use ureq::{Agent, Body};

use argus_core::hub::StreamInfo;
use argus_core::synth::{Pacing, SessionSink, SynthError, SynthStream};
use argus_core::wire::{ContentType, StreamMessage, WireError};

use crate::{PublishReceipt, TS_HEADER};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(#[from] ureq::Error),
    #[error("server answered {status}: {message}")]
    Status { status: u16, message: String },
    #[error("undecodable response: {0}")]
    Decode(String),
    #[error(transparent)]
    Wire(#[from] WireError),
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Status { status, .. } => Some(*status),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct HubClient {
    base: String,
    agent: Agent,
}

fn read_all(resp: &mut Response<Body>) -> Result<Vec<u8>, ClientError> {
    Ok(resp.body_mut().with_config().limit(u64::MAX).read_to_vec()?)
}

fn checked(mut resp: Response<Body>) -> Result<Response<Body>, ClientError> {
    let status = resp.status().as_u16();
    if status < 400 {
        return Ok(resp);
    }
    let body = read_all(&mut resp).unwrap_or_default();
    let message = serde_json::from_slice::<serde_json::Value>(&body)
        .ok()
        .and_then(|v| v.get("error").and_then(|e| e.as_str()).map(str::to_string))
        .unwrap_or_else(|| String::from_utf8_lossy(&body).into_owned());
    Err(ClientError::Status { status, message })
}

fn json<T: DeserializeOwned>(resp: Response<Body>) -> Result<T, ClientError> {
    let mut resp = checked(resp)?;
    serde_json::from_slice(&read_all(&mut resp)?).map_err(|e| ClientError::Decode(e.to_string()))
}

/// Percent-encodes a path segment or query value.
pub fn encode_component(s: &str) -> String {
    let mut out = String::new();
    for b in s.bytes() {
        match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' | b':' => out.push(b as char),
            _ => out.push_str(&format!("%{b:02X}")),
        }
    }
    out
}

/// Splits a buffer of back-to-back wire envelopes.
pub fn decode_envelopes(mut buf: &[u8]) -> Result<Vec<StreamMessage>, WireError> {
    let mut out = Vec::new();
    while !buf.is_empty() {
        let (m, used) = StreamMessage::decode(buf)?;
        out.push(m);
        buf = &buf[used..];
    }
    Ok(out)
}

impl HubClient {
    /// `base` is the server root, e.g. `http://127.0.0.1:7070`.
    pub fn new(base: &str) -> HubClient {
        let agent: Agent = Agent::config_builder().http_status_as_error(false).build().into();
        HubClient {
            base: base.trim_end_matches('/').to_string(),
            agent,
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    pub fn get_json<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        json(self.agent.get(&self.url(path)).call()?)
    }

    pub fn get_bytes(&self, path: &str) -> Result<Vec<u8>, ClientError> {
        let mut resp = checked(self.agent.get(&self.url(path)).call()?)?;
        read_all(&mut resp)
    }

    pub fn post_json<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        let bytes = serde_json::to_vec(body).map_err(|e| ClientError::Decode(e.to_string()))?;
        json(
            self.agent
                .post(&self.url(path))
                .header("content-type", "application/json")
                .send(&bytes[..])?,
        )
    }

    pub fn post_empty<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        json(self.agent.post(&self.url(path)).send_empty()?)
    }

    pub fn create_stream(&self, stream_id: &str, content_type: ContentType) -> Result<StreamInfo, ClientError> {
        let body = serde_json::json!({ "content_type": content_type.as_str() }).to_string();
        json(
            self.agent
                .put(&self.url(&format!("/streams/{}", encode_component(stream_id))))
                .header("content-type", "application/json")
                .send(body.as_bytes())?,
        )
    }

    /// Publishes with an explicit timestamp, or hub time when `ts_us` is
    /// `None`.
    pub fn publish(&self, stream_id: &str, ts_us: Option<u64>, payload: &[u8]) -> Result<PublishReceipt, ClientError> {
        let mut req = self.agent.post(&self.url(&format!("/streams/{}", encode_component(stream_id))));
        if let Some(ts) = ts_us {
            req = req.header(TS_HEADER, ts.to_string());
        }
        json(req.header("content-type", "application/octet-stream").send(payload)?)
    }

    pub fn latest(&self, stream_id: &str) -> Result<Option<StreamMessage>, ClientError> {
        let mut resp = checked(self.agent.get(&self.url(&format!("/streams/{}/latest", encode_component(stream_id)))).call()?)?;
        if resp.status().as_u16() == 204 {
            return Ok(None);
        }
        let buf = read_all(&mut resp)?;
        Ok(Some(StreamMessage::decode(&buf)?.0))
    }

    pub fn info(&self, stream_id: &str) -> Result<StreamInfo, ClientError> {
        self.get_json(&format!("/streams/{}/info", encode_component(stream_id)))
    }

    pub fn now_us(&self) -> Result<u64, ClientError> {
        let v: serde_json::Value = self.get_json("/hub/clock")?;
        v.get("now_us")
            .and_then(|n| n.as_u64())
            .ok_or_else(|| ClientError::Decode("clock without now_us".into()))
    }

    /// Recorded messages in `[t0_us, t1_us]`, session-relative.
    pub fn slice(&self, session_id: &str, stream_id: &str, t0_us: u64, t1_us: u64) -> Result<Vec<StreamMessage>, ClientError> {
        let path = format!(
            "/sessions/{}/streams/{}?t0={t0_us}&t1={t1_us}",
            encode_component(session_id),
            encode_component(stream_id)
        );
        let buf = self.get_bytes(&path)?;
        Ok(decode_envelopes(&buf)?)
    }
}

/// Simulator output published to a remote hub over HTTP.
pub struct HttpSink {
    client: HubClient,
    pacing: Pacing,
    started: Option<Instant>,
}

impl HttpSink {
    pub fn new(client: HubClient, pacing: Pacing) -> HttpSink {
        HttpSink {
            client,
            pacing,
            started: None,
        }
    }
}

fn sink_err(e: ClientError) -> SynthError {
    SynthError::Sink(e.to_string())
}

impl SessionSink for HttpSink {
    fn base_ts_us(&mut self, streams: &[SynthStream]) -> Result<u64, SynthError> {
        let mut base = self.client.now_us().map_err(sink_err)?;
        for s in streams {
            match self.client.info(s.stream_id()) {
                Ok(info) if info.message_count > 0 => base = base.max(info.last_ts_us + 1),
                Ok(_) => {}
                Err(e) if e.status() == Some(404) => {}
                Err(e) => return Err(sink_err(e)),
            }
        }
        self.started = Some(Instant::now());
        Ok(base)
    }

    fn declare(&mut self, stream_id: &str, content_type: ContentType) -> Result<(), SynthError> {
        self.client.create_stream(stream_id, content_type).map_err(sink_err)?;
        Ok(())
    }

    fn emit(&mut self, stream_id: &str, ts_us: u64, offset_us: u64, payload: bytes::Bytes) -> Result<(), SynthError> {
        if self.pacing == Pacing::Realtime {
            let due = self.started.expect("base requested first") + Duration::from_micros(offset_us);
            let now = Instant::now();
            if due > now {
                std::thread::sleep(due - now);
            }
        }
        self.client.publish(stream_id, Some(ts_us), &payload).map_err(sink_err)?;
        Ok(())
    }
}
