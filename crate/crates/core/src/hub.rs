//! In-memory named-stream broker.
//!
//! Each stream owns its own lock, retention ring and subscriber list, so a
//! publish on one stream never waits on another. A subscription owns a
//! single queue shared by all of its streams: messages from different
//! streams interleave in broker arrival order, while each stream's messages
//! stay in seq order because fan-out happens under that stream's lock.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use bytes::Bytes;
use parking_lot::{Condvar, Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wire::{ContentType, StreamId, StreamMessage};

/// Reserved stream carrying the session epoch announcement.
pub const CONTROL_STREAM: &str = "session:ctl";

#[derive(Clone, Debug)]
pub struct HubConfig {
    pub retention_msgs: usize,
    pub retention_bytes: usize,
    /// A live subscriber further behind than this is disconnected.
    pub max_lag: usize,
}

impl Default for HubConfig {
    fn default() -> Self {
        Self {
            retention_msgs: 4096,
            retention_bytes: 256 * 1024 * 1024,
            max_lag: 1024,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HubError {
    #[error("invalid stream id {0:?}")]
    InvalidStreamId(String),
    #[error("stream {stream} already exists with content type {existing}, requested {requested}")]
    ConflictingContentType {
        stream: String,
        existing: ContentType,
        requested: ContentType,
    },
    #[error("unknown stream {0}")]
    UnknownStream(String),
    #[error("timestamp regression on {stream}: {ts_us} < {last_ts_us}")]
    TimestampRegression { stream: String, last_ts_us: u64, ts_us: u64 },
    #[error("seq {requested} on {stream} already evicted (oldest retained {oldest})")]
    SeqEvicted { stream: String, requested: u64, oldest: u64 },
    #[error("payload must not be empty")]
    EmptyPayload,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamInfo {
    pub stream_id: String,
    pub message_count: u64,
    pub first_ts_us: u64,
    pub last_ts_us: u64,
    pub content_type: ContentType,
    pub bytes_total: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StartAt {
    Latest,
    Seq(u64),
}

impl FromStr for StartAt {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "latest" {
            return Ok(StartAt::Latest);
        }
        s.strip_prefix("seq:")
            .and_then(|n| n.parse().ok())
            .map(StartAt::Seq)
            .ok_or_else(|| format!("expected `latest` or `seq:N`, got {s:?}"))
    }
}

impl fmt::Display for StartAt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StartAt::Latest => f.write_str("latest"),
            StartAt::Seq(n) => write!(f, "seq:{n}"),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SubscribeOptions {
    pub start: StartAt,
    /// `None` makes the subscription lossless (never disconnected for lag).
    pub max_lag: Option<usize>,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum FeedError {
    #[error("subscriber fell too far behind and was disconnected")]
    Lagged,
    #[error("subscription closed")]
    Closed,
}

pub struct Hub {
    config: HubConfig,
    streams: RwLock<HashMap<String, Arc<StreamSlot>>>,
    epoch_wall_ns: u64,
    epoch_instant: Instant,
    subscriber_ids: AtomicU64,
}

struct StreamSlot {
    content_type: ContentType,
    state: Mutex<StreamState>,
}

struct StreamState {
    id: StreamId,
    next_seq: u64,
    last_ts_us: Option<u64>,
    first_ts_us: Option<u64>,
    bytes_total: u64,
    ring: VecDeque<Arc<StreamMessage>>,
    ring_bytes: usize,
    subscribers: Vec<Registration>,
}

struct Registration {
    min_seq: u64,
    queue: Arc<SubShared>,
}

impl Hub {
    pub fn new(config: HubConfig) -> Arc<Hub> {
        let epoch_wall_ns = wall_clock_ns();
        let hub = Arc::new(Hub {
            config,
            streams: RwLock::new(HashMap::new()),
            epoch_wall_ns,
            epoch_instant: Instant::now(),
            subscriber_ids: AtomicU64::new(0),
        });
        hub.create_stream(CONTROL_STREAM, ContentType::Json)
            .expect("control stream id is valid");
        let announce = serde_json::json!({ "epoch_wall_ns": epoch_wall_ns });
        hub.publish(CONTROL_STREAM, 0, Bytes::from(announce.to_string()))
            .expect("fresh control stream accepts first message");
        hub
    }

    pub fn config(&self) -> &HubConfig {
        &self.config
    }

    pub fn epoch_wall_ns(&self) -> u64 {
        self.epoch_wall_ns
    }

    /// Microseconds elapsed since the hub epoch.
    pub fn now_us(&self) -> u64 {
        self.epoch_instant.elapsed().as_micros() as u64
    }

    pub fn create_stream(&self, stream_id: &str, content_type: ContentType) -> Result<StreamInfo, HubError> {
        let id = StreamId::new(stream_id).map_err(|_| HubError::InvalidStreamId(stream_id.to_string()))?;
        let mut streams = self.streams.write();
        if let Some(slot) = streams.get(stream_id) {
            if slot.content_type != content_type {
                return Err(HubError::ConflictingContentType {
                    stream: stream_id.to_string(),
                    existing: slot.content_type,
                    requested: content_type,
                });
            }
            return Ok(slot.info());
        }
        let slot = Arc::new(StreamSlot {
            content_type,
            state: Mutex::new(StreamState {
                id,
                next_seq: 0,
                last_ts_us: None,
                first_ts_us: None,
                bytes_total: 0,
                ring: VecDeque::new(),
                ring_bytes: 0,
                subscribers: Vec::new(),
            }),
        });
        let info = slot.info();
        streams.insert(stream_id.to_string(), slot);
        Ok(info)
    }

    fn slot(&self, stream_id: &str) -> Result<Arc<StreamSlot>, HubError> {
        self.streams
            .read()
            .get(stream_id)
            .cloned()
            .ok_or_else(|| HubError::UnknownStream(stream_id.to_string()))
    }

    pub fn contains(&self, stream_id: &str) -> bool {
        self.streams.read().contains_key(stream_id)
    }

    pub fn content_type(&self, stream_id: &str) -> Result<ContentType, HubError> {
        Ok(self.slot(stream_id)?.content_type)
    }

    /// Publishes `payload` and returns its seq.
    pub fn publish(&self, stream_id: &str, ts_us: u64, payload: Bytes) -> Result<u64, HubError> {
        if payload.is_empty() {
            return Err(HubError::EmptyPayload);
        }
        let slot = self.slot(stream_id)?;
        let mut guard = slot.state.lock();
        let st = &mut *guard;
        if let Some(last) = st.last_ts_us {
            if ts_us < last {
                return Err(HubError::TimestampRegression {
                    stream: stream_id.to_string(),
                    last_ts_us: last,
                    ts_us,
                });
            }
        }
        let seq = st.next_seq;
        let msg = Arc::new(StreamMessage {
            stream_id: st.id.clone(),
            seq,
            ts_us,
            wall_ns: wall_clock_ns(),
            content_type: slot.content_type,
            payload,
        });
        st.next_seq += 1;
        st.last_ts_us = Some(ts_us);
        st.first_ts_us.get_or_insert(ts_us);
        st.bytes_total += msg.payload.len() as u64;
        st.ring_bytes += msg.payload.len();
        st.ring.push_back(msg.clone());
        while st.ring.len() > 1
            && (st.ring.len() > self.config.retention_msgs || st.ring_bytes > self.config.retention_bytes)
        {
            let old = st.ring.pop_front().expect("ring nonempty");
            st.ring_bytes -= old.payload.len();
        }
        st.subscribers
            .retain(|reg| seq < reg.min_seq || reg.queue.push_live(msg.clone()));
        Ok(seq)
    }

    /// Publishes at the current hub clock, clamped to keep the stream monotone.
    pub fn publish_now(&self, stream_id: &str, payload: Bytes) -> Result<u64, HubError> {
        let slot = self.slot(stream_id)?;
        let last = slot.state.lock().last_ts_us.unwrap_or(0);
        self.publish(stream_id, self.now_us().max(last), payload)
    }

    pub fn latest(&self, stream_id: &str) -> Result<Option<Arc<StreamMessage>>, HubError> {
        let slot = self.slot(stream_id)?;
        let st = slot.state.lock();
        Ok(st.ring.back().cloned())
    }

    pub fn info(&self, stream_id: &str) -> Result<StreamInfo, HubError> {
        Ok(self.slot(stream_id)?.info())
    }

    pub fn list_streams(&self) -> Vec<StreamInfo> {
        let slots: Vec<Arc<StreamSlot>> = self.streams.read().values().cloned().collect();
        let mut infos: Vec<StreamInfo> = slots.iter().map(|s| s.info()).collect();
        infos.sort_by(|a, b| a.stream_id.cmp(&b.stream_id));
        infos
    }

    /// Retained messages of one stream with seq ≥ `from`, in seq order.
    pub fn retained(&self, stream_id: &str, from: u64) -> Result<Vec<Arc<StreamMessage>>, HubError> {
        let slot = self.slot(stream_id)?;
        let st = slot.state.lock();
        Ok(st.ring.iter().filter(|m| m.seq >= from).cloned().collect())
    }

    pub fn subscribe<S: AsRef<str>>(&self, stream_ids: &[S], start: StartAt) -> Result<Subscription, HubError> {
        self.subscribe_with(
            stream_ids,
            SubscribeOptions {
                start,
                max_lag: Some(self.config.max_lag),
            },
        )
    }

    pub fn subscribe_with<S: AsRef<str>>(
        &self,
        stream_ids: &[S],
        opts: SubscribeOptions,
    ) -> Result<Subscription, HubError> {
        // Lock streams in name order so concurrent multi-stream subscribes
        // cannot deadlock.
        let mut names: Vec<&str> = stream_ids.iter().map(|s| s.as_ref()).collect();
        names.sort_unstable();
        names.dedup();
        let slots = names
            .iter()
            .map(|s| self.slot(s))
            .collect::<Result<Vec<_>, _>>()?;
        let shared = Arc::new(SubShared {
            id: self.subscriber_ids.fetch_add(1, Ordering::Relaxed),
            queue: Mutex::new(SubQueue {
                items: VecDeque::new(),
                backlog: 0,
                status: SubStatus::Open,
                max_lag: opts.max_lag,
            }),
            ready: Condvar::new(),
        });
        let mut locked = Vec::with_capacity(slots.len());
        for slot in &slots {
            locked.push(slot.state.lock());
        }
        // Validate every stream before registering on any of them.
        let mut min_seqs = Vec::with_capacity(locked.len());
        for st in &locked {
            let min_seq = match opts.start {
                StartAt::Latest => st.next_seq,
                StartAt::Seq(n) => {
                    let oldest = st.ring.front().map(|m| m.seq).unwrap_or(st.next_seq);
                    if n < oldest {
                        return Err(HubError::SeqEvicted {
                            stream: st.id.to_string(),
                            requested: n,
                            oldest,
                        });
                    }
                    n
                }
            };
            min_seqs.push(min_seq);
        }
        for (st, min_seq) in locked.iter_mut().zip(min_seqs) {
            {
                let mut q = shared.queue.lock();
                for m in st.ring.iter().filter(|m| m.seq >= min_seq) {
                    q.items.push_back(m.clone());
                    q.backlog += 1;
                }
            }
            st.subscribers.push(Registration {
                min_seq,
                queue: shared.clone(),
            });
        }
        drop(locked);
        Ok(Subscription {
            shared,
            streams: names.iter().map(|s| s.to_string()).collect(),
        })
    }

    pub fn subscriber_count(&self, stream_id: &str) -> Result<usize, HubError> {
        let slot = self.slot(stream_id)?;
        let st = slot.state.lock();
        Ok(st.subscribers.iter().filter(|r| r.queue.is_open()).count())
    }
}

impl StreamSlot {
    fn info(&self) -> StreamInfo {
        let st = self.state.lock();
        StreamInfo {
            stream_id: st.id.to_string(),
            message_count: st.next_seq,
            first_ts_us: st.first_ts_us.unwrap_or(0),
            last_ts_us: st.last_ts_us.unwrap_or(0),
            content_type: self.content_type,
            bytes_total: st.bytes_total,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum SubStatus {
    Open,
    Lagged,
    Closed,
}

struct SubShared {
    id: u64,
    queue: Mutex<SubQueue>,
    ready: Condvar,
}

struct SubQueue {
    items: VecDeque<Arc<StreamMessage>>,
    /// Leading items that were replayed from the ring at subscribe time;
    /// they do not count towards lag.
    backlog: usize,
    status: SubStatus,
    max_lag: Option<usize>,
}

impl SubShared {
    /// Returns false once the subscriber should be dropped from the stream.
    fn push_live(&self, msg: Arc<StreamMessage>) -> bool {
        let mut q = self.queue.lock();
        if q.status != SubStatus::Open {
            return false;
        }
        if let Some(limit) = q.max_lag {
            if q.items.len() - q.backlog >= limit {
                q.status = SubStatus::Lagged;
                q.items.clear();
                q.backlog = 0;
                drop(q);
                self.ready.notify_all();
                return false;
            }
        }
        q.items.push_back(msg);
        drop(q);
        self.ready.notify_one();
        true
    }

    fn is_open(&self) -> bool {
        self.queue.lock().status == SubStatus::Open
    }

    fn close(&self, discard: bool) {
        let mut q = self.queue.lock();
        if q.status == SubStatus::Open {
            q.status = SubStatus::Closed;
        }
        if discard {
            q.items.clear();
            q.backlog = 0;
        }
        drop(q);
        self.ready.notify_all();
    }
}

/// An ordered message feed over one or more streams.
pub struct Subscription {
    shared: Arc<SubShared>,
    streams: Vec<String>,
}

impl Subscription {
    pub fn id(&self) -> u64 {
        self.shared.id
    }

    pub fn streams(&self) -> &[String] {
        &self.streams
    }

    /// Blocks until a message is available. After `close`, queued messages
    /// are still drained before `Closed` is reported.
    pub fn recv(&self) -> Result<Arc<StreamMessage>, FeedError> {
        let mut q = self.shared.queue.lock();
        loop {
            if let Some(m) = pop(&mut q) {
                return Ok(m);
            }
            match q.status {
                SubStatus::Open => self.shared.ready.wait(&mut q),
                SubStatus::Lagged => return Err(FeedError::Lagged),
                SubStatus::Closed => return Err(FeedError::Closed),
            }
        }
    }

    /// Like `recv`, but gives up after `timeout` with `Ok(None)`.
    pub fn recv_timeout(&self, timeout: Duration) -> Result<Option<Arc<StreamMessage>>, FeedError> {
        let deadline = Instant::now() + timeout;
        let mut q = self.shared.queue.lock();
        loop {
            if let Some(m) = pop(&mut q) {
                return Ok(Some(m));
            }
            match q.status {
                SubStatus::Open => {
                    if self.shared.ready.wait_until(&mut q, deadline).timed_out() {
                        return Ok(pop(&mut q));
                    }
                }
                SubStatus::Lagged => return Err(FeedError::Lagged),
                SubStatus::Closed => return Err(FeedError::Closed),
            }
        }
    }

    pub fn try_recv(&self) -> Result<Option<Arc<StreamMessage>>, FeedError> {
        let mut q = self.shared.queue.lock();
        if let Some(m) = pop(&mut q) {
            return Ok(Some(m));
        }
        match q.status {
            SubStatus::Open => Ok(None),
            SubStatus::Lagged => Err(FeedError::Lagged),
            SubStatus::Closed => Err(FeedError::Closed),
        }
    }

    pub fn pending(&self) -> usize {
        self.shared.queue.lock().items.len()
    }

    /// A handle that can close this subscription from another thread.
    pub fn closer(&self) -> FeedCloser {
        FeedCloser {
            shared: self.shared.clone(),
        }
    }
}

fn pop(q: &mut SubQueue) -> Option<Arc<StreamMessage>> {
    let m = q.items.pop_front()?;
    if q.backlog > 0 {
        q.backlog -= 1;
    }
    Some(m)
}

impl Drop for Subscription {
    fn drop(&mut self) {
        self.shared.close(true);
    }
}

#[derive(Clone)]
pub struct FeedCloser {
    shared: Arc<SubShared>,
}

impl FeedCloser {
    /// Stops live delivery; already-queued messages remain readable.
    pub fn close(&self) {
        self.shared.close(false);
    }
}

pub fn wall_clock_ns() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0)
}
