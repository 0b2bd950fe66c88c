//! Session archives: recording live hub streams to disk, replaying them, and
//! the Data Manager queries (filters, histograms, slices).
//!
//! Layout of one archive:
//!
//! ```text
//! <root>/<session_id>/meta.json
//! <root>/<session_id>/streams/<stream id, ':' -> '.'>.args
//! ```

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hub::{wall_clock_ns, FeedCloser, FeedError, Hub, HubError, StartAt, StreamInfo, SubscribeOptions};
use crate::record::{FileHeader, RecordError, RecordReader, RecordWriter};
use crate::wire::{ContentType, StreamId, StreamMessage};

pub const META_FILE: &str = "meta.json";
pub const STREAMS_DIR: &str = "streams";
pub const RECORD_EXT: &str = "args";

/// Idle gaps longer than this are compressed during replay by default.
pub const DEFAULT_MAX_REPLAY_GAP_US: u64 = 5_000_000;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown stream {0}")]
    UnknownStream(String),
    #[error("a recording is already active ({0})")]
    AlreadyRecording(String),
    #[error("session {0} is not recording")]
    NotRecording(String),
    #[error("corrupt archive: {file} at byte {offset}: {reason}")]
    CorruptArchive { file: PathBuf, offset: u64, reason: String },
    #[error("archive {0} is complete and cannot be modified")]
    ArchiveImmutable(String),
    #[error("session {0} is still being recorded")]
    SessionOpen(String),
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("no sessions match the filters")]
    NoSessions,
    #[error("bin count must be at least 1")]
    InvalidBinCount,
    #[error("replay speed must be a positive finite ratio, got {0}")]
    InvalidSpeed(f64),
    #[error("malformed meta document {file}: {reason}")]
    Meta { file: PathBuf, reason: String },
    #[error(transparent)]
    Hub(#[from] HubError),
    #[error("record error: {0}")]
    Record(RecordError),
    #[error("recording of {stream} failed: {reason}")]
    Recorder { stream: String, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelOutput {
    Objects,
    Actions,
    Steps,
}

impl ModelOutput {
    pub fn for_content(ct: ContentType) -> Option<ModelOutput> {
        match ct {
            ContentType::Detections => Some(ModelOutput::Objects),
            ContentType::Actions => Some(ModelOutput::Actions),
            ContentType::StepState => Some(ModelOutput::Steps),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Open,
    Complete,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub session_id: String,
    pub name: String,
    pub started_wall_ns: u64,
    /// Span between the earliest and latest recorded timestamp.
    pub duration_us: u64,
    /// Earliest recorded timestamp (hub epoch); session-relative times are
    /// measured from here.
    pub start_ts_us: u64,
    pub streams: Vec<StreamInfo>,
    pub model_outputs: BTreeSet<ModelOutput>,
    /// Sum of the stream file sizes in bytes.
    pub bytes_total: u64,
    pub task_id: Option<String>,
    pub status: SessionStatus,
}

impl SessionMeta {
    pub fn stream(&self, stream_id: &str) -> Option<&StreamInfo> {
        self.streams.iter().find(|s| s.stream_id == stream_id)
    }

    pub fn field(&self, field: SessionField) -> f64 {
        match field {
            SessionField::DurationUs => self.duration_us as f64,
            SessionField::StartedWallNs => self.started_wall_ns as f64,
            SessionField::BytesTotal => self.bytes_total as f64,
        }
    }

    fn compute_span(&mut self) {
        let nonempty = self.streams.iter().filter(|s| s.message_count > 0);
        let first = nonempty.clone().map(|s| s.first_ts_us).min();
        let last = nonempty.map(|s| s.last_ts_us).max();
        match (first, last) {
            (Some(f), Some(l)) => {
                self.start_ts_us = f;
                self.duration_us = l - f;
            }
            _ => {
                self.start_ts_us = 0;
                self.duration_us = 0;
            }
        }
        self.model_outputs = self
            .streams
            .iter()
            .filter_map(|s| ModelOutput::for_content(s.content_type))
            .collect();
    }
}

pub fn stream_file_name(stream_id: &str) -> String {
    format!("{}.{RECORD_EXT}", stream_id.replace(':', "."))
}

/// Summary of one finished stream file.
#[derive(Clone, Debug)]
pub struct StreamSummary {
    pub info: StreamInfo,
    pub file_bytes: u64,
}

impl StreamSummary {
    pub fn from_writer<W: std::io::Write>(w: &RecordWriter<W>) -> StreamSummary {
        StreamSummary {
            info: StreamInfo {
                stream_id: w.header().stream_id.to_string(),
                message_count: w.message_count(),
                first_ts_us: w.first_ts_us().unwrap_or(0),
                last_ts_us: w.last_ts_us().unwrap_or(0),
                content_type: w.header().content_type,
                bytes_total: w.payload_bytes(),
            },
            file_bytes: w.bytes_written(),
        }
    }
}

/// An archive directory that is still being written.
pub struct ArchiveHandle {
    dir: PathBuf,
    meta: SessionMeta,
}

impl ArchiveHandle {
    pub fn create(root: &Path, name: &str, task_id: Option<String>) -> Result<ArchiveHandle, SessionError> {
        let session_id = uuid::Uuid::new_v4().to_string();
        let dir = root.join(&session_id);
        fs::create_dir_all(dir.join(STREAMS_DIR))?;
        let meta = SessionMeta {
            session_id,
            name: name.to_string(),
            started_wall_ns: wall_clock_ns(),
            duration_us: 0,
            start_ts_us: 0,
            streams: Vec::new(),
            model_outputs: BTreeSet::new(),
            bytes_total: 0,
            task_id,
            status: SessionStatus::Open,
        };
        write_meta(&dir, &meta)?;
        Ok(ArchiveHandle { dir, meta })
    }

    pub fn session_id(&self) -> &str {
        &self.meta.session_id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn meta(&self) -> &SessionMeta {
        &self.meta
    }

    pub fn open_stream(
        &self,
        stream_id: &str,
        content_type: ContentType,
    ) -> Result<RecordWriter<BufWriter<File>>, SessionError> {
        let id = StreamId::new(stream_id).map_err(|_| SessionError::UnknownStream(stream_id.to_string()))?;
        let path = self.dir.join(STREAMS_DIR).join(stream_file_name(stream_id));
        RecordWriter::create(
            &path,
            FileHeader {
                stream_id: id,
                content_type,
            },
        )
        .map_err(SessionError::Record)
    }

    /// Writes the final meta document and makes the archive read-only.
    pub fn finalize(mut self, summaries: Vec<StreamSummary>) -> Result<SessionMeta, SessionError> {
        self.meta.bytes_total = summaries.iter().map(|s| s.file_bytes).sum();
        self.meta.streams = summaries.into_iter().map(|s| s.info).collect();
        self.meta.streams.sort_by(|a, b| a.stream_id.cmp(&b.stream_id));
        self.meta.compute_span();
        self.meta.status = SessionStatus::Complete;
        write_meta(&self.dir, &self.meta)?;
        for entry in fs::read_dir(self.dir.join(STREAMS_DIR))? {
            set_readonly(&entry?.path())?;
        }
        set_readonly(&self.dir.join(META_FILE))?;
        Ok(self.meta)
    }
}

fn set_readonly(path: &Path) -> std::io::Result<()> {
    let mut perm = fs::metadata(path)?.permissions();
    perm.set_readonly(true);
    fs::set_permissions(path, perm)
}

fn write_meta(dir: &Path, meta: &SessionMeta) -> Result<(), SessionError> {
    let text = serde_json::to_string_pretty(meta).expect("meta serializes");
    let tmp = dir.join(format!("{META_FILE}.tmp"));
    fs::write(&tmp, text)?;
    fs::rename(&tmp, dir.join(META_FILE))?;
    Ok(())
}

pub fn read_meta(dir: &Path) -> Result<SessionMeta, SessionError> {
    let file = dir.join(META_FILE);
    let text = fs::read_to_string(&file)?;
    serde_json::from_str(&text).map_err(|e| SessionError::Meta {
        file,
        reason: e.to_string(),
    })
}

/// Single-threaded archive writer used by the simulator and replay tooling.
pub struct ArchiveWriter {
    handle: ArchiveHandle,
    writers: BTreeMap<String, RecordWriter<BufWriter<File>>>,
}

impl ArchiveWriter {
    pub fn create(root: &Path, name: &str, task_id: Option<String>) -> Result<ArchiveWriter, SessionError> {
        Ok(ArchiveWriter {
            handle: ArchiveHandle::create(root, name, task_id)?,
            writers: BTreeMap::new(),
        })
    }

    pub fn session_id(&self) -> &str {
        self.handle.session_id()
    }

    pub fn add_stream(&mut self, stream_id: &str, content_type: ContentType) -> Result<(), SessionError> {
        if !self.writers.contains_key(stream_id) {
            let w = self.handle.open_stream(stream_id, content_type)?;
            self.writers.insert(stream_id.to_string(), w);
        }
        Ok(())
    }

    pub fn append(&mut self, stream_id: &str, ts_us: u64, payload: bytes::Bytes) -> Result<u64, SessionError> {
        let w = self
            .writers
            .get_mut(stream_id)
            .ok_or_else(|| SessionError::UnknownStream(stream_id.to_string()))?;
        w.append(ts_us, wall_clock_ns(), payload).map_err(SessionError::Record)
    }

    pub fn finish(self) -> Result<SessionMeta, SessionError> {
        let mut summaries = Vec::with_capacity(self.writers.len());
        for (_, mut w) in self.writers {
            w.sync().map_err(SessionError::Record)?;
            summaries.push(StreamSummary::from_writer(&w));
        }
        self.handle.finalize(summaries)
    }
}

// ---------------------------------------------------------------- queries

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionField {
    DurationUs,
    StartedWallNs,
    BytesTotal,
}

impl std::str::FromStr for SessionField {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "duration_us" | "duration" => Ok(SessionField::DurationUs),
            "started_wall_ns" | "date" => Ok(SessionField::StartedWallNs),
            "bytes_total" | "size" => Ok(SessionField::BytesTotal),
            _ => Err(format!("unknown session field {s:?}")),
        }
    }
}

/// `[min, max)`, or `[min, max]` when `inclusive_max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldRange {
    pub field: SessionField,
    pub min: f64,
    pub max: f64,
    pub inclusive_max: bool,
}

impl FieldRange {
    pub fn inclusive(field: SessionField, min: f64, max: f64) -> FieldRange {
        FieldRange {
            field,
            min,
            max,
            inclusive_max: true,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && (v < self.max || (self.inclusive_max && v == self.max))
    }

    fn validate(&self) -> Result<(), SessionError> {
        if !(self.min.is_finite() && self.max.is_finite()) || self.min > self.max {
            return Err(SessionError::InvalidRange(format!(
                "{:?}: [{}, {}]",
                self.field, self.min, self.max
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionQuery {
    pub ranges: Vec<FieldRange>,
    pub name_contains: Option<String>,
}

impl SessionQuery {
    pub fn matches(&self, meta: &SessionMeta) -> bool {
        self.ranges.iter().all(|r| r.contains(meta.field(r.field)))
            && self
                .name_contains
                .as_ref()
                .is_none_or(|n| meta.name.to_lowercase().contains(&n.to_lowercase()))
    }

    fn validate(&self) -> Result<(), SessionError> {
        self.ranges.iter().try_for_each(FieldRange::validate)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub field: SessionField,
    pub bin_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub field: SessionField,
    pub bin_count: usize,
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Equal-width bins over `[min, max]` of `values`; the last bin is closed
    /// on the right.
    pub fn build(field: SessionField, bin_count: usize, values: &[f64]) -> Result<Histogram, SessionError> {
        if bin_count == 0 {
            return Err(SessionError::InvalidBinCount);
        }
        if values.is_empty() {
            return Err(SessionError::NoSessions);
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = if hi > lo { (hi - lo) / bin_count as f64 } else { 1.0 };
        let mut edges: Vec<f64> = (0..=bin_count).map(|i| lo + width * i as f64).collect();
        edges[0] = lo;
        if hi > lo {
            edges[bin_count] = hi;
        }
        let mut counts = vec![0u64; bin_count];
        for &v in values {
            counts[bin_index(&edges, v)] += 1;
        }
        Ok(Histogram {
            field,
            bin_count,
            edges,
            counts,
        })
    }

    /// The filter range that selects exactly bin `i`.
    pub fn bin_range(&self, i: usize) -> FieldRange {
        FieldRange {
            field: self.field,
            min: self.edges[i],
            max: self.edges[i + 1],
            inclusive_max: i + 1 == self.bin_count,
        }
    }
}

fn bin_index(edges: &[f64], v: f64) -> usize {
    let bins = edges.len() - 1;
    let inner = &edges[1..bins];
    inner.partition_point(|&e| e <= v).min(bins - 1)
}

// ---------------------------------------------------------------- store

struct ActiveRecording {
    handle: ArchiveHandle,
    closers: Vec<FeedCloser>,
    workers: Vec<JoinHandle<Result<StreamSummary, SessionError>>>,
    live: Vec<(String, ContentType, Arc<LiveCounters>)>,
}

#[derive(Default)]
struct LiveCounters {
    count: AtomicU64,
    first_ts: AtomicU64,
    last_ts: AtomicU64,
    payload_bytes: AtomicU64,
}

#[derive(Clone, Copy, Debug)]
pub struct ReplayOptions {
    /// Playback rate; 2.0 halves every gap.
    pub speed: f64,
    /// Gaps above this are clamped before speed scaling; `None` keeps them.
    pub max_gap_us: Option<u64>,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        ReplayOptions {
            speed: 1.0,
            max_gap_us: Some(DEFAULT_MAX_REPLAY_GAP_US),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplayReport {
    pub session_id: String,
    pub replay_index: u32,
    /// `(recorded stream, replay stream)` pairs.
    pub streams: Vec<(String, String)>,
    pub published: u64,
    pub wall_duration_us: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyReport {
    pub session_id: String,
    pub streams: Vec<StreamInfo>,
    pub bytes_total: u64,
}

pub struct SessionStore {
    root: PathBuf,
    active: Mutex<Option<ActiveRecording>>,
}

impl SessionStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<SessionStore, SessionError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(SessionStore {
            root,
            active: Mutex::new(None),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn session_dir(&self, session_id: &str) -> Result<PathBuf, SessionError> {
        let valid = !session_id.is_empty()
            && session_id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_');
        let dir = self.root.join(session_id);
        if !valid || !dir.join(META_FILE).is_file() {
            return Err(SessionError::UnknownSession(session_id.to_string()));
        }
        Ok(dir)
    }

    pub fn active_session(&self) -> Option<String> {
        self.active.lock().as_ref().map(|a| a.handle.session_id().to_string())
    }

    /// Starts recording `stream_ids` from their current position.
    pub fn start_recording(
        &self,
        hub: &Arc<Hub>,
        name: &str,
        stream_ids: &[String],
        task_id: Option<String>,
    ) -> Result<String, SessionError> {
        let mut active = self.active.lock();
        if let Some(a) = active.as_ref() {
            return Err(SessionError::AlreadyRecording(a.handle.session_id().to_string()));
        }
        let mut types = Vec::with_capacity(stream_ids.len());
        for s in stream_ids {
            types.push(hub.content_type(s)?);
        }
        let handle = ArchiveHandle::create(&self.root, name, task_id)?;
        let mut closers = Vec::new();
        let mut workers = Vec::new();
        let mut live = Vec::new();
        for (stream, ct) in stream_ids.iter().zip(types) {
            let sub = hub.subscribe_with(
                &[stream.as_str()],
                SubscribeOptions {
                    start: StartAt::Latest,
                    max_lag: None,
                },
            )?;
            let mut writer = handle.open_stream(stream, ct)?;
            let counters = Arc::new(LiveCounters::default());
            closers.push(sub.closer());
            live.push((stream.clone(), ct, counters.clone()));
            let stream = stream.clone();
            workers.push(thread::spawn(move || -> Result<StreamSummary, SessionError> {
                let fail = |reason: String| SessionError::Recorder {
                    stream: stream.clone(),
                    reason,
                };
                loop {
                    match sub.recv() {
                        Ok(m) => {
                            writer
                                .append(m.ts_us, m.wall_ns, m.payload.clone())
                                .map_err(|e| fail(e.to_string()))?;
                            if counters.count.fetch_add(1, Ordering::Relaxed) == 0 {
                                counters.first_ts.store(m.ts_us, Ordering::Relaxed);
                            }
                            counters.last_ts.store(m.ts_us, Ordering::Relaxed);
                            counters.payload_bytes.fetch_add(m.payload.len() as u64, Ordering::Relaxed);
                        }
                        Err(FeedError::Closed) => break,
                        Err(FeedError::Lagged) => return Err(fail("subscription lagged".into())),
                    }
                }
                writer.sync().map_err(|e| fail(e.to_string()))?;
                Ok(StreamSummary::from_writer(&writer))
            }));
        }
        let id = handle.session_id().to_string();
        *active = Some(ActiveRecording {
            handle,
            closers,
            workers,
            live,
        });
        Ok(id)
    }

    /// Stops the active recording after draining everything already queued.
    pub fn stop_recording(&self, session_id: &str) -> Result<SessionMeta, SessionError> {
        let rec = {
            let mut active = self.active.lock();
            match active.as_ref() {
                Some(a) if a.handle.session_id() == session_id => active.take().expect("checked"),
                _ => {
                    return Err(if self.session_dir(session_id).is_ok() {
                        SessionError::NotRecording(session_id.to_string())
                    } else {
                        SessionError::UnknownSession(session_id.to_string())
                    })
                }
            }
        };
        for c in &rec.closers {
            c.close();
        }
        let mut summaries = Vec::with_capacity(rec.workers.len());
        let mut first_err = None;
        for w in rec.workers {
            match w.join() {
                Ok(Ok(s)) => summaries.push(s),
                Ok(Err(e)) => {
                    first_err.get_or_insert(e);
                }
                Err(_) => {
                    first_err.get_or_insert(SessionError::Recorder {
                        stream: "?".into(),
                        reason: "writer thread panicked".into(),
                    });
                }
            }
        }
        if let Some(e) = first_err {
            return Err(e);
        }
        rec.handle.finalize(summaries)
    }

    /// Rejects writes into an existing archive; completed archives are
    /// immutable and open ones belong to their recorder.
    pub fn open_for_append(&self, session_id: &str) -> Result<ArchiveHandle, SessionError> {
        let dir = self.session_dir(session_id)?;
        let meta = read_meta(&dir)?;
        match meta.status {
            SessionStatus::Complete => Err(SessionError::ArchiveImmutable(session_id.to_string())),
            SessionStatus::Open => Err(SessionError::SessionOpen(session_id.to_string())),
        }
    }

    pub fn meta(&self, session_id: &str) -> Result<SessionMeta, SessionError> {
        if let Some(a) = self.active.lock().as_ref() {
            if a.handle.session_id() == session_id {
                return Ok(open_snapshot(a));
            }
        }
        read_meta(&self.session_dir(session_id)?)
    }

    pub fn all_sessions(&self) -> Result<Vec<SessionMeta>, SessionError> {
        let active = self.active.lock();
        let active_id = active.as_ref().map(|a| a.handle.session_id().to_string());
        let mut metas = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let dir = entry?.path();
            if !dir.join(META_FILE).is_file() {
                continue;
            }
            let meta = read_meta(&dir)?;
            if Some(&meta.session_id) == active_id.as_ref() {
                metas.push(open_snapshot(active.as_ref().expect("active")));
            } else {
                metas.push(meta);
            }
        }
        Ok(metas)
    }

    /// Sessions passing every filter, newest first.
    pub fn list_sessions(&self, query: &SessionQuery) -> Result<Vec<SessionMeta>, SessionError> {
        query.validate()?;
        let mut metas: Vec<SessionMeta> = self.all_sessions()?.into_iter().filter(|m| query.matches(m)).collect();
        metas.sort_by(|a, b| {
            b.started_wall_ns
                .cmp(&a.started_wall_ns)
                .then_with(|| a.session_id.cmp(&b.session_id))
        });
        Ok(metas)
    }

    pub fn histogram(&self, spec: &HistogramSpec, query: &SessionQuery) -> Result<Histogram, SessionError> {
        if spec.bin_count == 0 {
            return Err(SessionError::InvalidBinCount);
        }
        let values: Vec<f64> = self.list_sessions(query)?.iter().map(|m| m.field(spec.field)).collect();
        Histogram::build(spec.field, spec.bin_count, &values)
    }

    fn stream_path(&self, session_id: &str, stream_id: &str) -> Result<PathBuf, SessionError> {
        let dir = self.session_dir(session_id)?;
        if !crate::wire::is_valid_stream_id(stream_id) {
            return Err(SessionError::UnknownStream(stream_id.to_string()));
        }
        let path = dir.join(STREAMS_DIR).join(stream_file_name(stream_id));
        if !path.is_file() {
            return Err(SessionError::UnknownStream(stream_id.to_string()));
        }
        Ok(path)
    }

    pub fn stream_reader(
        &self,
        session_id: &str,
        stream_id: &str,
    ) -> Result<(PathBuf, RecordReader<std::io::BufReader<File>>), SessionError> {
        let path = self.stream_path(session_id, stream_id)?;
        let reader = RecordReader::open(&path).map_err(|e| corrupt(&path, e))?;
        Ok((path, reader))
    }

    /// Every record of one stream.
    pub fn read_stream(&self, session_id: &str, stream_id: &str) -> Result<Vec<StreamMessage>, SessionError> {
        let (path, reader) = self.stream_reader(session_id, stream_id)?;
        reader.map(|r| r.map_err(|e| corrupt(&path, e))).collect()
    }

    /// Records whose session-relative timestamp lies in `[t0_us, t1_us]`.
    pub fn fetch_slice(
        &self,
        session_id: &str,
        stream_id: &str,
        t0_us: u64,
        t1_us: u64,
    ) -> Result<Vec<StreamMessage>, SessionError> {
        if t0_us > t1_us {
            return Err(SessionError::InvalidRange(format!("t0 {t0_us} > t1 {t1_us}")));
        }
        let meta = self.meta(session_id)?;
        let (path, reader) = self.stream_reader(session_id, stream_id)?;
        let mut out = Vec::new();
        for r in reader {
            let m = r.map_err(|e| corrupt(&path, e))?;
            let rel = m.ts_us.saturating_sub(meta.start_ts_us);
            if rel > t1_us {
                break;
            }
            if rel >= t0_us {
                out.push(m);
            }
        }
        Ok(out)
    }

    /// Parses every record of every stream and checks the meta document
    /// against the files.
    pub fn verify(&self, session_id: &str) -> Result<VerifyReport, SessionError> {
        let dir = self.session_dir(session_id)?;
        let meta = read_meta(&dir)?;
        let mut files: BTreeSet<String> = BTreeSet::new();
        for entry in fs::read_dir(dir.join(STREAMS_DIR))? {
            files.insert(entry?.file_name().to_string_lossy().into_owned());
        }
        let mut streams = Vec::new();
        let mut bytes_total = 0;
        for info in &meta.streams {
            let path = dir.join(STREAMS_DIR).join(stream_file_name(&info.stream_id));
            if !files.remove(&stream_file_name(&info.stream_id)) {
                return Err(SessionError::CorruptArchive {
                    file: path,
                    offset: 0,
                    reason: "listed in meta but missing".into(),
                });
            }
            let reader = RecordReader::open(&path).map_err(|e| corrupt(&path, e))?;
            let header = reader.header().clone();
            let mut found = StreamInfo {
                stream_id: header.stream_id.to_string(),
                message_count: 0,
                first_ts_us: 0,
                last_ts_us: 0,
                content_type: header.content_type,
                bytes_total: 0,
            };
            for r in reader {
                let m = r.map_err(|e| corrupt(&path, e))?;
                if found.message_count == 0 {
                    found.first_ts_us = m.ts_us;
                }
                found.last_ts_us = m.ts_us;
                found.message_count += 1;
                found.bytes_total += m.payload.len() as u64;
            }
            if meta.status == SessionStatus::Complete && &found != info {
                return Err(SessionError::CorruptArchive {
                    file: path,
                    offset: 0,
                    reason: format!("file contents disagree with meta: {found:?}"),
                });
            }
            bytes_total += fs::metadata(&path)?.len();
            streams.push(found);
        }
        if let Some(extra) = files.into_iter().next() {
            return Err(SessionError::CorruptArchive {
                file: dir.join(STREAMS_DIR).join(extra),
                offset: 0,
                reason: "stream file not listed in meta".into(),
            });
        }
        if meta.status == SessionStatus::Complete && bytes_total != meta.bytes_total {
            return Err(SessionError::CorruptArchive {
                file: dir.join(META_FILE),
                offset: 0,
                reason: format!("bytes_total {} but files sum to {bytes_total}", meta.bytes_total),
            });
        }
        Ok(VerifyReport {
            session_id: meta.session_id,
            streams,
            bytes_total,
        })
    }

    /// Republishes a recorded session onto `{stream}:replay:{n}` streams,
    /// pacing by recorded timestamps. `n` is the first index whose streams
    /// are all absent or empty with the right content type, so a recorder
    /// can be attached to them beforehand.
    pub fn replay(&self, session_id: &str, hub: &Hub, opts: ReplayOptions) -> Result<ReplayReport, SessionError> {
        if !(opts.speed.is_finite() && opts.speed > 0.0) {
            return Err(SessionError::InvalidSpeed(opts.speed));
        }
        let meta = self.meta(session_id)?;
        if meta.status != SessionStatus::Complete {
            return Err(SessionError::SessionOpen(session_id.to_string()));
        }
        self.verify(session_id)?;

        let replay_index = (1u32..)
            .find(|n| {
                meta.streams.iter().all(|s| {
                    hub.info(&format!("{}:replay:{n}", s.stream_id))
                        .map_or(true, |i| i.message_count == 0 && i.content_type == s.content_type)
                })
            })
            .expect("unbounded search");
        let mut pairs = Vec::new();
        let mut readers = Vec::new();
        for info in &meta.streams {
            let target = format!("{}:replay:{replay_index}", info.stream_id);
            hub.create_stream(&target, info.content_type)?;
            let (path, reader) = self.stream_reader(session_id, &info.stream_id)?;
            readers.push((path, reader));
            pairs.push((info.stream_id.clone(), target));
        }

        // k-way merge on (ts, stream index) so the original interleaving of
        // equal timestamps is deterministic.
        let mut heap = BinaryHeap::new();
        let mut pending: Vec<Option<StreamMessage>> = vec![None; readers.len()];
        for (i, (path, reader)) in readers.iter_mut().enumerate() {
            if let Some(m) = reader.next() {
                let m = m.map_err(|e| corrupt(path, e))?;
                heap.push(Reverse((m.ts_us, i)));
                pending[i] = Some(m);
            }
        }

        let started = Instant::now();
        let mut schedule_us = 0f64;
        let mut prev_ts: Option<u64> = None;
        let mut published = 0u64;
        while let Some(Reverse((ts, i))) = heap.pop() {
            let m = pending[i].take().expect("heap entry has a message");
            if let Some(p) = prev_ts {
                let mut gap = ts - p;
                if let Some(max) = opts.max_gap_us {
                    gap = gap.min(max);
                }
                schedule_us += gap as f64 / opts.speed;
            }
            prev_ts = Some(ts);
            let due = started + Duration::from_micros(schedule_us as u64);
            let now = Instant::now();
            if due > now {
                thread::sleep(due - now);
            }
            hub.publish(&pairs[i].1, m.ts_us, m.payload)?;
            published += 1;
            let (path, reader) = &mut readers[i];
            if let Some(next) = reader.next() {
                let next = next.map_err(|e| corrupt(path, e))?;
                heap.push(Reverse((next.ts_us, i)));
                pending[i] = Some(next);
            }
        }
        Ok(ReplayReport {
            session_id: session_id.to_string(),
            replay_index,
            streams: pairs,
            published,
            wall_duration_us: started.elapsed().as_micros() as u64,
        })
    }
}

fn corrupt(path: &Path, e: RecordError) -> SessionError {
    match e {
        RecordError::Io(io) => SessionError::Io(io),
        RecordError::Corrupt { offset, reason } => SessionError::CorruptArchive {
            file: path.to_path_buf(),
            offset,
            reason,
        },
        other => SessionError::CorruptArchive {
            file: path.to_path_buf(),
            offset: 0,
            reason: other.to_string(),
        },
    }
}

fn open_snapshot(a: &ActiveRecording) -> SessionMeta {
    let mut meta = a.handle.meta().clone();
    meta.streams = a
        .live
        .iter()
        .map(|(id, ct, c)| {
            let count = c.count.load(Ordering::Relaxed);
            StreamInfo {
                stream_id: id.clone(),
                message_count: count,
                first_ts_us: if count > 0 { c.first_ts.load(Ordering::Relaxed) } else { 0 },
                last_ts_us: c.last_ts.load(Ordering::Relaxed),
                content_type: *ct,
                bytes_total: c.payload_bytes.load(Ordering::Relaxed),
            }
        })
        .collect();
    meta.compute_span();
    meta.bytes_total = meta.streams.iter().map(|s| s.bytes_total).sum();
    meta
}
