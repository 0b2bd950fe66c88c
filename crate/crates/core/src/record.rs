//! Append-only per-stream record files.
//!
//! ```text
//! file   := header record*
//! header := "ARGS1" u8(content tag) u16(id len) id
//! record := u32(len) envelope        ; len = envelope byte length
//! ```
//!
//! Envelopes use the hub wire format. Seqs inside a file start at 0 and are
//! contiguous; timestamps never decrease.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use bytes::Bytes;
use thiserror::Error;

use crate::wire::{ContentType, StreamId, StreamMessage, WireError, ENVELOPE_FIXED_LEN};

pub const MAGIC: &[u8; 5] = b"ARGS1";

/// Refuse single records above this size when reading untrusted files.
pub const MAX_RECORD_LEN: u32 = 256 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt record file at byte {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },
    #[error("timestamp regression: {ts_us} < {last_ts_us}")]
    TimestampRegression { last_ts_us: u64, ts_us: u64 },
    #[error("empty payload")]
    EmptyPayload,
}

impl RecordError {
    fn corrupt(offset: u64, reason: impl Into<String>) -> Self {
        RecordError::Corrupt {
            offset,
            reason: reason.into(),
        }
    }

    pub fn offset(&self) -> Option<u64> {
        match self {
            RecordError::Corrupt { offset, .. } => Some(*offset),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FileHeader {
    pub stream_id: StreamId,
    pub content_type: ContentType,
}

impl FileHeader {
    pub fn encoded_len(&self) -> usize {
        MAGIC.len() + 1 + 2 + self.stream_id.as_str().len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let id = self.stream_id.as_str().as_bytes();
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(MAGIC);
        out.push(self.content_type.tag());
        out.extend_from_slice(&(id.len() as u16).to_le_bytes());
        out.extend_from_slice(id);
        out
    }
}

pub struct RecordWriter<W: Write> {
    inner: W,
    header: FileHeader,
    next_seq: u64,
    last_ts_us: Option<u64>,
    first_ts_us: Option<u64>,
    bytes_written: u64,
    payload_bytes: u64,
    scratch: Vec<u8>,
}

impl RecordWriter<BufWriter<File>> {
    pub fn create(path: &Path, header: FileHeader) -> Result<Self, RecordError> {
        let file = File::options().write(true).create_new(true).open(path)?;
        RecordWriter::new(BufWriter::with_capacity(1 << 20, file), header)
    }

    /// Flushes buffers and fsyncs the file.
    pub fn sync(&mut self) -> Result<(), RecordError> {
        self.inner.flush()?;
        self.inner.get_ref().sync_all()?;
        Ok(())
    }
}

impl<W: Write> RecordWriter<W> {
    pub fn new(mut inner: W, header: FileHeader) -> Result<Self, RecordError> {
        let bytes = header.encode();
        inner.write_all(&bytes)?;
        Ok(RecordWriter {
            inner,
            header,
            next_seq: 0,
            last_ts_us: None,
            first_ts_us: None,
            bytes_written: bytes.len() as u64,
            payload_bytes: 0,
            scratch: Vec::new(),
        })
    }

    pub fn header(&self) -> &FileHeader {
        &self.header
    }

    /// Appends one record; the file assigns its own seq.
    pub fn append(&mut self, ts_us: u64, wall_ns: u64, payload: Bytes) -> Result<u64, RecordError> {
        if payload.is_empty() {
            return Err(RecordError::EmptyPayload);
        }
        if let Some(last) = self.last_ts_us {
            if ts_us < last {
                return Err(RecordError::TimestampRegression { last_ts_us: last, ts_us });
            }
        }
        let seq = self.next_seq;
        let payload_len = payload.len() as u64;
        let msg = StreamMessage {
            stream_id: self.header.stream_id.clone(),
            seq,
            ts_us,
            wall_ns,
            content_type: self.header.content_type,
            payload,
        };
        self.scratch.clear();
        self.scratch.extend_from_slice(&(msg.encoded_len() as u32).to_le_bytes());
        msg.encode_into(&mut self.scratch);
        self.inner.write_all(&self.scratch)?;
        self.bytes_written += self.scratch.len() as u64;
        self.payload_bytes += payload_len;
        self.next_seq += 1;
        self.last_ts_us = Some(ts_us);
        self.first_ts_us.get_or_insert(ts_us);
        Ok(seq)
    }

    pub fn message_count(&self) -> u64 {
        self.next_seq
    }

    pub fn bytes_written(&self) -> u64 {
        self.bytes_written
    }

    pub fn payload_bytes(&self) -> u64 {
        self.payload_bytes
    }

    pub fn first_ts_us(&self) -> Option<u64> {
        self.first_ts_us
    }

    pub fn last_ts_us(&self) -> Option<u64> {
        self.last_ts_us
    }

    pub fn flush(&mut self) -> Result<(), RecordError> {
        self.inner.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

/// Streaming reader that validates every record as it goes.
pub struct RecordReader<R: Read> {
    inner: R,
    header: FileHeader,
    offset: u64,
    next_seq: u64,
    last_ts_us: Option<u64>,
    failed: bool,
}

impl RecordReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self, RecordError> {
        RecordReader::new(BufReader::with_capacity(1 << 20, File::open(path)?))
    }
}

impl<R: Read> RecordReader<R> {
    pub fn new(mut inner: R) -> Result<Self, RecordError> {
        let mut magic = [0u8; 5];
        read_exact_at(&mut inner, &mut magic, 0, "file header")?;
        if &magic != MAGIC {
            return Err(RecordError::corrupt(0, "bad magic"));
        }
        let mut fixed = [0u8; 3];
        read_exact_at(&mut inner, &mut fixed, 5, "file header")?;
        let content_type =
            ContentType::from_tag(fixed[0]).ok_or_else(|| RecordError::corrupt(5, "unknown content type"))?;
        let id_len = u16::from_le_bytes([fixed[1], fixed[2]]) as usize;
        let mut id = vec![0u8; id_len];
        read_exact_at(&mut inner, &mut id, 8, "stream id")?;
        let stream_id = std::str::from_utf8(&id)
            .ok()
            .and_then(|s| StreamId::new(s).ok())
            .ok_or_else(|| RecordError::corrupt(8, "invalid stream id"))?;
        Ok(RecordReader {
            inner,
            header: FileHeader {
                stream_id,
                content_type,
            },
            offset: 8 + id_len as u64,
            next_seq: 0,
            last_ts_us: None,
            failed: false,
        })
    }

    pub fn header(&self) -> &FileHeader {
        &self.header
    }

    /// Byte offset of the next record.
    pub fn offset(&self) -> u64 {
        self.offset
    }

    fn read_record(&mut self) -> Result<Option<StreamMessage>, RecordError> {
        let start = self.offset;
        let mut len_buf = [0u8; 4];
        let got = read_fully(&mut self.inner, &mut len_buf)?;
        if got == 0 {
            return Ok(None);
        }
        if got < 4 {
            return Err(RecordError::corrupt(start, "truncated length prefix"));
        }
        let len = u32::from_le_bytes(len_buf);
        let min_len = (ENVELOPE_FIXED_LEN + self.header.stream_id.as_str().len() + 1) as u32;
        if len < min_len || len > MAX_RECORD_LEN {
            return Err(RecordError::corrupt(start, format!("implausible record length {len}")));
        }
        let mut body = vec![0u8; len as usize];
        let got = read_fully(&mut self.inner, &mut body)?;
        if got < body.len() {
            return Err(RecordError::corrupt(
                start,
                format!("truncated record: expected {len} bytes, found {got}"),
            ));
        }
        let (msg, used) = StreamMessage::decode(&body).map_err(|e: WireError| RecordError::corrupt(start, e.to_string()))?;
        if used != body.len() {
            return Err(RecordError::corrupt(start, "record length does not match envelope"));
        }
        if msg.stream_id != self.header.stream_id || msg.content_type != self.header.content_type {
            return Err(RecordError::corrupt(start, "record does not belong to this stream"));
        }
        if msg.seq != self.next_seq {
            return Err(RecordError::corrupt(
                start,
                format!("seq gap: expected {}, found {}", self.next_seq, msg.seq),
            ));
        }
        if let Some(last) = self.last_ts_us {
            if msg.ts_us < last {
                return Err(RecordError::corrupt(start, "timestamp regression"));
            }
        }
        self.offset += 4 + len as u64;
        self.next_seq += 1;
        self.last_ts_us = Some(msg.ts_us);
        Ok(Some(msg))
    }
}

impl<R: Read> Iterator for RecordReader<R> {
    type Item = Result<StreamMessage, RecordError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        match self.read_record() {
            Ok(Some(m)) => Some(Ok(m)),
            Ok(None) => None,
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}

fn read_fully<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

fn read_exact_at<R: Read>(r: &mut R, buf: &mut [u8], offset: u64, what: &str) -> Result<(), RecordError> {
    if read_fully(r, buf)? < buf.len() {
        return Err(RecordError::corrupt(offset, format!("truncated {what}")));
    }
    Ok(())
}

/// Reads every record of an in-memory file image.
pub fn read_all(bytes: &[u8]) -> Result<(FileHeader, Vec<StreamMessage>), RecordError> {
    let reader = RecordReader::new(bytes)?;
    let header = reader.header().clone();
    let msgs = reader.collect::<Result<Vec<_>, _>>()?;
    Ok((header, msgs))
}
