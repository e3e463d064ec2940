//! Verbatim prompt audit log and its replay.
//!
//! Each record is `<TAG> <kind> <byte-length>\n<payload>\n` where TAG is one of
//! `CMD` (engine command), `REQ` (narrator request as JSON), `RSP` (reply
//! text), `ERR` (narrator error as JSON) or `TS` (a wall-clock reading). The
//! log holds every non-deterministic input of a run, so replaying it against
//! the same code reproduces the simulation log exactly.

use std::fmt;
use std::fs::OpenOptions;
use std::io::{self, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use chrono::NaiveDateTime;
use thiserror::Error;

use super::log::WallClock;
use crate::narrator::{Narrator, NarratorError, NarratorRequest, NarratorResponse};
use crate::time;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditTag {
    Cmd,
    Req,
    Rsp,
    Err,
    Ts,
}

impl AuditTag {
    pub fn as_str(self) -> &'static str {
        match self {
            AuditTag::Cmd => "CMD",
            AuditTag::Req => "REQ",
            AuditTag::Rsp => "RSP",
            AuditTag::Err => "ERR",
            AuditTag::Ts => "TS",
        }
    }
}

impl fmt::Display for AuditTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AuditTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "CMD" => AuditTag::Cmd,
            "REQ" => AuditTag::Req,
            "RSP" => AuditTag::Rsp,
            "ERR" => AuditTag::Err,
            "TS" => AuditTag::Ts,
            other => return Err(format!("unknown audit tag {other:?}")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditRecord {
    pub tag: AuditTag,
    pub kind: String,
    pub payload: String,
}

impl AuditRecord {
    pub fn new(tag: AuditTag, kind: impl Into<String>, payload: impl Into<String>) -> Self {
        Self {
            tag,
            kind: kind.into(),
            payload: payload.into(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("{} {} {}\n", self.tag, self.kind, self.payload.len()).into_bytes();
        out.extend_from_slice(self.payload.as_bytes());
        out.push(b'\n');
        out
    }
}

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("audit record {index}: {message}")]
    Format { index: usize, message: String },
    #[error("audit io: {0}")]
    Io(#[from] io::Error),
}

pub fn decode_records(bytes: &[u8]) -> Result<Vec<AuditRecord>, AuditError> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let index = out.len();
        let bad = |message: String| AuditError::Format { index, message };
        let eol = bytes[pos..]
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| bad("unterminated header".into()))?;
        let header = std::str::from_utf8(&bytes[pos..pos + eol]).map_err(|e| bad(e.to_string()))?;
        let mut parts = header.split(' ');
        let (Some(tag), Some(kind), Some(len), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad(format!("malformed header {header:?}")));
        };
        let tag: AuditTag = tag.parse().map_err(bad)?;
        let len: usize = len.parse().map_err(|e| bad(format!("length: {e}")))?;
        let start = pos + eol + 1;
        let end = start + len;
        if bytes.get(end) != Some(&b'\n') {
            return Err(bad("payload length does not match".into()));
        }
        let payload = std::str::from_utf8(&bytes[start..end])
            .map_err(|e| bad(e.to_string()))?
            .to_string();
        out.push(AuditRecord::new(tag, kind, payload));
        pos = end + 1;
    }
    Ok(out)
}

pub fn read_audit(path: &Path) -> Result<Vec<AuditRecord>, AuditError> {
    decode_records(&std::fs::read(path)?)
}

enum Target {
    File(std::fs::File),
    Memory(Vec<u8>),
}

struct AuditInner {
    target: Target,
    error: Option<String>,
}

/// Shared append handle; cloning shares the same underlying log.
#[derive(Clone)]
pub struct AuditLog {
    inner: Arc<Mutex<AuditInner>>,
}

impl AuditLog {
    pub fn open(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self::with_target(Target::File(file)))
    }

    pub fn in_memory() -> Self {
        Self::with_target(Target::Memory(Vec::new()))
    }

    fn with_target(target: Target) -> Self {
        Self {
            inner: Arc::new(Mutex::new(AuditInner {
                target,
                error: None,
            })),
        }
    }

    pub fn record(&self, record: AuditRecord) {
        let mut inner = self.inner.lock().expect("audit lock");
        let bytes = record.encode();
        let result = match &mut inner.target {
            Target::File(f) => f.write_all(&bytes).and_then(|_| f.flush()),
            Target::Memory(buf) => {
                buf.extend_from_slice(&bytes);
                Ok(())
            }
        };
        if let Err(e) = result {
            inner.error.get_or_insert_with(|| e.to_string());
        }
    }

    /// First write failure since the last call, if any.
    pub fn take_error(&self) -> Option<String> {
        self.inner.lock().expect("audit lock").error.take()
    }

    /// Bytes written so far (in-memory logs only).
    pub fn bytes(&self) -> Option<Vec<u8>> {
        match &self.inner.lock().expect("audit lock").target {
            Target::Memory(buf) => Some(buf.clone()),
            Target::File(_) => None,
        }
    }
}

/// Records every exchange with the wrapped narrator.
pub struct AuditedNarrator<N> {
    inner: N,
    log: AuditLog,
}

impl<N> AuditedNarrator<N> {
    pub fn new(inner: N, log: AuditLog) -> Self {
        Self { inner, log }
    }
}

fn request_json(request: &NarratorRequest) -> String {
    serde_json::to_string(request).expect("requests serialize")
}

impl<N: Narrator> Narrator for AuditedNarrator<N> {
    fn complete(&self, request: &NarratorRequest) -> Result<NarratorResponse, NarratorError> {
        let kind = request.kind.as_str();
        self.log
            .record(AuditRecord::new(AuditTag::Req, kind, request_json(request)));
        let result = self.inner.complete(request);
        match &result {
            Ok(reply) => self
                .log
                .record(AuditRecord::new(AuditTag::Rsp, kind, reply.text.clone())),
            Err(err) => self.log.record(AuditRecord::new(
                AuditTag::Err,
                kind,
                serde_json::to_string(err).expect("errors serialize"),
            )),
        }
        result
    }
}

/// Records every reading of the wrapped clock.
pub struct RecordingClock<C> {
    inner: C,
    log: AuditLog,
}

impl<C> RecordingClock<C> {
    pub fn new(inner: C, log: AuditLog) -> Self {
        Self { inner, log }
    }
}

impl<C: WallClock> WallClock for RecordingClock<C> {
    fn now(&self) -> NaiveDateTime {
        let t = self.inner.now();
        self.log.record(AuditRecord::new(
            AuditTag::Ts,
            "-",
            t.format(time::WALL_TIME_FORMAT).to_string(),
        ));
        t
    }
}

struct CursorInner {
    records: Vec<AuditRecord>,
    pos: usize,
    divergence: Option<String>,
}

/// Sequential reader over recorded records, shared by the replay narrator,
/// the replay clock and the command driver.
#[derive(Clone)]
pub struct ReplayCursor {
    inner: Arc<Mutex<CursorInner>>,
}

impl ReplayCursor {
    pub fn new(records: Vec<AuditRecord>) -> Self {
        Self {
            inner: Arc::new(Mutex::new(CursorInner {
                records,
                pos: 0,
                divergence: None,
            })),
        }
    }

    pub fn peek_tag(&self) -> Option<AuditTag> {
        let inner = self.inner.lock().expect("cursor lock");
        inner.records.get(inner.pos).map(|r| r.tag)
    }

    /// Takes the next record if it carries `tag`; otherwise notes a divergence.
    pub fn expect(&self, tag: AuditTag) -> Option<AuditRecord> {
        let mut inner = self.inner.lock().expect("cursor lock");
        match inner.records.get(inner.pos).cloned() {
            Some(record) if record.tag == tag => {
                inner.pos += 1;
                Some(record)
            }
            other => {
                let found = other.map_or("end of log".to_string(), |r| {
                    format!("{} {}", r.tag, r.kind)
                });
                let at = inner.pos;
                inner
                    .divergence
                    .get_or_insert_with(|| format!("record {at}: expected {tag}, found {found}"));
                None
            }
        }
    }

    pub fn diverge(&self, message: String) {
        self.inner
            .lock()
            .expect("cursor lock")
            .divergence
            .get_or_insert(message);
    }

    pub fn divergence(&self) -> Option<String> {
        self.inner.lock().expect("cursor lock").divergence.clone()
    }

    pub fn is_exhausted(&self) -> bool {
        let inner = self.inner.lock().expect("cursor lock");
        inner.pos >= inner.records.len()
    }
}

/// Serves recorded replies, checking each request against the recording.
///
/// With a backend attached, successful replies are produced by the backend
/// and must match the recorded text; recorded errors are served as recorded.
pub struct ReplayNarrator {
    cursor: ReplayCursor,
    backend: Option<Arc<dyn Narrator>>,
}

impl ReplayNarrator {
    pub fn new(cursor: ReplayCursor) -> Self {
        Self {
            cursor,
            backend: None,
        }
    }

    pub fn with_backend(mut self, backend: Arc<dyn Narrator>) -> Self {
        self.backend = Some(backend);
        self
    }
}

impl Narrator for ReplayNarrator {
    fn complete(&self, request: &NarratorRequest) -> Result<NarratorResponse, NarratorError> {
        let diverged = |msg: String| {
            self.cursor.diverge(msg.clone());
            NarratorError::Replay(msg)
        };
        let recorded = self
            .cursor
            .expect(AuditTag::Req)
            .ok_or_else(|| diverged(format!("unexpected {} request", request.kind)))?;
        if recorded.payload != request_json(request) {
            return Err(diverged(format!(
                "{} request differs from the recording",
                request.kind
            )));
        }
        match self.cursor.peek_tag() {
            Some(AuditTag::Rsp) => {
                let reply = self.cursor.expect(AuditTag::Rsp).expect("peeked");
                match &self.backend {
                    None => Ok(NarratorResponse {
                        text: reply.payload,
                        backend_id: "replay".into(),
                        latency_ms: 0,
                    }),
                    Some(backend) => {
                        let fresh = backend.complete(request).map_err(|e| {
                            diverged(format!("{} failed on replay: {e}", request.kind))
                        })?;
                        if fresh.text != reply.payload {
                            return Err(diverged(format!(
                                "{} reply differs from the recording",
                                request.kind
                            )));
                        }
                        Ok(fresh)
                    }
                }
            }
            Some(AuditTag::Err) => {
                let err = self.cursor.expect(AuditTag::Err).expect("peeked");
                Err(serde_json::from_str(&err.payload)
                    .unwrap_or_else(|e| diverged(format!("unreadable ERR record: {e}"))))
            }
            _ => Err(diverged("request without a recorded outcome".into())),
        }
    }
}

pub struct ReplayClock {
    cursor: ReplayCursor,
}

impl ReplayClock {
    pub fn new(cursor: ReplayCursor) -> Self {
        Self { cursor }
    }
}

impl WallClock for ReplayClock {
    fn now(&self) -> NaiveDateTime {
        self.cursor
            .expect(AuditTag::Ts)
            .and_then(|r| time::parse_wall_time(&r.payload))
            .unwrap_or_default()
    }
}
