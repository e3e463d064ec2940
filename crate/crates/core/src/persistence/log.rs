use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::time::{self, wall_format};

/// One line of the simulation log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEvent {
    #[serde(with = "wall_format")]
    pub real_time: NaiveDateTime,
    pub text: String,
}

impl LogEvent {
    /// Line breaks are folded into spaces so every event stays one line.
    pub fn new(real_time: NaiveDateTime, text: impl AsRef<str>) -> Self {
        Self {
            real_time: time::truncate_to_second(real_time),
            text: single_line(text.as_ref()),
        }
    }

    /// `2023-05-16T15:26:06: Initialising Gracia.`
    pub fn format_line(&self) -> String {
        format!(
            "{}: {}",
            self.real_time.format(time::WALL_TIME_FORMAT),
            self.text
        )
    }
}

pub fn single_line(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last_space = false;
    for c in text.chars() {
        if c == '\n' || c == '\r' {
            if !last_space {
                out.push(' ');
            }
            last_space = true;
        } else {
            out.push(c);
            last_space = c == ' ';
        }
    }
    out.trim().to_string()
}

/// Source of wall-clock time for log lines and dialogue turns.
pub trait WallClock: Send + Sync {
    fn now(&self) -> NaiveDateTime;
}

impl<C: WallClock + ?Sized> WallClock for Box<C> {
    fn now(&self) -> NaiveDateTime {
        (**self).now()
    }
}

impl<C: WallClock + ?Sized> WallClock for std::sync::Arc<C> {
    fn now(&self) -> NaiveDateTime {
        (**self).now()
    }
}

pub struct SystemClock;

impl WallClock for SystemClock {
    fn now(&self) -> NaiveDateTime {
        time::truncate_to_second(chrono::Local::now().naive_local())
    }
}

/// Deterministic clock: each reading is `step` after the previous one.
pub struct SteppingClock {
    next: Mutex<NaiveDateTime>,
    step: Duration,
}

impl SteppingClock {
    pub fn new(start: NaiveDateTime, step: Duration) -> Self {
        Self {
            next: Mutex::new(time::truncate_to_second(start)),
            step,
        }
    }

    /// Starts at `2023-05-16T15:26:06` and advances one second per reading.
    pub fn default_epoch() -> Self {
        Self::new(Self::epoch(), Duration::seconds(1))
    }

    pub fn epoch() -> NaiveDateTime {
        time::parse_wall_time("2023-05-16T15:26:06").expect("valid epoch")
    }
}

impl WallClock for SteppingClock {
    fn now(&self) -> NaiveDateTime {
        let mut next = self.next.lock().expect("clock lock");
        let current = *next;
        *next = current + self.step;
        current
    }
}

/// Appends formatted lines to a file (flushing each one) and keeps them in
/// memory for tailing.
pub struct LogSink {
    path: Option<PathBuf>,
    file: Option<File>,
    lines: Vec<String>,
}

impl LogSink {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            file: None,
            lines: Vec::new(),
        }
    }

    /// Opens `path` for appending. Existing lines are loaded so tail cursors
    /// keep counting from the start of the file.
    pub fn open(path: &Path) -> io::Result<Self> {
        let lines = match std::fs::read_to_string(path) {
            Ok(text) => text.lines().map(str::to_string).collect(),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e),
        };
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            file: Some(file),
            lines,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn append(&mut self, event: &LogEvent) -> io::Result<String> {
        let line = event.format_line();
        if let Some(file) = &mut self.file {
            file.write_all(line.as_bytes())?;
            file.write_all(b"\n")?;
            file.flush()?;
        }
        self.lines.push(line.clone());
        Ok(line)
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    /// Lines from index `since` on, and the cursor for the next call.
    pub fn tail(&self, since: usize) -> (Vec<String>, usize) {
        let start = since.min(self.lines.len());
        (self.lines[start..].to_vec(), self.lines.len())
    }

    /// Everything written so far, newline-terminated, as it appears on disk.
    pub fn contents(&self) -> String {
        let mut out = String::new();
        for line in &self.lines {
            out.push_str(line);
            out.push('\n');
        }
        out
    }
}

/// Formats and appends one event.
pub fn append_log(sink: &mut LogSink, event: &LogEvent) -> io::Result<String> {
    sink.append(event)
}
