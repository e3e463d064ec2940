//! Run directories: the snapshot plus the log, prompt audit and datasets
//! written next to it.

use std::io;
use std::path::{Path, PathBuf};

use chrono::Duration;
use thiserror::Error;

use crate::engine::{Engine, EngineError, EngineIo, StartMode};
use crate::model::WorldState;
use crate::narrator::Narrator;
use crate::persistence::{
    export_datasets, load_snapshot, save_snapshot, AuditLog, ExportManifest, LogSink,
    SnapshotError, SteppingClock, SystemClock, WallClock, AUDIT_FILE, DATASET_DIR, LOG_FILE,
};
use crate::time;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{0} already exists")]
    Exists(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Which wall clock stamps log lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockMode {
    System,
    /// One second per reading, continuing after the last logged line.
    Stepping,
}

#[derive(Debug, Clone)]
pub struct RunDir {
    snapshot: PathBuf,
    dir: PathBuf,
}

impl RunDir {
    pub fn new(snapshot: &Path) -> Self {
        let dir = match snapshot.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        Self {
            snapshot: snapshot.to_path_buf(),
            dir,
        }
    }

    pub fn snapshot_path(&self) -> &Path {
        &self.snapshot
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.join(LOG_FILE)
    }

    pub fn audit_path(&self) -> PathBuf {
        self.dir.join(AUDIT_FILE)
    }

    pub fn datasets_path(&self) -> PathBuf {
        self.dir.join(DATASET_DIR)
    }

    /// Writes a freshly built world. Refuses to replace an existing
    /// snapshot or to reuse a directory that already holds a log.
    pub fn create(&self, world: &WorldState) -> Result<(), RunError> {
        for path in [self.snapshot.clone(), self.log_path()] {
            if path.exists() {
                return Err(RunError::Exists(path));
            }
        }
        std::fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        save_snapshot(world, &self.snapshot)?;
        Ok(())
    }

    pub fn load(&self) -> Result<WorldState, RunError> {
        Ok(load_snapshot(&self.snapshot)?)
    }

    pub fn clock(&self, mode: ClockMode, log: &LogSink) -> Box<dyn WallClock> {
        match mode {
            ClockMode::System => Box::new(SystemClock),
            ClockMode::Stepping => {
                let last = log
                    .lines()
                    .iter()
                    .rev()
                    .find_map(|line| line.get(..19).and_then(time::parse_wall_time));
                let start = match last {
                    Some(t) => t + Duration::seconds(1),
                    None => SteppingClock::epoch(),
                };
                Box::new(SteppingClock::new(start, Duration::seconds(1)))
            }
        }
    }

    /// Loads the snapshot and starts an engine that appends to this
    /// directory's log and prompt audit. A directory without log lines
    /// starts fresh.
    pub fn open_engine(
        &self,
        narrator: Box<dyn Narrator>,
        clock: ClockMode,
    ) -> Result<Engine, RunError> {
        let world = self.load()?;
        let log_path = self.log_path();
        let log = LogSink::open(&log_path).map_err(io_err(&log_path))?;
        let audit_path = self.audit_path();
        let audit = AuditLog::open(&audit_path).map_err(io_err(&audit_path))?;
        let mode = if log.lines().is_empty() {
            StartMode::Fresh
        } else {
            StartMode::Loaded
        };
        let clock = self.clock(clock, &log);
        let io = EngineIo {
            narrator,
            clock,
            log,
            audit: Some(audit),
        };
        Ok(Engine::start(world, mode, io)?)
    }

    /// Persists the world and refreshes the datasets.
    pub fn save(&self, engine: &Engine) -> Result<ExportManifest, RunError> {
        save_snapshot(engine.world(), &self.snapshot)?;
        let out = self.datasets_path();
        let log = engine.log().contents();
        export_datasets(engine.world(), Some(&log), &out)
            .map_err(|(path, source)| RunError::Io { path, source })
    }
}
