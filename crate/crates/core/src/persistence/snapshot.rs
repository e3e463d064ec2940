use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{validate_world, Violation, WorldState};

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub format_version: u32,
    pub world: WorldState,
}

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: not a snapshot: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: unsupported snapshot format_version {found} (expected {SNAPSHOT_VERSION})")]
    Version { path: PathBuf, found: i64 },
    #[error("{path}: corrupt snapshot: {}", violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Corrupt {
        path: PathBuf,
        violations: Vec<Violation>,
    },
}

/// Canonical text form: pretty JSON with keys sorted at every level.
pub fn encode_snapshot(world: &WorldState) -> String {
    let snapshot = Snapshot {
        format_version: SNAPSHOT_VERSION,
        world: world.clone(),
    };
    // serde_json's default map is ordered, so going through Value sorts keys.
    let value = serde_json::to_value(&snapshot).expect("world serializes");
    let mut text = serde_json::to_string_pretty(&value).expect("value serializes");
    text.push('\n');
    text
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> SnapshotError + '_ {
    move |source| SnapshotError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes through a temporary sibling file and renames it into place, so a
/// crash leaves either the old snapshot or the new one.
pub fn save_snapshot(world: &WorldState, path: &Path) -> Result<(), SnapshotError> {
    let text = encode_snapshot(world);
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "snapshot".into());
    let tmp = dir.join(format!(".{file_name}.tmp-{}", std::process::id()));
    let write = || -> io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(text.as_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io_err(path)(e)
    })
}

pub fn decode_snapshot(path: &Path, text: &str) -> Result<WorldState, SnapshotError> {
    let parse_err = |message: String| SnapshotError::Parse {
        path: path.to_path_buf(),
        message,
    };
    let value: Value = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(Value::as_i64)
        .ok_or_else(|| parse_err("missing format_version".into()))?;
    if version != i64::from(SNAPSHOT_VERSION) {
        return Err(SnapshotError::Version {
            path: path.to_path_buf(),
            found: version,
        });
    }
    let snapshot: Snapshot = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
    let violations = validate_world(&snapshot.world);
    if !violations.is_empty() {
        return Err(SnapshotError::Corrupt {
            path: path.to_path_buf(),
            violations,
        });
    }
    Ok(snapshot.world)
}

pub fn load_snapshot(path: &Path) -> Result<WorldState, SnapshotError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    decode_snapshot(path, &text)
}
