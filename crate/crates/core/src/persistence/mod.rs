//! Snapshots, the simulation log, the prompt audit log and dataset export.

pub mod audit;
pub mod datasets;
pub mod log;
pub mod snapshot;

pub use audit::{
    decode_records, read_audit, AuditError, AuditLog, AuditRecord, AuditTag, AuditedNarrator,
    RecordingClock, ReplayClock, ReplayCursor, ReplayNarrator,
};
pub use datasets::{export_datasets, ExportManifest};
pub use log::{append_log, LogEvent, LogSink, SteppingClock, SystemClock, WallClock};
pub use snapshot::{load_snapshot, save_snapshot, Snapshot, SnapshotError, SNAPSHOT_VERSION};

/// File names inside a run directory.
pub const SNAPSHOT_FILE: &str = "world.snapshot.json";
pub const LOG_FILE: &str = "simulation.log";
pub const AUDIT_FILE: &str = "prompts.audit";
pub const DATASET_DIR: &str = "datasets";
