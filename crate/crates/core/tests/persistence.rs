mod common;

use std::fs;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;

use common::{golden_world, scripted_engine};
use serde_json::Value;
use twin_core::persistence::datasets::{DATASET_FILES, MANIFEST_FILE, RECORD_SEPARATOR};
use twin_core::persistence::snapshot::encode_snapshot;
use twin_core::persistence::{export_datasets, load_snapshot, save_snapshot, SnapshotError};

fn corrupt(edit: impl FnOnce(&mut Value)) -> SnapshotError {
    let mut e = scripted_engine(golden_world());
    e.run(3).unwrap();
    let mut value: Value = serde_json::from_str(&encode_snapshot(e.world())).unwrap();
    edit(&mut value["world"]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("world.json");
    fs::write(&path, serde_json::to_string(&value).unwrap()).unwrap();
    load_snapshot(&path).unwrap_err()
}

#[test]
fn zero_poignancy_is_rejected_by_name() {
    let err = corrupt(|w| w["agents"]["Lex"]["memory"]["records"][0]["poignancy"] = 0.into());
    let SnapshotError::Corrupt { violations, .. } = err else {
        panic!("expected a corrupt snapshot, got {err:?}");
    };
    assert_eq!(violations.len(), 1);
    assert!(violations[0].entity.starts_with("agent Lex memory record"));
    assert!(violations[0].rule.contains("poignancy 0"));
}

#[test]
fn dangling_location_is_rejected_by_name() {
    let err = corrupt(|w| w["agents"]["Tortugi"]["current_location"] = "Atlantis".into());
    let SnapshotError::Corrupt { violations, .. } = err else {
        panic!("expected a corrupt snapshot, got {err:?}");
    };
    assert_eq!(violations[0].entity, "agent Tortugi");
    assert!(violations[0].rule.contains("Atlantis"));
}

#[test]
fn unknown_versions_and_garbage_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("world.json");
    let mut value: Value = serde_json::from_str(&encode_snapshot(&golden_world())).unwrap();
    value["format_version"] = 99.into();
    fs::write(&path, value.to_string()).unwrap();
    assert!(matches!(
        load_snapshot(&path),
        Err(SnapshotError::Version { found: 99, .. })
    ));
    fs::write(&path, "{\"format_version\": 1, \"world\": ").unwrap();
    assert!(matches!(
        load_snapshot(&path),
        Err(SnapshotError::Parse { .. })
    ));
    assert!(matches!(
        load_snapshot(&dir.path().join("missing.json")),
        Err(SnapshotError::Io { .. })
    ));
}

#[test]
fn readers_never_see_a_torn_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("world.json");
    let small = golden_world();
    let mut e = scripted_engine(golden_world());
    e.run(12).unwrap();
    let large = e.into_world();
    save_snapshot(&small, &path).unwrap();

    let done = Arc::new(AtomicBool::new(false));
    let reader = {
        let (path, done, small, large) = (path.clone(), done.clone(), small.clone(), large.clone());
        thread::spawn(move || {
            let mut reads = 0;
            while !done.load(Ordering::Relaxed) {
                let w = load_snapshot(&path).expect("every read parses");
                assert!(w == small || w == large);
                reads += 1;
            }
            reads
        })
    };
    for i in 0..200 {
        save_snapshot(if i % 2 == 0 { &large } else { &small }, &path).unwrap();
    }
    done.store(true, Ordering::Relaxed);
    assert!(reader.join().unwrap() > 0);
    let leftovers: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .filter_map(Result::ok)
        .filter(|e| e.file_name().to_string_lossy().contains(".tmp-"))
        .collect();
    assert!(leftovers.is_empty());
}

#[test]
fn datasets_hold_transcripts_summaries_conclusions_and_log() {
    let mut e = scripted_engine(golden_world());
    e.run(12).unwrap();
    let s = e.open_session("Tortugi").unwrap();
    e.post_message(&s.id, "How are the plants?").unwrap();
    e.conclude_session(&s.id).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let log = e.log().contents();
    let manifest = export_datasets(e.world(), Some(&log), dir.path()).unwrap();
    let w = e.world();

    let read = |i: usize| fs::read_to_string(dir.path().join(DATASET_FILES[i])).unwrap();
    assert_eq!(
        read(0).matches(RECORD_SEPARATOR).count(),
        w.archive.transcripts.len()
    );
    assert_eq!(
        read(1).matches(RECORD_SEPARATOR).count(),
        w.archive.summaries.len()
    );
    let conclusions: usize = w
        .archive
        .transcripts
        .iter()
        .map(|t| t.conclusions.len())
        .sum();
    assert_eq!(read(2).matches(RECORD_SEPARATOR).count(), conclusions);
    assert_eq!(read(3), log);
    assert!(read(0).contains("Grace: How are the plants?"));
    assert!(manifest.gaps.is_empty());
    assert!(dir.path().join(MANIFEST_FILE).exists());

    let empty = tempfile::tempdir().unwrap();
    let manifest = export_datasets(w, None, empty.path()).unwrap();
    assert_eq!(manifest.gaps.len(), 1);
    assert_eq!(
        fs::read_to_string(empty.path().join(DATASET_FILES[3])).unwrap(),
        ""
    );
}
