use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn twin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twin"))
        .args(args)
        .output()
        .expect("run twin")
}

fn twin_with_input(args: &[&str], input: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_twin"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("spawn twin");
    child
        .stdin
        .take()
        .unwrap()
        .write_all(input.as_bytes())
        .unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn rules() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures/default.rules")
        .display()
        .to_string()
}

fn init_run(dir: &Path) -> PathBuf {
    let snapshot = dir.join("w.json");
    let out = twin(&["init", "--seed", "7", "--out", snapshot.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    snapshot
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            for (p, bytes) in tree(&path) {
                out.insert(Path::new(path.file_name().unwrap()).join(p), bytes);
            }
        } else {
            out.insert(
                PathBuf::from(path.file_name().unwrap()),
                fs::read(&path).unwrap(),
            );
        }
    }
    out
}

#[test]
fn a_scripted_day_brings_one_shift() {
    let dir = tempfile::tempdir().unwrap();
    let snapshot = init_run(dir.path());
    let out = twin(&[
        "run",
        "--ticks",
        "12",
        "--narrator",
        "scripted",
        "--script",
        &rules(),
        "--snapshot",
        snapshot.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(
        stdout(&out).contains("ran 12 tick(s), 1 narrative shift(s)"),
        "{}",
        stdout(&out)
    );
    for file in ["simulation.log", "prompts.audit", "datasets/dataset4.txt"] {
        assert!(dir.path().join(file).exists(), "{file} missing");
    }
}

#[test]
fn identical_inputs_give_identical_run_directories() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let snapshot = init_run(a.path());
    fs::copy(&snapshot, b.path().join("w.json")).unwrap();
    for dir in [a.path(), b.path()] {
        let snap = dir.join("w.json");
        let out = twin(&["run", "--ticks", "15", "--snapshot", snap.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (path, bytes) in &ta {
        assert!(bytes == &tb[path], "{} differs", path.display());
    }
}

#[test]
fn init_refuses_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let snapshot = init_run(dir.path());
    let out = twin(&["init", "--seed", "1", "--out", snapshot.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("already exists"));
}

#[test]
fn dialogue_reads_lines_and_concludes_at_eof() {
    let dir = tempfile::tempdir().unwrap();
    let snapshot = init_run(dir.path());
    let out = twin_with_input(
        &[
            "dialogue",
            "--snapshot",
            snapshot.to_str().unwrap(),
            "--agent",
            "Lex",
        ],
        "Hello Lex.\n\nIs there no way to turn the world around?\n",
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3, "{text}");
    assert!(lines[0].starts_with("Lex: "));
    assert!(lines[2].starts_with("Lex concluded: "));
    let log = fs::read_to_string(dir.path().join("simulation.log")).unwrap();
    assert!(log.contains("Conclude the dialogue between Grace and Lex."));
    let world: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&snapshot).unwrap()).unwrap();
    let kinds: Vec<&str> = world["world"]["agents"]["Lex"]["memory"]["records"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["kind"].as_str().unwrap())
        .collect();
    assert_eq!(kinds, ["dialogue-summary"]);
}

#[test]
fn dialogue_with_a_descriptive_entity_fails() {
    let dir = tempfile::tempdir().unwrap();
    let snapshot = init_run(dir.path());
    let out = twin_with_input(
        &[
            "dialogue",
            "--snapshot",
            snapshot.to_str().unwrap(),
            "--agent",
            "Luna",
        ],
        "",
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("unknown agent"), "{}", stderr(&out));
    assert!(!dir.path().join("simulation.log").exists());
}

#[test]
fn analyze_prints_counts_and_writes_them() {
    let dir = tempfile::tempdir().unwrap();
    let snapshot = init_run(dir.path());
    let out = twin(&[
        "run",
        "--ticks",
        "12",
        "--snapshot",
        snapshot.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let out = twin(&[
        "analyze",
        "--dir",
        dir.path().to_str().unwrap(),
        "--phrase",
        "healing garden",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let log = fs::read_to_string(dir.path().join("simulation.log"))
        .unwrap()
        .to_lowercase();
    let expected = log.matches("healing garden").count();
    assert!(
        stdout(&out).contains(&format!("phrase \"healing garden\": {expected}")),
        "{}",
        stdout(&out)
    );
    let counts: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("counts.json")).unwrap()).unwrap();
    assert_eq!(counts["phrases"]["healing garden"], expected);
    assert_eq!(counts["shifts"], 1);
}

#[test]
fn replay_reproduces_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let snapshot = init_run(dir.path());
    let snap = snapshot.to_str().unwrap();
    assert_eq!(
        twin(&["run", "--ticks", "6", "--snapshot", snap])
            .status
            .code(),
        Some(0)
    );
    let out = twin_with_input(
        &["dialogue", "--snapshot", snap, "--agent", "Tortugi"],
        "Good morning.\n",
    );
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        twin(&["run", "--ticks", "7", "--snapshot", snap])
            .status
            .code(),
        Some(0)
    );

    let run_dir = dir.path().to_str().unwrap();
    let out = twin(&["replay", "--dir", run_dir]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let out = twin(&["replay", "--dir", run_dir, "--script", &rules()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let mut log = fs::read_to_string(dir.path().join("simulation.log")).unwrap();
    log = log.replacen("Initialising Gracia.", "Initialising Elsewhere.", 1);
    fs::write(dir.path().join("simulation.log"), log).unwrap();
    let out = twin(&["replay", "--dir", run_dir]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 1"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_1() {
    let out = twin(&["bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("Usage"));
    assert_eq!(
        twin(&["run", "--snapshot", "x.json"]).status.code(),
        Some(1)
    );
    assert_eq!(
        twin(&[
            "run",
            "--snapshot",
            "x.json",
            "--ticks",
            "1",
            "--narrator",
            "oracle"
        ])
        .status
        .code(),
        Some(1)
    );
    assert_eq!(twin(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_snapshot_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.json");
    let out = twin(&[
        "run",
        "--ticks",
        "1",
        "--snapshot",
        missing.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("none.json"));
}

#[test]
fn live_narrator_needs_an_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let snapshot = init_run(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_twin"))
        .args([
            "run",
            "--ticks",
            "1",
            "--narrator",
            "live",
            "--snapshot",
            snapshot.to_str().unwrap(),
        ])
        .env_remove("NARRATOR_URL")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("NARRATOR_URL"));
}
