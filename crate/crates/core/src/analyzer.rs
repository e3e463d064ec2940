//! Corpus analysis over run artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::model::{Creator, WorldState};
use crate::persistence::{load_snapshot, SnapshotError, LOG_FILE, SNAPSHOT_FILE};
use crate::time::sim_format;

/// Phrases counted when none are requested.
pub const DEFAULT_PHRASES: [&str; 2] = ["healing garden", "objective: collect"];

const EXCERPT_CHARS: usize = 80;

/// Machine-readable counts written next to the report.
pub const COUNTS_FILE: &str = "counts.json";

/// Lowercases per character, so the context rule for final sigma never
/// applies and a phrase folds the same way wherever it occurs.
fn normalize(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .chars()
        .flat_map(char::to_lowercase)
        .collect()
}

/// Case-insensitive count of non-overlapping occurrences, with whitespace
/// runs treated as single spaces.
pub fn count_phrase(corpus: &str, phrase: &str) -> usize {
    let phrase = normalize(phrase);
    if phrase.is_empty() {
        return 0;
    }
    normalize(corpus).matches(phrase.as_str()).count()
}

pub fn word_count(corpus: &str) -> usize {
    corpus.split_whitespace().count()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocationEntry {
    #[serde(with = "sim_format")]
    pub sim_time: NaiveDateTime,
    pub location: String,
    pub created_by: String,
}

/// Locations created after initialisation, oldest first.
pub fn location_timeline(world: &WorldState) -> Vec<LocationEntry> {
    let mut out: Vec<LocationEntry> = world
        .locations
        .values()
        .filter(|l| l.created_by != Creator::Initial)
        .map(|l| LocationEntry {
            sim_time: l.created_at,
            location: l.name.clone(),
            created_by: l.created_by.to_string(),
        })
        .collect();
    out.sort_by(|a, b| (a.sim_time, &a.location).cmp(&(b.sim_time, &b.location)));
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationEntry {
    #[serde(with = "sim_format")]
    pub sim_time: NaiveDateTime,
    pub agent: String,
    pub excerpt: String,
}

fn excerpt(text: &str) -> String {
    let mut chars = text.chars();
    let head: String = chars.by_ref().take(EXCERPT_CHARS).collect();
    if chars.next().is_some() {
        format!("{head}...")
    } else {
        head
    }
}

/// Every description rewrite, all agents merged chronologically.
pub fn mutation_timeline(world: &WorldState) -> Vec<MutationEntry> {
    let mut out: Vec<(NaiveDateTime, &str, usize, MutationEntry)> = world
        .agents
        .values()
        .flat_map(|a| {
            a.description_history
                .iter()
                .enumerate()
                .skip(1)
                .map(move |(i, rev)| {
                    (
                        rev.at,
                        a.name.as_str(),
                        i,
                        MutationEntry {
                            sim_time: rev.at,
                            agent: a.name.clone(),
                            excerpt: excerpt(&rev.text),
                        },
                    )
                })
        })
        .collect();
    out.sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));
    out.into_iter().map(|(_, _, _, e)| e).collect()
}

/// The machine-readable part of a report (`counts.json`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub words: usize,
    pub log_lines: usize,
    pub phrases: BTreeMap<String, usize>,
    pub shifts: usize,
    pub locations_created: usize,
    pub mutations: usize,
    pub dialogues: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub counts: Counts,
    pub locations: Vec<LocationEntry>,
    pub mutations: Vec<MutationEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum AnalyzeError {
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no snapshot found in {0}")]
    NoSnapshot(String),
    #[error("several snapshots in {0}; name one with world.snapshot.json")]
    AmbiguousSnapshot(String),
}

pub fn analyze(world: &WorldState, log: &str, phrases: &[String]) -> Report {
    let locations = location_timeline(world);
    let mutations = mutation_timeline(world);
    Report {
        counts: Counts {
            words: word_count(log),
            log_lines: log.lines().count(),
            phrases: phrases
                .iter()
                .map(|p| (p.clone(), count_phrase(log, p)))
                .collect(),
            shifts: world.shifts.len(),
            locations_created: locations.len(),
            mutations: mutations.len(),
            dialogues: world.archive.transcripts.len(),
        },
        locations,
        mutations,
    }
}

/// The snapshot of a run directory: `world.snapshot.json` if present,
/// otherwise the only top-level `.json` file besides `counts.json`.
pub fn find_snapshot(dir: &Path) -> Result<PathBuf, AnalyzeError> {
    let preferred = dir.join(SNAPSHOT_FILE);
    if preferred.is_file() {
        return Ok(preferred);
    }
    let entries = fs::read_dir(dir).map_err(|source| AnalyzeError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut candidates: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .filter(|p| p.file_name().is_some_and(|n| n != COUNTS_FILE))
        .collect();
    match candidates.len() {
        1 => Ok(candidates.remove(0)),
        0 => Err(AnalyzeError::NoSnapshot(dir.display().to_string())),
        _ => Err(AnalyzeError::AmbiguousSnapshot(dir.display().to_string())),
    }
}

/// Reads the snapshot and simulation log of a run directory.
pub fn analyze_dir(dir: &Path, phrases: &[String]) -> Result<Report, AnalyzeError> {
    let world = load_snapshot(&find_snapshot(dir)?)?;
    let log_path = dir.join(LOG_FILE);
    let log = fs::read_to_string(&log_path).map_err(|source| AnalyzeError::Io {
        path: log_path.display().to_string(),
        source,
    })?;
    Ok(analyze(&world, &log, phrases))
}

impl Report {
    pub fn render_text(&self) -> String {
        let c = &self.counts;
        let mut out = String::new();
        out.push_str(&format!("words: {}\n", c.words));
        out.push_str(&format!("log lines: {}\n", c.log_lines));
        for (phrase, n) in &c.phrases {
            out.push_str(&format!("phrase {phrase:?}: {n}\n"));
        }
        out.push_str(&format!("narrative shifts: {}\n", c.shifts));
        out.push_str(&format!("dialogues: {}\n", c.dialogues));
        out.push_str(&format!("locations created: {}\n", c.locations_created));
        for l in &self.locations {
            out.push_str(&format!(
                "  {}  {}  ({})\n",
                l.sim_time.format(crate::time::SIM_TIME_FORMAT),
                l.location,
                l.created_by
            ));
        }
        out.push_str(&format!("mutations: {}\n", c.mutations));
        for m in &self.mutations {
            out.push_str(&format!(
                "  {}  {}: {}\n",
                m.sim_time.format(crate::time::SIM_TIME_FORMAT),
                m.agent,
                m.excerpt
            ));
        }
        out
    }

    pub fn counts_json(&self) -> String {
        serde_json::to_string_pretty(&self.counts).expect("counts serialize") + "\n"
    }
}
