use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::{DialogueTranscript, WorldState};
use crate::time::display_date;

/// Ends every record in a dataset file.
pub const RECORD_SEPARATOR: &str = "\u{1e}\n";

pub const DATASET_FILES: [&str; 4] = [
    "dataset1.txt",
    "dataset2.txt",
    "dataset3.txt",
    "dataset4.txt",
];

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub file: String,
    pub records: usize,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub datasets: Vec<DatasetEntry>,
    /// Inputs that were missing; the matching dataset file is empty.
    pub gaps: Vec<String>,
}

fn transcript_block(t: &DialogueTranscript) -> String {
    let mut out = format!(
        "Dialogue between {} on {}",
        t.participants.join(" and "),
        display_date(t.sim_time)
    );
    if let Some(loc) = &t.location {
        out.push_str(&format!(" at {loc}"));
    }
    out.push('\n');
    for turn in &t.turns {
        out.push_str(&format!("{}: {}\n", turn.speaker, turn.text));
    }
    out
}

fn join_records(records: &[String]) -> String {
    records
        .iter()
        .map(|r| format!("{}{RECORD_SEPARATOR}", r.trim_end()))
        .collect()
}

/// Writes the four analysis datasets into `out_dir`:
/// dialogue transcripts, summary projections, dialogue conclusions and the
/// simulation log. `log` is `None` when the log file is not available.
pub fn export_datasets(
    world: &WorldState,
    log: Option<&str>,
    out_dir: &Path,
) -> Result<ExportManifest, (PathBuf, io::Error)> {
    fs::create_dir_all(out_dir).map_err(|e| (out_dir.to_path_buf(), e))?;
    let archive = &world.archive;
    let mut gaps = Vec::new();

    let dialogues: Vec<String> = archive.transcripts.iter().map(transcript_block).collect();
    let summaries: Vec<String> = archive.summaries.iter().map(|s| s.render_text()).collect();
    let conclusions: Vec<String> = archive
        .transcripts
        .iter()
        .flat_map(|t| {
            t.conclusions
                .iter()
                .map(move |c| format!("{} ({}): {}", c.agent, display_date(t.sim_time), c.text))
        })
        .collect();
    let log_text = match log {
        Some(text) => text.to_string(),
        None => {
            gaps.push("simulation log not found".to_string());
            String::new()
        }
    };

    let contents = [
        (join_records(&dialogues), dialogues.len()),
        (join_records(&summaries), summaries.len()),
        (join_records(&conclusions), conclusions.len()),
        (log_text.clone(), log_text.lines().count()),
    ];
    let mut datasets = Vec::new();
    for (name, (text, records)) in DATASET_FILES.iter().zip(contents) {
        let path = out_dir.join(name);
        fs::write(&path, &text).map_err(|e| (path.clone(), e))?;
        datasets.push(DatasetEntry {
            file: name.to_string(),
            records,
            bytes: text.len(),
        });
    }
    let manifest = ExportManifest { datasets, gaps };
    let path = out_dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(|e| (path, e))?;
    Ok(manifest)
}
