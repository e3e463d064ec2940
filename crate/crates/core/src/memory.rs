//! Memory accrual, poignancy accounting, reflection and prompt retrieval.

use std::collections::BTreeSet;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RetrievalWeights;
use crate::model::{MemoryKind, MemoryRecord, MemoryStream, MAX_POIGNANCY};
use crate::narrator::{
    self, Narrator, NarratorError, NarratorRequest, RequestKind, TURN_REPLY_TOKENS,
};
use crate::prompts;
use crate::time::display_date;

/// Stored when the rater cannot produce a usable rating.
pub const FALLBACK_POIGNANCY: u8 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemoryError {
    #[error("memory text must not be empty")]
    EmptyText,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReflectError {
    #[error("no memories since the last reflection")]
    NothingToReflect,
    #[error("reflection step {step} failed: {source}")]
    Narrator {
        step: RequestKind,
        #[source]
        source: NarratorError,
    },
    #[error("reflection step {step} returned an unusable reply")]
    Unusable { step: RequestKind },
}

impl ReflectError {
    pub fn is_outage(&self) -> bool {
        matches!(self, ReflectError::Narrator { source, .. } if source.is_outage())
    }
}

/// Result of [`append_memory`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Appended {
    pub record: MemoryRecord,
    /// Set when the fallback poignancy was used.
    pub rating_error: Option<NarratorError>,
}

/// Appends a rated record. Rating failures store [`FALLBACK_POIGNANCY`] and
/// report the error instead of failing the append.
pub fn append_memory(
    stream: &mut MemoryStream,
    sim_time: NaiveDateTime,
    kind: MemoryKind,
    text: &str,
    rater: &dyn Narrator,
) -> Result<Appended, MemoryError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(MemoryError::EmptyText);
    }
    let (poignancy, rating_error) = match narrator::rate(rater, text) {
        Ok(p) => (p, None),
        Err(e) => (FALLBACK_POIGNANCY, Some(e)),
    };
    let record = MemoryRecord {
        id: stream.next_id(),
        sim_time,
        kind,
        text: text.to_string(),
        poignancy,
    };
    stream.records.push(record.clone());
    Ok(Appended {
        record,
        rating_error,
    })
}

pub fn cumulative_poignancy(stream: &MemoryStream) -> u64 {
    stream.since_marker().map(|r| u64::from(r.poignancy)).sum()
}

/// True once the since-marker sum strictly exceeds `threshold`.
pub fn should_reflect(stream: &MemoryStream, threshold: u32) -> bool {
    cumulative_poignancy(stream) > u64::from(threshold)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionBatch {
    pub source_record_ids: Vec<u64>,
    pub salient_topics: Vec<String>,
    pub questions: Vec<String>,
    pub answers: Vec<String>,
    /// Ids of the reflection records that were stored.
    pub record_ids: Vec<u64>,
}

/// Splits a reply into list items, dropping bullets and numbering.
pub fn parse_list(reply: &str) -> Vec<String> {
    reply
        .lines()
        .map(|line| {
            let line = line.trim();
            let line = line.trim_start_matches(['-', '*', '•']).trim_start();
            let digits = line.bytes().take_while(u8::is_ascii_digit).count();
            if digits > 0 && line[digits..].starts_with(['.', ')', ':']) {
                line[digits + 1..].trim().to_string()
            } else {
                line.to_string()
            }
        })
        .filter(|line| !line.is_empty())
        .collect()
}

fn numbered(items: &[String]) -> String {
    items
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {}", i + 1, s))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Runs the topics, questions, answers chain over everything since the last
/// reflection and stores each answer as a reflection record.
///
/// All-or-nothing: if any of the three steps fails the stream is untouched.
pub fn reflect(
    stream: &mut MemoryStream,
    narrator: &dyn Narrator,
    sim_time: NaiveDateTime,
    agent: &str,
) -> Result<ReflectionBatch, ReflectError> {
    let sources: Vec<&MemoryRecord> = stream.since_marker().collect();
    if sources.is_empty() {
        return Err(ReflectError::NothingToReflect);
    }
    let source_record_ids: Vec<u64> = sources.iter().map(|r| r.id).collect();
    let observations = sources
        .iter()
        .map(|r| format!("- ({}) {}", display_date(r.sim_time), r.text))
        .collect::<Vec<_>>()
        .join("\n");
    let system = format!("You help {agent} reflect on their recent experiences.");

    let ask = |kind: RequestKind, user: String| -> Result<String, ReflectError> {
        let request = NarratorRequest::new(kind, system.as_str(), user, TURN_REPLY_TOKENS)
            .bind("agent", agent)
            .bind("sim_date", display_date(sim_time));
        narrator
            .complete(&request)
            .map(|r| r.text)
            .map_err(|source| ReflectError::Narrator { step: kind, source })
    };

    let salient_topics = parse_list(&ask(
        RequestKind::ReflectionTopics,
        prompts::render(
            prompts::REFLECTION_TOPICS,
            &[("agent", agent), ("observations", &observations)],
        ),
    )?);
    if salient_topics.is_empty() {
        return Err(ReflectError::Unusable {
            step: RequestKind::ReflectionTopics,
        });
    }

    let questions = parse_list(&ask(
        RequestKind::ReflectionQuestions,
        prompts::render(
            prompts::REFLECTION_QUESTIONS,
            &[
                ("agent", agent),
                ("observations", &observations),
                ("topics", &numbered(&salient_topics)),
            ],
        ),
    )?);
    if questions.is_empty() {
        return Err(ReflectError::Unusable {
            step: RequestKind::ReflectionQuestions,
        });
    }

    let mut answers = parse_list(&ask(
        RequestKind::ReflectionAnswers,
        prompts::render(
            prompts::REFLECTION_ANSWERS,
            &[
                ("agent", agent),
                ("observations", &observations),
                ("questions", &numbered(&questions)),
            ],
        ),
    )?);
    if answers.len() < questions.len() {
        return Err(ReflectError::Unusable {
            step: RequestKind::ReflectionAnswers,
        });
    }
    answers.truncate(questions.len());

    let marker = stream.max_id();
    let mut staged = stream.clone();
    let mut record_ids = Vec::with_capacity(answers.len());
    for answer in &answers {
        let appended = append_memory(
            &mut staged,
            sim_time,
            MemoryKind::Reflection,
            answer,
            narrator,
        )
        .expect("parse_list never yields empty items");
        record_ids.push(appended.record.id);
    }
    staged.last_reflection_marker = marker;
    *stream = staged;

    Ok(ReflectionBatch {
        source_record_ids,
        salient_topics,
        questions,
        answers,
        record_ids,
    })
}

fn word_set(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Jaccard similarity of the lowercased word sets; 0 when both are empty.
pub fn keyword_overlap(a: &str, b: &str) -> f64 {
    let a = word_set(a);
    let b = word_set(b);
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Picks the `budget` best records for a prompt and returns them in
/// chronological order.
///
/// Score = recency + poignancy + keyword overlap, weighted. Ages are measured
/// in ticks from the newest record, so the result depends only on the
/// arguments.
pub fn retrieve_context<'a>(
    stream: &'a MemoryStream,
    query: &str,
    budget: usize,
    weights: &RetrievalWeights,
    tick_minutes: u32,
) -> Vec<&'a MemoryRecord> {
    let Some(newest) = stream.records.iter().map(|r| r.sim_time).max() else {
        return Vec::new();
    };
    if budget >= stream.records.len() {
        return stream.records.iter().collect();
    }
    let tick_minutes = f64::from(tick_minutes.max(1));
    let mut scored: Vec<(f64, &MemoryRecord)> = stream
        .records
        .iter()
        .map(|r| {
            let age_ticks = (newest - r.sim_time).num_minutes().max(0) as f64 / tick_minutes;
            let recency = (-age_ticks / weights.half_life_ticks).exp();
            let poignancy = f64::from(r.poignancy) / f64::from(MAX_POIGNANCY);
            let score = weights.recency * recency
                + weights.poignancy * poignancy
                + weights.keyword * keyword_overlap(query, &r.text);
            (score, r)
        })
        .collect();
    scored.sort_by(|(sa, ra), (sb, rb)| sb.total_cmp(sa).then(rb.id.cmp(&ra.id)));
    let mut picked: Vec<&MemoryRecord> = scored.into_iter().take(budget).map(|(_, r)| r).collect();
    picked.sort_by_key(|r| r.id);
    picked
}

/// One line per record, for prompt contexts.
pub fn format_context(records: &[&MemoryRecord]) -> String {
    if records.is_empty() {
        return "(none yet)".to_string();
    }
    records
        .iter()
        .map(|r| format!("- ({}) {}", display_date(r.sim_time), r.text))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::narrator::testing::QueueNarrator;
    use crate::time::ymd_hm;

    fn t0() -> NaiveDateTime {
        ymd_hm(2027, 5, 18, 21, 0)
    }

    fn stream_with(poignancies: &[u8]) -> MemoryStream {
        let mut s = MemoryStream::new();
        for (i, p) in poignancies.iter().enumerate() {
            s.records.push(MemoryRecord {
                id: i as u64 + 1,
                sim_time: t0(),
                kind: MemoryKind::Action,
                text: format!("memory {i}"),
                poignancy: *p,
            });
        }
        s
    }

    #[test]
    fn clamps_and_ids_increase() {
        let mut s = MemoryStream::new();
        let n = QueueNarrator::ok(&["11", "4"]);
        let a = append_memory(&mut s, t0(), MemoryKind::Action, "first", &n).unwrap();
        let b = append_memory(&mut s, t0(), MemoryKind::Narrative, "second", &n).unwrap();
        assert_eq!((a.record.id, a.record.poignancy), (1, 10));
        assert_eq!((b.record.id, b.record.poignancy), (2, 4));
    }

    #[test]
    fn failed_rating_uses_fallback() {
        let mut s = MemoryStream::new();
        let n = QueueNarrator::new(vec![Err(NarratorError::Unavailable {
            attempts: 3,
            last: "down".into(),
        })]);
        let a = append_memory(&mut s, t0(), MemoryKind::Action, "x", &n).unwrap();
        assert_eq!(a.record.poignancy, FALLBACK_POIGNANCY);
        assert!(a.rating_error.is_some());
    }

    #[test]
    fn empty_text_is_refused() {
        let mut s = MemoryStream::new();
        let n = QueueNarrator::ok(&[]);
        assert_eq!(
            append_memory(&mut s, t0(), MemoryKind::Action, "  ", &n),
            Err(MemoryError::EmptyText)
        );
        assert_eq!(n.calls(), 0);
    }

    #[test]
    fn cumulative_sum_respects_marker() {
        assert_eq!(cumulative_poignancy(&MemoryStream::new()), 0);
        let mut s = stream_with(&[3, 4, 5]);
        assert_eq!(cumulative_poignancy(&s), 12);
        s.last_reflection_marker = 3;
        assert_eq!(cumulative_poignancy(&s), 0);
    }

    #[test]
    fn reflection_threshold_is_strict() {
        let s = stream_with(&[10; 10]);
        assert!(!should_reflect(&s, 100));
        let s = stream_with(&[10, 10, 10, 10, 10, 10, 10, 10, 10, 10, 1]);
        assert!(should_reflect(&s, 100));
        assert!(!should_reflect(&MemoryStream::new(), 1));
    }

    #[test]
    fn reflection_chain_stores_answers() {
        let mut s = stream_with(&[9, 9]);
        let n = QueueNarrator::ok(&[
            "1. water\n2. cooperation",
            "- Why is water scarce?\n- Will Tortugi help?",
            "1. The oasis is drying.\n2. Tortugi always helps.",
            "6",
            "5",
        ]);
        let batch = reflect(&mut s, &n, t0(), "Lex").unwrap();
        assert_eq!(batch.salient_topics, ["water", "cooperation"]);
        assert_eq!(batch.questions.len(), 2);
        assert_eq!(batch.record_ids, [3, 4]);
        assert_eq!(s.last_reflection_marker, 2);
        assert_eq!(s.records[2].kind, MemoryKind::Reflection);
        assert_eq!(s.records[3].poignancy, 5);
        assert_eq!(cumulative_poignancy(&s), 11);
        let kinds: Vec<_> = n.seen.lock().unwrap().iter().map(|r| r.kind).collect();
        assert_eq!(
            &kinds[..3],
            [
                RequestKind::ReflectionTopics,
                RequestKind::ReflectionQuestions,
                RequestKind::ReflectionAnswers
            ]
        );
    }

    #[test]
    fn reflection_failure_leaves_stream_untouched() {
        let mut s = stream_with(&[9, 9]);
        let before = s.clone();
        let n = QueueNarrator::new(vec![
            Ok("water".into()),
            Err(NarratorError::Unavailable {
                attempts: 3,
                last: "down".into(),
            }),
        ]);
        let err = reflect(&mut s, &n, t0(), "Lex").unwrap_err();
        assert!(err.is_outage());
        assert_eq!(s, before);
    }

    #[test]
    fn list_parsing_strips_markers() {
        assert_eq!(
            parse_list("1) alpha\n\n* beta\n• gamma\n12. delta\n2020 was a year"),
            ["alpha", "beta", "gamma", "delta", "2020 was a year"]
        );
    }

    #[test]
    fn budget_larger_than_stream_returns_everything() {
        let s = stream_with(&[1, 5, 2]);
        let got = retrieve_context(&s, "anything", 5, &RetrievalWeights::default(), 120);
        assert_eq!(got.iter().map(|r| r.id).collect::<Vec<_>>(), [1, 2, 3]);
    }

    #[test]
    fn poignancy_breaks_otherwise_equal_records() {
        let mut s = stream_with(&[2, 9]);
        s.records[1].text = s.records[0].text.clone();
        let got = retrieve_context(&s, "", 1, &RetrievalWeights::default(), 120);
        assert_eq!(got[0].poignancy, 9);
    }

    #[test]
    fn identical_records_prefer_higher_id() {
        let mut s = stream_with(&[4, 4, 4]);
        for r in &mut s.records {
            r.text = "same".into();
        }
        let got = retrieve_context(&s, "same", 2, &RetrievalWeights::default(), 120);
        assert_eq!(got.iter().map(|r| r.id).collect::<Vec<_>>(), [2, 3]);
    }

    #[test]
    fn keyword_overlap_is_jaccard() {
        assert_eq!(keyword_overlap("Lex moved", "lex MOVED"), 1.0);
        assert_eq!(keyword_overlap("a b", "b c"), 1.0 / 3.0);
        assert_eq!(keyword_overlap("", ""), 0.0);
    }
}
