//! Human-in-the-loop dialogue sessions.
//!
//! A session pairs the human operator with one agent. Turns are exchanged
//! without touching the world; concluding folds a summary into the agent's
//! memory stream and regenerates the world summary.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::scene::{conclusion_request, system_context};
use crate::memory::{append_memory, format_context, retrieve_context};
use crate::model::{Conclusion, DialogueTranscript, DialogueTurn, MemoryKind, WorldState};
use crate::narrator::{Narrator, NarratorError, NarratorRequest, RequestKind, TURN_REPLY_TOKENS};
use crate::persistence::log::single_line;
use crate::persistence::{LogEvent, WallClock};
use crate::prompts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionState {
    Open,
    Concluded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueSession {
    pub id: String,
    pub human: String,
    pub agent: String,
    pub transcript: Vec<DialogueTurn>,
    pub state: SessionState,
    pub opened_at_tick: u64,
    /// Human text whose reply failed and may be retried.
    pub pending: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DialogueError {
    #[error("unknown agent {0:?}")]
    UnknownAgent(String),
    #[error("unknown dialogue session {0:?}")]
    UnknownSession(String),
    #[error("dialogue session {0} is already concluded")]
    Concluded(String),
    #[error("message text must not be empty")]
    EmptyMessage,
    #[error(
        "dialogue session {0} is waiting for a reply to an earlier message; resend that message"
    )]
    Pending(String),
    #[error("narrator unavailable: {0}")]
    Unavailable(NarratorError),
}

impl DialogueError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            DialogueError::UnknownAgent(_) | DialogueError::UnknownSession(_) => "not-found",
            DialogueError::Concluded(_) | DialogueError::Pending(_) => "state",
            DialogueError::EmptyMessage => "validation",
            DialogueError::Unavailable(_) => "narrator-unavailable",
        }
    }
}

/// All sessions of one engine. Ids are `d1`, `d2`, ...
#[derive(Debug, Default, Clone)]
pub struct SessionTable {
    sessions: BTreeMap<String, DialogueSession>,
    opened: u64,
}

impl SessionTable {
    pub fn get(&self, id: &str) -> Option<&DialogueSession> {
        self.sessions.get(id)
    }

    pub fn get_mut(&mut self, id: &str) -> Result<&mut DialogueSession, DialogueError> {
        self.sessions
            .get_mut(id)
            .ok_or_else(|| DialogueError::UnknownSession(id.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &DialogueSession> {
        self.sessions.values()
    }
}

/// Registers a session with an agent. Descriptive entities cannot be
/// addressed.
pub fn open_session(
    table: &mut SessionTable,
    world: &WorldState,
    agent: &str,
    clock: &dyn WallClock,
    events: &mut Vec<LogEvent>,
) -> Result<DialogueSession, DialogueError> {
    if !world.agents.contains_key(agent) {
        return Err(DialogueError::UnknownAgent(agent.to_string()));
    }
    table.opened += 1;
    let human = world.config.human_label.clone();
    let session = DialogueSession {
        id: format!("d{}", table.opened),
        human: human.clone(),
        agent: agent.to_string(),
        transcript: Vec::new(),
        state: SessionState::Open,
        opened_at_tick: world.clock.tick_index,
        pending: None,
    };
    events.push(LogEvent::new(
        clock.now(),
        format!("Starting dialogue between {human} and {agent}."),
    ));
    table.sessions.insert(session.id.clone(), session.clone());
    Ok(session)
}

fn transcript_text(turns: &[DialogueTurn]) -> String {
    if turns.is_empty() {
        return "(nothing has been said yet)".to_string();
    }
    turns
        .iter()
        .map(|t| format!("{}: {}", t.speaker, t.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Sends the human's message and returns the agent's reply.
///
/// If the narrator fails the human turn stays in the transcript and the
/// session waits: posting the same text again retries the reply.
pub fn post_message(
    session: &mut DialogueSession,
    world: &WorldState,
    text: &str,
    narrator: &dyn Narrator,
    clock: &dyn WallClock,
    events: &mut Vec<LogEvent>,
) -> Result<String, DialogueError> {
    if session.state == SessionState::Concluded {
        return Err(DialogueError::Concluded(session.id.clone()));
    }
    let text = single_line(text);
    if text.is_empty() {
        return Err(DialogueError::EmptyMessage);
    }
    match &session.pending {
        Some(pending) if *pending != text => {
            return Err(DialogueError::Pending(session.id.clone()))
        }
        Some(_) => {}
        None => {
            let at = clock.now();
            events.push(LogEvent::new(
                at,
                format!("- {} said \"{text}\"", session.human),
            ));
            session.transcript.push(DialogueTurn {
                speaker: session.human.clone(),
                text: text.clone(),
                at,
            });
            session.pending = Some(text.clone());
        }
    }

    let agent = world
        .agent(&session.agent)
        .ok_or_else(|| DialogueError::UnknownAgent(session.agent.clone()))?;
    let cfg = &world.config;
    let records = retrieve_context(
        &agent.memory,
        &text,
        cfg.context_budget.max(1),
        &cfg.retrieval,
        world.clock.tick_minutes,
    );
    let earlier = &session.transcript[..session.transcript.len() - 1];
    let user = prompts::render(
        prompts::HUMAN_DIALOGUE_TURN,
        &[
            ("human", &session.human),
            ("agent", &session.agent),
            ("description", agent.description()),
            ("memories", &format_context(&records)),
            ("transcript", &transcript_text(earlier)),
            ("message", &text),
        ],
    );
    let request = NarratorRequest::new(
        RequestKind::HumanDialogueTurn,
        system_context(world),
        user,
        TURN_REPLY_TOKENS,
    )
    .bind("human", &session.human)
    .bind("agent", &session.agent)
    .bind("message", &text);

    let reply = narrator
        .complete(&request)
        .map(|r| single_line(&r.text))
        .and_then(|r| {
            if r.is_empty() {
                Err(NarratorError::Malformed("empty reply".into()))
            } else {
                Ok(r)
            }
        });
    match reply {
        Ok(reply) => {
            let at = clock.now();
            events.push(LogEvent::new(
                at,
                format!("- {} said \"{reply}\"", session.agent),
            ));
            session.transcript.push(DialogueTurn {
                speaker: session.agent.clone(),
                text: reply.clone(),
                at,
            });
            session.pending = None;
            Ok(reply)
        }
        Err(err) => {
            events.push(LogEvent::new(
                clock.now(),
                format!("warning: {} did not reply ({err})", session.agent),
            ));
            Err(DialogueError::Unavailable(err))
        }
    }
}

/// Summarises the session from the agent's perspective and stores it as a
/// dialogue-summary memory. Returns the ids of the created records.
pub fn conclude_session(
    session: &mut DialogueSession,
    world: &mut WorldState,
    narrator: &dyn Narrator,
    clock: &dyn WallClock,
    events: &mut Vec<LogEvent>,
) -> Result<Vec<u64>, DialogueError> {
    if session.state == SessionState::Concluded {
        return Err(DialogueError::Concluded(session.id.clone()));
    }
    if !world.agents.contains_key(&session.agent) {
        return Err(DialogueError::UnknownAgent(session.agent.clone()));
    }
    let participants = vec![session.human.clone(), session.agent.clone()];
    let request = conclusion_request(
        system_context(world),
        world,
        &session.agent,
        &participants,
        &session.transcript,
    );
    let text = narrator
        .complete(&request)
        .map(|r| single_line(&r.text))
        .and_then(|t| {
            if t.is_empty() {
                Err(NarratorError::Malformed("empty reply".into()))
            } else {
                Ok(t)
            }
        })
        .map_err(DialogueError::Unavailable)?;

    let now = world.now();
    let profile = world.agents.get_mut(&session.agent).expect("checked above");
    let appended = append_memory(
        &mut profile.memory,
        now,
        MemoryKind::DialogueSummary,
        &text,
        narrator,
    )
    .expect("non-empty summary");
    events.push(LogEvent::new(
        clock.now(),
        format!(
            "Conclude the dialogue between {} and {}.",
            session.human, session.agent
        ),
    ));
    if let Some(err) = &appended.rating_error {
        events.push(LogEvent::new(
            clock.now(),
            format!(
                "warning: poignancy rating for {} failed ({err})",
                session.agent
            ),
        ));
    }
    events.push(LogEvent::new(
        clock.now(),
        format!("{} concluded: {text}", session.agent),
    ));

    let location = world
        .agent(&session.agent)
        .map(|a| a.current_location.clone());
    world.archive.transcripts.push(DialogueTranscript {
        participants,
        sim_time: now,
        location,
        turns: session.transcript.clone(),
        conclusions: vec![Conclusion {
            agent: session.agent.clone(),
            text,
            memory_id: appended.record.id,
        }],
    });
    let summary = world.summary();
    world.archive.summaries.push(summary);
    session.state = SessionState::Concluded;
    session.pending = None;
    Ok(vec![appended.record.id])
}
