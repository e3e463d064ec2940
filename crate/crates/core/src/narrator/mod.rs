//! The single boundary between the engine and any language-model backend.
//!
//! Every piece of generated text (objectives, adjudications, dialogue,
//! reflections, shifts, ratings) comes through [`Narrator::complete`].

mod live;
mod retry;
mod scripted;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{MAX_POIGNANCY, MIN_POIGNANCY};

pub use live::{LiveConfig, LiveNarrator};
pub use retry::{backoff_schedule, with_retry, Retrying, Sleeper};
pub use scripted::{ScriptError, ScriptRule, ScriptedNarrator, ScriptedRuleSet};

/// Reply budget for poignancy ratings.
pub const RATING_REPLY_TOKENS: u32 = 64;
/// Reply budget for objectives, turns and other short exchanges.
pub const TURN_REPLY_TOKENS: u32 = 256;
/// Reply budget for narrative shifts.
pub const SHIFT_REPLY_TOKENS: u32 = 768;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RequestKind {
    RatePoignancy,
    ChooseObjective,
    ResolveAction,
    AgentDialogueTurn,
    HumanDialogueTurn,
    DialogueConclusion,
    ReflectionTopics,
    ReflectionQuestions,
    ReflectionAnswers,
    NarrativeShift,
    LocationGenesis,
    MutationRewrite,
}

impl RequestKind {
    pub const ALL: [RequestKind; 12] = [
        RequestKind::RatePoignancy,
        RequestKind::ChooseObjective,
        RequestKind::ResolveAction,
        RequestKind::AgentDialogueTurn,
        RequestKind::HumanDialogueTurn,
        RequestKind::DialogueConclusion,
        RequestKind::ReflectionTopics,
        RequestKind::ReflectionQuestions,
        RequestKind::ReflectionAnswers,
        RequestKind::NarrativeShift,
        RequestKind::LocationGenesis,
        RequestKind::MutationRewrite,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RequestKind::RatePoignancy => "rate-poignancy",
            RequestKind::ChooseObjective => "choose-objective",
            RequestKind::ResolveAction => "resolve-action",
            RequestKind::AgentDialogueTurn => "agent-dialogue-turn",
            RequestKind::HumanDialogueTurn => "human-dialogue-turn",
            RequestKind::DialogueConclusion => "dialogue-conclusion",
            RequestKind::ReflectionTopics => "reflection-topics",
            RequestKind::ReflectionQuestions => "reflection-questions",
            RequestKind::ReflectionAnswers => "reflection-answers",
            RequestKind::NarrativeShift => "narrative-shift",
            RequestKind::LocationGenesis => "location-genesis",
            RequestKind::MutationRewrite => "mutation-rewrite",
        }
    }
}

impl fmt::Display for RequestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RequestKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RequestKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown request kind {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NarratorRequest {
    pub kind: RequestKind,
    /// World and governing-rules digest.
    pub system_context: String,
    /// The task-specific prompt.
    pub user_context: String,
    pub max_reply_tokens: u32,
    /// Named values available to template backends (`{agent}`, `{location}`...).
    #[serde(default)]
    pub bindings: BTreeMap<String, String>,
}

impl NarratorRequest {
    pub fn new(
        kind: RequestKind,
        system_context: impl Into<String>,
        user_context: impl Into<String>,
        max_reply_tokens: u32,
    ) -> Self {
        Self {
            kind,
            system_context: system_context.into(),
            user_context: user_context.into(),
            max_reply_tokens,
            bindings: BTreeMap::new(),
        }
    }

    pub fn bind(mut self, key: &str, value: impl Into<String>) -> Self {
        self.bindings.insert(key.to_string(), value.into());
        self
    }

    pub fn validate(&self) -> Result<(), NarratorError> {
        if self.system_context.trim().is_empty() || self.user_context.trim().is_empty() {
            return Err(NarratorError::InvalidRequest(format!(
                "{} request has an empty context",
                self.kind
            )));
        }
        if self.max_reply_tokens == 0 {
            return Err(NarratorError::InvalidRequest(
                "max_reply_tokens must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NarratorResponse {
    pub text: String,
    pub backend_id: String,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "code", content = "detail", rename_all = "kebab-case")]
pub enum NarratorError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("backend answered with HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend reply: {0}")]
    Malformed(String),
    #[error("narrator unavailable after {attempts} attempt(s): {last}")]
    Unavailable { attempts: u32, last: String },
    #[error("invalid narrator request: {0}")]
    InvalidRequest(String),
    #[error("could not read a poignancy rating from {reply:?}")]
    RateParse { reply: String },
    #[error("replay diverged: {0}")]
    Replay(String),
}

impl NarratorError {
    /// Errors worth another attempt against the same backend.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            NarratorError::Transport(_)
                | NarratorError::Status { .. }
                | NarratorError::Malformed(_)
        )
    }

    /// The backend could not be reached at all, as opposed to answering badly.
    pub fn is_outage(&self) -> bool {
        self.is_retryable() || matches!(self, NarratorError::Unavailable { .. })
    }
}

/// Any language-model backend.
pub trait Narrator: Send + Sync {
    fn complete(&self, request: &NarratorRequest) -> Result<NarratorResponse, NarratorError>;
}

impl<N: Narrator + ?Sized> Narrator for Box<N> {
    fn complete(&self, request: &NarratorRequest) -> Result<NarratorResponse, NarratorError> {
        (**self).complete(request)
    }
}

impl<N: Narrator + ?Sized> Narrator for Arc<N> {
    fn complete(&self, request: &NarratorRequest) -> Result<NarratorResponse, NarratorError> {
        (**self).complete(request)
    }
}

impl<N: Narrator + ?Sized> Narrator for &N {
    fn complete(&self, request: &NarratorRequest) -> Result<NarratorResponse, NarratorError> {
        (**self).complete(request)
    }
}

/// First integer token in `text`, with an optional leading minus sign.
/// Values beyond `i64` saturate.
pub fn first_integer(text: &str) -> Option<i64> {
    let bytes = text.as_bytes();
    let start = bytes.iter().position(u8::is_ascii_digit)?;
    let end = bytes[start..]
        .iter()
        .position(|b| !b.is_ascii_digit())
        .map_or(bytes.len(), |n| start + n);
    let negative = start > 0 && bytes[start - 1] == b'-';
    let digits = &text[start..end];
    let magnitude = digits.parse::<i64>().unwrap_or(i64::MAX);
    Some(if negative { -magnitude } else { magnitude })
}

pub fn clamp_poignancy(value: i64) -> u8 {
    value.clamp(i64::from(MIN_POIGNANCY), i64::from(MAX_POIGNANCY)) as u8
}

const RATE_SYSTEM: &str = "You rate how poignant a memory is for the character who holds it.";

fn rating_request(text: &str, retry: bool) -> NarratorRequest {
    let mut user = crate::prompts::render(crate::prompts::RATE_POIGNANCY, &[("memory", text)]);
    if retry {
        user.push_str(crate::prompts::REPROMPT_SUFFIX);
    }
    NarratorRequest::new(
        RequestKind::RatePoignancy,
        RATE_SYSTEM,
        user,
        RATING_REPLY_TOKENS,
    )
    .bind("memory", text)
}

/// Asks for a poignancy rating in [1, 10].
///
/// A reply with no integer is retried once; a second miss is a
/// [`NarratorError::RateParse`] and the caller decides on a fallback.
pub fn rate(narrator: &dyn Narrator, text: &str) -> Result<u8, NarratorError> {
    if text.trim().is_empty() {
        return Err(NarratorError::InvalidRequest(
            "cannot rate an empty memory".into(),
        ));
    }
    let mut last_reply = String::new();
    for retry in [false, true] {
        let reply = narrator.complete(&rating_request(text, retry))?;
        if let Some(n) = first_integer(&reply.text) {
            return Ok(clamp_poignancy(n));
        }
        last_reply = reply.text;
    }
    Err(NarratorError::RateParse { reply: last_reply })
}
