//! Deterministic rule-driven backend.
//!
//! Rule files are line oriented: `kind | matcher | template`. The matcher is
//! a substring of the request's user context (several may be joined with
//! ` & `), or `*` for the kind's default. Templates may use `\n` for line
//! breaks and `{name}` placeholders filled from the request bindings.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use super::{Narrator, NarratorError, NarratorRequest, NarratorResponse, RequestKind};

const BUILTIN_RULES: &str = include_str!("../../fixtures/default.rules");

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("no default rule for kind {0}")]
    MissingDefault(RequestKind),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptRule {
    pub kind: RequestKind,
    /// All of these must occur in the user context.
    pub matchers: Vec<String>,
    pub template: String,
}

impl ScriptRule {
    fn matches(&self, request: &NarratorRequest) -> bool {
        self.kind == request.kind
            && self
                .matchers
                .iter()
                .all(|m| request.user_context.contains(m.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedRuleSet {
    pub rules: Vec<ScriptRule>,
    pub defaults: BTreeMap<RequestKind, String>,
}

fn unescape(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut chars = raw.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

impl ScriptedRuleSet {
    pub fn parse(text: &str) -> Result<Self, ScriptError> {
        let mut rules = Vec::new();
        let mut defaults = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut parts = trimmed.splitn(3, '|');
            let (Some(kind), Some(matcher), Some(template)) =
                (parts.next(), parts.next(), parts.next())
            else {
                return Err(ScriptError::Syntax {
                    line,
                    message: "expected `kind | matcher | template`".into(),
                });
            };
            let kind: RequestKind = kind
                .trim()
                .parse()
                .map_err(|message| ScriptError::Syntax { line, message })?;
            let matcher = matcher.trim();
            let template = unescape(template.trim());
            if matcher == "*" {
                if defaults.insert(kind, template).is_some() {
                    return Err(ScriptError::Syntax {
                        line,
                        message: format!("second default for {kind}"),
                    });
                }
                continue;
            }
            let matchers: Vec<String> = matcher
                .split(" & ")
                .map(|m| m.trim().to_string())
                .filter(|m| !m.is_empty())
                .collect();
            if matchers.is_empty() {
                return Err(ScriptError::Syntax {
                    line,
                    message: "empty matcher (use `*` for a default)".into(),
                });
            }
            rules.push(ScriptRule {
                kind,
                matchers,
                template,
            });
        }
        if let Some(kind) = RequestKind::ALL
            .into_iter()
            .find(|k| !defaults.contains_key(k))
        {
            return Err(ScriptError::MissingDefault(kind));
        }
        Ok(Self { rules, defaults })
    }

    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScriptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// The rule set shipped with the crate.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_RULES).expect("bundled rules parse")
    }

    pub fn builtin_text() -> &'static str {
        BUILTIN_RULES
    }

    /// First matching template, or the kind's default.
    pub fn template_for(&self, request: &NarratorRequest) -> &str {
        self.rules
            .iter()
            .find(|r| r.matches(request))
            .map(|r| r.template.as_str())
            .unwrap_or_else(|| self.defaults[&request.kind].as_str())
    }
}

/// Replaces `{name}` with bindings; unknown placeholders are left intact.
fn fill(template: &str, bindings: &BTreeMap<String, String>) -> String {
    crate::prompts::fill_with(template, |k| bindings.get(k).map(String::as_str))
}

#[derive(Debug, Clone)]
pub struct ScriptedNarrator {
    rules: ScriptedRuleSet,
}

impl ScriptedNarrator {
    pub const BACKEND_ID: &'static str = "scripted";

    pub fn new(rules: ScriptedRuleSet) -> Self {
        Self { rules }
    }

    pub fn builtin() -> Self {
        Self::new(ScriptedRuleSet::builtin())
    }

    pub fn rules(&self) -> &ScriptedRuleSet {
        &self.rules
    }
}

impl Narrator for ScriptedNarrator {
    fn complete(&self, request: &NarratorRequest) -> Result<NarratorResponse, NarratorError> {
        request.validate()?;
        Ok(NarratorResponse {
            text: fill(self.rules.template_for(request), &request.bindings),
            backend_id: Self::BACKEND_ID.to_string(),
            latency_ms: 0,
        })
    }
}
