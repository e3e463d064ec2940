//! Versioned prompt templates, one per request kind.

pub const VERSION: u32 = 1;

pub const RATE_POIGNANCY: &str = include_str!("../prompts/rate-poignancy.v1.txt");
pub const CHOOSE_OBJECTIVE: &str = include_str!("../prompts/choose-objective.v1.txt");
pub const RESOLVE_ACTION: &str = include_str!("../prompts/resolve-action.v1.txt");
pub const AGENT_DIALOGUE_TURN: &str = include_str!("../prompts/agent-dialogue-turn.v1.txt");
pub const HUMAN_DIALOGUE_TURN: &str = include_str!("../prompts/human-dialogue-turn.v1.txt");
pub const DIALOGUE_CONCLUSION: &str = include_str!("../prompts/dialogue-conclusion.v1.txt");
pub const REFLECTION_TOPICS: &str = include_str!("../prompts/reflection-topics.v1.txt");
pub const REFLECTION_QUESTIONS: &str = include_str!("../prompts/reflection-questions.v1.txt");
pub const REFLECTION_ANSWERS: &str = include_str!("../prompts/reflection-answers.v1.txt");
pub const NARRATIVE_SHIFT: &str = include_str!("../prompts/narrative-shift.v1.txt");
pub const LOCATION_GENESIS: &str = include_str!("../prompts/location-genesis.v1.txt");
pub const MUTATION_REWRITE: &str = include_str!("../prompts/mutation-rewrite.v1.txt");

/// Appended to a prompt when the previous reply could not be parsed.
pub const REPROMPT_SUFFIX: &str =
    "\n\nYour previous reply could not be parsed. Reply again using exactly the requested format.";

/// Replaces `{key}` occurrences using `lookup`; unknown keys stay verbatim.
pub fn fill_with<'a>(template: &str, lookup: impl Fn(&str) -> Option<&'a str>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after
            .find('}')
            .and_then(|close| lookup(&after[..close]).map(|v| (close, v)))
        {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    fill_with(template, |key| {
        vars.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
    })
    .trim_end()
    .to_string()
}
