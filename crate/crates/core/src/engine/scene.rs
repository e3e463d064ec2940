//! The per-tick operations. Each works on a [`Scene`]: a world being
//! mutated, the narrator, the wall clock and the log events produced so far.

use std::collections::BTreeMap;
use std::sync::Mutex;

use chrono::Duration;
use rand::Rng;

use crate::memory::{self, append_memory, format_context, retrieve_context};
use crate::model::{
    shift_date, ActionEffect, Conclusion, Creator, DialogueTranscript, DialogueTurn, EntitySeed,
    Location, LocationSeed, MemoryKind, MemoryRecord, NarrativeShift, Objective, StateDelta,
    WorldState,
};
use crate::narrator::{
    Narrator, NarratorError, NarratorRequest, NarratorResponse, RequestKind, SHIFT_REPLY_TOKENS,
    TURN_REPLY_TOKENS,
};
use crate::persistence::{LogEvent, WallClock};
use crate::prompts;
use crate::time::display_date;

use super::EngineError;

/// Marks the end of an agent conversation inside a turn.
pub const END_MARKER: &str = "[END]";

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct CallStats {
    pub succeeded: u32,
    pub failed: u32,
    pub outages: u32,
}

impl CallStats {
    pub fn total(&self) -> u32 {
        self.succeeded + self.failed
    }
}

/// Counts outcomes of the calls passing through it.
struct Counting<'a> {
    inner: &'a dyn Narrator,
    stats: Mutex<(CallStats, Option<NarratorError>)>,
}

impl Narrator for Counting<'_> {
    fn complete(&self, request: &NarratorRequest) -> Result<NarratorResponse, NarratorError> {
        let result = self.inner.complete(request);
        let mut guard = self.stats.lock().expect("stats lock");
        match &result {
            Ok(_) => guard.0.succeeded += 1,
            Err(e) => {
                guard.0.failed += 1;
                if e.is_outage() {
                    guard.0.outages += 1;
                    guard.1 = Some(e.clone());
                }
            }
        }
        result
    }
}

pub struct Scene<'a> {
    pub world: &'a mut WorldState,
    narrator: Counting<'a>,
    clock: &'a dyn WallClock,
    pub events: Vec<LogEvent>,
}

impl<'a> Scene<'a> {
    pub fn new(
        world: &'a mut WorldState,
        narrator: &'a dyn Narrator,
        clock: &'a dyn WallClock,
    ) -> Self {
        Self {
            world,
            narrator: Counting {
                inner: narrator,
                stats: Mutex::new((CallStats::default(), None)),
            },
            clock,
            events: Vec::new(),
        }
    }

    pub fn stats(&self) -> CallStats {
        self.narrator.stats.lock().expect("stats lock").0
    }

    pub fn last_outage(&self) -> Option<NarratorError> {
        self.narrator.stats.lock().expect("stats lock").1.clone()
    }

    pub fn log(&mut self, text: impl AsRef<str>) {
        let event = LogEvent::new(self.clock.now(), text);
        self.events.push(event);
    }

    pub fn narrator(&self) -> &dyn Narrator {
        &self.narrator
    }

    fn system_context(&self) -> String {
        system_context(self.world)
    }

    fn ask(&self, request: NarratorRequest) -> Result<String, NarratorError> {
        let reply = self.narrator.complete(&request)?;
        if reply.text.trim().is_empty() {
            return Err(NarratorError::Malformed("empty reply".into()));
        }
        Ok(reply.text)
    }

    fn request(&self, kind: RequestKind, user: String, max_tokens: u32) -> NarratorRequest {
        NarratorRequest::new(kind, self.system_context(), user, max_tokens)
            .bind("sim_date", display_date(self.world.now()))
    }

    /// Appends a memory, logging a warning when the rating fell back.
    pub fn remember(&mut self, agent: &str, kind: MemoryKind, text: &str) -> Option<MemoryRecord> {
        self.remember_at(agent, kind, text, self.world.now())
    }

    fn remember_at(
        &mut self,
        agent: &str,
        kind: MemoryKind,
        text: &str,
        at: chrono::NaiveDateTime,
    ) -> Option<MemoryRecord> {
        let profile = self.world.agents.get_mut(agent)?;
        let appended = append_memory(&mut profile.memory, at, kind, text, &self.narrator).ok()?;
        if let Some(err) = &appended.rating_error {
            self.log(format!(
                "warning: poignancy rating for {agent} failed ({err}); stored {}",
                memory::FALLBACK_POIGNANCY
            ));
        }
        Some(appended.record)
    }

    fn context_for(&self, agent: &str, query: &str) -> String {
        let Some(profile) = self.world.agent(agent) else {
            return String::new();
        };
        let cfg = &self.world.config;
        let records = retrieve_context(
            &profile.memory,
            query,
            cfg.context_budget.max(1),
            &cfg.retrieval,
            self.world.clock.tick_minutes,
        );
        format_context(&records)
    }

    fn location_list(&self) -> String {
        self.world
            .locations
            .keys()
            .cloned()
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// The longest location name mentioned in `text`, if any.
pub fn mentioned_location(world: &WorldState, text: &str) -> Option<String> {
    world
        .locations
        .keys()
        .filter(|name| text.contains(name.as_str()))
        .max_by_key(|name| name.len())
        .cloned()
}

fn first_line(text: &str) -> Option<String> {
    text.lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .map(str::to_string)
}

/// Parses `key: value` lines, keys lowercased; repeated keys keep every value.
fn fields(reply: &str) -> Vec<(String, String)> {
    reply
        .lines()
        .filter_map(|line| {
            let (key, value) = line.split_once(':')?;
            let key = key
                .trim()
                .trim_start_matches(['-', '*'])
                .trim()
                .to_lowercase();
            if key.is_empty() || key.contains(' ') {
                return None;
            }
            Some((key, value.trim().to_string()))
        })
        .collect()
}

fn arrow(value: &str) -> Option<(String, String)> {
    let (left, right) = value.split_once("->")?;
    let (left, right) = (left.trim(), right.trim());
    (!left.is_empty() && !right.is_empty()).then(|| (left.to_string(), right.to_string()))
}

/// Reads a resolve-action reply. `None` when there is no result line.
pub fn parse_action(actor: &str, reply: &str) -> Option<ActionEffect> {
    let mut effect = ActionEffect::noop(actor);
    for (key, value) in fields(reply) {
        match key.as_str() {
            "actor" => effect.actor = value,
            "basis" => effect.basis = value,
            "relation" => effect.relation = value,
            "result" => effect.result = value,
            "move" | "memory" | "describe" | "entity" => {
                let Some((left, right)) = arrow(&value) else {
                    continue;
                };
                effect.state_deltas.push(match key.as_str() {
                    "move" => StateDelta::MoveAgent {
                        agent: left,
                        location: right,
                    },
                    "memory" => StateDelta::CreateMemory {
                        agent: left,
                        text: right,
                    },
                    "describe" => StateDelta::ModifyLocationDescription {
                        location: left,
                        text: right,
                    },
                    _ => StateDelta::CreateDescriptiveEntity {
                        name: left,
                        text: right,
                    },
                });
            }
            _ => {}
        }
    }
    if effect.result.is_empty() {
        return None;
    }
    if effect.actor.is_empty() {
        effect.actor = actor.to_string();
    }
    Some(effect)
}

/// Asks for the agent's objective. On failure the agent idles this tick.
pub fn choose_objective(scene: &mut Scene, agent: &str) -> Option<Objective> {
    let profile = scene.world.agent(agent)?.clone();
    let memories = scene.context_for(agent, &scene.world.story_objective.clone());
    let user = prompts::render(
        prompts::CHOOSE_OBJECTIVE,
        &[
            ("agent", agent),
            ("description", profile.description()),
            ("location", &profile.current_location),
            ("locations", &scene.location_list()),
            ("story_objective", &scene.world.story_objective),
            ("memories", &memories),
        ],
    );
    let request = scene
        .request(RequestKind::ChooseObjective, user, TURN_REPLY_TOKENS)
        .bind("agent", agent)
        .bind("location", &profile.current_location);
    let text = match scene.ask(request).map(|t| first_line(&t)) {
        Ok(Some(text)) => text,
        Ok(None) | Err(_) => {
            scene.world.agents.get_mut(agent)?.current_objective = None;
            scene.log(format!("{agent} idle (narrator unavailable)"));
            return None;
        }
    };
    let objective = Objective {
        actor: agent.to_string(),
        target_location: mentioned_location(scene.world, &text),
        text,
        set_at: scene.world.now(),
    };
    scene.world.agents.get_mut(agent)?.current_objective = Some(objective.clone());
    scene.log(format!("objective: {}", objective.text));
    Some(objective)
}

/// Asks the four action questions and applies the resulting deltas.
pub fn resolve_action(scene: &mut Scene, agent: &str, objective: &Objective) -> ActionEffect {
    let Some(profile) = scene.world.agent(agent).cloned() else {
        return ActionEffect::noop(agent);
    };
    let target = objective
        .target_location
        .clone()
        .unwrap_or_else(|| profile.current_location.clone());
    let memories = scene.context_for(agent, &objective.text);
    let user = prompts::render(
        prompts::RESOLVE_ACTION,
        &[
            ("agent", agent),
            ("location", &profile.current_location),
            ("objective", &objective.text),
            ("target", &target),
            ("memories", &memories),
        ],
    );

    let mut effect = None;
    let mut failure = "unparsable reply";
    for retry in [false, true] {
        let mut user = user.clone();
        if retry {
            user.push_str(prompts::REPROMPT_SUFFIX);
        }
        let request = scene
            .request(RequestKind::ResolveAction, user, TURN_REPLY_TOKENS)
            .bind("agent", agent)
            .bind("location", &profile.current_location)
            .bind("objective", &objective.text)
            .bind("target", &target);
        match scene.ask(request) {
            Ok(reply) => {
                effect = parse_action(agent, &reply);
                if effect.is_some() {
                    break;
                }
            }
            Err(_) => {
                failure = "narrator unavailable";
                break;
            }
        }
    }
    let Some(effect) = effect else {
        scene.log(format!(
            "warning: action of {agent} could not be resolved ({failure})"
        ));
        return ActionEffect::noop(agent);
    };

    scene.log(format!("action: {}", effect.result));
    let mut actor_remembered = false;
    for delta in &effect.state_deltas {
        match delta {
            StateDelta::MoveAgent {
                agent: who,
                location,
            } => {
                if !scene.world.locations.contains_key(location) {
                    scene.log(format!(
                        "warning: rejected move of {who}: unknown location {location}"
                    ));
                    continue;
                }
                match scene.world.agents.get_mut(who) {
                    Some(p) => p.current_location = location.clone(),
                    None => scene.log(format!("warning: rejected move: unknown agent {who}")),
                }
            }
            StateDelta::CreateMemory { agent: who, text } => {
                if !scene.world.agents.contains_key(who) {
                    scene.log(format!("warning: rejected memory: unknown agent {who}"));
                    continue;
                }
                if scene.remember(who, MemoryKind::Action, text).is_some() && who == agent {
                    actor_remembered = true;
                }
            }
            StateDelta::ModifyLocationDescription { location, text } => {
                let now = scene.world.now();
                match scene.world.locations.get_mut(location) {
                    Some(loc) => {
                        loc.description_history
                            .push(crate::model::Revision::new(now, text));
                        scene.log(format!("{location} changed: {text}"));
                    }
                    None => scene.log(format!(
                        "warning: rejected description: unknown location {location}"
                    )),
                }
            }
            StateDelta::CreateDescriptiveEntity { name, text } => {
                if scene.world.agents.contains_key(name) {
                    scene.log(format!("warning: rejected entity: {name} is an agent"));
                    continue;
                }
                scene
                    .world
                    .descriptive_entities
                    .insert(name.clone(), text.clone());
                scene.log(format!("entity: {name}: {text}"));
            }
        }
    }
    if !actor_remembered {
        scene.remember(agent, MemoryKind::Action, &effect.result);
    }
    effect
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

/// Strips the end marker; the flag says whether it was present.
fn split_end_marker(text: &str) -> (String, bool) {
    match text.find(END_MARKER) {
        Some(at) => {
            let kept = format!("{}{}", &text[..at], &text[at + END_MARKER.len()..]);
            (crate::persistence::log::single_line(&kept), true)
        }
        None => (crate::persistence::log::single_line(text), false),
    }
}

/// Asks one agent to summarise a conversation from their perspective.
pub(crate) fn conclusion_request(
    scene_system: String,
    world: &WorldState,
    agent: &str,
    participants: &[String],
    turns: &[DialogueTurn],
) -> NarratorRequest {
    let partners: Vec<&str> = participants
        .iter()
        .map(String::as_str)
        .filter(|p| *p != agent)
        .collect();
    let user = prompts::render(
        prompts::DIALOGUE_CONCLUSION,
        &[
            ("participants", &participants.join(" and ")),
            ("sim_date", &display_date(world.now())),
            ("transcript", &transcript_text(turns)),
            ("agent", agent),
        ],
    );
    NarratorRequest::new(
        RequestKind::DialogueConclusion,
        scene_system,
        user,
        TURN_REPLY_TOKENS,
    )
    .bind("agent", agent)
    .bind("partners", partners.join(" and "))
    .bind("sim_date", display_date(world.now()))
}

pub(crate) fn system_context(world: &WorldState) -> String {
    format!(
        "You are the game master of {}, a simulated world. You adjudicate actions, voice its \
         characters and narrate how the world changes.\nEnvironment: {}\nStory objective: {}\n\
         Governing rules:\n{}",
        world.name,
        world.environment,
        world.story_objective,
        world.rules.digest()
    )
}

/// Two co-located agents talk, alternating turns starting with `a`.
///
/// A narrator failure truncates the conversation; whatever was said is still
/// concluded. With no turns at all nothing is stored.
pub fn agent_dialogue(
    scene: &mut Scene,
    a: &str,
    b: &str,
    max_turns: u32,
) -> Option<DialogueTranscript> {
    let location = scene.world.agent(a)?.current_location.clone();
    scene.world.agent(b)?;
    let participants = vec![a.to_string(), b.to_string()];
    let started_at = scene.clock.now();
    let mut turns: Vec<DialogueTurn> = Vec::new();

    for turn in 1..=max_turns {
        let (speaker, partner) = if turn % 2 == 1 { (a, b) } else { (b, a) };
        let profile = scene.world.agent(speaker)?.clone();
        let memories = scene.context_for(speaker, &format!("{partner} {location}"));
        let user = prompts::render(
            prompts::AGENT_DIALOGUE_TURN,
            &[
                ("agent", speaker),
                ("partner", partner),
                ("location", &location),
                ("description", profile.description()),
                ("memories", &memories),
                ("transcript", &transcript_text(&turns)),
                ("turn", &turn.to_string()),
                ("max_turns", &max_turns.to_string()),
            ],
        );
        let request = scene
            .request(RequestKind::AgentDialogueTurn, user, TURN_REPLY_TOKENS)
            .bind("agent", speaker)
            .bind("partner", partner)
            .bind("location", &location)
            .bind("turn", turn.to_string())
            .bind("max_turns", max_turns.to_string());
        let (text, ended) = match scene.ask(request) {
            Ok(reply) => split_end_marker(&reply),
            Err(err) => {
                scene.log(format!(
                    "warning: dialogue between {a} and {b} cut short ({err})"
                ));
                break;
            }
        };
        if !text.is_empty() {
            if turns.is_empty() {
                scene.events.push(LogEvent::new(
                    started_at,
                    format!("Starting dialogue between {a} and {b}."),
                ));
            }
            let at = scene.clock.now();
            scene
                .events
                .push(LogEvent::new(at, format!("- {speaker} said \"{text}\"")));
            turns.push(DialogueTurn {
                speaker: speaker.to_string(),
                text,
                at,
            });
        }
        if ended {
            break;
        }
    }
    if turns.is_empty() {
        return None;
    }

    let mut conclusions = Vec::new();
    for agent in &participants {
        let request = conclusion_request(
            scene.system_context(),
            scene.world,
            agent,
            &participants,
            &turns,
        );
        let text = match scene
            .ask(request)
            .map(|t| crate::persistence::log::single_line(&t))
        {
            Ok(text) if !text.is_empty() => text,
            _ => {
                let other = participants
                    .iter()
                    .find(|p| *p != agent)
                    .expect("two participants");
                format!("{agent} talked with {other} at {location}.")
            }
        };
        if let Some(record) = scene.remember(agent, MemoryKind::DialogueSummary, &text) {
            scene.log(format!("{agent} concluded: {text}"));
            conclusions.push(Conclusion {
                agent: agent.clone(),
                text,
                memory_id: record.id,
            });
        }
    }
    let transcript = DialogueTranscript {
        participants,
        sim_time: scene.world.now(),
        location: Some(location),
        turns,
        conclusions,
    };
    scene.world.archive.transcripts.push(transcript.clone());
    let summary = scene.world.summary();
    scene.world.archive.summaries.push(summary);
    Some(transcript)
}

/// On a successful roll, rewrites the agent's description.
pub fn maybe_mutate(scene: &mut Scene, agent: &str, roll: bool) -> Option<String> {
    if !roll {
        return None;
    }
    let profile = scene.world.agent(agent)?.clone();
    let memories = scene.context_for(agent, profile.description());
    let user = prompts::render(
        prompts::MUTATION_REWRITE,
        &[
            ("agent", agent),
            ("description", profile.description()),
            ("memories", &memories),
        ],
    );
    let request = scene
        .request(RequestKind::MutationRewrite, user, TURN_REPLY_TOKENS)
        .bind("agent", agent)
        .bind("location", &profile.current_location);
    let text = match scene.ask(request) {
        Ok(text) => crate::persistence::log::single_line(&text),
        Err(err) => {
            scene.log(format!("warning: {agent} did not mutate ({err})"));
            return None;
        }
    };
    let now = scene.world.now();
    scene
        .world
        .agents
        .get_mut(agent)?
        .rewrite(now, text.clone());
    scene.log(format!("{agent} mutated: {text}"));
    Some(text)
}

/// On a successful roll, lets the agent add a location to the world.
pub fn maybe_create_location(scene: &mut Scene, agent: &str, roll: bool) -> Option<Location> {
    if !roll {
        return None;
    }
    let profile = scene.world.agent(agent)?.clone();
    let memories = scene.context_for(agent, &profile.current_location);
    let user = prompts::render(
        prompts::LOCATION_GENESIS,
        &[
            ("agent", agent),
            ("location", &profile.current_location),
            ("description", profile.description()),
            ("memories", &memories),
            ("locations", &scene.location_list()),
        ],
    );
    let request = scene
        .request(RequestKind::LocationGenesis, user, TURN_REPLY_TOKENS)
        .bind("agent", agent)
        .bind("location", &profile.current_location);
    let parsed = scene.ask(request).ok().and_then(|reply| {
        let f = fields(&reply);
        let get = |k: &str| f.iter().find(|(key, _)| key == k).map(|(_, v)| v.clone());
        match (get("name"), get("description")) {
            (Some(n), Some(d)) if !n.is_empty() && !d.is_empty() => Some((n, d)),
            _ => None,
        }
    });
    let Some((wanted, description)) = parsed else {
        scene.log(format!("warning: {agent} could not create a location"));
        return None;
    };
    let name = scene.world.unique_location_name(&wanted);
    let location = Location::new(
        &name,
        &description,
        scene.world.now(),
        Creator::Agent(agent.to_string()),
    );
    scene.world.locations.insert(name.clone(), location.clone());
    scene.log(format!("{agent} created a new location: {name}."));
    scene.remember(
        agent,
        MemoryKind::Action,
        &format!("{agent} built {name}: {description}"),
    );
    Some(location)
}

/// What a narrative-shift reply said.
#[derive(Debug, Default, PartialEq, Eq)]
pub struct ShiftReply {
    pub shift_text: String,
    pub environment: Option<String>,
    pub locations: Vec<(String, String)>,
    pub agents: Vec<(String, String)>,
    pub entities: Vec<(String, String)>,
}

pub fn parse_shift(reply: &str) -> Option<ShiftReply> {
    let mut out = ShiftReply::default();
    for (key, value) in fields(reply) {
        match key.as_str() {
            "shift" => out.shift_text = value,
            "environment" if !value.is_empty() => out.environment = Some(value),
            "location" => out.locations.extend(arrow(&value)),
            "agent" => out.agents.extend(arrow(&value)),
            "entity" => out.entities.extend(arrow(&value)),
            _ => {}
        }
    }
    (!out.shift_text.is_empty()).then_some(out)
}

fn day_digest(world: &WorldState) -> String {
    let since = world.now() - Duration::hours(24);
    let mut lines: Vec<(chrono::NaiveDateTime, &str, u64, &str)> = world
        .agents
        .values()
        .flat_map(|a| {
            a.memory
                .records
                .iter()
                .filter(move |r| r.sim_time >= since)
                .map(move |r| (r.sim_time, a.name.as_str(), r.id, r.text.as_str()))
        })
        .collect();
    lines.sort();
    if lines.is_empty() {
        return "(nothing happened)".to_string();
    }
    lines
        .into_iter()
        .map(|(t, agent, _, text)| format!("- ({}) {agent}: {text}", display_date(t)))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Day-end transformation: the clock jumps ahead by the configured number of
/// years plus jitter, and the narrator rewrites the world.
///
/// An unusable reply (after one reprompt) still moves the clock but changes
/// nothing else. A narrator outage is returned so the tick can abort.
pub fn narrative_shift<R: Rng>(
    scene: &mut Scene,
    rng: &mut R,
) -> Result<NarrativeShift, EngineError> {
    let cfg = scene.world.config.clone();
    let jitter = i64::from(cfg.jitter_days);
    let offset = rng.random_range(-jitter..=jitter);
    let from = scene.world.now();
    let to = shift_date(from, cfg.shift_jump_years, offset)
        .ok_or(EngineError::Clock(crate::model::ClockError::OutOfRange))?;
    let index = scene.world.shifts.len() as u32 + 1;
    let user = prompts::render(
        prompts::NARRATIVE_SHIFT,
        &[
            ("shift_index", &index.to_string()),
            ("sim_date", &display_date(from)),
            ("years", &cfg.shift_jump_years.to_string()),
            ("to_date", &display_date(to)),
            ("summary", &scene.world.summary().render_text()),
            ("digest", &day_digest(scene.world)),
        ],
    );

    let mut parsed = None;
    for retry in [false, true] {
        let mut user = user.clone();
        if retry {
            user.push_str(prompts::REPROMPT_SUFFIX);
        }
        let request = scene
            .request(RequestKind::NarrativeShift, user, SHIFT_REPLY_TOKENS)
            .bind("shift_index", index.to_string())
            .bind("years", cfg.shift_jump_years.to_string())
            .bind("to_date", display_date(to));
        match scene.ask(request) {
            Ok(reply) => {
                parsed = parse_shift(&reply);
                if parsed.is_some() {
                    break;
                }
            }
            Err(err) if err.is_outage() => return Err(EngineError::Narrator(err)),
            Err(_) => break,
        }
    }

    let clock = scene.world.clock.jump_to(to).map_err(EngineError::Clock)?;
    scene.world.clock = clock;

    let quiet = parsed.is_none();
    let reply = parsed.unwrap_or_else(|| ShiftReply {
        shift_text: format!("{} years pass quietly.", cfg.shift_jump_years),
        ..ShiftReply::default()
    });
    let shift_text = crate::persistence::log::single_line(&reply.shift_text);
    if quiet {
        scene.log(format!(
            "warning: narrative shift {index} was unusable; a quiet era follows"
        ));
    }
    scene.log(format!("Narrative shift {index}: {shift_text}"));

    if let Some(env) = &reply.environment {
        scene.world.environment = env.clone();
    }
    let mut new_locations = Vec::new();
    let mut location_rewrites = BTreeMap::new();
    for (name, description) in &reply.locations {
        match scene.world.locations.get_mut(name) {
            Some(loc) => {
                loc.description_history
                    .push(crate::model::Revision::new(to, description));
                location_rewrites.insert(name.clone(), description.clone());
                scene.log(format!("{name} changed: {description}"));
            }
            None => {
                scene.world.locations.insert(
                    name.clone(),
                    Location::new(name, description, to, Creator::NarrativeShift),
                );
                new_locations.push(LocationSeed {
                    name: name.clone(),
                    description: description.clone(),
                });
                scene.log(format!("New location: {name}."));
            }
        }
    }
    let mut agent_rewrites = BTreeMap::new();
    for (name, description) in &reply.agents {
        match scene.world.agents.get_mut(name) {
            Some(profile) => {
                profile.rewrite(to, description.clone());
                agent_rewrites.insert(name.clone(), description.clone());
                scene.log(format!("{name} mutated: {description}"));
            }
            None => scene.log(format!("warning: shift rewrote unknown agent {name}")),
        }
    }
    let mut new_descriptive_entities = Vec::new();
    for (name, text) in &reply.entities {
        if scene.world.agents.contains_key(name) {
            continue;
        }
        scene
            .world
            .descriptive_entities
            .insert(name.clone(), text.clone());
        new_descriptive_entities.push(EntitySeed {
            name: name.clone(),
            text: text.clone(),
        });
    }

    let shift = NarrativeShift {
        index,
        occurred_at_tick: scene.world.clock.tick_index,
        from_date: from,
        to_date: to,
        shift_text: shift_text.clone(),
        environment: reply.environment.clone(),
        new_locations,
        location_rewrites,
        agent_rewrites,
        new_descriptive_entities,
        quiet,
    };
    scene.world.shifts.push(shift.clone());
    for agent in scene.world.agent_names() {
        scene.remember_at(
            &agent,
            MemoryKind::Narrative,
            &format!("Narrative shift: {shift_text}"),
            to,
        );
    }
    let summary = scene.world.summary();
    scene.world.archive.summaries.push(summary);
    Ok(shift)
}
