//! Shared domain types: the clock, agents, locations, memories, shifts and
//! the world that owns them. Nothing here talks to a narrator.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{Datelike, Duration, Months, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::EngineConfig;
use crate::time::{self, display_date, sim_format};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClockError {
    #[error("a clock advance needs at least one tick")]
    ZeroTicks,
    #[error("simulation time leaves the supported calendar range (year > {max})", max = time::MAX_YEAR)]
    OutOfRange,
    #[error("simulation time may only move forward")]
    Backwards,
}

/// Simulation clock. Ticks advance time in fixed steps; a narrative shift
/// starts a new era at a later date, so the tick/time relation holds per era.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimClock {
    #[serde(with = "sim_format")]
    pub sim_time: NaiveDateTime,
    pub tick_index: u64,
    pub ticks_per_day: u32,
    pub tick_minutes: u32,
    #[serde(with = "sim_format")]
    pub era_start: NaiveDateTime,
    pub era_start_tick: u64,
}

impl SimClock {
    pub const DEFAULT_TICKS_PER_DAY: u32 = 12;
    pub const DEFAULT_TICK_MINUTES: u32 = 120;

    pub fn new(start: NaiveDateTime) -> Self {
        Self::with_cadence(
            start,
            Self::DEFAULT_TICKS_PER_DAY,
            Self::DEFAULT_TICK_MINUTES,
        )
    }

    pub fn with_cadence(start: NaiveDateTime, ticks_per_day: u32, tick_minutes: u32) -> Self {
        let start = time::truncate_to_minute(start);
        Self {
            sim_time: start,
            tick_index: 0,
            ticks_per_day,
            tick_minutes,
            era_start: start,
            era_start_tick: 0,
        }
    }

    pub fn tick_duration(&self) -> Duration {
        Duration::minutes(i64::from(self.tick_minutes))
    }

    pub fn is_day_boundary(&self) -> bool {
        self.tick_index > 0
            && self.ticks_per_day > 0
            && self
                .tick_index
                .is_multiple_of(u64::from(self.ticks_per_day))
    }

    /// Starts a new era at `to`, keeping the tick count.
    pub fn jump_to(&self, to: NaiveDateTime) -> Result<SimClock, ClockError> {
        let to = time::truncate_to_minute(to);
        if to <= self.sim_time {
            return Err(ClockError::Backwards);
        }
        if to.year() > time::MAX_YEAR {
            return Err(ClockError::OutOfRange);
        }
        Ok(SimClock {
            sim_time: to,
            era_start: to,
            era_start_tick: self.tick_index,
            ..self.clone()
        })
    }

    /// Why the clock is internally inconsistent, if it is.
    fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.ticks_per_day == 0 {
            out.push("ticks_per_day must be positive".to_string());
        }
        if self.tick_minutes == 0 {
            out.push("tick duration must be positive".to_string());
        }
        if self.era_start_tick > self.tick_index {
            out.push("era starts after the current tick".to_string());
        } else {
            let elapsed = (self.tick_index - self.era_start_tick) as i64;
            let expected = self
                .era_start
                .checked_add_signed(Duration::minutes(elapsed * i64::from(self.tick_minutes)));
            if expected != Some(self.sim_time) {
                out.push(format!(
                    "sim_time {} is inconsistent with {} ticks since era start {}",
                    self.sim_time.format(time::SIM_TIME_FORMAT),
                    elapsed,
                    self.era_start.format(time::SIM_TIME_FORMAT)
                ));
            }
        }
        out
    }
}

/// Moves the clock forward by whole ticks.
pub fn advance_clock(clock: &SimClock, n_ticks: u64) -> Result<SimClock, ClockError> {
    if n_ticks == 0 {
        return Err(ClockError::ZeroTicks);
    }
    let minutes = i64::try_from(n_ticks)
        .ok()
        .and_then(|n| n.checked_mul(i64::from(clock.tick_minutes)))
        .ok_or(ClockError::OutOfRange)?;
    let sim_time = clock
        .sim_time
        .checked_add_signed(Duration::try_minutes(minutes).ok_or(ClockError::OutOfRange)?)
        .ok_or(ClockError::OutOfRange)?;
    if sim_time.year() > time::MAX_YEAR {
        return Err(ClockError::OutOfRange);
    }
    Ok(SimClock {
        sim_time,
        tick_index: clock
            .tick_index
            .checked_add(n_ticks)
            .ok_or(ClockError::OutOfRange)?,
        ..clock.clone()
    })
}

/// Adds whole years then a signed day offset, clamping Feb 29 to Feb 28.
pub fn shift_date(from: NaiveDateTime, years: u32, jitter_days: i64) -> Option<NaiveDateTime> {
    from.checked_add_months(Months::new(years.checked_mul(12)?))?
        .checked_add_signed(Duration::try_days(jitter_days)?)
}

/// One dated entry in a description history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Revision {
    #[serde(with = "sim_format")]
    pub at: NaiveDateTime,
    pub text: String,
}

impl Revision {
    pub fn new(at: NaiveDateTime, text: impl Into<String>) -> Self {
        Self {
            at,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MemoryKind {
    Observation,
    Action,
    Dialogue,
    DialogueSummary,
    Reflection,
    Narrative,
}

impl MemoryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MemoryKind::Observation => "observation",
            MemoryKind::Action => "action",
            MemoryKind::Dialogue => "dialogue",
            MemoryKind::DialogueSummary => "dialogue-summary",
            MemoryKind::Reflection => "reflection",
            MemoryKind::Narrative => "narrative",
        }
    }
}

impl fmt::Display for MemoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const MIN_POIGNANCY: u8 = 1;
pub const MAX_POIGNANCY: u8 = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub id: u64,
    #[serde(with = "sim_format")]
    pub sim_time: NaiveDateTime,
    pub kind: MemoryKind,
    pub text: String,
    pub poignancy: u8,
}

/// An agent's append-only record of experiences.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryStream {
    pub records: Vec<MemoryRecord>,
    /// Highest record id covered by the last reflection; 0 if none yet.
    pub last_reflection_marker: u64,
}

impl MemoryStream {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn max_id(&self) -> u64 {
        self.records.last().map_or(0, |r| r.id)
    }

    pub fn next_id(&self) -> u64 {
        self.max_id() + 1
    }

    pub fn get(&self, id: u64) -> Option<&MemoryRecord> {
        self.records
            .binary_search_by_key(&id, |r| r.id)
            .ok()
            .map(|i| &self.records[i])
    }

    /// Records added after the last reflection.
    pub fn since_marker(&self) -> impl Iterator<Item = &MemoryRecord> {
        let marker = self.last_reflection_marker;
        self.records.iter().filter(move |r| r.id > marker)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Objective {
    pub actor: String,
    pub text: String,
    pub target_location: Option<String>,
    #[serde(with = "sim_format")]
    pub set_at: NaiveDateTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub name: String,
    pub description_history: Vec<Revision>,
    pub current_location: String,
    pub current_objective: Option<Objective>,
    pub memory: MemoryStream,
    pub mutation_count: u32,
}

impl AgentProfile {
    pub fn new(
        name: impl Into<String>,
        description: impl Into<String>,
        location: impl Into<String>,
        at: NaiveDateTime,
    ) -> Self {
        Self {
            name: name.into(),
            description_history: vec![Revision::new(at, description)],
            current_location: location.into(),
            current_objective: None,
            memory: MemoryStream::new(),
            mutation_count: 0,
        }
    }

    pub fn description(&self) -> &str {
        self.description_history
            .last()
            .map_or("", |r| r.text.as_str())
    }

    /// Appends a rewritten description; the history itself is never edited.
    pub fn rewrite(&mut self, at: NaiveDateTime, text: impl Into<String>) {
        self.description_history.push(Revision::new(at, text));
        self.mutation_count += 1;
    }
}

/// Who brought a location into the world.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Creator {
    /// Part of the initial world description.
    Initial,
    NarrativeShift,
    Agent(String),
}

impl fmt::Display for Creator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Creator::Initial => f.write_str("initial"),
            Creator::NarrativeShift => f.write_str("narrative-shift"),
            Creator::Agent(name) => f.write_str(name),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Location {
    pub name: String,
    pub description_history: Vec<Revision>,
    #[serde(with = "sim_format")]
    pub created_at: NaiveDateTime,
    pub created_by: Creator,
}

impl Location {
    pub fn new(
        name: impl Into<String>,
        description: impl Into<String>,
        at: NaiveDateTime,
        created_by: Creator,
    ) -> Self {
        Self {
            name: name.into(),
            description_history: vec![Revision::new(at, description)],
            created_at: at,
            created_by,
        }
    }

    pub fn description(&self) -> &str {
        self.description_history
            .last()
            .map_or("", |r| r.text.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StateDelta {
    MoveAgent { agent: String, location: String },
    CreateMemory { agent: String, text: String },
    ModifyLocationDescription { location: String, text: String },
    CreateDescriptiveEntity { name: String, text: String },
}

/// The adjudicated outcome of one agent action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionEffect {
    pub actor: String,
    pub basis: String,
    pub relation: String,
    pub result: String,
    pub state_deltas: Vec<StateDelta>,
}

impl ActionEffect {
    pub fn noop(actor: impl Into<String>) -> Self {
        Self {
            actor: actor.into(),
            basis: String::new(),
            relation: String::new(),
            result: String::new(),
            state_deltas: Vec::new(),
        }
    }

    pub fn is_noop(&self) -> bool {
        self.result.is_empty() && self.state_deltas.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocationSeed {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySeed {
    pub name: String,
    pub text: String,
}

/// A day-boundary transformation of the world.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NarrativeShift {
    pub index: u32,
    pub occurred_at_tick: u64,
    #[serde(with = "sim_format")]
    pub from_date: NaiveDateTime,
    #[serde(with = "sim_format")]
    pub to_date: NaiveDateTime,
    pub shift_text: String,
    /// New environment paragraph; `None` keeps the previous one.
    pub environment: Option<String>,
    pub new_locations: Vec<LocationSeed>,
    /// Rewritten descriptions of locations that already existed.
    pub location_rewrites: BTreeMap<String, String>,
    pub agent_rewrites: BTreeMap<String, String>,
    pub new_descriptive_entities: Vec<EntitySeed>,
    /// True when the narrator reply could not be used and only time passed.
    pub quiet: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoverningRule {
    pub name: String,
    pub definition: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoverningRules {
    pub rules: Vec<GoverningRule>,
}

impl Default for GoverningRules {
    fn default() -> Self {
        let rule = |name: &str, definition: &str| GoverningRule {
            name: name.to_string(),
            definition: definition.to_string(),
        };
        Self {
            rules: vec![
                rule(
                    "Cooperation",
                    "Tortugi will mostly try to cooperate with Lex, in their attempt to re-make Gracia, regardless of benefit or cost. Lex will resist cooperating with Tortugi unless they stand to benefit from the cooperation.",
                ),
                rule(
                    "Resource-sharing",
                    "Tortugi prioritizes resource sharing and cooperation with Lex to reshape their shared \"home,\" while Lex focuses on accumulating resources for individual goals and minimizing interference.",
                ),
                rule(
                    "Hybridisation",
                    "Tortugi, Lex and Gracia itself has the ability to hybridise and mutate alongside each other and environments through their interactions and co-performativity.",
                ),
                rule(
                    "Liberation",
                    "Tortugi, Lex and Gracia itself want to be liberated from what is to become un-done to be re-made into what could be. Their survival and potential for liberation is entangled through their relations.",
                ),
            ],
        }
    }
}

impl GoverningRules {
    pub fn digest(&self) -> String {
        self.rules
            .iter()
            .map(|r| format!("- {}: {}", r.name, r.definition))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// One exchanged line in any dialogue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub speaker: String,
    pub text: String,
    /// Wall-clock time the turn was recorded.
    #[serde(with = "time::wall_format")]
    pub at: NaiveDateTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conclusion {
    pub agent: String,
    pub text: String,
    pub memory_id: u64,
}

/// A finished conversation, kept for export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTranscript {
    pub participants: Vec<String>,
    #[serde(with = "sim_format")]
    pub sim_time: NaiveDateTime,
    pub location: Option<String>,
    pub turns: Vec<DialogueTurn>,
    pub conclusions: Vec<Conclusion>,
}

/// Run history that is not part of the live world but is needed for export.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Archive {
    pub transcripts: Vec<DialogueTranscript>,
    pub summaries: Vec<SimulationSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocationLine {
    pub name: String,
    pub description: String,
}

/// The six-part world digest shown to the human operator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub simulation_time: String,
    pub environment: String,
    pub last_narrative_shift: String,
    pub locations: Vec<LocationLine>,
    pub agent_locations: BTreeMap<String, String>,
    pub character_descriptions: BTreeMap<String, String>,
}

impl SimulationSummary {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str("Simulation Summary\n\nSimulation Time\n");
        out.push_str(&self.simulation_time);
        out.push_str("\n\nEnvironment\n");
        out.push_str(&self.environment);
        out.push_str("\n\nLast narrative shift\n");
        out.push_str(&self.last_narrative_shift);
        out.push_str("\n\nLocations\n");
        for l in &self.locations {
            out.push_str(&format!("{}: {}\n", l.name, l.description));
        }
        out.push_str("\nAgent Locations\n");
        for (agent, loc) in &self.agent_locations {
            out.push_str(&format!("{agent}: {loc}\n"));
        }
        out.push_str("\nCharacter Descriptions\n");
        for (agent, desc) in &self.character_descriptions {
            out.push_str(&format!("{agent}: {desc}\n"));
        }
        out
    }
}

/// The entire sandbox.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub name: String,
    pub clock: SimClock,
    pub environment: String,
    pub story_objective: String,
    pub locations: BTreeMap<String, Location>,
    pub agents: BTreeMap<String, AgentProfile>,
    pub descriptive_entities: BTreeMap<String, String>,
    pub shifts: Vec<NarrativeShift>,
    pub rules: GoverningRules,
    pub rng_seed: u64,
    pub config: EngineConfig,
    #[serde(default)]
    pub archive: Archive,
}

impl WorldState {
    pub fn now(&self) -> NaiveDateTime {
        self.clock.sim_time
    }

    pub fn agent(&self, name: &str) -> Option<&AgentProfile> {
        self.agents.get(name)
    }

    pub fn agent_names(&self) -> Vec<String> {
        self.agents.keys().cloned().collect()
    }

    /// Picks an unused location name: `Oasis`, then `Oasis II`, `Oasis III`...
    pub fn unique_location_name(&self, wanted: &str) -> String {
        if !self.locations.contains_key(wanted) {
            return wanted.to_string();
        }
        (2..)
            .map(|n| format!("{wanted} {}", roman(n)))
            .find(|candidate| !self.locations.contains_key(candidate))
            .expect("unbounded suffix search")
    }

    pub fn summary(&self) -> SimulationSummary {
        project_summary(self)
    }
}

fn roman(mut n: u32) -> String {
    const TABLE: [(u32, &str); 13] = [
        (1000, "M"),
        (900, "CM"),
        (500, "D"),
        (400, "CD"),
        (100, "C"),
        (90, "XC"),
        (50, "L"),
        (40, "XL"),
        (10, "X"),
        (9, "IX"),
        (5, "V"),
        (4, "IV"),
        (1, "I"),
    ];
    let mut out = String::new();
    for (value, glyph) in TABLE {
        while n >= value {
            out.push_str(glyph);
            n -= value;
        }
    }
    out
}

/// A broken world invariant, naming the entity at fault.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub entity: String,
    pub rule: String,
}

impl Violation {
    fn new(entity: impl Into<String>, rule: impl Into<String>) -> Self {
        Self {
            entity: entity.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.rule)
    }
}

/// Checks every structural invariant; an empty list means the world is valid.
pub fn validate_world(world: &WorldState) -> Vec<Violation> {
    let mut out = Vec::new();

    for problem in world.clock.problems() {
        out.push(Violation::new("clock", problem));
    }
    for problem in world.config.problems() {
        out.push(Violation::new("config", problem));
    }

    for (key, loc) in &world.locations {
        let entity = format!("location {key}");
        if key != &loc.name {
            out.push(Violation::new(
                &entity,
                format!("registered under a different name ({:?})", loc.name),
            ));
        }
        if loc.description_history.is_empty() {
            out.push(Violation::new(&entity, "description_history is empty"));
        }
        if let Creator::Agent(agent) = &loc.created_by {
            if !world.agents.contains_key(agent) {
                out.push(Violation::new(
                    &entity,
                    format!("created_by names unknown agent {agent}"),
                ));
            }
        }
    }

    for (key, agent) in &world.agents {
        let entity = format!("agent {key}");
        if key != &agent.name {
            out.push(Violation::new(
                &entity,
                format!("registered under a different name ({:?})", agent.name),
            ));
        }
        if agent.description_history.is_empty() {
            out.push(Violation::new(&entity, "description_history is empty"));
        } else if agent.mutation_count as usize != agent.description_history.len() - 1 {
            out.push(Violation::new(
                &entity,
                format!(
                    "mutation_count {} does not match {} description entries",
                    agent.mutation_count,
                    agent.description_history.len()
                ),
            ));
        }
        if !world.locations.contains_key(&agent.current_location) {
            out.push(Violation::new(
                &entity,
                format!(
                    "current_location {:?} is not a registered location",
                    agent.current_location
                ),
            ));
        }
        if let Some(obj) = &agent.current_objective {
            if obj.text.trim().is_empty() {
                out.push(Violation::new(&entity, "objective text is empty"));
            }
            if obj.actor != agent.name {
                out.push(Violation::new(
                    &entity,
                    format!("objective belongs to {}", obj.actor),
                ));
            }
        }
        if world.descriptive_entities.contains_key(key) {
            out.push(Violation::new(
                &entity,
                "also registered as a descriptive entity",
            ));
        }
        let mut prev = 0u64;
        for record in &agent.memory.records {
            let rec_entity = format!("agent {key} memory record {}", record.id);
            if record.id <= prev {
                out.push(Violation::new(
                    &rec_entity,
                    "record ids must be strictly increasing",
                ));
            }
            prev = record.id;
            if !(MIN_POIGNANCY..=MAX_POIGNANCY).contains(&record.poignancy) {
                out.push(Violation::new(
                    &rec_entity,
                    format!("poignancy {} is outside [1, 10]", record.poignancy),
                ));
            }
            if record.text.trim().is_empty() {
                out.push(Violation::new(&rec_entity, "text is empty"));
            }
        }
        if agent.memory.last_reflection_marker > agent.memory.max_id() {
            out.push(Violation::new(
                &entity,
                format!(
                    "last_reflection_marker {} exceeds max record id {}",
                    agent.memory.last_reflection_marker,
                    agent.memory.max_id()
                ),
            ));
        }
    }

    for (i, shift) in world.shifts.iter().enumerate() {
        let entity = format!("narrative shift {}", shift.index);
        if shift.index as usize != i + 1 {
            out.push(Violation::new(&entity, format!("expected index {}", i + 1)));
        }
        if shift.to_date <= shift.from_date {
            out.push(Violation::new(&entity, "to_date must be after from_date"));
        } else {
            let jitter = i64::from(world.config.jitter_days);
            let years = world.config.shift_jump_years;
            let lo = shift_date(shift.from_date, years, -jitter);
            let hi = shift_date(shift.from_date, years, jitter);
            let inside = matches!((lo, hi), (Some(lo), Some(hi)) if shift.to_date >= lo && shift.to_date <= hi);
            if !inside {
                out.push(Violation::new(
                    &entity,
                    "date jump is outside the configured window",
                ));
            }
        }
    }

    let mut seen = BTreeSet::new();
    for rule in &world.rules.rules {
        if !seen.insert(rule.name.as_str()) {
            out.push(Violation::new(
                format!("rule {}", rule.name),
                "rule names must be unique",
            ));
        }
    }

    out
}

/// Pure projection of the world into its six-part summary.
pub fn project_summary(world: &WorldState) -> SimulationSummary {
    let last_narrative_shift = world
        .shifts
        .iter()
        .max_by_key(|s| s.index)
        .map(|s| s.shift_text.clone())
        .unwrap_or_else(|| world.environment.clone());
    // BTreeMap iteration already yields locations sorted by name.
    let locations = world
        .locations
        .values()
        .map(|l| LocationLine {
            name: l.name.clone(),
            description: l.description().to_string(),
        })
        .collect();
    SimulationSummary {
        simulation_time: display_date(world.now()),
        environment: world.environment.clone(),
        last_narrative_shift,
        locations,
        agent_locations: world
            .agents
            .values()
            .map(|a| (a.name.clone(), a.current_location.clone()))
            .collect(),
        character_descriptions: world
            .agents
            .values()
            .map(|a| (a.name.clone(), a.description().to_string()))
            .collect(),
    }
}
