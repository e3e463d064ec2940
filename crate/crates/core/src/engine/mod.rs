//! The simulation loop and the single writer that owns the world.
//!
//! Every mutation goes through [`Engine`]: ticks and dialogue commands run
//! one at a time, each first recorded in the prompt audit log so a run can
//! be replayed exactly.

mod init;
pub mod scene;

use std::sync::Arc;

use chrono::NaiveDateTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use init::{init_world, AgentSeed, InitError, InitSpec};
pub use scene::{
    agent_dialogue, choose_objective, maybe_create_location, maybe_mutate, narrative_shift,
    parse_action, resolve_action, CallStats, Scene,
};

use crate::dialogue::{self, DialogueError, DialogueSession, SessionTable};
use crate::memory::{reflect, should_reflect};
use crate::model::{
    advance_clock, validate_world, ClockError, NarrativeShift, Violation, WorldState,
};
use crate::narrator::{Narrator, NarratorError};
use crate::persistence::{
    AuditLog, AuditRecord, AuditTag, AuditedNarrator, LogEvent, LogSink, RecordingClock,
    ReplayClock, ReplayCursor, ReplayNarrator, WallClock,
};
use crate::time::{display_date, sim_format};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("narrator unavailable: {0}")]
    Narrator(NarratorError),
    #[error("clock: {0}")]
    Clock(ClockError),
    #[error("invalid world: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidWorld(Vec<Violation>),
    #[error("log write failed: {0}")]
    Io(String),
}

/// What one tick did.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickReport {
    /// Tick index after the tick.
    pub tick_index: u64,
    #[serde(with = "sim_format")]
    pub sim_time: NaiveDateTime,
    pub events: Vec<LogEvent>,
    pub narrator_calls: u32,
    pub shift: Option<NarrativeShift>,
}

impl TickReport {
    /// Folds consecutive reports into one: events concatenated, calls
    /// summed, the latest shift kept.
    pub fn merge(reports: &[TickReport]) -> Option<TickReport> {
        let last = reports.last()?;
        Some(TickReport {
            tick_index: last.tick_index,
            sim_time: last.sim_time,
            events: reports.iter().flat_map(|r| r.events.clone()).collect(),
            narrator_calls: reports.iter().map(|r| r.narrator_calls).sum(),
            shift: reports.iter().rev().find_map(|r| r.shift.clone()),
        })
    }
}

/// The generator for one tick: seeded from the world seed, one stream per
/// tick index, so any tick can be re-run in isolation.
pub fn tick_rng(seed: u64, tick_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tick_index);
    rng
}

fn roll<R: Rng>(rng: &mut R, p: f64) -> bool {
    rng.random::<f64>() < p
}

/// Runs one tick on a copy of `world`.
///
/// Order: per agent (name order) reflection check, objective, action; then
/// dialogue rolls per co-located pair; then location and mutation rolls per
/// agent; then the clock advances and a shift follows at day end.
///
/// The tick is abandoned (and `world` left as it was) when the narrator is
/// unreachable for the shift, or for every call of the tick.
pub fn step_tick<R: Rng>(
    world: &WorldState,
    narrator: &dyn Narrator,
    clock: &dyn WallClock,
    rng: &mut R,
) -> Result<(WorldState, TickReport), EngineError> {
    let mut staged = world.clone();
    let mut scene = Scene::new(&mut staged, narrator, clock);
    let names = scene.world.agent_names();
    let cfg = scene.world.config.clone();

    for name in &names {
        let now = scene.world.now();
        let memory = &scene.world.agents[name].memory;
        if should_reflect(memory, cfg.reflection_threshold) {
            let mut stream = memory.clone();
            match reflect(&mut stream, scene.narrator(), now, name) {
                Ok(batch) => {
                    scene.world.agents.get_mut(name).expect("agent").memory = stream;
                    for answer in &batch.answers {
                        scene.log(format!("{name} reflects: {answer}"));
                    }
                }
                Err(err) => scene.log(format!("warning: reflection of {name} failed ({err})")),
            }
        }
        let location = scene.world.agents[name].current_location.clone();
        scene.log(format!("[{name}, {location}]"));
        if let Some(objective) = choose_objective(&mut scene, name) {
            resolve_action(&mut scene, name, &objective);
        }
    }

    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            let together =
                scene.world.agents[a].current_location == scene.world.agents[b].current_location;
            if together && roll(rng, cfg.p_agent_dialogue) {
                agent_dialogue(&mut scene, a, b, cfg.max_agent_dialogue_turns);
            }
        }
    }

    for name in &names {
        let create = roll(rng, cfg.p_location);
        let mutate = roll(rng, cfg.p_mutation);
        maybe_create_location(&mut scene, name, create);
        maybe_mutate(&mut scene, name, mutate);
    }

    scene.world.clock = advance_clock(&scene.world.clock, 1).map_err(EngineError::Clock)?;
    let shift = if scene.world.clock.is_day_boundary() {
        Some(narrative_shift(&mut scene, rng)?)
    } else {
        None
    };

    let stats = scene.stats();
    if stats.outages > 0 && stats.succeeded == 0 {
        let err = scene.last_outage().expect("an outage was counted");
        return Err(EngineError::Narrator(err));
    }
    let date = display_date(scene.world.now());
    scene.log(format!("It is {date}."));
    let events = std::mem::take(&mut scene.events);
    let report = TickReport {
        tick_index: staged.clock.tick_index,
        sim_time: staged.now(),
        events,
        narrator_calls: stats.total(),
        shift,
    };
    Ok((staged, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartMode {
    Fresh,
    Loaded,
}

/// The backends an engine runs against.
pub struct EngineIo {
    pub narrator: Box<dyn Narrator>,
    pub clock: Box<dyn WallClock>,
    pub log: LogSink,
    /// When set, every command, exchange and clock reading is recorded.
    pub audit: Option<AuditLog>,
}

#[derive(Serialize, Deserialize)]
struct InitCommand {
    mode: StartMode,
    world: WorldState,
}

#[derive(Serialize, Deserialize)]
struct AgentCommand {
    agent: String,
}

#[derive(Serialize, Deserialize)]
struct SessionCommand {
    session: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
}

pub struct Engine {
    world: WorldState,
    narrator: Box<dyn Narrator>,
    clock: Box<dyn WallClock>,
    log: LogSink,
    audit: Option<AuditLog>,
    sessions: SessionTable,
}

impl Engine {
    /// Takes ownership of `world` and writes the start-up log lines.
    pub fn start(world: WorldState, mode: StartMode, io: EngineIo) -> Result<Self, EngineError> {
        let violations = validate_world(&world);
        if !violations.is_empty() {
            return Err(EngineError::InvalidWorld(violations));
        }
        let EngineIo {
            narrator,
            clock,
            log,
            audit,
        } = io;
        let (narrator, clock): (Box<dyn Narrator>, Box<dyn WallClock>) = match &audit {
            Some(audit) => {
                let payload = InitCommand {
                    mode,
                    world: world.clone(),
                };
                audit.record(AuditRecord::new(
                    AuditTag::Cmd,
                    "init",
                    serde_json::to_string(&payload).expect("world serializes"),
                ));
                (
                    Box::new(AuditedNarrator::new(narrator, audit.clone())),
                    Box::new(RecordingClock::new(clock, audit.clone())),
                )
            }
            None => (narrator, clock),
        };
        let mut engine = Self {
            world,
            narrator,
            clock,
            log,
            audit,
            sessions: SessionTable::default(),
        };
        let mut events = Vec::new();
        let mut say = |text: String| events.push(LogEvent::new(engine.clock.now(), text));
        say(format!("Initialising {}.", engine.world.name));
        if mode == StartMode::Loaded {
            say("Loading world from memory.".to_string());
        }
        for name in engine.world.agent_names() {
            say(format!("Initialising {name}..."));
            say(match mode {
                StartMode::Fresh => format!("{name} initialised fresh."),
                StartMode::Loaded => format!("{name} memory loaded from disk."),
            });
        }
        say(format!("It is {}.", display_date(engine.world.now())));
        if mode == StartMode::Fresh && engine.world.archive.summaries.is_empty() {
            let summary = engine.world.summary();
            engine.world.archive.summaries.push(summary);
        }
        engine.emit(&events)?;
        Ok(engine)
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn into_world(self) -> WorldState {
        self.world
    }

    pub fn log(&self) -> &LogSink {
        &self.log
    }

    fn into_log(self) -> LogSink {
        self.log
    }

    pub fn sessions(&self) -> &SessionTable {
        &self.sessions
    }

    fn command(&self, kind: &str, payload: String) {
        if let Some(audit) = &self.audit {
            audit.record(AuditRecord::new(AuditTag::Cmd, kind, payload));
        }
    }

    fn emit(&mut self, events: &[LogEvent]) -> Result<(), EngineError> {
        for event in events {
            self.log
                .append(event)
                .map_err(|e| EngineError::Io(e.to_string()))?;
        }
        if let Some(err) = self.audit.as_ref().and_then(AuditLog::take_error) {
            return Err(EngineError::Io(format!("prompt audit log: {err}")));
        }
        Ok(())
    }

    /// Runs one tick. On error the world is unchanged.
    pub fn step(&mut self) -> Result<TickReport, EngineError> {
        self.command("tick", "{}".into());
        let mut rng = tick_rng(self.world.rng_seed, self.world.clock.tick_index);
        let (world, report) = step_tick(&self.world, &*self.narrator, &*self.clock, &mut rng)?;
        self.emit(&report.events)?;
        self.world = world;
        Ok(report)
    }

    /// Runs `n` ticks, stopping at the first error.
    pub fn run(&mut self, n: u64) -> Result<Vec<TickReport>, EngineError> {
        (0..n).map(|_| self.step()).collect()
    }

    pub fn open_session(&mut self, agent: &str) -> Result<DialogueSession, DialogueError> {
        let payload = AgentCommand {
            agent: agent.to_string(),
        };
        self.command("open", serde_json::to_string(&payload).expect("serializes"));
        let mut events = Vec::new();
        let result = dialogue::open_session(
            &mut self.sessions,
            &self.world,
            agent,
            &*self.clock,
            &mut events,
        );
        self.emit_dialogue(&events)?;
        result
    }

    pub fn post_message(&mut self, session: &str, text: &str) -> Result<String, DialogueError> {
        let payload = SessionCommand {
            session: session.to_string(),
            text: Some(text.to_string()),
        };
        self.command("post", serde_json::to_string(&payload).expect("serializes"));
        let mut events = Vec::new();
        let result = self.sessions.get_mut(session).and_then(|s| {
            dialogue::post_message(
                s,
                &self.world,
                text,
                &*self.narrator,
                &*self.clock,
                &mut events,
            )
        });
        self.emit_dialogue(&events)?;
        result
    }

    pub fn conclude_session(&mut self, session: &str) -> Result<Vec<u64>, DialogueError> {
        let payload = SessionCommand {
            session: session.to_string(),
            text: None,
        };
        self.command(
            "conclude",
            serde_json::to_string(&payload).expect("serializes"),
        );
        let mut events = Vec::new();
        let mut staged = self.world.clone();
        let result = self.sessions.get_mut(session).and_then(|s| {
            dialogue::conclude_session(s, &mut staged, &*self.narrator, &*self.clock, &mut events)
        });
        if result.is_ok() {
            self.world = staged;
        }
        self.emit_dialogue(&events)?;
        result
    }

    fn emit_dialogue(&mut self, events: &[LogEvent]) -> Result<(), DialogueError> {
        self.emit(events)
            .map_err(|e| DialogueError::Unavailable(NarratorError::Transport(e.to_string())))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("audit log does not start with an init command")]
    NoInit,
    #[error("unknown command {0:?} in audit log")]
    UnknownCommand(String),
    #[error("malformed {kind} command: {message}")]
    BadCommand { kind: String, message: String },
    #[error("replay diverged from the recording: {0}")]
    Diverged(String),
    #[error("replayed engine failed to start: {0}")]
    Start(String),
}

/// Re-executes a recorded run and returns the simulation log it produces.
///
/// Narrator replies and clock readings come from the recording. With
/// `backend` set, replies are regenerated by it and checked against the
/// recording instead.
pub fn replay(
    records: Vec<AuditRecord>,
    backend: Option<Arc<dyn Narrator>>,
) -> Result<String, ReplayError> {
    let cursor = ReplayCursor::new(records);
    let mut log = Some(LogSink::in_memory());
    let mut engine: Option<Engine> = None;
    let bad = |kind: &str, e: serde_json::Error| ReplayError::BadCommand {
        kind: kind.to_string(),
        message: e.to_string(),
    };

    while !cursor.is_exhausted() {
        let Some(cmd) = cursor.expect(AuditTag::Cmd) else {
            return Err(ReplayError::Diverged(
                cursor
                    .divergence()
                    .unwrap_or_else(|| "expected a command".into()),
            ));
        };
        match cmd.kind.as_str() {
            "init" => {
                let init: InitCommand =
                    serde_json::from_str(&cmd.payload).map_err(|e| bad("init", e))?;
                let sink = match engine.take() {
                    Some(previous) => previous.into_log(),
                    None => log.take().expect("first segment"),
                };
                let mut narrator = ReplayNarrator::new(cursor.clone());
                if let Some(backend) = &backend {
                    narrator = narrator.with_backend(backend.clone());
                }
                let io = EngineIo {
                    narrator: Box::new(narrator),
                    clock: Box::new(ReplayClock::new(cursor.clone())),
                    log: sink,
                    audit: None,
                };
                engine = Some(
                    Engine::start(init.world, init.mode, io)
                        .map_err(|e| ReplayError::Start(e.to_string()))?,
                );
            }
            other => {
                let engine = engine.as_mut().ok_or(ReplayError::NoInit)?;
                match other {
                    "tick" => {
                        let _ = engine.step();
                    }
                    "open" => {
                        let c: AgentCommand =
                            serde_json::from_str(&cmd.payload).map_err(|e| bad("open", e))?;
                        let _ = engine.open_session(&c.agent);
                    }
                    "post" => {
                        let c: SessionCommand =
                            serde_json::from_str(&cmd.payload).map_err(|e| bad("post", e))?;
                        let _ =
                            engine.post_message(&c.session, c.text.as_deref().unwrap_or_default());
                    }
                    "conclude" => {
                        let c: SessionCommand =
                            serde_json::from_str(&cmd.payload).map_err(|e| bad("conclude", e))?;
                        let _ = engine.conclude_session(&c.session);
                    }
                    unknown => return Err(ReplayError::UnknownCommand(unknown.to_string())),
                }
            }
        }
        if let Some(divergence) = cursor.divergence() {
            return Err(ReplayError::Diverged(divergence));
        }
    }
    let sink = match engine {
        Some(engine) => engine.into_log(),
        None => return Err(ReplayError::NoInit),
    };
    Ok(sink.contents())
}
