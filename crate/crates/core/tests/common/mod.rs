#![allow(dead_code)]

use std::collections::VecDeque;
use std::sync::Mutex;

use chrono::Duration;
use twin_core::engine::{init_world, EngineIo};
use twin_core::model::{Creator, EntitySeed, Location, MemoryKind, MemoryRecord, WorldState};
use twin_core::narrator::{NarratorError, NarratorRequest, NarratorResponse, ScriptedNarrator};
use twin_core::persistence::{AuditLog, LogSink, SteppingClock};
use twin_core::{Engine, EngineConfig, InitSpec, Narrator, RequestKind, StartMode};

pub fn config_with(jitter_days: u32) -> EngineConfig {
    EngineConfig {
        jitter_days,
        ..EngineConfig::default()
    }
}

pub fn world(seed: u64, config: EngineConfig) -> WorldState {
    let mut spec = InitSpec::gracia();
    spec.config = Some(config);
    init_world(&spec, seed).unwrap()
}

/// The golden-day world: seed 7, no date jitter.
pub fn golden_world() -> WorldState {
    world(7, config_with(0))
}

pub fn engine(world: WorldState, narrator: Box<dyn Narrator>, audit: Option<AuditLog>) -> Engine {
    let io = EngineIo {
        narrator,
        clock: Box::new(SteppingClock::default_epoch()),
        log: LogSink::in_memory(),
        audit,
    };
    Engine::start(world, StartMode::Fresh, io).unwrap()
}

pub fn scripted_engine(world: WorldState) -> Engine {
    engine(world, Box::new(ScriptedNarrator::builtin()), None)
}

pub fn outage() -> NarratorError {
    NarratorError::Unavailable {
        attempts: 4,
        last: "connection refused".into(),
    }
}

/// Serves replies from a queue; once it runs dry every call is an outage.
pub struct Queue {
    replies: Mutex<VecDeque<Result<String, NarratorError>>>,
    pub seen: Mutex<Vec<RequestKind>>,
}

impl Queue {
    pub fn new(replies: Vec<Result<String, NarratorError>>) -> Self {
        Self {
            replies: Mutex::new(replies.into()),
            seen: Mutex::new(Vec::new()),
        }
    }
}

impl Narrator for Queue {
    fn complete(&self, request: &NarratorRequest) -> Result<NarratorResponse, NarratorError> {
        self.seen.lock().unwrap().push(request.kind);
        let next = self
            .replies
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err(outage()));
        next.map(|text| NarratorResponse {
            text,
            backend_id: "queue".into(),
            latency_ms: 0,
        })
    }
}

/// Delegates to the scripted narrator but fails the calls whose zero-based
/// position is listed.
pub struct FailAt {
    inner: ScriptedNarrator,
    calls: Mutex<usize>,
    fail: Vec<usize>,
}

impl FailAt {
    pub fn new(fail: Vec<usize>) -> Self {
        Self {
            inner: ScriptedNarrator::builtin(),
            calls: Mutex::new(0),
            fail,
        }
    }
}

impl Narrator for FailAt {
    fn complete(&self, request: &NarratorRequest) -> Result<NarratorResponse, NarratorError> {
        let mut calls = self.calls.lock().unwrap();
        let n = *calls;
        *calls += 1;
        if self.fail.contains(&n) {
            Err(outage())
        } else {
            self.inner.complete(request)
        }
    }
}

/// Extra state layered on a simulated world to make it less uniform.
#[derive(Debug, Clone)]
pub struct Garnish {
    pub memories: Vec<(u8, String, u8)>,
    pub rewrites: Vec<(bool, String)>,
    pub locations: Vec<(String, String)>,
    pub entities: Vec<(String, String)>,
    pub marker_fraction: f64,
}

const KINDS: [MemoryKind; 6] = [
    MemoryKind::Observation,
    MemoryKind::Action,
    MemoryKind::Dialogue,
    MemoryKind::DialogueSummary,
    MemoryKind::Reflection,
    MemoryKind::Narrative,
];

/// Runs `ticks` scripted ticks, then adds the garnish by hand. The result
/// always passes validation.
pub fn random_world(seed: u64, ticks: u64, jitter: u32, garnish: &Garnish) -> WorldState {
    let mut engine = scripted_engine(world(seed, config_with(jitter)));
    engine.run(ticks).unwrap();
    let mut w = engine.into_world();
    let now = w.now();
    let names = w.agent_names();
    for (i, (kind, text, p)) in garnish.memories.iter().enumerate() {
        let agent = w.agents.get_mut(&names[i % names.len()]).unwrap();
        let id = agent.memory.next_id();
        agent.memory.records.push(MemoryRecord {
            id,
            sim_time: now + Duration::minutes(i as i64),
            kind: KINDS[*kind as usize % KINDS.len()],
            text: format!("m{i} {text}"),
            poignancy: *p,
        });
    }
    for (i, (lex, text)) in garnish.rewrites.iter().enumerate() {
        let name = if *lex { "Lex" } else { "Tortugi" };
        w.agents
            .get_mut(name)
            .unwrap()
            .rewrite(now + Duration::hours(i as i64), format!("r{i} {text}"));
    }
    for (i, (name, desc)) in garnish.locations.iter().enumerate() {
        let name = w.unique_location_name(&format!("L{i} {name}"));
        let creator = if i % 2 == 0 {
            Creator::NarrativeShift
        } else {
            Creator::Agent(names[i % names.len()].clone())
        };
        w.locations.insert(
            name.clone(),
            Location::new(name, format!("d {desc}"), now, creator),
        );
    }
    for (i, (name, text)) in garnish.entities.iter().enumerate() {
        let entity = EntitySeed {
            name: format!("E{i} {name}"),
            text: format!("t {text}"),
        };
        w.descriptive_entities.insert(entity.name, entity.text);
    }
    for agent in w.agents.values_mut() {
        let max = agent.memory.max_id();
        agent.memory.last_reflection_marker = (max as f64 * garnish.marker_fraction) as u64;
    }
    w
}
