//! The single writer: one thread owns the engine and applies commands in
//! arrival order.

use std::sync::mpsc;
use std::sync::{Arc, RwLock};
use std::thread::{self, JoinHandle};

use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;
use twin_core::dialogue::DialogueSession;
use twin_core::model::SimulationSummary;
use twin_core::run::RunDir;
use twin_core::{Engine, TickReport};

use crate::error::ApiError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentView {
    pub name: String,
    pub location: String,
    pub description: String,
    pub mutation_count: u32,
}

/// What GET routes read. Refreshed by the worker after every command.
#[derive(Debug, Clone)]
pub struct View {
    pub summary: SimulationSummary,
    pub agents: Vec<AgentView>,
    pub log: Vec<String>,
}

impl View {
    fn of(engine: &Engine) -> Self {
        let mut view = Self {
            summary: engine.world().summary(),
            agents: Vec::new(),
            log: Vec::new(),
        };
        view.refresh(engine);
        view
    }

    fn refresh(&mut self, engine: &Engine) {
        let world = engine.world();
        self.summary = world.summary();
        self.agents = world
            .agents
            .values()
            .map(|a| AgentView {
                name: a.name.clone(),
                location: a.current_location.clone(),
                description: a.description().to_string(),
                mutation_count: a.mutation_count,
            })
            .collect();
        let lines = engine.log().lines();
        if lines.len() >= self.log.len() {
            self.log.extend_from_slice(&lines[self.log.len()..]);
        }
    }
}

type Reply<T> = oneshot::Sender<Result<T, ApiError>>;

pub enum Command {
    Step {
        ticks: u64,
        reply: Reply<TickReport>,
    },
    Open {
        agent: String,
        reply: Reply<DialogueSession>,
    },
    Post {
        session: String,
        text: String,
        reply: Reply<String>,
    },
    Conclude {
        session: String,
        reply: Reply<Vec<u64>>,
    },
    Shutdown {
        reply: Reply<()>,
    },
}

pub struct Worker {
    pub tx: mpsc::Sender<Command>,
    pub view: Arc<RwLock<View>>,
    pub handle: JoinHandle<()>,
}

/// Moves `engine` onto its own thread. With `run` set, the snapshot and
/// datasets are saved after every command that changes the world and on
/// shutdown.
pub fn spawn(engine: Engine, run: Option<RunDir>) -> Worker {
    let view = Arc::new(RwLock::new(View::of(&engine)));
    let (tx, rx) = mpsc::channel();
    let shared = view.clone();
    let handle = thread::Builder::new()
        .name("engine".into())
        .spawn(move || work(engine, run, rx, shared))
        .expect("spawn engine thread");
    Worker { tx, view, handle }
}

fn save(engine: &Engine, run: Option<&RunDir>) -> Result<(), ApiError> {
    match run {
        Some(run) => run
            .save(engine)
            .map(|_| ())
            .map_err(|e| ApiError::internal(format!("saving the run failed: {e}"))),
        None => Ok(()),
    }
}

fn work(
    mut engine: Engine,
    run: Option<RunDir>,
    rx: mpsc::Receiver<Command>,
    view: Arc<RwLock<View>>,
) {
    for command in rx {
        let shutdown = matches!(command, Command::Shutdown { .. });
        // Replies go out after the view is refreshed so a follow-up GET sees
        // the effect of the command.
        let respond: Box<dyn FnOnce()> = match command {
            Command::Step { ticks, reply } => {
                let mut reports = Vec::new();
                let mut failure = None;
                for _ in 0..ticks {
                    match engine.step() {
                        Ok(report) => reports.push(report),
                        Err(e) => {
                            failure = Some(ApiError::from_engine(e, reports.len() as u64));
                            break;
                        }
                    }
                }
                let saved = if reports.is_empty() {
                    Ok(())
                } else {
                    save(&engine, run.as_ref())
                };
                let result = match (failure, saved) {
                    (Some(e), _) | (None, Err(e)) => Err(e),
                    (None, Ok(())) => Ok(TickReport::merge(&reports).expect("at least one tick")),
                };
                Box::new(move || {
                    let _ = reply.send(result);
                })
            }
            Command::Open { agent, reply } => {
                let result = engine.open_session(&agent).map_err(ApiError::from);
                Box::new(move || {
                    let _ = reply.send(result);
                })
            }
            Command::Post {
                session,
                text,
                reply,
            } => {
                let result = engine.post_message(&session, &text).map_err(ApiError::from);
                Box::new(move || {
                    let _ = reply.send(result);
                })
            }
            Command::Conclude { session, reply } => {
                let result = engine
                    .conclude_session(&session)
                    .map_err(ApiError::from)
                    .and_then(|ids| save(&engine, run.as_ref()).map(|_| ids));
                Box::new(move || {
                    let _ = reply.send(result);
                })
            }
            Command::Shutdown { reply } => {
                let result = save(&engine, run.as_ref());
                Box::new(move || {
                    let _ = reply.send(result);
                })
            }
        };
        view.write().expect("view lock").refresh(&engine);
        respond();
        if shutdown {
            break;
        }
    }
}
