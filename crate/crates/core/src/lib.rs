//! Generative-agent narrative simulation: world model, memory streams,
//! narrator backends, the tick engine, human dialogue sessions,
//! persistence and corpus analysis.

pub mod analyzer;
pub mod config;
pub mod dialogue;
pub mod engine;
pub mod memory;
pub mod model;
pub mod narrator;
pub mod persistence;
pub mod prompts;
pub mod run;
pub mod time;

pub use config::{EngineConfig, RetrievalWeights};
pub use engine::{Engine, EngineError, InitSpec, StartMode, TickReport};
pub use model::{validate_world, WorldState};
pub use narrator::{Narrator, NarratorError, NarratorRequest, NarratorResponse, RequestKind};
