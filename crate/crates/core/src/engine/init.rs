use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::EngineConfig;
use crate::model::{
    AgentProfile, Archive, Creator, EntitySeed, GoverningRules, Location, LocationSeed, SimClock,
    WorldState,
};
use crate::time::{sim_format, ymd_hm};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSeed {
    pub name: String,
    pub description: String,
    pub location: String,
}

/// Everything needed to build a fresh world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    pub world_name: String,
    #[serde(with = "sim_format")]
    pub start: NaiveDateTime,
    pub environment: String,
    pub story_objective: String,
    pub locations: Vec<LocationSeed>,
    pub agents: Vec<AgentSeed>,
    #[serde(default)]
    pub descriptive_entities: Vec<EntitySeed>,
    #[serde(default)]
    pub rules: Option<GoverningRules>,
    #[serde(default)]
    pub config: Option<EngineConfig>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InitError {
    #[error("init spec needs at least one location")]
    NoLocations,
    #[error("init spec needs at least one agent")]
    NoAgents,
    #[error("duplicate location name {0:?}")]
    DuplicateLocation(String),
    #[error("duplicate agent name {0:?}")]
    DuplicateAgent(String),
    #[error("{0:?} is both an agent and a descriptive entity")]
    AgentIsEntity(String),
    #[error("agent {agent} starts at unknown location {location:?}")]
    UnknownLocation { agent: String, location: String },
    #[error("{0} must not be empty")]
    Empty(String),
    #[error("invalid config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("cannot read init spec: {0}")]
    Read(String),
}

impl InitSpec {
    /// The two-agent desert world used by default.
    pub fn gracia() -> Self {
        let loc = |name: &str, description: &str| LocationSeed {
            name: name.into(),
            description: description.into(),
        };
        let agent = |name: &str, description: &str, location: &str| AgentSeed {
            name: name.into(),
            description: description.into(),
            location: location.into(),
        };
        Self {
            world_name: "Gracia".into(),
            start: ymd_hm(2027, 5, 18, 21, 0),
            environment: "Gracia is a desert world of shifting sand and scattered life. \
                An oasis holds the only reliable water, dunes move with every storm, \
                and a grove of coconut trees offers food and building material. \
                Its inhabitants are free to wander, build and change."
                .into(),
            story_objective: "Explore, interact with and discover the secrets of Gracia.".into(),
            locations: vec![
                loc("Oasis", "A fertile area in a desert containing water and vegetation."),
                loc("Dunes", "Shapeshifting dunes that move with the wind."),
                loc("Coconut Trees", "A grove of coconut trees that provides food and raw material."),
            ],
            agents: vec![
                agent(
                    "Lex",
                    "Air and ground-based creature who desires freedom. A fearless creature, bold and solitary. Lex can see clearly into far-off distances. Lex prefers movement and changes over being settled in one place. Lex is destructive and deviant, a calculated risk-taker.",
                    "Dunes",
                ),
                agent(
                    "Tortugi",
                    "Ground and water-based creature who desires connection. An altruistic creature, humble and grounded through relations. Tortugi can be present and take action to build the future they want. Tortugi seeks stillness, and security, to settle in one place. Tortugi is considered a creator.",
                    "Coconut Trees",
                ),
            ],
            descriptive_entities: Vec::new(),
            rules: None,
            config: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, InitError> {
        serde_json::from_str(text).map_err(|e| InitError::Read(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, InitError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| InitError::Read(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Builds a fresh world from `spec`. Agents start with one description and
/// an empty memory stream.
pub fn init_world(spec: &InitSpec, seed: u64) -> Result<WorldState, InitError> {
    for (field, value) in [
        ("world_name", &spec.world_name),
        ("environment", &spec.environment),
        ("story_objective", &spec.story_objective),
    ] {
        if value.trim().is_empty() {
            return Err(InitError::Empty(field.into()));
        }
    }
    if spec.locations.is_empty() {
        return Err(InitError::NoLocations);
    }
    if spec.agents.is_empty() {
        return Err(InitError::NoAgents);
    }
    let config = spec.config.clone().unwrap_or_default();
    let problems = config.problems();
    if !problems.is_empty() {
        return Err(InitError::Config(problems));
    }

    let mut locations = BTreeMap::new();
    for seed in &spec.locations {
        if seed.name.trim().is_empty() {
            return Err(InitError::Empty("location name".into()));
        }
        if seed.description.trim().is_empty() {
            return Err(InitError::Empty(format!("description of {}", seed.name)));
        }
        let location = Location::new(&seed.name, &seed.description, spec.start, Creator::Initial);
        if locations.insert(seed.name.clone(), location).is_some() {
            return Err(InitError::DuplicateLocation(seed.name.clone()));
        }
    }

    let mut agents = BTreeMap::new();
    for seed in &spec.agents {
        if seed.name.trim().is_empty() {
            return Err(InitError::Empty("agent name".into()));
        }
        if seed.description.trim().is_empty() {
            return Err(InitError::Empty(format!("description of {}", seed.name)));
        }
        if !locations.contains_key(&seed.location) {
            return Err(InitError::UnknownLocation {
                agent: seed.name.clone(),
                location: seed.location.clone(),
            });
        }
        let profile = AgentProfile::new(&seed.name, &seed.description, &seed.location, spec.start);
        if agents.insert(seed.name.clone(), profile).is_some() {
            return Err(InitError::DuplicateAgent(seed.name.clone()));
        }
    }

    let mut descriptive_entities = BTreeMap::new();
    for entity in &spec.descriptive_entities {
        if agents.contains_key(&entity.name) {
            return Err(InitError::AgentIsEntity(entity.name.clone()));
        }
        descriptive_entities.insert(entity.name.clone(), entity.text.clone());
    }

    Ok(WorldState {
        name: spec.world_name.clone(),
        clock: SimClock::new(spec.start),
        environment: spec.environment.clone(),
        story_objective: spec.story_objective.clone(),
        locations,
        agents,
        descriptive_entities,
        shifts: Vec::new(),
        rules: spec.rules.clone().unwrap_or_default(),
        rng_seed: seed,
        config,
        archive: Archive::default(),
    })
}
