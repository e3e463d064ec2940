use serde::{Deserialize, Serialize};

/// Weights for ranking memories when building prompt context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalWeights {
    pub recency: f64,
    pub poignancy: f64,
    pub keyword: f64,
    /// Recency decays as `exp(-age_in_ticks / half_life_ticks)`.
    pub half_life_ticks: f64,
}

impl Default for RetrievalWeights {
    fn default() -> Self {
        Self {
            recency: 0.5,
            poignancy: 0.3,
            keyword: 0.2,
            half_life_ticks: 24.0,
        }
    }
}

/// Tunables for the simulation loop. Stored inside the world so a snapshot
/// fully determines how a resumed run behaves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Reflection fires once the since-marker poignancy sum exceeds this.
    pub reflection_threshold: u32,
    /// Per agent-tick probability of a character rewrite.
    pub p_mutation: f64,
    /// Per agent-tick probability of building a new location.
    pub p_location: f64,
    /// Per co-located pair-tick probability of an agent dialogue.
    pub p_agent_dialogue: f64,
    pub max_agent_dialogue_turns: u32,
    pub shift_jump_years: u32,
    pub jitter_days: u32,
    /// Sleep between ticks when running paced. Zero disables pacing.
    pub real_time_pacing_ms: u64,
    /// How many memories are pulled into each agent prompt.
    pub context_budget: usize,
    pub retrieval: RetrievalWeights,
    /// Display label of the human participant in dialogue sessions.
    pub human_label: String,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            reflection_threshold: 100,
            p_mutation: 0.05,
            p_location: 0.08,
            p_agent_dialogue: 0.25,
            max_agent_dialogue_turns: 8,
            shift_jump_years: 2,
            jitter_days: 90,
            real_time_pacing_ms: 0,
            context_budget: 8,
            retrieval: RetrievalWeights::default(),
            human_label: "Grace".to_string(),
        }
    }
}

impl EngineConfig {
    /// Human-readable descriptions of every broken constraint.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, p) in [
            ("p_mutation", self.p_mutation),
            ("p_location", self.p_location),
            ("p_agent_dialogue", self.p_agent_dialogue),
        ] {
            if !(0.0..=1.0).contains(&p) {
                out.push(format!("{name} = {p} is outside [0, 1]"));
            }
        }
        if self.reflection_threshold == 0 {
            out.push("reflection_threshold must be at least 1".into());
        }
        if self.max_agent_dialogue_turns == 0 {
            out.push("max_agent_dialogue_turns must be at least 1".into());
        }
        if self.shift_jump_years == 0 {
            out.push("shift_jump_years must be at least 1".into());
        }
        if self.context_budget == 0 {
            out.push("context_budget must be at least 1".into());
        }
        let w = &self.retrieval;
        if w.half_life_ticks.is_nan() || w.half_life_ticks <= 0.0 {
            out.push("retrieval.half_life_ticks must be positive".into());
        }
        if [w.recency, w.poignancy, w.keyword]
            .iter()
            .any(|x| !x.is_finite() || *x < 0.0)
        {
            out.push("retrieval weights must be finite and non-negative".into());
        }
        if self.human_label.trim().is_empty() {
            out.push("human_label must not be empty".into());
        }
        out
    }
}
