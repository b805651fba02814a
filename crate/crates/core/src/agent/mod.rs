//! The simulated user: profile, fatigue, policies and the session loop.

mod fatigue;
mod llm;
mod profile;
mod rule;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::catalog::{ActivityTrait, MovieId};
use crate::memory::{
    Consolidation, EmbedInput, EmbeddingProvider, InterfaceType, MemoryError, MemoryRecord, MemoryStore, Modality, Query, ShortTermEntry,
    ShortTermMemory,
};
use crate::recsys::RankedList;
use crate::sandbox::{format_kinds, Action, ActionKind, Event, Observation, Sandbox, SandboxError, SessionHeader, SessionState, TerminationReason};

pub use fatigue::{apply_fatigue, fatigue_cost, ActionCosts, FatigueConfig, FatigueState, PRESETS};
pub use llm::{parse_decision, snake, ChatClient, ChatMessage, LlmPolicy, PromptTemplate, TextGenerator};
pub use profile::{build_preference_summary, fallback_summary, PreferenceSummary, Profile, NOT_FOUND, SECTIONS};
pub use rule::{interest_from_score, RuleConfig, RulePolicy};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("config: {0}")]
    Config(String),
    #[error("interest {value} outside [{min}, {max}]")]
    Interest { value: u8, min: u8, max: u8 },
    #[error("negative fatigue cost {0}")]
    NegativeCost(f64),
    #[error("unusable reply: {0}")]
    Reply(String),
    #[error("text generation failed: {0}")]
    Transport(String),
    #[error("policy chose {attempted}, legal set was {legal}")]
    Illegal { attempted: String, legal: String },
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error("session {session}")]
    Session {
        session: String,
        #[source]
        source: Box<AgentError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Rule,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub action: Action,
    pub interest: u8,
    pub explanation: String,
}

/// Everything a policy sees when choosing one action.
pub struct DecisionInput<'a> {
    pub profile: &'a Profile,
    pub observation: &'a Observation,
    pub short_term: &'a ShortTermMemory,
    pub retrieved: &'a [(MemoryRecord, f64)],
    pub fatigue: &'a FatigueState,
    pub fatigue_config: &'a FatigueConfig,
    pub legal: &'a BTreeSet<ActionKind>,
    /// Per-session seed; policies derive their randomness from it.
    pub seed: u64,
    pub vision: bool,
    pub image: Option<&'a dyn EmbeddingProvider>,
    /// Trait shift in interest units; positive means harder to please.
    pub threshold_offset: f64,
}

pub trait Policy: Send + Sync {
    fn kind(&self) -> PolicyKind;
    fn decide(&self, input: &DecisionInput<'_>) -> Result<Decision, AgentError>;
}

/// Engagement parameters attached to an activity trait.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivityParams {
    pub budget_multiplier: f64,
    /// Added to the watch threshold and, divided by 4, to the click threshold.
    pub threshold_offset: f64,
}

pub fn activity_profile(t: ActivityTrait) -> ActivityParams {
    match t {
        ActivityTrait::Low => ActivityParams { budget_multiplier: 0.7, threshold_offset: 0.5 },
        ActivityTrait::Medium => ActivityParams { budget_multiplier: 1.0, threshold_offset: 0.0 },
        ActivityTrait::High => ActivityParams { budget_multiplier: 1.5, threshold_offset: -0.5 },
    }
}

/// Shared, read-only inputs for running sessions.
pub struct SessionContext<'a> {
    pub sandbox: &'a Sandbox<'a>,
    pub policy: &'a dyn Policy,
    pub memory: &'a dyn MemoryStore,
    pub text: &'a dyn EmbeddingProvider,
    /// Image provider; ignored when the sandbox has vision disabled.
    pub image: Option<&'a dyn EmbeddingProvider>,
    pub fatigue: &'a FatigueConfig,
    pub retrieval_k: usize,
    /// Apply the profile's activity-trait parameters.
    pub use_traits: bool,
}

/// One policy decision as it was charged and executed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: u32,
    pub interface: InterfaceType,
    pub legal: Vec<ActionKind>,
    pub decision: Decision,
    pub cost: f64,
    pub fatigue_after: f64,
    pub retrieved: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOutcome {
    pub state: SessionState,
    pub fatigue: FatigueState,
    pub short_term: ShortTermMemory,
    pub trace: Vec<TraceStep>,
    /// Long-term records produced by consolidation; the caller persists them.
    pub new_records: Vec<MemoryRecord>,
}

impl SessionOutcome {
    pub fn events(&self) -> &[Event] {
        &self.state.events
    }
}

fn retrieve(ctx: &SessionContext<'_>, user: crate::catalog::UserId, obs: &Observation, vision: bool) -> Result<Vec<(MemoryRecord, f64)>, AgentError> {
    if ctx.retrieval_k == 0 || ctx.memory.count(user) == 0 {
        return Ok(Vec::new());
    }
    let mut out = ctx
        .memory
        .retrieve(user, &Query { modality: Modality::Text, embedding: ctx.text.embed(EmbedInput::Text(&obs.render()))?, top_k: ctx.retrieval_k })?;
    if let (true, Some(img)) = (vision, ctx.image) {
        for p in obs.poster_refs() {
            let q = Query { modality: Modality::Image, embedding: img.embed(EmbedInput::Asset(p))?, top_k: 1 };
            out.extend(ctx.memory.retrieve(user, &q)?);
        }
    }
    Ok(out)
}

/// Runs one session to termination and returns its log, final fatigue and
/// the records to add to long-term memory.
pub fn run_session(
    ctx: &SessionContext<'_>,
    profile: &Profile,
    header: SessionHeader,
    ranked: RankedList,
    seed: u64,
) -> Result<SessionOutcome, AgentError> {
    let session = header.session_id.clone();
    run_inner(ctx, profile, header, ranked, seed).map_err(|e| AgentError::Session { session, source: Box::new(e) })
}

fn run_inner(
    ctx: &SessionContext<'_>,
    profile: &Profile,
    header: SessionHeader,
    ranked: RankedList,
    seed: u64,
) -> Result<SessionOutcome, AgentError> {
    ctx.fatigue.validate()?;
    let params = if ctx.use_traits { activity_profile(profile.activity_trait) } else { activity_profile(ActivityTrait::Medium) };
    let fatigue_config = ctx.fatigue.with_budget_multiplier(params.budget_multiplier);
    let vision = ctx.sandbox.config().vision_enabled;
    let image = if vision { ctx.image } else { None };
    let (mut state, mut obs) = ctx.sandbox.start_session(header, ranked)?;
    let mut fatigue = FatigueState::new(fatigue_config.budget);
    let mut short_term = ShortTermMemory::new();
    let mut trace = Vec::new();

    while !state.is_terminated() {
        if fatigue.exhausted() {
            ctx.sandbox.force_exit(&mut state, TerminationReason::FatigueExhausted)?;
            break;
        }
        let legal = ctx.sandbox.legal_actions(&state);
        let retrieved = retrieve(ctx, profile.user_id, &obs, vision)?;
        let input = DecisionInput {
            profile,
            observation: &obs,
            short_term: &short_term,
            retrieved: &retrieved,
            fatigue: &fatigue,
            fatigue_config: &fatigue_config,
            legal: &legal,
            seed,
            vision,
            image,
            threshold_offset: params.threshold_offset,
        };
        let decision = ctx.policy.decide(&input)?;
        if !legal.contains(&decision.action.kind()) {
            return Err(AgentError::Illegal { attempted: decision.action.kind().to_string(), legal: format_kinds(&legal) });
        }
        let cost = fatigue_cost(&fatigue_config, decision.action.kind(), decision.interest)?;
        fatigue = apply_fatigue(fatigue, cost)?;
        let (interface, movie_id) = match (&obs, decision.action) {
            (Observation::Home(_), Action::Click { movie_id }) => (InterfaceType::Home, Some(movie_id)),
            (Observation::Home(_), _) => (InterfaceType::Home, None),
            (Observation::Detail(d), _) => (InterfaceType::Detail, Some(d.movie.movie_id)),
        };
        let step = state.step_count + 1;
        let summary = summarize(&obs);
        let (next, _) = ctx.sandbox.step(&mut state, decision.action)?;
        short_term.append(ShortTermEntry {
            step,
            interface_type: interface,
            observation_summary: summary,
            interest: decision.interest,
            action_taken: decision.action,
            movie_id,
        })?;
        trace.push(TraceStep {
            step,
            interface,
            legal: legal.into_iter().collect(),
            decision,
            cost,
            fatigue_after: fatigue.accumulated,
            retrieved: retrieved.iter().map(|(r, _)| r.payload.clone()).collect(),
        });
        tracing::trace!(step, fatigue = %fatigue.reading(), "step");
        obs = next;
    }

    let new_records = short_term.consolidate(&Consolidation {
        catalog: ctx.sandbox.catalog(),
        user_id: profile.user_id,
        session_id: &state.header.session_id,
        start_time: state.header.start_time,
        text: ctx.text,
        image,
    })?;
    Ok(SessionOutcome { state, fatigue, short_term, trace, new_records })
}

fn summarize(obs: &Observation) -> String {
    match obs {
        Observation::Home(h) => {
            let titles: Vec<&str> = h.cards.iter().map(|c| c.title.as_str()).collect();
            format!("home page {}: {}", h.page_index + 1, titles.join("; "))
        }
        Observation::Detail(d) => format!("detail: {}", d.movie.title),
    }
}

/// Clicked movies in a finished session, in click order.
pub fn clicked(outcome: &SessionOutcome) -> Vec<MovieId> {
    outcome
        .short_term
        .entries()
        .iter()
        .filter_map(|e| match e.action_taken {
            Action::Click { movie_id } => Some(movie_id),
            _ => None,
        })
        .collect()
}
