//! Experiments: A/B arms over a shared cohort, alignment studies, metrics
//! and augmentation export.

mod config;
mod experiment;
mod export;
mod metrics;
mod studies;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{
    run_session, AgentError, FatigueConfig, FatigueState, LlmPolicy, Policy, PolicyKind, Profile, PromptTemplate, RulePolicy, SessionContext,
    SessionOutcome, TextGenerator, TraceStep,
};
use crate::catalog::{Catalog, CatalogError, Interaction, UserId};
use crate::memory::{seed_from_history, DeterministicEmbedder, EmbeddingProvider, LongTermMemory, MemoryError, RemoteConfig, RemoteEmbedder};
use crate::recsys::{RankedList, RecsysError};
use crate::sandbox::{Sandbox, SessionHeader, TerminationReason};
use crate::seed;

pub use config::{ArmSpec, CohortSpec, EmbedderKind, ExperimentConfig, FatigueSpec, MemorySpec, MetricSpec, PolicySpec, SeedSpec};
pub use experiment::{render_table, run_experiment, write_report, write_summary_csv, ArmReport, RunOptions, SimulationReport};
pub use export::{augmented_records, load_traces, write_augmented, AugmentedRecord, ExportCounts, ExportFormat, Signal, CLICK_IMPLIED_RATING};
pub use metrics::{compute_metrics, kendall_tau, offline_eval, CvrDefinition, Metrics, OfflineMetrics};
pub use studies::{
    activity_trait_study, compose_taste_list, ks_two_sample, taste_alignment_study, ActivityConfig, ActivityReport, GroupReport, KsResult,
    RatioReport, TasteConfig, TasteReport,
};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("parse: {0}")]
    Parse(String),
    #[error("i/o error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no eligible users: {0}")]
    NoEligibleUsers(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Recsys(#[from] RecsysError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.display().to_string(), source }
    }
}

/// Embedding and text-generation providers shared by every session.
pub struct Resources {
    pub text: Box<dyn EmbeddingProvider>,
    pub image: Option<Box<dyn EmbeddingProvider>>,
    pub generator: Option<Arc<dyn TextGenerator>>,
}

/// Sorted distinct genre names in the catalog.
pub fn catalog_genres(catalog: &Catalog) -> Vec<String> {
    let set: BTreeSet<&String> = catalog.movies().flat_map(|m| m.genres.iter()).collect();
    set.into_iter().cloned().collect()
}

impl Resources {
    /// Deterministic embedders and no text generator.
    pub fn offline(catalog: &Catalog) -> Self {
        let genres = catalog_genres(catalog);
        let image = DeterministicEmbedder { seed: 0x1a6e, ..DeterministicEmbedder::new(genres.clone()) };
        Resources { text: Box::new(DeterministicEmbedder::new(genres)), image: Some(Box::new(image)), generator: None }
    }

    /// Providers named by the config; remote ones read their endpoints from
    /// the environment.
    pub fn from_config(memory: &MemorySpec, policy: &PolicySpec, catalog: &Catalog) -> Result<Self, HarnessError> {
        let mut res = match memory.embedder {
            EmbedderKind::Deterministic => Resources::offline(catalog),
            EmbedderKind::Remote => {
                let cfg = RemoteConfig::from_env(memory.dimension)?;
                Resources { text: Box::new(RemoteEmbedder::text(cfg.clone())), image: Some(Box::new(RemoteEmbedder::image(cfg))), generator: None }
            }
        };
        if policy.kind == PolicyKind::Llm {
            res.generator = Some(Arc::new(crate::agent::ChatClient::from_env()?));
        }
        Ok(res)
    }

    fn image(&self) -> Option<&dyn EmbeddingProvider> {
        self.image.as_deref()
    }
}

pub fn build_policy(spec: &PolicySpec, res: &Resources) -> Result<Box<dyn Policy>, HarnessError> {
    Ok(match spec.kind {
        PolicyKind::Rule => Box::new(RulePolicy::new(spec.rule.clone())),
        PolicyKind::Llm => {
            let generator = res.generator.clone().ok_or_else(|| HarnessError::Config("llm policy needs a text generator".into()))?;
            let mut p = LlmPolicy::new(generator);
            p.retry_budget = spec.retry_budget;
            if let Some(t) = &spec.template {
                p.template = PromptTemplate::load(t)?;
            }
            Box::new(p)
        }
    })
}

/// Builds one profile per user from training history, in parallel.
pub fn build_profiles(
    catalog: &Catalog,
    users: &[UserId],
    history: &BTreeMap<UserId, Vec<Interaction>>,
    res: &Resources,
    vision: bool,
) -> Result<BTreeMap<UserId, Profile>, HarnessError> {
    let template = PromptTemplate::preference();
    let built: Result<Vec<(UserId, Profile)>, AgentError> = users
        .par_iter()
        .map(|&u| {
            let hist = history.get(&u).map(Vec::as_slice).unwrap_or(&[]);
            let generator = res.generator.as_deref().map(|g| (g, &template));
            let image = if vision { res.image() } else { None };
            Profile::build(catalog, u, hist, generator, image).map(|p| (u, p))
        })
        .collect();
    Ok(built?.into_iter().collect())
}

/// Per-session audit line written beside the event stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub user_id: UserId,
    pub arm_id: String,
    pub session_index: u32,
    pub seed: u64,
    pub terminated: Option<TerminationReason>,
    pub fatigue: FatigueState,
    pub clicks: usize,
    pub trace: Vec<TraceStep>,
}

impl SessionSummary {
    fn new(outcome: &SessionOutcome, session_index: u32, seed: u64) -> Self {
        let h = &outcome.state.header;
        SessionSummary {
            session_id: h.session_id.clone(),
            user_id: h.user_id,
            arm_id: h.arm_id.clone(),
            session_index,
            seed,
            terminated: outcome.state.terminated,
            fatigue: outcome.fatigue,
            clicks: crate::agent::clicked(outcome).len(),
            trace: outcome.trace.clone(),
        }
    }
}

/// Everything needed to simulate users against ranked lists.
pub(crate) struct Simulator<'a> {
    pub catalog: &'a Catalog,
    pub sandbox: Sandbox<'a>,
    pub policy: &'a dyn Policy,
    pub res: &'a Resources,
    pub fatigue: FatigueConfig,
    pub memory: MemorySpec,
    pub use_traits: bool,
    pub history: &'a BTreeMap<UserId, Vec<Interaction>>,
}

/// Session seed shared by every arm, so arms differ only in their lists.
pub fn session_seed(master: u64, user: UserId, session_index: u32) -> u64 {
    seed::derive(master, &[user.0 as u64, session_index as u64])
}

impl Simulator<'_> {
    fn vision(&self) -> bool {
        self.sandbox.config().vision_enabled
    }

    fn seeded_store(&self, user: UserId) -> Result<LongTermMemory, HarnessError> {
        let mut store = LongTermMemory::default();
        if self.memory.seed_history {
            if let Some(h) = self.history.get(&user) {
                let image = if self.vision() { self.res.image() } else { None };
                seed_from_history(&mut store, self.catalog, h, self.res.text.as_ref(), image)?;
            }
        }
        Ok(store)
    }

    /// Runs `sessions` consecutive sessions for one user; long-term memory
    /// carries over between them.
    pub fn run_user(
        &self,
        profile: &Profile,
        arm: &str,
        list: &RankedList,
        sessions: u32,
        master: u64,
    ) -> Result<Vec<(SessionOutcome, SessionSummary)>, HarnessError> {
        let mut store = self.seeded_store(profile.user_id)?;
        let start = self.catalog.max_timestamp() + 1;
        let mut out = Vec::with_capacity(sessions as usize);
        for s in 0..sessions {
            let seed = session_seed(master, profile.user_id, s);
            let header = SessionHeader {
                session_id: format!("{arm}-u{}-s{s}", profile.user_id),
                user_id: profile.user_id,
                arm_id: arm.to_string(),
                start_time: start + s as i64 * 86_400,
            };
            let outcome = {
                let ctx = SessionContext {
                    sandbox: &self.sandbox,
                    policy: self.policy,
                    memory: &store,
                    text: self.res.text.as_ref(),
                    image: self.res.image(),
                    fatigue: &self.fatigue,
                    retrieval_k: self.memory.retrieval_k,
                    use_traits: self.use_traits,
                };
                run_session(&ctx, profile, header, list.clone(), seed)?
            };
            store.extend(outcome.new_records.clone())?;
            let summary = SessionSummary::new(&outcome, s, seed);
            out.push((outcome, summary));
        }
        Ok(out)
    }
}

/// Runs `f` on a pool of `workers` threads, or on the global pool.
pub(crate) fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, HarnessError> {
    match workers {
        Some(n) => {
            let pool =
                rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build().map_err(|e| HarnessError::Config(format!("worker pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}
