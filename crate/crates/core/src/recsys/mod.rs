//! Recommenders that feed the sandbox, and the offline ranking metrics used
//! as the real-world reference.
//!
//! All recommenders share one ranking contract: descending score, then
//! ascending movie id; items the user rated in training are never returned
//! (the external adapter is a verbatim pass-through and is the exception).
//! A user the model has never seen gets the popularity order.

mod external;
mod fm;
mod metrics;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, Interaction, MovieId, UserId};
use crate::seed;

pub use external::ExternalLists;
pub use fm::{FeatureBlock, FmConfig, FmModel};
pub use metrics::{ndcg_at_k, recall_at_k};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum RecsysError {
    #[error("invalid recommender config: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyTrain,
    #[error("external list file {path}: {message}")]
    External { path: String, message: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecommenderKind {
    Random,
    Popularity,
    Fm,
    External,
}

/// What to fit: the kind plus its kind-specific settings.
#[derive(Debug, Clone, PartialEq)]
pub enum RecommenderSpec {
    Random,
    Popularity,
    Fm(FmConfig),
    External(ExternalLists),
}

impl RecommenderSpec {
    pub fn kind(&self) -> RecommenderKind {
        match self {
            RecommenderSpec::Random => RecommenderKind::Random,
            RecommenderSpec::Popularity => RecommenderKind::Popularity,
            RecommenderSpec::Fm(_) => RecommenderKind::Fm,
            RecommenderSpec::External(_) => RecommenderKind::External,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Model {
    Random { seed: u64 },
    Popularity,
    Fm(Box<FmModel>),
    External(ExternalLists),
}

/// A top-k slate for one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub user_id: UserId,
    pub items: Vec<MovieId>,
    pub scores: Vec<f64>,
    /// Set when fewer than the requested `k` items were available.
    #[serde(default)]
    pub short_list: bool,
}

impl RankedList {
    /// Builds a list from already-ordered items with descending rank scores.
    pub fn from_items(user_id: UserId, items: Vec<MovieId>) -> Self {
        let n = items.len();
        let scores = (0..n).map(|i| (n - i) as f64).collect();
        RankedList { user_id, items, scores, short_list: false }
    }
}

/// A fitted recommender. Immutable after [`Recommender::fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommender {
    model: Model,
    seen: BTreeMap<UserId, BTreeSet<MovieId>>,
    /// Per-movie training interaction counts, over the whole catalog.
    counts: BTreeMap<MovieId, u64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    kind: RecommenderKind,
    recommender: Recommender,
}

impl Recommender {
    pub fn fit(spec: &RecommenderSpec, catalog: &Catalog, train: &[Interaction], seed: u64) -> Result<Self, RecsysError> {
        if train.is_empty() && matches!(spec, RecommenderSpec::Popularity | RecommenderSpec::Fm(_)) {
            return Err(RecsysError::EmptyTrain);
        }
        let mut seen: BTreeMap<UserId, BTreeSet<MovieId>> = BTreeMap::new();
        let mut counts: BTreeMap<MovieId, u64> = catalog.movie_ids().into_iter().map(|m| (m, 0)).collect();
        for i in train {
            seen.entry(i.user_id).or_default().insert(i.movie_id);
            *counts.entry(i.movie_id).or_default() += 1;
        }
        let model = match spec {
            RecommenderSpec::Random => Model::Random { seed },
            RecommenderSpec::Popularity => Model::Popularity,
            RecommenderSpec::Fm(cfg) => Model::Fm(Box::new(FmModel::fit(cfg, catalog, train, seed)?)),
            RecommenderSpec::External(lists) => Model::External(lists.clone()),
        };
        Ok(Recommender { model, seen, counts })
    }

    pub fn kind(&self) -> RecommenderKind {
        match self.model {
            Model::Random { .. } => RecommenderKind::Random,
            Model::Popularity => RecommenderKind::Popularity,
            Model::Fm(_) => RecommenderKind::Fm,
            Model::External(_) => RecommenderKind::External,
        }
    }

    pub fn fm(&self) -> Option<&FmModel> {
        match &self.model {
            Model::Fm(m) => Some(m),
            _ => None,
        }
    }

    pub fn seen(&self, user: UserId) -> Option<&BTreeSet<MovieId>> {
        self.seen.get(&user)
    }

    /// Top `k` unseen movies for `user`.
    pub fn recommend(&self, user: UserId, k: usize) -> RankedList {
        let empty = BTreeSet::new();
        let seen = self.seen.get(&user).unwrap_or(&empty);
        let candidates: Vec<MovieId> = self.counts.keys().copied().filter(|m| !seen.contains(m)).collect();
        let scores: Vec<f64> = match &self.model {
            Model::Random { seed } => {
                let us = seed::derive(*seed, &[user.0 as u64]);
                candidates.iter().map(|m| seed::unit(seed::mix64(us ^ seed::mix64(m.0 as u64)))).collect()
            }
            Model::Fm(fm) if fm.knows_user(user) && self.seen.contains_key(&user) => fm.score_all(user, &candidates),
            Model::External(lists) => {
                if let Some(items) = lists.get(user) {
                    let items: Vec<MovieId> = items.iter().copied().take(k).collect();
                    let mut list = RankedList::from_items(user, items);
                    list.short_list = list.items.len() < k;
                    return list;
                }
                self.popularity_scores(&candidates)
            }
            _ => self.popularity_scores(&candidates),
        };
        top_k(user, candidates, scores, k)
    }

    fn popularity_scores(&self, candidates: &[MovieId]) -> Vec<f64> {
        candidates.iter().map(|m| self.counts[m] as f64).collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), RecsysError> {
        let ck = Checkpoint { format_version: CHECKPOINT_VERSION, kind: self.kind(), recommender: self.clone() };
        let body = serde_json::to_string(&ck).map_err(|e| RecsysError::Checkpoint(e.to_string()))?;
        fs::write(path, body).map_err(|source| RecsysError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, RecsysError> {
        let body = fs::read_to_string(path).map_err(|source| RecsysError::Io { path: path.display().to_string(), source })?;
        let ck: Checkpoint = serde_json::from_str(&body).map_err(|e| RecsysError::Checkpoint(e.to_string()))?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(RecsysError::Checkpoint(format!("unsupported format_version {}", ck.format_version)));
        }
        if ck.kind != ck.recommender.kind() {
            return Err(RecsysError::Checkpoint("kind does not match parameters".into()));
        }
        Ok(ck.recommender)
    }
}

fn top_k(user: UserId, candidates: Vec<MovieId>, scores: Vec<f64>, k: usize) -> RankedList {
    let mut pairs: Vec<(MovieId, f64)> = candidates.into_iter().zip(scores).collect();
    pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let short_list = pairs.len() < k;
    pairs.truncate(k);
    let (items, scores) = pairs.into_iter().unzip();
    RankedList { user_id: user, items, scores, short_list }
}
