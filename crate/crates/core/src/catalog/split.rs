use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{Catalog, CatalogError, Interaction, MovieId, UserId};

/// Per-user chronological train/valid/test partition.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<Interaction>,
    pub valid: Vec<Interaction>,
    pub test: Vec<Interaction>,
    #[serde(default)]
    pub warnings: Vec<SplitWarning>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitWarning {
    pub user_id: UserId,
    pub message: String,
}

const RATIO_EPS: f64 = 1e-9;

/// Splits every user's interactions oldest-first by `ratios`.
///
/// Counts are `floor(n * ratio)`; leftover interactions go to train first,
/// then valid, so any user with at least one interaction lands in train.
/// Equal timestamps keep file order.
pub fn chronological_split(catalog: &Catalog, ratios: (f64, f64, f64)) -> Result<DatasetSplit, CatalogError> {
    let (a, b, c) = ratios;
    if !(a > 0.0 && b > 0.0 && c > 0.0) {
        return Err(CatalogError::Ratios(format!("all ratios must be positive, got {ratios:?}")));
    }
    if ((a + b + c) - 1.0).abs() > 1e-6 {
        return Err(CatalogError::Ratios(format!("ratios must sum to 1, got {}", a + b + c)));
    }

    let mut per_user: BTreeMap<UserId, Vec<Interaction>> = BTreeMap::new();
    for it in catalog.interactions() {
        per_user.entry(it.user_id).or_default().push(*it);
    }
    let mut split = DatasetSplit::default();
    for u in catalog.users() {
        let Some(mut hist) = per_user.remove(&u.user_id) else {
            split.warnings.push(SplitWarning { user_id: u.user_id, message: "user has no interactions; skipped".into() });
            continue;
        };
        hist.sort_by_key(|i| i.timestamp);
        let n = hist.len();
        let (n_train, n_valid) = split_counts(n, ratios);
        split.train.extend_from_slice(&hist[..n_train]);
        split.valid.extend_from_slice(&hist[n_train..n_train + n_valid]);
        split.test.extend_from_slice(&hist[n_train + n_valid..]);
    }
    Ok(split)
}

/// (train, valid) counts for `n` interactions; test gets the rest.
fn split_counts(n: usize, (a, b, c): (f64, f64, f64)) -> (usize, usize) {
    let fl = |r: f64| ((n as f64) * r + RATIO_EPS).floor() as usize;
    let (mut tr, mut va, te) = (fl(a), fl(b), fl(c));
    let mut left = n - (tr + va + te).min(n);
    if left > 0 {
        tr += 1;
        left -= 1;
    }
    if left > 0 {
        va += 1;
        left -= 1;
    }
    tr += left;
    (tr, va)
}

impl DatasetSplit {
    pub fn all(&self) -> impl Iterator<Item = &Interaction> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }

    /// Train items per user, the "seen" sets for recommendation.
    pub fn train_seen(&self) -> BTreeMap<UserId, HashSet<MovieId>> {
        let mut out: BTreeMap<UserId, HashSet<MovieId>> = BTreeMap::new();
        for i in &self.train {
            out.entry(i.user_id).or_default().insert(i.movie_id);
        }
        out
    }

    /// Test items per user in chronological order.
    pub fn test_items(&self) -> BTreeMap<UserId, Vec<MovieId>> {
        let mut out: BTreeMap<UserId, Vec<MovieId>> = BTreeMap::new();
        for i in &self.test {
            let v = out.entry(i.user_id).or_default();
            if !v.contains(&i.movie_id) {
                v.push(i.movie_id);
            }
        }
        out
    }

    /// Train history per user, oldest first.
    pub fn train_by_user(&self) -> BTreeMap<UserId, Vec<Interaction>> {
        let mut out: BTreeMap<UserId, Vec<Interaction>> = BTreeMap::new();
        for i in &self.train {
            out.entry(i.user_id).or_default().push(*i);
        }
        out
    }

    /// Keeps the oldest `fraction` of each user's train interactions
    /// (at least one per user); valid and test are unchanged.
    pub fn train_prefix(&self, fraction: f64) -> DatasetSplit {
        let mut train = Vec::new();
        for (_, hist) in self.train_by_user() {
            let keep = (((hist.len() as f64) * fraction + RATIO_EPS).floor() as usize).clamp(1, hist.len());
            train.extend_from_slice(&hist[..keep]);
        }
        DatasetSplit { train, valid: self.valid.clone(), test: self.test.clone(), warnings: self.warnings.clone() }
    }
}
