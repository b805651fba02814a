//! Taste-alignment and activity-trait studies.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    build_policy, build_profiles, compute_metrics, with_workers, ArmSpec, CvrDefinition, FatigueSpec, HarnessError, MemorySpec, Metrics, PolicySpec,
    Resources, Simulator,
};
use crate::catalog::{ActivityTrait, Catalog, DatasetSplit, MovieId, UserId};
use crate::recsys::{RankedList, Recommender, RecommenderKind};
use crate::sandbox::{Sandbox, SandboxConfig};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TasteConfig {
    /// Positive-to-negative ratios.
    pub ratios: Vec<(u32, u32)>,
    /// Also run an all-negative list.
    pub control: bool,
    pub list_size: usize,
    pub seed: u64,
    pub sample: Option<usize>,
    pub policy: PolicySpec,
    pub fatigue: FatigueSpec,
    pub sandbox: SandboxConfig,
    pub memory: MemorySpec,
    pub cvr: CvrDefinition,
    pub workers: Option<usize>,
}

impl Default for TasteConfig {
    fn default() -> Self {
        TasteConfig {
            ratios: vec![(1, 9), (1, 4), (1, 1)],
            control: true,
            list_size: 20,
            seed: 0,
            sample: None,
            policy: PolicySpec::default(),
            fatigue: FatigueSpec::default(),
            sandbox: SandboxConfig::default(),
            memory: MemorySpec::default(),
            cvr: CvrDefinition::default(),
            workers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub label: String,
    pub positives: usize,
    pub negatives: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TasteReport {
    pub eligible_users: usize,
    /// Users with too few held-out positives for the largest ratio, or too
    /// few unseen movies for the largest negative count.
    pub skipped_users: usize,
    pub ratios: Vec<RatioReport>,
}

impl TasteReport {
    pub fn ratio(&self, label: &str) -> Option<&RatioReport> {
        self.ratios.iter().find(|r| r.label == label)
    }
}

fn positives_for(size: usize, (p, n): (u32, u32)) -> usize {
    if p + n == 0 {
        return 0;
    }
    ((size as f64) * p as f64 / (p + n) as f64).round() as usize
}

/// A shuffled list of `n_pos` items from `positives` and `size - n_pos`
/// uniform negatives from movies outside `history`. Returns `None` when
/// either pool is too small.
pub fn compose_taste_list(
    positives: &[MovieId],
    history: &BTreeSet<MovieId>,
    movies: &[MovieId],
    n_pos: usize,
    size: usize,
    seed: u64,
) -> Option<Vec<MovieId>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if positives.len() < n_pos || n_pos > size {
        return None;
    }
    let negatives: Vec<MovieId> = movies.iter().copied().filter(|m| !history.contains(m)).collect();
    if negatives.len() < size - n_pos {
        return None;
    }
    let mut list: Vec<MovieId> = positives.choose_multiple(&mut rng, n_pos).copied().collect();
    list.extend(negatives.choose_multiple(&mut rng, size - n_pos).copied());
    list.shuffle(&mut rng);
    Some(list)
}

fn sample_users(mut users: Vec<UserId>, sample: Option<usize>, seed: u64, tag: &str) -> Vec<UserId> {
    if let Some(n) = sample {
        if n < users.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[seed::hash_str(tag)]));
            users.shuffle(&mut rng);
            users.truncate(n);
            users.sort();
        }
    }
    users
}

/// Simulates every eligible user once per ratio on a list mixing held-out
/// positives (validation and test interactions) with unseen negatives.
pub fn taste_alignment_study(catalog: &Catalog, split: &DatasetSplit, cfg: &TasteConfig, res: &Resources) -> Result<TasteReport, HarnessError> {
    if cfg.list_size < cfg.sandbox.page_size {
        return Err(HarnessError::Config("list_size must cover one page".into()));
    }
    let mut ratios = cfg.ratios.clone();
    if cfg.control {
        ratios.insert(0, (0, 1));
    }
    let need = ratios.iter().map(|r| positives_for(cfg.list_size, *r)).max().unwrap_or(0);
    let mut held: BTreeMap<UserId, BTreeSet<MovieId>> = BTreeMap::new();
    for i in split.valid.iter().chain(&split.test) {
        held.entry(i.user_id).or_default().insert(i.movie_id);
    }
    let mut full: BTreeMap<UserId, BTreeSet<MovieId>> = BTreeMap::new();
    for i in catalog.interactions() {
        full.entry(i.user_id).or_default().insert(i.movie_id);
    }
    let history = split.train_by_user();
    let candidates: Vec<UserId> = history.keys().copied().collect();
    let candidates = sample_users(candidates, cfg.sample, cfg.seed, "taste");
    let movies = catalog.movie_ids();
    let max_neg = ratios.iter().map(|r| cfg.list_size - positives_for(cfg.list_size, *r).min(cfg.list_size)).max().unwrap_or(0);
    let eligible: Vec<UserId> = candidates
        .iter()
        .copied()
        .filter(|u| held.get(u).map_or(0, BTreeSet::len) >= need && movies.len() - full.get(u).map_or(0, BTreeSet::len) >= max_neg)
        .collect();
    if eligible.is_empty() {
        return Err(HarnessError::NoEligibleUsers(format!("no user has {need} held-out positives and {max_neg} unseen movies")));
    }
    let skipped = candidates.len() - eligible.len();
    let policy = build_policy(&cfg.policy, res)?;
    let fatigue = cfg.fatigue.resolve()?;
    let sandbox_cfg = SandboxConfig { k: cfg.list_size, ..cfg.sandbox.clone() };

    let per_ratio = with_workers(cfg.workers, || -> Result<Vec<RatioReport>, HarnessError> {
        let profiles = build_profiles(catalog, &eligible, &history, res, sandbox_cfg.vision_enabled)?;
        let sim = Simulator {
            catalog,
            sandbox: Sandbox::new(catalog, sandbox_cfg.clone()),
            policy: policy.as_ref(),
            res,
            fatigue,
            memory: cfg.memory.clone(),
            use_traits: cfg.policy.use_traits,
            history: &history,
        };
        let mut out = Vec::new();
        for (ri, &ratio) in ratios.iter().enumerate() {
            let n_pos = positives_for(cfg.list_size, ratio);
            let label = format!("{}:{}", ratio.0, ratio.1);
            let runs: Vec<_> = eligible
                .par_iter()
                .map(|u| {
                    let pos: Vec<MovieId> = held[u].iter().copied().collect();
                    let list_seed = seed::derive(cfg.seed, &[u.0 as u64, ri as u64, seed::hash_str(&label)]);
                    let items = compose_taste_list(&pos, &full[u], &movies, n_pos, cfg.list_size, list_seed)
                        .ok_or_else(|| HarnessError::NoEligibleUsers(format!("user {u}: not enough negatives")))?;
                    let list = RankedList::from_items(*u, items);
                    sim.run_user(&profiles[u], &format!("taste-{label}"), &list, 1, cfg.seed)
                })
                .collect::<Result<_, HarnessError>>()?;
            let events: Vec<_> = runs.into_iter().flatten().flat_map(|(o, _)| o.state.events).collect();
            out.push(RatioReport { label, positives: n_pos, negatives: cfg.list_size - n_pos, metrics: compute_metrics(&events, cfg.cvr) });
        }
        Ok(out)
    })??;
    Ok(TasteReport { eligible_users: eligible.len(), skipped_users: skipped, ratios: per_ratio })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActivityConfig {
    pub seed: u64,
    pub sample: Option<usize>,
    /// Recommender producing each user's list.
    pub arm: ArmSpec,
    pub sessions_per_user: u32,
    /// Keep the three groups but give everyone the medium trait.
    pub null_config: bool,
    pub policy: PolicySpec,
    pub fatigue: FatigueSpec,
    pub sandbox: SandboxConfig,
    pub memory: MemorySpec,
    pub workers: Option<usize>,
}

impl Default for ActivityConfig {
    fn default() -> Self {
        ActivityConfig {
            seed: 0,
            sample: None,
            arm: ArmSpec::new("popularity", RecommenderKind::Popularity),
            sessions_per_user: 1,
            null_config: false,
            policy: PolicySpec::default(),
            fatigue: FatigueSpec::default(),
            sandbox: SandboxConfig::default(),
            memory: MemorySpec::default(),
            workers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    /// The trait this group was assigned; under the null configuration
    /// every group actually runs as medium.
    pub group: ActivityTrait,
    pub users: usize,
    pub sessions: usize,
    pub mean_clicks: f64,
    /// `histogram[c]` counts sessions with exactly `c` clicks.
    pub histogram: Vec<u64>,
    pub clicks: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub a: ActivityTrait,
    pub b: ActivityTrait,
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityReport {
    pub groups: Vec<GroupReport>,
    pub ks: Vec<KsResult>,
}

impl ActivityReport {
    pub fn group(&self, t: ActivityTrait) -> Option<&GroupReport> {
        self.groups.iter().find(|g| g.group == t)
    }

    pub fn means(&self) -> Vec<f64> {
        self.groups.iter().map(|g| g.mean_clicks).collect()
    }
}

/// Splits the cohort into three seeded, equal-sized trait groups and
/// records the per-session click distribution of each.
pub fn activity_trait_study(catalog: &Catalog, split: &DatasetSplit, cfg: &ActivityConfig, res: &Resources) -> Result<ActivityReport, HarnessError> {
    let history = split.train_by_user();
    let users = sample_users(history.keys().copied().collect(), cfg.sample, cfg.seed, "activity");
    if users.len() < 3 {
        return Err(HarnessError::NoEligibleUsers(format!("need at least 3 users, have {}", users.len())));
    }
    let mut shuffled = users.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, &[seed::hash_str("traits")])));
    let group_of: BTreeMap<UserId, ActivityTrait> = shuffled.iter().enumerate().map(|(i, u)| (*u, ActivityTrait::ALL[i % 3])).collect();
    let catalog =
        catalog.with_traits(|u| if cfg.null_config { ActivityTrait::Medium } else { group_of.get(&u.user_id).copied().unwrap_or_default() });

    let spec = cfg.arm.recommender_spec(std::path::Path::new("."), cfg.sandbox.page_size)?;
    let train = if cfg.arm.train_fraction < 1.0 { split.train_prefix(cfg.arm.train_fraction).train } else { split.train.clone() };
    let rec = Recommender::fit(&spec, &catalog, &train, seed::derive(cfg.seed, &[seed::hash_str("fit")]))?;
    let policy = build_policy(&cfg.policy, res)?;
    let fatigue = cfg.fatigue.resolve()?;

    let clicks: Vec<(UserId, Vec<u64>)> = with_workers(cfg.workers, || -> Result<_, HarnessError> {
        let profiles = build_profiles(&catalog, &users, &history, res, cfg.sandbox.vision_enabled)?;
        let sim = Simulator {
            catalog: &catalog,
            sandbox: Sandbox::new(&catalog, cfg.sandbox.clone()),
            policy: policy.as_ref(),
            res,
            fatigue,
            memory: cfg.memory.clone(),
            use_traits: true,
            history: &history,
        };
        users
            .par_iter()
            .filter_map(|u| {
                let list = rec.recommend(*u, cfg.sandbox.k);
                if list.items.len() < cfg.sandbox.page_size {
                    return None;
                }
                Some(
                    sim.run_user(&profiles[u], "activity", &list, cfg.sessions_per_user, cfg.seed)
                        .map(|runs| (*u, runs.iter().map(|(_, s)| s.clicks as u64).collect())),
                )
            })
            .collect()
    })??;

    let mut groups = Vec::new();
    for t in ActivityTrait::ALL {
        let mine: Vec<&(UserId, Vec<u64>)> = clicks.iter().filter(|(u, _)| group_of[u] == t).collect();
        let all: Vec<u64> = mine.iter().flat_map(|(_, c)| c.iter().copied()).collect();
        let mut histogram = vec![0u64; all.iter().copied().max().map_or(0, |m| m as usize + 1)];
        for &c in &all {
            histogram[c as usize] += 1;
        }
        let mean = if all.is_empty() { 0.0 } else { all.iter().sum::<u64>() as f64 / all.len() as f64 };
        groups.push(GroupReport { group: t, users: mine.len(), sessions: all.len(), mean_clicks: mean, histogram, clicks: all });
    }
    let mut ks = Vec::new();
    for i in 0..3 {
        for j in i + 1..3 {
            let a: Vec<f64> = groups[i].clicks.iter().map(|&c| c as f64).collect();
            let b: Vec<f64> = groups[j].clicks.iter().map(|&c| c as f64).collect();
            let (statistic, p_value) = ks_two_sample(&a, &b);
            ks.push(KsResult { a: groups[i].group, b: groups[j].group, statistic, p_value });
        }
    }
    Ok(ActivityReport { groups, ks })
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
/// Ties are handled by evaluating both empirical CDFs after each distinct
/// value. Empty samples give `(0, 1)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    if a.is_empty() || b.is_empty() {
        return (0.0, 1.0);
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < x.len() && j < y.len() {
        let v = x[i].min(y[j]);
        while i < x.len() && x[i] <= v {
            i += 1;
        }
        while j < y.len() && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let en = (n * m / (n + m)).sqrt();
    (d, kolmogorov_q((en + 0.12 + 0.11 / en) * d))
}

/// Survival function of the Kolmogorov distribution.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-12 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_identical_and_disjoint() {
        let a: Vec<f64> = (0..50).map(|i| (i % 7) as f64).collect();
        let (d, p) = ks_two_sample(&a, &a);
        assert_eq!(d, 0.0);
        assert_eq!(p, 1.0);
        let b: Vec<f64> = a.iter().map(|x| x + 100.0).collect();
        let (d, p) = ks_two_sample(&a, &b);
        assert_eq!(d, 1.0);
        assert!(p < 1e-6);
    }

    #[test]
    fn ks_statistic_matches_brute_force() {
        let a = [1.0, 2.0, 2.0, 3.0, 5.0];
        let b = [2.0, 2.0, 4.0, 4.0, 6.0, 7.0];
        let cdf = |s: &[f64], t: f64| s.iter().filter(|&&v| v <= t).count() as f64 / s.len() as f64;
        let brute = a.iter().chain(&b).map(|&t| (cdf(&a, t) - cdf(&b, t)).abs()).fold(0.0, f64::max);
        assert!((ks_two_sample(&a, &b).0 - brute).abs() < 1e-12);
    }

    #[test]
    fn kolmogorov_reference_points() {
        // Q(1.36) is the familiar 5% critical value; Q(1.63) the 1% one.
        assert!((kolmogorov_q(1.36) - 0.049).abs() < 1e-3);
        assert!((kolmogorov_q(1.63) - 0.0098).abs() < 5e-4);
    }

    #[test]
    fn taste_list_composition() {
        let pos: Vec<MovieId> = (1..=10).map(MovieId).collect();
        let hist: BTreeSet<MovieId> = (1..=15).map(MovieId).collect();
        let movies: Vec<MovieId> = (1..=100).map(MovieId).collect();
        let a = compose_taste_list(&pos, &hist, &movies, 4, 20, 9).unwrap();
        assert_eq!(a, compose_taste_list(&pos, &hist, &movies, 4, 20, 9).unwrap());
        assert_eq!(a.len(), 20);
        assert_eq!(a.iter().filter(|m| pos.contains(m)).count(), 4);
        assert!(a.iter().filter(|m| !pos.contains(m)).all(|m| !hist.contains(m)));
        assert_eq!(a.iter().collect::<BTreeSet<_>>().len(), 20);
        assert!(compose_taste_list(&pos, &hist, &movies, 11, 20, 9).is_none());
        assert_eq!(positives_for(20, (1, 9)), 2);
        assert_eq!(positives_for(20, (1, 4)), 4);
        assert_eq!(positives_for(20, (1, 1)), 10);
        assert_eq!(positives_for(20, (0, 1)), 0);
    }
}
