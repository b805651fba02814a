use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::catalog::DatasetSplit;
use crate::recsys::{ndcg_at_k, recall_at_k, Recommender};
use crate::sandbox::{Event, EventKind};

/// Which ratio is reported as CVR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvrDefinition {
    #[default]
    WatchPerImpression,
    WatchPerClick,
    DetailViewPerImpression,
}

/// Simulated engagement over a merged event log. Ratios are `None` when
/// their denominator is zero; `ar` is `None` without any rate event.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ctr: Option<f64>,
    pub cvr: Option<f64>,
    pub ar: Option<f64>,
    /// Impressed cards, summed over impression events.
    pub impressions: u64,
    pub clicks: u64,
    pub watches: u64,
    pub ratings_count: u64,
}

fn ratio(n: u64, d: u64) -> Option<f64> {
    (d > 0).then(|| n as f64 / d as f64)
}

pub fn compute_metrics(events: &[Event], cvr: CvrDefinition) -> Metrics {
    let mut m = Metrics::default();
    let mut rating_sum = 0u64;
    for e in events {
        match e.kind {
            EventKind::Impression => m.impressions += e.movie_ids.len() as u64,
            EventKind::Click => m.clicks += 1,
            EventKind::Watch => m.watches += 1,
            EventKind::Rate => {
                if let Some(r) = e.rating {
                    m.ratings_count += 1;
                    rating_sum += r as u64;
                }
            }
            _ => {}
        }
    }
    m.ctr = ratio(m.clicks, m.impressions);
    m.cvr = match cvr {
        CvrDefinition::WatchPerImpression => ratio(m.watches, m.impressions),
        CvrDefinition::WatchPerClick => ratio(m.watches, m.clicks),
        CvrDefinition::DetailViewPerImpression => ratio(m.clicks, m.impressions),
    };
    m.ar = ratio(rating_sum, m.ratings_count);
    m
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OfflineMetrics {
    pub recall: f64,
    pub ndcg: f64,
    pub users: usize,
}

/// Mean recall@k and NDCG@k over users with test interactions.
pub fn offline_eval(rec: &Recommender, split: &DatasetSplit, k: usize) -> OfflineMetrics {
    let test = split.test_items();
    let mut out = OfflineMetrics::default();
    for (user, items) in &test {
        let relevant: HashSet<_> = items.iter().copied().collect();
        let list = rec.recommend(*user, k);
        out.recall += recall_at_k(&list.items, &relevant, k);
        out.ndcg += ndcg_at_k(&list.items, &relevant, k);
        out.users += 1;
    }
    if out.users > 0 {
        out.recall /= out.users as f64;
        out.ndcg /= out.users as f64;
    }
    out
}

/// Kendall's tau-b between two per-arm metric vectors.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64, HarnessError> {
    if a.len() != b.len() {
        return Err(HarnessError::Config(format!("metric vectors differ in length: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(HarnessError::Config(format!("rank correlation needs at least 2 arms, got {}", a.len())));
    }
    let (mut conc, mut disc, mut tie_a, mut tie_b) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let x = (a[i] - a[j]).partial_cmp(&0.0).map(|o| o as i64).unwrap_or(0);
            let y = (b[i] - b[j]).partial_cmp(&0.0).map(|o| o as i64).unwrap_or(0);
            match (x, y) {
                (0, 0) => {}
                (0, _) => tie_a += 1,
                (_, 0) => tie_b += 1,
                _ if x == y => conc += 1,
                _ => disc += 1,
            }
        }
    }
    let denom = (((conc + disc + tie_a) * (conc + disc + tie_b)) as f64).sqrt();
    Ok(if denom == 0.0 { 0.0 } else { (conc - disc) as f64 / denom })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::MovieId;

    fn ev(kind: EventKind, ids: &[u32], rating: Option<u8>) -> Event {
        Event { session_id: "s".into(), step: 0, kind, movie_ids: ids.iter().map(|&i| MovieId(i)).collect(), rating, page_index: None, timestamp: 0 }
    }

    #[test]
    fn toy_log() {
        let log = vec![
            ev(EventKind::Impression, &[1, 2, 3, 4, 5], None),
            ev(EventKind::Click, &[1], None),
            ev(EventKind::Watch, &[1], None),
            ev(EventKind::Rate, &[1], Some(4)),
            ev(EventKind::Impression, &[6, 7, 8, 9, 10], None),
            ev(EventKind::Click, &[6], None),
            ev(EventKind::Watch, &[6], None),
            ev(EventKind::Rate, &[6], Some(5)),
            ev(EventKind::Click, &[7], None),
        ];
        let m = compute_metrics(&log, CvrDefinition::WatchPerImpression);
        assert_eq!((m.impressions, m.clicks, m.watches), (10, 3, 2));
        assert_eq!(m.ctr, Some(0.3));
        assert_eq!(m.cvr, Some(0.2));
        assert_eq!(m.ar, Some(4.5));
        assert_eq!(compute_metrics(&log, CvrDefinition::WatchPerClick).cvr, Some(2.0 / 3.0));
    }

    #[test]
    fn empty_numerators_and_denominators() {
        let m = compute_metrics(&[ev(EventKind::Impression, &[1, 2], None), ev(EventKind::Click, &[1], None)], CvrDefinition::default());
        assert_eq!(m.cvr, Some(0.0));
        assert_eq!(m.ar, None);
        let z = compute_metrics(&[], CvrDefinition::default());
        assert_eq!((z.ctr, z.cvr, z.ar), (None, None, None));
    }

    #[test]
    fn kendall_examples() {
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!((kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!(kendall_tau(&[1.0], &[1.0]).is_err());
    }
}
