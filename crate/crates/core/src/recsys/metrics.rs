//! Binary-relevance ranking metrics over the top `k` of a ranked list.

use std::collections::HashSet;

use crate::catalog::MovieId;

/// |top-k ∩ relevant| / |relevant|, or 0 when nothing is relevant.
pub fn recall_at_k(items: &[MovieId], relevant: &HashSet<MovieId>, k: usize) -> f64 {
    if relevant.is_empty() {
        tracing::warn!("recall@{k} over an empty relevant set");
        return 0.0;
    }
    let hits = items.iter().take(k).filter(|m| relevant.contains(m)).count();
    hits as f64 / relevant.len() as f64
}

/// DCG / IDCG with unit gains and a `1 / log2(rank + 1)` discount.
pub fn ndcg_at_k(items: &[MovieId], relevant: &HashSet<MovieId>, k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let dcg: f64 = items.iter().take(k).enumerate().filter(|(_, m)| relevant.contains(m)).map(|(i, _)| discount(i + 1)).sum();
    let idcg: f64 = (1..=relevant.len().min(k)).map(discount).sum();
    dcg / idcg
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[u32]) -> Vec<MovieId> {
        v.iter().map(|&i| MovieId(i)).collect()
    }

    fn set(v: &[u32]) -> HashSet<MovieId> {
        v.iter().map(|&i| MovieId(i)).collect()
    }

    #[test]
    fn recall_examples() {
        assert_eq!(recall_at_k(&ids(&[7, 1, 2]), &set(&[7]), 20), 1.0);
        assert_eq!(recall_at_k(&ids(&[7, 1, 2]), &set(&[7, 9]), 20), 0.5);
        assert_eq!(recall_at_k(&ids(&[7, 1, 2]), &set(&[]), 20), 0.0);
        assert_eq!(recall_at_k(&ids(&[1, 7]), &set(&[7]), 1), 0.0);
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_k(&ids(&[7, 1]), &set(&[7]), 20), 1.0);
        let r2 = ndcg_at_k(&ids(&[1, 7]), &set(&[7]), 20);
        assert!((r2 - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert!((r2 - 0.6309).abs() < 1e-4);
        // hand oracle: (1 + 1/log2(4)) / (1 + 1/log2(3))
        let r = ndcg_at_k(&ids(&[7, 1, 8]), &set(&[7, 8]), 20);
        assert!((r - (1.0 + 0.5) / (1.0 + 1.0 / 3f64.log2())).abs() < 1e-12);
        assert!((r - 0.91972).abs() < 1e-5);
    }
}
