use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MemoryError;
use crate::catalog::{MovieId, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub modality: Modality,
    pub user_id: UserId,
    pub movie_id: MovieId,
    pub session_id: String,
    pub timestamp: i64,
    pub embedding: Vec<f32>,
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub modality: Modality,
    pub embedding: Vec<f32>,
    pub top_k: usize,
}

/// `a . b / (|a| |b|)`, accumulated in f64.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64, MemoryError> {
    if a.len() != b.len() {
        return Err(MemoryError::Dimension { expected: a.len(), got: b.len() });
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(MemoryError::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// A per-user long-term store. Implementations must return exactly what an
/// exhaustive cosine scan would, including tie order.
pub trait MemoryStore {
    fn insert(&mut self, record: MemoryRecord) -> Result<(), MemoryError>;
    fn retrieve(&self, user: UserId, query: &Query) -> Result<Vec<(MemoryRecord, f64)>, MemoryError>;
    fn count(&self, user: UserId) -> usize;
}

/// Exhaustive-scan store keyed by user; there is no cross-user lookup.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LongTermMemory {
    records: BTreeMap<UserId, Vec<MemoryRecord>>,
}

impl LongTermMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self, user: UserId) -> &[MemoryRecord] {
        self.records.get(&user).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn all(&self) -> impl Iterator<Item = &MemoryRecord> {
        self.records.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.records.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copies of one user's records, for handing a session its own view.
    pub fn for_user(&self, user: UserId) -> LongTermMemory {
        let mut m = LongTermMemory::new();
        if let Some(r) = self.records.get(&user) {
            m.records.insert(user, r.clone());
        }
        m
    }

    pub fn extend(&mut self, records: impl IntoIterator<Item = MemoryRecord>) -> Result<(), MemoryError> {
        for r in records {
            self.insert(r)?;
        }
        Ok(())
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<(), MemoryError> {
        let io = |source| MemoryError::Io { path: path.display().to_string(), source };
        let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
        for r in self.all() {
            let line = serde_json::to_string(r).map_err(|e| MemoryError::Parse(e.to_string()))?;
            writeln!(w, "{line}").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn load_jsonl(path: &Path) -> Result<Self, MemoryError> {
        let io = |source| MemoryError::Io { path: path.display().to_string(), source };
        let file = fs::File::open(path).map_err(io)?;
        let mut m = LongTermMemory::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let r: MemoryRecord = serde_json::from_str(&line).map_err(|e| MemoryError::Parse(format!("line {}: {e}", n + 1)))?;
            m.insert(r)?;
        }
        Ok(m)
    }
}

impl MemoryStore for LongTermMemory {
    fn insert(&mut self, record: MemoryRecord) -> Result<(), MemoryError> {
        if record.payload.trim().is_empty() {
            return Err(MemoryError::EmptyPayload);
        }
        let bucket = self.records.entry(record.user_id).or_default();
        if let Some(prev) = bucket.iter().find(|r| r.modality == record.modality) {
            if prev.embedding.len() != record.embedding.len() {
                return Err(MemoryError::Dimension { expected: prev.embedding.len(), got: record.embedding.len() });
            }
        }
        bucket.push(record);
        Ok(())
    }

    fn retrieve(&self, user: UserId, query: &Query) -> Result<Vec<(MemoryRecord, f64)>, MemoryError> {
        let mut hits = Vec::new();
        for r in self.records(user).iter().filter(|r| r.modality == query.modality) {
            hits.push((r, cosine(&query.embedding, &r.embedding)?));
        }
        hits.sort_by(|a, b| rank_order((a.0, a.1), (b.0, b.1)));
        Ok(hits.into_iter().take(query.top_k).map(|(r, s)| (r.clone(), s)).collect())
    }

    fn count(&self, user: UserId) -> usize {
        self.records(user).len()
    }
}

/// Similarity descending, then newer first, then lower movie id.
pub fn rank_order(a: (&MemoryRecord, f64), b: (&MemoryRecord, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then(b.0.timestamp.cmp(&a.0.timestamp)).then(a.0.movie_id.cmp(&b.0.movie_id))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(user: u32, movie: u32, ts: i64, m: Modality, e: Vec<f32>) -> MemoryRecord {
        MemoryRecord {
            modality: m,
            user_id: UserId(user),
            movie_id: MovieId(movie),
            session_id: "s".into(),
            timestamp: ts,
            embedding: e,
            payload: format!("rated M{movie} 5.0"),
        }
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine(&[3.0, 4.0], &[3.0, 4.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        assert!(matches!(cosine(&[1.0], &[1.0, 0.0]), Err(MemoryError::Dimension { .. })));
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(MemoryError::ZeroVector)));
    }

    #[test]
    fn empty_and_wrong_modality() {
        let mut m = LongTermMemory::new();
        let q = Query { modality: Modality::Text, embedding: vec![1.0, 0.0], top_k: 3 };
        assert!(m.retrieve(UserId(1), &q).unwrap().is_empty());
        m.insert(rec(1, 1, 0, Modality::Image, vec![1.0, 0.0])).unwrap();
        assert!(m.retrieve(UserId(1), &q).unwrap().is_empty());
    }

    #[test]
    fn ties_break_by_recency_then_movie() {
        let mut m = LongTermMemory::new();
        m.insert(rec(1, 9, 10, Modality::Text, vec![1.0, 0.0])).unwrap();
        m.insert(rec(1, 3, 20, Modality::Text, vec![2.0, 0.0])).unwrap();
        m.insert(rec(1, 2, 20, Modality::Text, vec![1.0, 0.0])).unwrap();
        m.insert(rec(1, 1, 30, Modality::Text, vec![0.0, 1.0])).unwrap();
        let q = Query { modality: Modality::Text, embedding: vec![1.0, 0.0], top_k: 10 };
        let got: Vec<u32> = m.retrieve(UserId(1), &q).unwrap().iter().map(|(r, _)| r.movie_id.0).collect();
        assert_eq!(got, vec![2, 3, 9, 1]);
    }

    #[test]
    fn users_do_not_leak() {
        let mut m = LongTermMemory::new();
        m.insert(rec(1, 1, 0, Modality::Text, vec![1.0])).unwrap();
        let q = Query { modality: Modality::Text, embedding: vec![1.0], top_k: 3 };
        assert!(m.retrieve(UserId(2), &q).unwrap().is_empty());
    }

    #[test]
    fn rejects_empty_payload_and_dimension_drift() {
        let mut m = LongTermMemory::new();
        let mut r = rec(1, 1, 0, Modality::Text, vec![1.0]);
        r.payload = " ".into();
        assert!(matches!(m.insert(r), Err(MemoryError::EmptyPayload)));
        m.insert(rec(1, 1, 0, Modality::Text, vec![1.0])).unwrap();
        assert!(matches!(m.insert(rec(1, 2, 0, Modality::Text, vec![1.0, 2.0])), Err(MemoryError::Dimension { .. })));
    }

    #[test]
    fn jsonl_round_trip_is_exact() {
        let mut m = LongTermMemory::new();
        m.insert(rec(1, 1, 5, Modality::Text, vec![0.1, -0.333_333_34, 1e-7])).unwrap();
        m.insert(rec(2, 4, 6, Modality::Image, vec![0.7, 0.2])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ltm.jsonl");
        m.save_jsonl(&p).unwrap();
        assert_eq!(LongTermMemory::load_jsonl(&p).unwrap(), m);
    }
}
