//! Precomputed ranked lists produced outside this crate, one JSON object per
//! line: `{"user_id": 1, "items": [10, 20, ...]}`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::{MovieId, UserId};

use super::RecsysError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExternalLists {
    lists: BTreeMap<UserId, Vec<MovieId>>,
}

#[derive(Deserialize)]
struct Line {
    user_id: UserId,
    items: Vec<MovieId>,
}

impl ExternalLists {
    /// Parses the JSON-lines file. Every list must hold at least `min_len`
    /// distinct items and each user may appear once.
    pub fn load(path: &Path, min_len: usize) -> Result<Self, RecsysError> {
        let err = |message: String| RecsysError::External { path: path.display().to_string(), message };
        let body = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        Self::parse(&body, min_len).map_err(err)
    }

    pub fn parse(body: &str, min_len: usize) -> Result<Self, String> {
        let mut lists = BTreeMap::new();
        for (n, line) in body.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let rec: Line = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", n + 1))?;
            if rec.items.len() < min_len {
                return Err(format!("line {}: list of {} items is shorter than {min_len}", n + 1, rec.items.len()));
            }
            let distinct: HashSet<_> = rec.items.iter().collect();
            if distinct.len() != rec.items.len() {
                return Err(format!("line {}: duplicate items", n + 1));
            }
            if lists.insert(rec.user_id, rec.items).is_some() {
                return Err(format!("line {}: duplicate user_id {}", n + 1, rec.user_id));
            }
        }
        Ok(ExternalLists { lists })
    }

    pub fn get(&self, user: UserId) -> Option<&[MovieId]> {
        self.lists.get(&user).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_validates() {
        let l = ExternalLists::parse("{\"user_id\": 1, \"items\": [5, 4, 3]}\n", 2).unwrap();
        assert_eq!(l.get(UserId(1)).unwrap(), &[MovieId(5), MovieId(4), MovieId(3)]);
        assert!(ExternalLists::parse("{\"user_id\": 1, \"items\": [5]}", 2).unwrap_err().contains("shorter"));
        assert!(ExternalLists::parse("{\"user_id\": 1, \"items\": [5, 5]}", 1).unwrap_err().contains("duplicate"));
        assert!(ExternalLists::parse("nope", 1).is_err());
    }
}
