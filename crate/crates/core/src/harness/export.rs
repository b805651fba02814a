//! Turns simulated clicks and views into training data.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HarnessError, SessionSummary};
use crate::catalog::{MovieId, UserId};
use crate::sandbox::{read_events, Event, EventKind};

/// Rating assigned to a clicked but unwatched movie in interaction files.
pub const CLICK_IMPLIED_RATING: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    Click,
    View,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedRecord {
    pub user_id: UserId,
    pub movie_id: MovieId,
    pub signal: Signal,
    pub implied_rating: Option<u8>,
    pub timestamp: i64,
    /// Source event: session and step of the click or watch.
    pub session_id: String,
    pub step: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExportCounts {
    pub clicks: usize,
    pub views: usize,
    /// Lines written, after collapsing to one per (user, movie) for the
    /// interactions format.
    pub written: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    /// `user::movie::rating::timestamp` lines, mergeable with a ratings file.
    #[default]
    Interactions,
    /// JSON lines with the signal label.
    Labeled,
}

impl std::str::FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "interactions" => Ok(ExportFormat::Interactions),
            "labeled" => Ok(ExportFormat::Labeled),
            _ => Err(format!("unknown export format {s:?}; expected interactions or labeled")),
        }
    }
}

/// One click record per click event and one view record per watch event,
/// carrying the rating from the rate event that follows it.
pub fn augmented_records(events: &[Event], users: &HashMap<String, UserId>) -> Result<Vec<AugmentedRecord>, HarnessError> {
    let mut out = Vec::new();
    for (i, e) in events.iter().enumerate() {
        let signal = match e.kind {
            EventKind::Click => Signal::Click,
            EventKind::Watch => Signal::View,
            _ => continue,
        };
        let user = *users.get(&e.session_id).ok_or_else(|| HarnessError::Parse(format!("event for unknown session {:?}", e.session_id)))?;
        let movie = *e.movie_ids.first().ok_or_else(|| HarnessError::Parse(format!("{:?} event without a movie", e.kind)))?;
        let implied_rating = match signal {
            Signal::Click => None,
            Signal::View => events
                .get(i + 1)
                .filter(|r| r.kind == EventKind::Rate && r.session_id == e.session_id && r.movie_ids.first() == Some(&movie))
                .and_then(|r| r.rating),
        };
        out.push(AugmentedRecord {
            user_id: user,
            movie_id: movie,
            signal,
            implied_rating,
            timestamp: e.timestamp,
            session_id: e.session_id.clone(),
            step: e.step,
        });
    }
    Ok(out)
}

/// Reads every `*.events.jsonl` under `dir` together with the session
/// owners from the matching `*.sessions.jsonl` files.
pub fn load_traces(dir: &Path) -> Result<(Vec<Event>, HashMap<String, UserId>), HarnessError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| HarnessError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".events.jsonl"))
        .collect();
    paths.sort();
    let mut events = Vec::new();
    let mut users = HashMap::new();
    for p in paths {
        events.extend(read_events(&p).map_err(|e| HarnessError::io(&p, e))?);
        let sessions = p.to_string_lossy().replace(".events.jsonl", ".sessions.jsonl");
        let sp = Path::new(&sessions);
        let f = std::fs::File::open(sp).map_err(|e| HarnessError::io(sp, e))?;
        for line in std::io::BufReader::new(f).lines() {
            let line = line.map_err(|e| HarnessError::io(sp, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let s: SessionSummary = serde_json::from_str(&line).map_err(|e| HarnessError::Parse(format!("{sessions}: {e}")))?;
            users.insert(s.session_id, s.user_id);
        }
    }
    Ok((events, users))
}

/// Writes records in `format`. The interactions format keeps one line per
/// (user, movie): a view's rating wins over a click's implied rating.
pub fn write_augmented(path: &Path, records: &[AugmentedRecord], format: ExportFormat) -> Result<ExportCounts, HarnessError> {
    let mut counts = ExportCounts {
        clicks: records.iter().filter(|r| r.signal == Signal::Click).count(),
        views: records.iter().filter(|r| r.signal == Signal::View).count(),
        written: 0,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    let io = |e| HarnessError::io(path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    match format {
        ExportFormat::Labeled => {
            for r in records {
                serde_json::to_writer(&mut w, r).map_err(|e| HarnessError::Parse(e.to_string()))?;
                w.write_all(b"\n").map_err(io)?;
            }
            counts.written = records.len();
        }
        ExportFormat::Interactions => {
            let mut best: BTreeMap<(UserId, MovieId), (u8, i64, bool)> = BTreeMap::new();
            for r in records {
                let (rating, viewed) = match r.signal {
                    Signal::View => (r.implied_rating.unwrap_or(CLICK_IMPLIED_RATING), true),
                    Signal::Click => (CLICK_IMPLIED_RATING, false),
                };
                let e = best.entry((r.user_id, r.movie_id)).or_insert((rating, r.timestamp, viewed));
                if viewed && !e.2 {
                    *e = (rating, r.timestamp, true);
                }
            }
            for ((u, m), (rating, ts, _)) in &best {
                writeln!(w, "{u}::{m}::{rating}::{ts}").map_err(io)?;
            }
            counts.written = best.len();
        }
    }
    w.flush().map_err(io)?;
    Ok(counts)
}
