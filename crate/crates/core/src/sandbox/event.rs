use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::MovieId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Impression,
    Click,
    Watch,
    Rate,
    NavNext,
    NavPrev,
    NavBack,
    Exit,
}

/// One line of the session audit log.
///
/// Impressions carry the rendered card ids; click, watch and rate carry the
/// single movie acted on; navigation events carry the destination page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub session_id: String,
    pub step: u32,
    pub kind: EventKind,
    pub movie_ids: Vec<MovieId>,
    pub rating: Option<u8>,
    pub page_index: Option<usize>,
    pub timestamp: i64,
}

/// Writes events as JSON lines.
pub fn write_events(path: &Path, events: &[Event]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for e in events {
        serde_json::to_writer(&mut f, e)?;
        f.write_all(b"\n")?;
    }
    f.flush()
}

pub fn read_events(path: &Path) -> std::io::Result<Vec<Event>> {
    let f = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e = serde_json::from_str(&line)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(e);
    }
    Ok(out)
}
