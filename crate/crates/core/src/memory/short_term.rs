use serde::{Deserialize, Serialize};

use super::{EmbedInput, EmbeddingProvider, MemoryError, MemoryRecord, Modality};
use crate::catalog::{Catalog, MovieId, UserId};
use crate::sandbox::{Action, STEP_SECONDS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterfaceType {
    Home,
    Detail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortTermEntry {
    pub step: u32,
    pub interface_type: InterfaceType,
    pub observation_summary: String,
    /// Estimated interest on a 1..=5 scale.
    pub interest: u8,
    pub action_taken: Action,
    /// The movie the action concerns: the clicked card, or the open detail page.
    pub movie_id: Option<MovieId>,
}

/// In-session working memory. Starts empty for every session.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ShortTermMemory {
    entries: Vec<ShortTermEntry>,
}

/// Where consolidated records come from and how they are embedded.
pub struct Consolidation<'a> {
    pub catalog: &'a Catalog,
    pub user_id: UserId,
    pub session_id: &'a str,
    pub start_time: i64,
    pub text: &'a dyn EmbeddingProvider,
    /// `None` disables image records.
    pub image: Option<&'a dyn EmbeddingProvider>,
}

impl ShortTermMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, entry: ShortTermEntry) -> Result<(), MemoryError> {
        if !(1..=5).contains(&entry.interest) {
            return Err(MemoryError::Interest(entry.interest));
        }
        if let Some(last) = self.entries.last() {
            if entry.step <= last.step {
                return Err(MemoryError::OutOfOrder { last: last.step, got: entry.step });
            }
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[ShortTermEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The most recent `n` entries, oldest first.
    pub fn recent(&self, n: usize) -> &[ShortTermEntry] {
        &self.entries[self.entries.len().saturating_sub(n)..]
    }

    /// Turns clicks and watches into long-term records: one text record per
    /// entry and, when an image provider is given, one poster record each.
    pub fn consolidate(&self, ctx: &Consolidation<'_>) -> Result<Vec<MemoryRecord>, MemoryError> {
        let mut out = Vec::new();
        for e in &self.entries {
            let (movie_id, payload) = match (e.action_taken, e.movie_id) {
                (Action::Click { movie_id }, _) => (movie_id, format!("clicked {}", title(ctx.catalog, movie_id))),
                (Action::WatchAndRate { rating }, Some(m)) => (m, format!("rated {} {rating}.0", title(ctx.catalog, m))),
                _ => continue,
            };
            let timestamp = ctx.start_time + e.step as i64 * STEP_SECONDS;
            let base = MemoryRecord {
                modality: Modality::Text,
                user_id: ctx.user_id,
                movie_id,
                session_id: ctx.session_id.to_string(),
                timestamp,
                embedding: ctx.text.embed(EmbedInput::Text(&payload))?,
                payload,
            };
            if let Some(image) = ctx.image {
                match ctx.catalog.movie(movie_id).and_then(|m| m.poster_ref.as_deref()) {
                    Some(poster) => out.push(MemoryRecord {
                        modality: Modality::Image,
                        embedding: image.embed(EmbedInput::Asset(poster))?,
                        payload: format!("poster of {}", title(ctx.catalog, movie_id)),
                        ..base.clone()
                    }),
                    None => tracing::debug!(movie = %movie_id, "no poster; image record skipped"),
                }
            }
            out.push(base);
        }
        out.sort_by_key(|r| (r.timestamp, r.modality));
        Ok(out)
    }
}

fn title(catalog: &Catalog, m: MovieId) -> String {
    catalog.movie(m).map(|m| m.title.clone()).unwrap_or_else(|| format!("movie {m}"))
}
