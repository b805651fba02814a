//! Agent memory: a per-user long-term store searched by cosine similarity
//! over text and poster embeddings, and an ordered in-session log.

mod embed;
mod short_term;
mod store;

use crate::catalog::{Catalog, Interaction};

pub use embed::{tokens, DeterministicEmbedder, EmbedInput, EmbeddingProvider, ProviderKind, RemoteConfig, RemoteEmbedder};
pub use short_term::{Consolidation, InterfaceType, ShortTermEntry, ShortTermMemory};
pub use store::{cosine, rank_order, LongTermMemory, MemoryRecord, MemoryStore, Modality, Query};

#[derive(Debug, thiserror::Error)]
pub enum MemoryError {
    #[error("empty embedding input")]
    EmptyInput,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("memory payload is empty")]
    EmptyPayload,
    #[error("short-term step {got} does not follow {last}")]
    OutOfOrder { last: u32, got: u32 },
    #[error("interest {0} outside 1..=5")]
    Interest(u8),
    #[error("embedding provider not configured: {0}")]
    Config(String),
    #[error("remote embedding failed: {0}")]
    Remote(String),
    #[error("io error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed memory record: {0}")]
    Parse(String),
}

/// Seeds long-term memory from rating history, one text record per
/// interaction plus a poster record when `image` is given.
pub fn seed_from_history(
    store: &mut LongTermMemory,
    catalog: &Catalog,
    history: &[Interaction],
    text: &dyn EmbeddingProvider,
    image: Option<&dyn EmbeddingProvider>,
) -> Result<(), MemoryError> {
    for i in history {
        let Some(movie) = catalog.movie(i.movie_id) else { continue };
        let payload = format!("rated {} {}.0", movie.title, i.rating);
        let base = MemoryRecord {
            modality: Modality::Text,
            user_id: i.user_id,
            movie_id: i.movie_id,
            session_id: "history".into(),
            timestamp: i.timestamp,
            embedding: text.embed(EmbedInput::Text(&payload))?,
            payload,
        };
        if let (Some(image), Some(poster)) = (image, movie.poster_ref.as_deref()) {
            store.insert(MemoryRecord {
                modality: Modality::Image,
                embedding: image.embed(EmbedInput::Asset(poster))?,
                payload: format!("poster of {}", movie.title),
                ..base.clone()
            })?;
        }
        store.insert(base)?;
    }
    Ok(())
}
