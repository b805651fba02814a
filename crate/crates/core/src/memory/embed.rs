//! Embedding providers: a deterministic offline embedder and HTTP clients
//! for hosted text and image embedding endpoints.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::MemoryError;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    RemoteText,
    RemoteImage,
    DeterministicTest,
}

/// What to embed: free text, or a reference to an asset such as a poster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedInput<'a> {
    Text(&'a str),
    Asset(&'a str),
}

impl<'a> EmbedInput<'a> {
    pub fn as_str(&self) -> &'a str {
        match *self {
            EmbedInput::Text(s) | EmbedInput::Asset(s) => s,
        }
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn kind(&self) -> ProviderKind;
    fn dimension(&self) -> usize;
    fn embed(&self, input: EmbedInput<'_>) -> Result<Vec<f32>, MemoryError>;
}

/// Offline embedder: a bag of seeded token hashes, plus a shared direction
/// per genre name so texts mentioning the same genre land closer together.
///
/// Tokens are maximal runs of alphanumerics, `-` and `'`, so genre names
/// like `Sci-Fi` and `Children's` survive intact. Case is preserved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterministicEmbedder {
    pub dimension: usize,
    pub seed: u64,
    pub genres: Vec<String>,
    /// Weight of a genre direction relative to an ordinary token.
    pub genre_bonus: f32,
}

impl DeterministicEmbedder {
    pub const DEFAULT_DIMENSION: usize = 64;

    pub fn new(genres: Vec<String>) -> Self {
        DeterministicEmbedder { dimension: Self::DEFAULT_DIMENSION, seed: 0x5eed, genres, genre_bonus: 3.0 }
    }

    fn direction(&self, key: u64, out: &mut [f32], weight: f32) {
        for (j, o) in out.iter_mut().enumerate() {
            let u = seed::unit(seed::derive(self.seed, &[key, j as u64]));
            *o += weight * (2.0 * u as f32 - 1.0);
        }
    }
}

pub fn tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '-' || c == '\'')).filter(|t| !t.is_empty())
}

impl EmbeddingProvider for DeterministicEmbedder {
    fn kind(&self) -> ProviderKind {
        ProviderKind::DeterministicTest
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, input: EmbedInput<'_>) -> Result<Vec<f32>, MemoryError> {
        let text = input.as_str();
        if text.is_empty() {
            return Err(MemoryError::EmptyInput);
        }
        let mut v = vec![0.0f32; self.dimension];
        let mut any = false;
        for tok in tokens(text) {
            any = true;
            self.direction(seed::hash_str(tok), &mut v, 1.0);
            if self.genres.iter().any(|g| g == tok) {
                self.direction(seed::hash_str(&format!("genre:{tok}")), &mut v, self.genre_bonus);
            }
        }
        if !any {
            self.direction(seed::hash_str(text), &mut v, 1.0);
        }
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm == 0.0 {
            return Err(MemoryError::ZeroVector);
        }
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(v)
    }
}

/// Endpoint settings for a hosted embedding model.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(skip)]
    pub api_key: Option<String>,
    pub dimension: usize,
    pub max_retries: u32,
    pub timeout_secs: u64,
}

impl std::fmt::Debug for RemoteConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteConfig")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("dimension", &self.dimension)
            .finish()
    }
}

impl RemoteConfig {
    /// Reads `EMBED_ENDPOINT`, `EMBED_MODEL` and `EMBED_API_KEY`.
    pub fn from_env(dimension: usize) -> Result<Self, MemoryError> {
        let endpoint = std::env::var("EMBED_ENDPOINT").map_err(|_| MemoryError::Config("EMBED_ENDPOINT is not set".into()))?;
        let model = std::env::var("EMBED_MODEL").map_err(|_| MemoryError::Config("EMBED_MODEL is not set".into()))?;
        Ok(RemoteConfig { endpoint, model, api_key: std::env::var("EMBED_API_KEY").ok(), dimension, max_retries: 3, timeout_secs: 30 })
    }
}

/// Client for an OpenAI-style `/embeddings` endpoint. Text inputs go in
/// `input`; image providers send the asset reference as `image`.
pub struct RemoteEmbedder {
    kind: ProviderKind,
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteEmbedder {
    pub fn text(config: RemoteConfig) -> Self {
        Self::build(ProviderKind::RemoteText, config)
    }

    pub fn image(config: RemoteConfig) -> Self {
        Self::build(ProviderKind::RemoteImage, config)
    }

    fn build(kind: ProviderKind, config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(Duration::from_secs(config.timeout_secs))).build().into();
        RemoteEmbedder { kind, config, agent }
    }

    fn request(&self, input: EmbedInput<'_>) -> Result<Vec<f32>, String> {
        let body = match input {
            EmbedInput::Text(s) => json!({ "model": self.config.model, "input": s }),
            EmbedInput::Asset(s) => json!({ "model": self.config.model, "image": s }),
        };
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| e.to_string())?;
        let v: Value = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        parse_embedding(&v).ok_or_else(|| "response carries no embedding".to_string())
    }
}

/// Accepts `{"data":[{"embedding":[..]}]}` or `{"embedding":[..]}`.
fn parse_embedding(v: &Value) -> Option<Vec<f32>> {
    let arr = v.pointer("/data/0/embedding").or_else(|| v.get("embedding"))?.as_array()?;
    arr.iter().map(|x| x.as_f64().map(|f| f as f32)).collect()
}

impl EmbeddingProvider for RemoteEmbedder {
    fn kind(&self) -> ProviderKind {
        self.kind
    }

    fn dimension(&self) -> usize {
        self.config.dimension
    }

    fn embed(&self, input: EmbedInput<'_>) -> Result<Vec<f32>, MemoryError> {
        if input.as_str().is_empty() {
            return Err(MemoryError::EmptyInput);
        }
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            match self.request(input) {
                Ok(v) if v.len() == self.config.dimension => return Ok(v),
                Ok(v) => return Err(MemoryError::Dimension { expected: self.config.dimension, got: v.len() }),
                Err(e) => {
                    tracing::warn!(attempt, error = %e, "embedding request failed");
                    last = e;
                    std::thread::sleep(Duration::from_millis(200 << attempt.min(4)));
                }
            }
        }
        Err(MemoryError::Remote(last))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::cosine;

    fn emb() -> DeterministicEmbedder {
        DeterministicEmbedder::new(vec!["Comedy".into(), "Horror".into(), "Sci-Fi".into()])
    }

    #[test]
    fn pure_and_case_sensitive() {
        let e = emb();
        let a = e.embed(EmbedInput::Text("Toy Story")).unwrap();
        assert_eq!(a, e.embed(EmbedInput::Text("Toy Story")).unwrap());
        assert_ne!(a, e.embed(EmbedInput::Text("toy story")).unwrap());
        assert_eq!(a.len(), 64);
        let n: f32 = a.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-5);
    }

    #[test]
    fn genre_bonus_pulls_same_genre_together() {
        let e = emb();
        let a = e.embed(EmbedInput::Text("Alpha Comedy")).unwrap();
        let b = e.embed(EmbedInput::Text("Beta Comedy")).unwrap();
        let c = e.embed(EmbedInput::Text("Gamma Horror")).unwrap();
        assert!(cosine(&a, &b).unwrap() > cosine(&a, &c).unwrap() + 0.3);
    }

    #[test]
    fn hyphenated_genres_are_one_token() {
        assert_eq!(tokens("a Sci-Fi, Children's b").collect::<Vec<_>>(), vec!["a", "Sci-Fi", "Children's", "b"]);
    }

    #[test]
    fn punctuation_only_input_still_embeds() {
        assert!(emb().embed(EmbedInput::Text("!!")).is_ok());
        assert!(matches!(emb().embed(EmbedInput::Text("")), Err(MemoryError::EmptyInput)));
    }

    #[test]
    fn embedding_response_shapes() {
        let a = json!({"data": [{"embedding": [0.5, 1.0]}]});
        assert_eq!(parse_embedding(&a), Some(vec![0.5, 1.0]));
        assert_eq!(parse_embedding(&json!({"embedding": [2]})), Some(vec![2.0]));
        assert_eq!(parse_embedding(&json!({"error": "x"})), None);
    }

    #[test]
    fn unreachable_endpoint_fails_after_retries() {
        let cfg = RemoteConfig {
            endpoint: "http://127.0.0.1:9/embeddings".into(),
            model: "m".into(),
            api_key: Some("secret".into()),
            dimension: 4,
            max_retries: 1,
            timeout_secs: 1,
        };
        assert!(!format!("{cfg:?}").contains("secret"));
        let e = RemoteEmbedder::text(cfg);
        assert!(matches!(e.embed(EmbedInput::Text("x")), Err(MemoryError::Remote(_))));
    }
}
