use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::MemoryError;

pub const DEFAULT_DIMENSION: usize = 256;

/// Unit-length vector, or all zeros for empty text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn normalized(mut values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Embedding(values)
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    /// Dot product; both sides are unit vectors so this is the cosine.
    /// Anything involving a zero vector scores 0.
    pub fn cosine(&self, other: &Embedding) -> f64 {
        if self.is_zero() || other.is_zero() {
            return 0.0;
        }
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "provider")]
pub enum EmbedderSpec {
    LocalDeterministic {
        dimension: usize,
    },
    ExternalApi {
        dimension: usize,
        endpoint: String,
        model: String,
        #[serde(default, skip_serializing)]
        api_key: Option<String>,
    },
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        EmbedderSpec::LocalDeterministic {
            dimension: DEFAULT_DIMENSION,
        }
    }
}

impl EmbedderSpec {
    pub fn dimension(&self) -> usize {
        match self {
            EmbedderSpec::LocalDeterministic { dimension }
            | EmbedderSpec::ExternalApi { dimension, .. } => *dimension,
        }
    }

    pub fn build(&self) -> Box<dyn Embedder> {
        match self {
            EmbedderSpec::LocalDeterministic { dimension } => {
                Box::new(HashingEmbedder::new(*dimension))
            }
            EmbedderSpec::ExternalApi {
                dimension,
                endpoint,
                model,
                api_key,
            } => Box::new(ApiEmbedder::new(
                *dimension,
                endpoint.clone(),
                model.clone(),
                api_key.clone(),
            )),
        }
    }
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Embedding, MemoryError>;
}

/// Bag-of-tokens feature hashing: each whitespace token, lowercased and
/// stripped of surrounding punctuation, lands in one FNV-1a bucket.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dimension: usize,
}

impl HashingEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        HashingEmbedder { dimension }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|t| !t.is_empty())
}

impl Embedder for HashingEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Embedding, MemoryError> {
        let mut counts = vec![0.0; self.dimension];
        for tok in tokens(text) {
            let bucket = (fnv1a(tok.as_bytes()) % self.dimension as u64) as usize;
            counts[bucket] += 1.0;
        }
        Ok(Embedding::normalized(counts))
    }
}

/// Embeddings from an HTTP endpoint speaking `{model, input}` ->
/// `{data: [{embedding: [...]}]}`.
pub struct ApiEmbedder {
    dimension: usize,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl ApiEmbedder {
    pub fn new(dimension: usize, endpoint: String, model: String, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .new_agent();
        ApiEmbedder {
            dimension,
            endpoint,
            model,
            api_key,
            agent,
        }
    }
}

pub(crate) fn parse_embedding_response(body: &Value) -> Result<Vec<f64>, MemoryError> {
    body.pointer("/data/0/embedding")
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(Value::as_f64).collect())
        .ok_or_else(|| MemoryError::EmbeddingBackend("missing data[0].embedding".into()))
}

impl Embedder for ApiEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Embedding, MemoryError> {
        if text.trim().is_empty() {
            return Ok(Embedding(vec![0.0; self.dimension]));
        }
        let mut call = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call
            .send_json(json!({"model": self.model, "input": text}))
            .map_err(|e| MemoryError::EmbeddingBackend(e.to_string()))?;
        let body: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| MemoryError::EmbeddingBackend(e.to_string()))?;
        Ok(Embedding::normalized(parse_embedding_response(&body)?))
    }
}
