//! Experience memory: workflows and pipelines keyed by embedded text and
//! retrieved by cosine similarity against a threshold.

mod embed;

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::consolidation::{PipelineAutomaton, Workflow};
use crate::plan::Goal;

pub use embed::{
    tokens, ApiEmbedder, Embedder, EmbedderSpec, Embedding, HashingEmbedder, DEFAULT_DIMENSION,
};

pub const DEFAULT_THRESHOLD: f64 = 0.85;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("embedding dimension {got} does not match store dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("payload is not a valid {0:?}: {1}")]
    PayloadKindMismatch(RecordKind, String),
    #[error("embedding backend error: {0}")]
    EmbeddingBackend(String),
    #[error("unknown record {0}")]
    UnknownRecord(u64),
    #[error("snapshot i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("snapshot format: {0}")]
    Format(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RecordKind {
    Workflow,
    Pipeline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum RecordPayload {
    Workflow(Workflow),
    Pipeline(PipelineAutomaton),
}

impl RecordPayload {
    pub fn kind(&self) -> RecordKind {
        match self {
            RecordPayload::Workflow(_) => RecordKind::Workflow,
            RecordPayload::Pipeline(_) => RecordKind::Pipeline,
        }
    }

    /// Decodes `payload` as the given kind.
    pub fn from_value(kind: RecordKind, payload: Value) -> Result<Self, MemoryError> {
        match kind {
            RecordKind::Workflow => serde_json::from_value(payload)
                .map(RecordPayload::Workflow)
                .map_err(|e| MemoryError::PayloadKindMismatch(kind, e.to_string())),
            RecordKind::Pipeline => {
                let p = PipelineAutomaton::from_value(&payload).map_err(|v| {
                    let msgs: Vec<String> = v.iter().map(ToString::to_string).collect();
                    MemoryError::PayloadKindMismatch(kind, msgs.join("; "))
                })?;
                Ok(RecordPayload::Pipeline(p))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub id: u64,
    pub key_text: String,
    pub embedding: Embedding,
    #[serde(flatten)]
    pub payload: RecordPayload,
}

impl MemoryRecord {
    pub fn kind(&self) -> RecordKind {
        self.payload.kind()
    }
}

/// Workflow key: the goal description alone.
pub fn workflow_key(description: &str) -> String {
    description.to_string()
}

/// Pipeline key: description, newline, milestones joined by `"; "`.
pub fn pipeline_key(description: &str, milestones: &[String]) -> String {
    format!("{description}\n{}", milestones.join("; "))
}

pub fn pipeline_key_for(goal: &Goal) -> String {
    pipeline_key(&goal.description, &goal.milestones)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorySnapshot {
    pub dimension: usize,
    pub records: Vec<MemoryRecord>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryOpStats {
    pub reads: u64,
    pub writes: u64,
}

pub struct MemoryStore {
    spec: EmbedderSpec,
    embedder: Box<dyn Embedder>,
    records: RwLock<Vec<MemoryRecord>>,
    reads: AtomicU64,
    writes: AtomicU64,
}

impl std::fmt::Debug for MemoryStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MemoryStore")
            .field("spec", &self.spec)
            .field("records", &self.records.read().len())
            .finish()
    }
}

impl Default for MemoryStore {
    fn default() -> Self {
        MemoryStore::new(EmbedderSpec::default())
    }
}

impl MemoryStore {
    pub fn new(spec: EmbedderSpec) -> Self {
        let embedder = spec.build();
        MemoryStore::with_embedder(spec, embedder)
    }

    pub fn with_embedder(spec: EmbedderSpec, embedder: Box<dyn Embedder>) -> Self {
        MemoryStore {
            spec,
            embedder,
            records: RwLock::new(Vec::new()),
            reads: AtomicU64::new(0),
            writes: AtomicU64::new(0),
        }
    }

    pub fn dimension(&self) -> usize {
        self.spec.dimension()
    }

    pub fn embed(&self, text: &str) -> Result<Embedding, MemoryError> {
        self.embedder.embed(text)
    }

    pub fn op_stats(&self) -> MemoryOpStats {
        MemoryOpStats {
            reads: self.reads.load(Ordering::SeqCst),
            writes: self.writes.load(Ordering::SeqCst),
        }
    }

    pub fn len(&self) -> usize {
        self.records.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> Vec<MemoryRecord> {
        self.records.read().clone()
    }

    pub fn get(&self, id: u64) -> Result<MemoryRecord, MemoryError> {
        self.records
            .read()
            .iter()
            .find(|r| r.id == id)
            .cloned()
            .ok_or(MemoryError::UnknownRecord(id))
    }

    pub fn store(&self, key_text: &str, payload: RecordPayload) -> Result<u64, MemoryError> {
        let embedding = self.embed(key_text)?;
        if embedding.dimension() != self.dimension() {
            return Err(MemoryError::DimensionMismatch {
                expected: self.dimension(),
                got: embedding.dimension(),
            });
        }
        self.writes.fetch_add(1, Ordering::SeqCst);
        let mut records = self.records.write();
        let id = records.len() as u64;
        records.push(MemoryRecord {
            id,
            key_text: key_text.to_string(),
            embedding,
            payload,
        });
        Ok(id)
    }

    /// Stores an undecoded payload, checking it against `kind` first.
    pub fn store_json(&self, kind: RecordKind, key_text: &str, payload: Value) -> Result<u64, MemoryError> {
        let payload = RecordPayload::from_value(kind, payload)?;
        self.store(key_text, payload)
    }

    /// Best record of `kind` if its similarity reaches `threshold`.
    /// Equal scores resolve to the earliest stored record.
    pub fn retrieve(
        &self,
        kind: RecordKind,
        query_text: &str,
        threshold: f64,
    ) -> Result<Option<(MemoryRecord, f64)>, MemoryError> {
        self.reads.fetch_add(1, Ordering::SeqCst);
        let query = self.embed(query_text)?;
        let records = self.records.read();
        let mut best: Option<(&MemoryRecord, f64)> = None;
        for r in records.iter().filter(|r| r.kind() == kind) {
            let sim = query.cosine(&r.embedding);
            if best.is_none_or(|(_, s)| sim > s) {
                best = Some((r, sim));
            }
        }
        Ok(best
            .filter(|(_, s)| *s >= threshold)
            .map(|(r, s)| (r.clone(), s)))
    }

    /// Exact key lookup, used to avoid storing the same experience twice.
    pub fn contains_key(&self, kind: RecordKind, key_text: &str) -> bool {
        self.reads.fetch_add(1, Ordering::SeqCst);
        self.records
            .read()
            .iter()
            .any(|r| r.kind() == kind && r.key_text == key_text)
    }

    pub fn snapshot(&self) -> MemorySnapshot {
        MemorySnapshot {
            dimension: self.dimension(),
            records: self.records(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.snapshot()).expect("snapshot serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), MemoryError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn from_snapshot(spec: EmbedderSpec, snapshot: MemorySnapshot) -> Result<Self, MemoryError> {
        if snapshot.dimension != spec.dimension() {
            return Err(MemoryError::DimensionMismatch {
                expected: spec.dimension(),
                got: snapshot.dimension,
            });
        }
        for r in &snapshot.records {
            if r.embedding.dimension() != snapshot.dimension {
                return Err(MemoryError::DimensionMismatch {
                    expected: snapshot.dimension,
                    got: r.embedding.dimension(),
                });
            }
        }
        let store = MemoryStore::new(spec);
        *store.records.write() = snapshot.records;
        Ok(store)
    }

    /// Loads a snapshot file. The local embedder is rebuilt with the
    /// snapshot's dimension unless `spec` says otherwise.
    pub fn load(path: &Path, spec: Option<EmbedderSpec>) -> Result<Self, MemoryError> {
        let text = std::fs::read_to_string(path)?;
        let snapshot: MemorySnapshot = serde_json::from_str(&text)?;
        let spec = spec.unwrap_or(EmbedderSpec::LocalDeterministic {
            dimension: snapshot.dimension,
        });
        Self::from_snapshot(spec, snapshot)
    }
}
