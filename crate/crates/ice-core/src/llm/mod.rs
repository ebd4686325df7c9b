//! Completion backends with per-tag call accounting.
//!
//! Every backend call is counted exactly once under the tag carried by the
//! request, whether or not the provider succeeded. Embedding lookups never go
//! through here and so never show up in these counts.

mod http;
mod scripted;

use std::collections::BTreeMap;
use std::fmt;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpBackend, HttpConfig};
pub use scripted::{Matcher, ScriptRule, ScriptedBackend, ScriptedScenario};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LlmError {
    #[error("no scripted rule matches request (tag {tag}): {excerpt}")]
    NoScenarioMatch { tag: CallTag, excerpt: String },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("http error: {0}")]
    Http(String),
    #[error("request timed out")]
    Timeout,
    #[error("malformed provider response: {0}")]
    BadResponse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CallTag {
    Planning,
    ToolHandling,
    Consolidation,
    Other,
}

impl CallTag {
    pub const ALL: [CallTag; 4] = [
        CallTag::Planning,
        CallTag::ToolHandling,
        CallTag::Consolidation,
        CallTag::Other,
    ];
}

impl fmt::Display for CallTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system: String,
    pub messages: Vec<Message>,
    pub tag: CallTag,
}

impl CompletionRequest {
    pub fn new(tag: CallTag, system: impl Into<String>, user: impl Into<String>) -> Self {
        CompletionRequest {
            system: system.into(),
            messages: vec![Message::user(user)],
            tag,
        }
    }

    /// System text, then one `Role: content` entry per message, newline
    /// separated. Scripted rules match against this string.
    pub fn render(&self) -> String {
        let mut out = self.system.clone();
        for m in &self.messages {
            out.push('\n');
            out.push_str(match m.role {
                Role::User => "User: ",
                Role::Assistant => "Assistant: ",
            });
            out.push_str(&m.content);
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounters {
    pub all: u64,
    pub by_tag: BTreeMap<CallTag, u64>,
}

impl CallCounters {
    pub fn get(&self, tag: CallTag) -> u64 {
        self.by_tag.get(&tag).copied().unwrap_or(0)
    }

    pub fn is_consistent(&self) -> bool {
        self.all == self.by_tag.values().sum::<u64>()
    }

    /// Counts accumulated since `earlier`.
    pub fn since(&self, earlier: &CallCounters) -> CallCounters {
        let mut by_tag = BTreeMap::new();
        for tag in CallTag::ALL {
            let d = self.get(tag).saturating_sub(earlier.get(tag));
            if d > 0 {
                by_tag.insert(tag, d);
            }
        }
        CallCounters {
            all: by_tag.values().sum(),
            by_tag,
        }
    }
}

/// Shared counter cell; one lock so `all` and `by_tag` never disagree.
#[derive(Debug, Default)]
pub struct CounterCell(Mutex<CallCounters>);

impl CounterCell {
    pub fn record(&self, tag: CallTag) {
        let mut c = self.0.lock();
        c.all += 1;
        *c.by_tag.entry(tag).or_insert(0) += 1;
    }

    pub fn snapshot(&self) -> CallCounters {
        self.0.lock().clone()
    }

    pub fn reset(&self) {
        *self.0.lock() = CallCounters::default();
    }
}

pub trait LlmBackend: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError>;
    fn counters(&self) -> CallCounters;
    fn reset_counters(&self);
}
