//! Deterministic scripted backend driven by ordered match rules.

use std::path::Path;

use parking_lot::Mutex;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{CallCounters, CompletionRequest, CounterCell, LlmBackend, LlmError};

/// Substring match: a single string, or a list that must all occur.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Matcher {
    Substring(String),
    AllOf(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(rename = "match", default, skip_serializing_if = "Option::is_none")]
    pub matcher: Option<Matcher>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_uses: Option<u32>,
}

impl ScriptRule {
    pub fn contains(needle: impl Into<String>, response: impl Into<String>) -> Self {
        ScriptRule {
            matcher: Some(Matcher::Substring(needle.into())),
            pattern: None,
            response: response.into(),
            max_uses: None,
        }
    }

    pub fn all_of(needles: &[&str], response: impl Into<String>) -> Self {
        ScriptRule {
            matcher: Some(Matcher::AllOf(
                needles.iter().map(|s| s.to_string()).collect(),
            )),
            pattern: None,
            response: response.into(),
            max_uses: None,
        }
    }

    pub fn pattern(re: impl Into<String>, response: impl Into<String>) -> Self {
        ScriptRule {
            matcher: None,
            pattern: Some(re.into()),
            response: response.into(),
            max_uses: None,
        }
    }

    pub fn limited(mut self, uses: u32) -> Self {
        self.max_uses = Some(uses);
        self
    }
}

/// An ordered rule list. Serialized as a bare JSON array.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScriptedScenario {
    pub rules: Vec<ScriptRule>,
}

impl ScriptedScenario {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        ScriptedScenario { rules }
    }

    pub fn from_json(text: &str) -> Result<Self, LlmError> {
        serde_json::from_str(text).map_err(|e| LlmError::InvalidScenario(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::InvalidScenario(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

enum CompiledMatch {
    Substring(String),
    AllOf(Vec<String>),
    Pattern(Regex),
}

impl CompiledMatch {
    fn is_match(&self, text: &str) -> bool {
        match self {
            CompiledMatch::Substring(s) => text.contains(s.as_str()),
            CompiledMatch::AllOf(all) => all.iter().all(|s| text.contains(s.as_str())),
            CompiledMatch::Pattern(re) => re.is_match(text),
        }
    }
}

pub struct ScriptedBackend {
    rules: Vec<(CompiledMatch, ScriptRule)>,
    uses: Mutex<Vec<u32>>,
    counters: CounterCell,
}

impl ScriptedBackend {
    pub fn new(scenario: ScriptedScenario) -> Result<Self, LlmError> {
        let mut rules = Vec::with_capacity(scenario.rules.len());
        for (i, rule) in scenario.rules.into_iter().enumerate() {
            let compiled = match (&rule.matcher, &rule.pattern) {
                (Some(Matcher::Substring(s)), None) => CompiledMatch::Substring(s.clone()),
                (Some(Matcher::AllOf(v)), None) => CompiledMatch::AllOf(v.clone()),
                (None, Some(p)) => CompiledMatch::Pattern(
                    Regex::new(p)
                        .map_err(|e| LlmError::InvalidScenario(format!("rule {i}: {e}")))?,
                ),
                _ => {
                    return Err(LlmError::InvalidScenario(format!(
                        "rule {i}: exactly one of `match` or `pattern` is required"
                    )))
                }
            };
            rules.push((compiled, rule));
        }
        let n = rules.len();
        Ok(ScriptedBackend {
            rules,
            uses: Mutex::new(vec![0; n]),
            counters: CounterCell::default(),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        Self::new(ScriptedScenario::load(path)?)
    }

    /// Restores every rule's use count, as if freshly loaded.
    pub fn rewind(&self) {
        self.uses.lock().iter_mut().for_each(|u| *u = 0);
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        self.counters.record(req.tag);
        let text = req.render();
        let mut uses = self.uses.lock();
        for (i, (m, rule)) in self.rules.iter().enumerate() {
            if rule.max_uses.is_some_and(|max| uses[i] >= max) {
                continue;
            }
            if m.is_match(&text) {
                uses[i] += 1;
                return Ok(rule.response.clone());
            }
        }
        let tail: String = req
            .messages
            .last()
            .map(|m| m.content.chars().take(160).collect())
            .unwrap_or_default();
        Err(LlmError::NoScenarioMatch {
            tag: req.tag,
            excerpt: tail,
        })
    }

    fn counters(&self) -> CallCounters {
        self.counters.snapshot()
    }

    fn reset_counters(&self) {
        self.counters.reset();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::CallTag;

    fn req(tag: CallTag, text: &str) -> CompletionRequest {
        CompletionRequest::new(tag, "sys", text)
    }

    #[test]
    fn single_call_accounting() {
        let b = ScriptedBackend::new(ScriptedScenario::new(vec![ScriptRule::contains(
            "Subtask: research climate",
            r#"{"thought":"search","tool_name":"search","tool_args":{}}"#,
        )]))
        .unwrap();
        let out = b
            .complete(&req(CallTag::ToolHandling, "Subtask: research climate"))
            .unwrap();
        assert!(out.contains("search"));
        let c = b.counters();
        assert_eq!(c.all, 1);
        assert_eq!(c.get(CallTag::ToolHandling), 1);
    }

    #[test]
    fn first_match_with_remaining_uses_wins() {
        let b = ScriptedBackend::new(ScriptedScenario::new(vec![
            ScriptRule::contains("x", "first").limited(1),
            ScriptRule::pattern("x+", "second"),
        ]))
        .unwrap();
        let r = req(CallTag::Other, "xx");
        assert_eq!(b.complete(&r).unwrap(), "first");
        assert_eq!(b.complete(&r).unwrap(), "second");
        b.rewind();
        assert_eq!(b.complete(&r).unwrap(), "first");
    }

    #[test]
    fn all_of_matcher() {
        let b = ScriptedBackend::new(ScriptedScenario::new(vec![ScriptRule::all_of(
            &["alpha", "beta"],
            "both",
        )]))
        .unwrap();
        assert!(b.complete(&req(CallTag::Other, "alpha only")).is_err());
        assert_eq!(b.complete(&req(CallTag::Other, "beta alpha")).unwrap(), "both");
    }

    #[test]
    fn no_match_is_an_error_and_still_counted() {
        let b = ScriptedBackend::new(ScriptedScenario::default()).unwrap();
        let err = b.complete(&req(CallTag::Planning, "anything")).unwrap_err();
        assert!(matches!(err, LlmError::NoScenarioMatch { .. }));
        assert_eq!(b.counters().all, 1);
    }

    #[test]
    fn mixed_tags_sum() {
        let b = ScriptedBackend::new(ScriptedScenario::new(vec![ScriptRule::contains("", "ok")]))
            .unwrap();
        for _ in 0..3 {
            b.complete(&req(CallTag::Planning, "p")).unwrap();
        }
        for _ in 0..5 {
            b.complete(&req(CallTag::ToolHandling, "t")).unwrap();
        }
        let c = b.counters();
        assert_eq!(c.all, 8);
        assert!(c.is_consistent());
        b.reset_counters();
        assert_eq!(b.counters().all, 0);
    }

    #[test]
    fn scenario_json_shape() {
        let text = r#"[
            {"match": "a", "response": "1"},
            {"match": ["b", "c"], "response": "2", "max_uses": 2},
            {"pattern": "^d", "response": "3"}
        ]"#;
        let s = ScriptedScenario::from_json(text).unwrap();
        assert_eq!(s.rules.len(), 3);
        assert_eq!(s.rules[1].max_uses, Some(2));
        assert!(ScriptedBackend::new(s).is_ok());
        let bad = ScriptedScenario::from_json(r#"[{"response": "x"}]"#).unwrap();
        assert!(matches!(
            ScriptedBackend::new(bad),
            Err(LlmError::InvalidScenario(_))
        ));
    }
}
