use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{EnvError, WorldState};
use crate::trajectory::StepOutcome;

/// A milestone check over world state.
///
/// Text form, one per milestone string:
/// `file_exists: <path>`, `file_contains: <path> :: <needle>`,
/// `tool_called: <tool>`, `custom: <name>[ :: <arg>]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MilestonePredicate {
    FileExists { path: String },
    FileContains { path: String, needle: String },
    ToolCalled { tool: String },
    Custom { name: String, arg: Option<String> },
}

impl FromStr for MilestonePredicate {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |why: &str| EnvError::BadPredicate(s.to_string(), why.to_string());
        let (kind, rest) = s.split_once(':').ok_or_else(|| bad("expected `kind: params`"))?;
        let rest = rest.trim();
        let (first, second) = match rest.split_once("::") {
            Some((a, b)) => (a.trim(), Some(b.trim())),
            None => (rest, None),
        };
        if first.is_empty() {
            return Err(bad("missing parameter"));
        }
        match (kind.trim(), second) {
            ("file_exists", None) => Ok(MilestonePredicate::FileExists { path: first.into() }),
            ("file_contains", Some(needle)) => Ok(MilestonePredicate::FileContains {
                path: first.into(),
                needle: needle.into(),
            }),
            ("tool_called", None) => Ok(MilestonePredicate::ToolCalled { tool: first.into() }),
            ("custom", arg) => {
                let p = MilestonePredicate::Custom {
                    name: first.into(),
                    arg: arg.map(str::to_string),
                };
                p.check_custom().map_err(|e| bad(&e))?;
                Ok(p)
            }
            _ => Err(bad("unknown predicate kind or wrong parameter count")),
        }
    }
}

impl MilestonePredicate {
    fn check_custom(&self) -> Result<(), String> {
        let MilestonePredicate::Custom { name, arg } = self else {
            return Ok(());
        };
        match (name.as_str(), arg) {
            ("no_tool_errors", None) => Ok(()),
            ("files_at_least", Some(n)) => n
                .parse::<usize>()
                .map(|_| ())
                .map_err(|_| format!("files_at_least needs a count, got {n:?}")),
            _ => Err(format!("unknown custom predicate {name:?}")),
        }
    }

    pub fn holds(&self, world: &WorldState) -> bool {
        match self {
            MilestonePredicate::FileExists { path } => world.files.contains_key(path),
            MilestonePredicate::FileContains { path, needle } => world
                .files
                .get(path)
                .is_some_and(|c| c.contains(needle.as_str())),
            MilestonePredicate::ToolCalled { tool } => world
                .invocation_log()
                .iter()
                .any(|i| i.tool == *tool && i.outcome == StepOutcome::Ok),
            MilestonePredicate::Custom { name, arg } => match name.as_str() {
                "no_tool_errors" => world
                    .invocation_log()
                    .iter()
                    .all(|i| i.outcome == StepOutcome::Ok),
                "files_at_least" => {
                    let n: usize = arg.as_deref().and_then(|a| a.parse().ok()).unwrap_or(0);
                    world.files.len() >= n
                }
                _ => false,
            },
        }
    }
}

/// Conjunction of all predicates; an empty list holds vacuously.
pub fn evaluate_milestones(predicates: &[String], world: &WorldState) -> Result<bool, EnvError> {
    let parsed = predicates
        .iter()
        .map(|p| p.parse::<MilestonePredicate>())
        .collect::<Result<Vec<_>, _>>()?;
    Ok(parsed.iter().all(|p| p.holds(world)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_forms() {
        assert_eq!(
            "file_contains: a.txt :: needle here".parse::<MilestonePredicate>().unwrap(),
            MilestonePredicate::FileContains {
                path: "a.txt".into(),
                needle: "needle here".into()
            }
        );
        assert!("tool_called: X".parse::<MilestonePredicate>().is_ok());
        assert!("custom: files_at_least :: 2".parse::<MilestonePredicate>().is_ok());
        for bad in [
            "nonsense",
            "file_exists:",
            "file_contains: a.txt",
            "teleport: x",
            "custom: what",
            "custom: files_at_least :: many",
        ] {
            assert!(bad.parse::<MilestonePredicate>().is_err(), "{bad}");
        }
    }

    #[test]
    fn vacuous_conjunction() {
        assert!(evaluate_milestones(&[], &WorldState::default()).unwrap());
    }

    #[test]
    fn bad_predicate_is_an_error() {
        assert!(matches!(
            evaluate_milestones(&["garbage".into()], &WorldState::default()),
            Err(EnvError::BadPredicate(..))
        ));
    }

    #[test]
    fn file_contains() {
        let mut w = WorldState::default();
        w.files.insert("blog_post_material.txt".into(), "response1 + response2".into());
        assert!(evaluate_milestones(
            &["file_contains: blog_post_material.txt :: response1".into()],
            &w
        )
        .unwrap());
        assert!(!evaluate_milestones(&["custom: files_at_least :: 2".into()], &w).unwrap());
    }
}
