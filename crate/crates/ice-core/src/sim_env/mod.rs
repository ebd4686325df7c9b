//! Deterministic simulated tool environment.
//!
//! Tools act on an in-memory [`WorldState`] built from named fixtures. No
//! clock, randomness or network is involved, so a run is a pure function of
//! its fixtures and invocation sequence.

mod milestone;
mod toolkit;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::trajectory::{StepOutcome, ToolArgs};

pub use milestone::{evaluate_milestones, MilestonePredicate};
pub use toolkit::{builtin_toolkit, tools};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnvError {
    #[error("unknown tool {0:?}")]
    UnknownTool(String),
    #[error("bad milestone predicate {0:?}: {1}")]
    BadPredicate(String, String),
    #[error("fixture {0:?}: {1}")]
    Fixture(String, String),
}

pub type Dataset = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Invocation {
    pub tool: String,
    pub args: ToolArgs,
    pub outcome: StepOutcome,
    pub output: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub files: BTreeMap<String, String>,
    pub datasets: BTreeMap<String, Dataset>,
    invocation_log: Vec<Invocation>,
}

impl WorldState {
    pub fn invocation_log(&self) -> &[Invocation] {
        &self.invocation_log
    }

    /// SHA-256 over the canonical JSON form.
    pub fn state_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("world serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArgType {
    String,
    Integer,
    Number,
    Bool,
    Any,
}

impl ArgType {
    fn accepts(self, v: &Value) -> bool {
        match self {
            ArgType::String => v.is_string(),
            ArgType::Integer => v.is_i64() || v.is_u64(),
            ArgType::Number => v.is_number(),
            ArgType::Bool => v.is_boolean(),
            ArgType::Any => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgSpec {
    pub name: String,
    pub ty: ArgType,
    pub required: bool,
}

impl ArgSpec {
    pub fn required(name: &str, ty: ArgType) -> Self {
        ArgSpec {
            name: name.into(),
            ty,
            required: true,
        }
    }
}

pub type ToolBehavior = Arc<dyn Fn(&ToolArgs, &mut WorldState) -> Result<String, String> + Send + Sync>;

#[derive(Clone)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub args: Vec<ArgSpec>,
    pub behavior: ToolBehavior,
}

impl fmt::Debug for ToolSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ToolSpec")
            .field("name", &self.name)
            .field("args", &self.args)
            .finish()
    }
}

impl ToolSpec {
    fn check_args(&self, args: &ToolArgs) -> Result<(), String> {
        for spec in &self.args {
            match args.get(&spec.name) {
                None if spec.required => {
                    return Err(format!("missing required argument '{}'", spec.name))
                }
                Some(v) if !spec.ty.accepts(v) => {
                    return Err(format!(
                        "argument '{}' must be of type {:?}",
                        spec.name, spec.ty
                    ))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn signature(&self) -> String {
        let args: Vec<String> = self
            .args
            .iter()
            .map(|a| format!("{}: {:?}", a.name, a.ty))
            .collect();
        format!("{}({}) - {}", self.name, args.join(", "), self.description)
    }
}

/// One entry of a task's `env_setup` list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EnvSetupItem {
    Fixture { fixture: String },
    Dataset { dataset: String, records: Dataset },
    File { path: String, content: String },
}

const BUILTIN_FIXTURES: &[(&str, &str)] = &[(
    "wayfair_products",
    include_str!("../../assets/fixtures/wayfair_products.json"),
)];

/// Fixture file: `{"name": ..., "records": {id: record, ...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureFile {
    pub name: String,
    pub records: Dataset,
}

/// Looks fixtures up as `<dir>/<name>.json`, then among the bundled ones.
#[derive(Debug, Clone, Default)]
pub struct FixtureResolver {
    dirs: Vec<PathBuf>,
}

impl FixtureResolver {
    pub fn new(dirs: impl IntoIterator<Item = PathBuf>) -> Self {
        FixtureResolver {
            dirs: dirs.into_iter().collect(),
        }
    }

    pub fn with_dir(mut self, dir: &Path) -> Self {
        self.dirs.push(dir.to_path_buf());
        self
    }

    pub fn resolve(&self, name: &str) -> Result<FixtureFile, EnvError> {
        for dir in &self.dirs {
            let path = dir.join(format!("{name}.json"));
            if path.is_file() {
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| EnvError::Fixture(name.into(), e.to_string()))?;
                return serde_json::from_str(&text)
                    .map_err(|e| EnvError::Fixture(name.into(), e.to_string()));
            }
        }
        let (_, text) = BUILTIN_FIXTURES
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| EnvError::Fixture(name.into(), "not found".into()))?;
        serde_json::from_str(text).map_err(|e| EnvError::Fixture(name.into(), e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct Environment {
    tools: BTreeMap<String, ToolSpec>,
    world: WorldState,
}

impl Default for Environment {
    fn default() -> Self {
        Environment::new(builtin_toolkit(), WorldState::default())
    }
}

impl Environment {
    pub fn new(toolkit: Vec<ToolSpec>, world: WorldState) -> Self {
        Environment {
            tools: toolkit.into_iter().map(|t| (t.name.clone(), t)).collect(),
            world,
        }
    }

    /// Builtin toolkit over a world assembled from `setup`.
    pub fn from_setup(setup: &[EnvSetupItem], fixtures: &FixtureResolver) -> Result<Self, EnvError> {
        let mut world = WorldState::default();
        for item in setup {
            match item {
                EnvSetupItem::Fixture { fixture } => {
                    let f = fixtures.resolve(fixture)?;
                    world.datasets.insert(f.name, f.records);
                }
                EnvSetupItem::Dataset { dataset, records } => {
                    world.datasets.insert(dataset.clone(), records.clone());
                }
                EnvSetupItem::File { path, content } => {
                    world.files.insert(path.clone(), content.clone());
                }
            }
        }
        Ok(Environment::new(builtin_toolkit(), world))
    }

    pub fn register(&mut self, tool: ToolSpec) {
        self.tools.insert(tool.name.clone(), tool);
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn tool(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.get(name)
    }

    pub fn tool_catalog(&self) -> String {
        self.tools
            .values()
            .map(|t| format!("- {}\n", t.signature()))
            .collect()
    }

    /// Runs one tool. Argument problems and tool failures come back as
    /// `ToolError` outcomes; only an unregistered name is an `Err`. Every
    /// call, including unknown tools, is appended to the invocation log.
    pub fn invoke(&mut self, name: &str, args: &ToolArgs) -> Result<(StepOutcome, String), EnvError> {
        let Some(tool) = self.tools.get(name) else {
            let msg = format!("unknown tool {name:?}");
            self.world.invocation_log.push(Invocation {
                tool: name.into(),
                args: args.clone(),
                outcome: StepOutcome::ToolError,
                output: msg,
            });
            return Err(EnvError::UnknownTool(name.into()));
        };
        let result = tool
            .check_args(args)
            .and_then(|()| (tool.behavior)(args, &mut self.world));
        let (outcome, output) = match result {
            Ok(out) => (StepOutcome::Ok, out),
            Err(err) => (StepOutcome::ToolError, err),
        };
        self.world.invocation_log.push(Invocation {
            tool: name.into(),
            args: args.clone(),
            outcome,
            output: output.clone(),
        });
        Ok((outcome, output))
    }

    pub fn evaluate(&self, predicates: &[String]) -> Result<bool, EnvError> {
        evaluate_milestones(predicates, &self.world)
    }
}
