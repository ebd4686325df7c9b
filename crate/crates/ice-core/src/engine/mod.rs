//! Task runtime: planning with retrieved workflows, subgoal execution with
//! retrieved pipelines, and experience consolidation after training runs.

pub mod executor;
pub mod prompts;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consolidation::{
    consolidate_pipeline, consolidate_workflows, ConsolidationError, GoalContext, Workflow,
    WorkflowOptions, DEFAULT_REPAIR_LIMIT,
};
use crate::llm::{CallCounters, CallTag, CompletionRequest, CounterCell, LlmBackend, LlmError};
use crate::memory::{
    pipeline_key_for, workflow_key, MemoryError, MemoryStore, RecordKind, RecordPayload,
    DEFAULT_THRESHOLD,
};
use crate::plan::{GoalId, GoalStatus, PlanError, PlanTree};
use crate::sim_env::{EnvError, EnvSetupItem, Environment, FixtureResolver, MilestonePredicate};
use crate::trajectory::{investigate_trajectories, Trajectory};

pub use executor::{
    handle_subgoal, milestones_hold, react_loop, run_pipeline, ExecMethod, PipelineRunError,
    ReactRun, SubgoalOutcome,
};

/// Leaf executions allowed per task, whatever the planner keeps adding.
const MAX_SUBGOAL_RUNS: usize = 128;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("could not parse a plan after {attempts} attempts: {problem}")]
    PlanParse { attempts: u32, problem: String },
    #[error("could not parse a rectification after {attempts} attempts: {problem}")]
    RectifyParse { attempts: u32, problem: String },
    #[error("could not parse a step for {goal} after {attempts} attempts: {problem}")]
    StepParse {
        goal: GoalId,
        attempts: u32,
        problem: String,
        partial: Box<Trajectory>,
    },
    #[error("goal {0} cannot be rectified")]
    NotRectifiable(GoalId),
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error("task aborted: {0}")]
    TaskAborted(#[from] LlmError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Consolidation(ConsolidationError),
}

impl From<ConsolidationError> for EngineError {
    fn from(e: ConsolidationError) -> Self {
        match e {
            ConsolidationError::Backend(e) => EngineError::TaskAborted(e),
            other => EngineError::Consolidation(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunMode {
    /// Run without consulting memory, then consolidate and store.
    Train,
    /// Consult memory, store nothing.
    Exploit,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum MilestoneMode {
    /// Deterministic predicates over the simulated world.
    #[default]
    Predicates,
    /// Ask the backend.
    Judge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub planning_ice: bool,
    pub execution_ice: bool,
    pub mode: RunMode,
    pub pipeline_threshold: f64,
    pub workflow_threshold: f64,
    pub max_react_steps: u32,
    pub repair_limit: u32,
    /// Rectifications allowed per failed goal, counting those of the goals
    /// its rectifications introduced.
    pub rectification_budget: u32,
    pub seed: u64,
    pub workflow_options: WorkflowOptions,
    pub milestone_mode: MilestoneMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            planning_ice: true,
            execution_ice: true,
            mode: RunMode::Exploit,
            pipeline_threshold: DEFAULT_THRESHOLD,
            workflow_threshold: DEFAULT_THRESHOLD,
            max_react_steps: 10,
            repair_limit: DEFAULT_REPAIR_LIMIT,
            rectification_budget: 2,
            seed: 0,
            workflow_options: WorkflowOptions::default(),
            milestone_mode: MilestoneMode::Predicates,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        for (name, t) in [
            ("pipeline_threshold", self.pipeline_threshold),
            ("workflow_threshold", self.workflow_threshold),
        ] {
            if !(0.0..=1.0).contains(&t) {
                return Err(EngineError::InvalidConfig(format!("{name} {t} is outside [0, 1]")));
            }
        }
        if self.max_react_steps == 0 || self.repair_limit == 0 {
            return Err(EngineError::InvalidConfig(
                "max_react_steps and repair_limit must be positive".into(),
            ));
        }
        Ok(())
    }

    fn touches_memory(&self) -> bool {
        self.planning_ice || self.execution_ice
    }
}

/// Task file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub goal: String,
    #[serde(default)]
    pub env_setup: Vec<EnvSetupItem>,
    /// Milestone predicates keyed by subgoal description.
    #[serde(default)]
    pub milestones: BTreeMap<String, Vec<String>>,
}

impl TaskSpec {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Predicates for a subgoal: the task's entry for its description, or
    /// else those of its own milestones written in predicate syntax.
    pub fn predicates_for(&self, description: &str, milestones: &[String]) -> Vec<String> {
        match self.milestones.get(description) {
            Some(p) => p.clone(),
            None => milestones
                .iter()
                .filter(|m| m.parse::<MilestonePredicate>().is_ok())
                .cloned()
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredRecord {
    pub kind: RecordKind,
    pub key: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRunReport {
    pub task_id: String,
    pub mode: RunMode,
    pub plan: PlanTree,
    pub outcomes: Vec<SubgoalOutcome>,
    /// Backend calls made by this task alone.
    pub counters: CallCounters,
    pub rectifications: usize,
    pub world_hash: String,
    pub stored: Vec<StoredRecord>,
    pub consolidation_failures: Vec<String>,
}

impl TaskRunReport {
    pub fn pipeline_served(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| o.method == ExecMethod::Pipeline)
            .count()
    }

    pub fn successes(&self) -> usize {
        self.outcomes.iter().filter(|o| o.success).count()
    }
}

/// Counts one task's calls on top of the shared backend's own counters.
struct Tally<'a> {
    inner: &'a dyn LlmBackend,
    local: CounterCell,
}

impl LlmBackend for Tally<'_> {
    fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        self.local.record(req.tag);
        self.inner.complete(req)
    }

    fn counters(&self) -> CallCounters {
        self.local.snapshot()
    }

    fn reset_counters(&self) {
        self.local.reset();
    }
}

fn retrieve_workflow(store: Option<&MemoryStore>, text: &str, threshold: f64) -> Result<Option<Workflow>, EngineError> {
    let Some(store) = store else { return Ok(None) };
    Ok(match store.retrieve(RecordKind::Workflow, text, threshold)? {
        Some((record, _)) => match record.payload {
            RecordPayload::Workflow(w) => Some(w),
            RecordPayload::Pipeline(_) => None,
        },
        None => None,
    })
}

/// Asks the backend for subgoals of `goal`, with the closest stored
/// workflow as a reference when `workflows` is given and one qualifies.
pub fn generate_initial_plan(
    goal: &str,
    tools: &str,
    workflows: Option<&MemoryStore>,
    llm: &dyn LlmBackend,
    cfg: &RunConfig,
) -> Result<PlanTree, EngineError> {
    let reference = retrieve_workflow(workflows, &workflow_key(goal), cfg.workflow_threshold)?;
    let user = prompts::plan_prompt(goal, reference.as_ref(), tools);
    let req = CompletionRequest::new(CallTag::Planning, prompts::PLAN_SYSTEM, user);
    let specs = executor::ask(llm, req, cfg.repair_limit, prompts::parse_plan)?.map_err(|problem| {
        EngineError::PlanParse {
            attempts: cfg.repair_limit + 1,
            problem,
        }
    })?;
    Ok(PlanTree::new(goal, specs)?)
}

/// Asks the backend how to repair the plan around `failed` and applies the
/// answer: a split of the failed goal and/or new goals right after it, in
/// order. Returns the goals introduced.
pub fn rectify_plan(
    tree: &mut PlanTree,
    failed: &GoalId,
    workflows: Option<&MemoryStore>,
    llm: &dyn LlmBackend,
    cfg: &RunConfig,
) -> Result<Vec<GoalId>, EngineError> {
    let goal = tree
        .get(failed)
        .filter(|g| g.status == GoalStatus::Failure && !g.id.is_root())
        .ok_or_else(|| EngineError::NotRectifiable(failed.clone()))?;
    let parent = tree
        .get(&failed.parent().expect("not root"))
        .expect("parent exists");
    let failed_ref = retrieve_workflow(workflows, &workflow_key(&goal.description), cfg.workflow_threshold)?;
    let parent_ref = retrieve_workflow(workflows, &workflow_key(&parent.description), cfg.workflow_threshold)?;
    let user = prompts::rectify_prompt(
        &tree.root.description,
        &tree.outline(),
        &failed.to_string(),
        &goal.description,
        &parent.description,
        failed_ref.as_ref(),
        parent_ref.as_ref(),
    );
    let req = CompletionRequest::new(CallTag::Planning, prompts::RECTIFY_SYSTEM, user);
    let edit = executor::ask(llm, req, cfg.repair_limit, prompts::parse_rectification)?.map_err(|problem| {
        EngineError::RectifyParse {
            attempts: cfg.repair_limit + 1,
            problem,
        }
    })?;
    let mut introduced = tree.split_goal(failed, edit.split)?;
    let mut after = failed.clone();
    for spec in edit.add_after {
        after = tree.add_goal(&after, spec)?;
        introduced.push(after.clone());
    }
    Ok(introduced)
}

/// Settles every inner goal still open once all leaves have run. A child
/// counts as achieved when it succeeded, or when it failed but everything
/// its rectifications introduced was achieved in turn; an inner goal
/// succeeds iff all its children are achieved.
pub fn resolve_statuses(tree: &mut PlanTree, introduced_by: &BTreeMap<GoalId, Vec<GoalId>>) -> Result<(), PlanError> {
    fn achieved(tree: &PlanTree, id: &GoalId, introduced_by: &BTreeMap<GoalId, Vec<GoalId>>) -> bool {
        match tree.get(id).map(|g| g.status) {
            Some(GoalStatus::Success) => true,
            Some(GoalStatus::Failure) => introduced_by
                .get(id)
                .is_some_and(|new| !new.is_empty() && new.iter().all(|n| achieved(tree, n, introduced_by))),
            _ => false,
        }
    }
    // Reverse pre-order visits children before their parents.
    let open: Vec<GoalId> = tree
        .goals()
        .into_iter()
        .rev()
        .filter(|g| !g.is_leaf() && matches!(g.status, GoalStatus::Pending | GoalStatus::InProgress))
        .map(|g| g.id.clone())
        .collect();
    for id in open {
        let children: Vec<GoalId> = tree.get(&id).expect("listed").children.iter().map(|c| c.id.clone()).collect();
        let ok = children.iter().all(|c| achieved(tree, c, introduced_by));
        if tree.get(&id).expect("listed").status == GoalStatus::Pending {
            tree.set_status(&id, GoalStatus::InProgress)?;
        }
        tree.set_status(&id, if ok { GoalStatus::Success } else { GoalStatus::Failure })?;
    }
    Ok(())
}

pub struct Engine<'a> {
    cfg: RunConfig,
    memory: &'a MemoryStore,
    llm: &'a dyn LlmBackend,
    fixtures: FixtureResolver,
}

impl<'a> Engine<'a> {
    pub fn new(cfg: RunConfig, memory: &'a MemoryStore, llm: &'a dyn LlmBackend) -> Result<Self, EngineError> {
        cfg.validate()?;
        Ok(Engine {
            cfg,
            memory,
            llm,
            fixtures: FixtureResolver::default(),
        })
    }

    pub fn with_fixtures(mut self, fixtures: FixtureResolver) -> Self {
        self.fixtures = fixtures;
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    fn reads(&self, enabled: bool) -> Option<&MemoryStore> {
        (enabled && self.cfg.mode == RunMode::Exploit).then_some(self.memory)
    }

    pub fn run_task(&self, task: &TaskSpec) -> Result<TaskRunReport, EngineError> {
        let llm = Tally {
            inner: self.llm,
            local: CounterCell::default(),
        };
        let cfg = &self.cfg;
        let mut env = Environment::from_setup(&task.env_setup, &self.fixtures)?;
        let tools = env.tool_catalog();
        let workflows = self.reads(cfg.planning_ice);
        let pipelines = self.reads(cfg.execution_ice);

        let mut tree = generate_initial_plan(&task.goal, &tools, workflows, &llm, cfg)?;
        let mut outcomes: Vec<SubgoalOutcome> = Vec::new();
        let mut origin: BTreeMap<GoalId, GoalId> = BTreeMap::new();
        let mut spent: BTreeMap<GoalId, u32> = BTreeMap::new();
        let mut introduced_by: BTreeMap<GoalId, Vec<GoalId>> = BTreeMap::new();

        while let Some(leaf) = tree.next_pending_leaf().cloned() {
            if outcomes.len() >= MAX_SUBGOAL_RUNS {
                log::warn!("task {}: subgoal limit reached", task.id);
                break;
            }
            let mut ancestor = leaf.id.parent();
            let mut chain = Vec::new();
            while let Some(a) = ancestor {
                ancestor = a.parent();
                chain.push(a);
            }
            for a in chain.iter().rev() {
                if tree.get(a).map(|g| g.status) == Some(GoalStatus::Pending) {
                    tree.set_status(a, GoalStatus::InProgress)?;
                }
            }
            tree.set_status(&leaf.id, GoalStatus::InProgress)?;
            let predicates = task.predicates_for(&leaf.description, &leaf.milestones);
            let outcome = handle_subgoal(&leaf, &predicates, pipelines, &mut env, &llm, cfg)?;
            let success = outcome.success;
            outcomes.push(outcome);
            tree.set_status(&leaf.id, if success { GoalStatus::Success } else { GoalStatus::Failure })?;
            if success {
                continue;
            }

            let root_of = origin.get(&leaf.id).cloned().unwrap_or_else(|| leaf.id.clone());
            let used = spent.entry(root_of.clone()).or_insert(0);
            if *used >= cfg.rectification_budget {
                log::info!("task {}: abandoning {}", task.id, leaf.id);
                continue;
            }
            *used += 1;
            match rectify_plan(&mut tree, &leaf.id, workflows, &llm, cfg) {
                Ok(new) => {
                    for id in &new {
                        origin.insert(id.clone(), root_of.clone());
                    }
                    introduced_by.insert(leaf.id.clone(), new);
                }
                Err(EngineError::RectifyParse { problem, .. }) => {
                    log::warn!("task {}: rectification of {} unusable: {problem}", task.id, leaf.id);
                }
                Err(e) => return Err(e),
            }
        }
        resolve_statuses(&mut tree, &introduced_by)?;

        let mut stored = Vec::new();
        let mut consolidation_failures = Vec::new();
        if cfg.mode == RunMode::Train && cfg.touches_memory() {
            self.consolidate(&tree, &outcomes, &llm, &mut stored, &mut consolidation_failures)?;
        }

        Ok(TaskRunReport {
            task_id: task.id.clone(),
            mode: cfg.mode,
            rectifications: tree.rectification_count(),
            plan: tree,
            outcomes,
            counters: llm.counters(),
            world_hash: env.world().state_hash(),
            stored,
            consolidation_failures,
        })
    }

    fn consolidate(
        &self,
        tree: &PlanTree,
        outcomes: &[SubgoalOutcome],
        llm: &dyn LlmBackend,
        stored: &mut Vec<StoredRecord>,
        failures: &mut Vec<String>,
    ) -> Result<(), EngineError> {
        let cfg = &self.cfg;
        if cfg.planning_ice {
            for w in consolidate_workflows(tree, &cfg.workflow_options)? {
                let key = workflow_key(&w.source_description);
                if self.memory.contains_key(RecordKind::Workflow, &key) {
                    continue;
                }
                self.memory.store(&key, RecordPayload::Workflow(w))?;
                stored.push(StoredRecord {
                    kind: RecordKind::Workflow,
                    key,
                });
            }
        }
        if cfg.execution_ice {
            let candidates: Vec<Trajectory> = outcomes
                .iter()
                .filter(|o| o.method == ExecMethod::React)
                .filter(|o| tree.get(&o.goal_id).is_some_and(|g| g.is_leaf()))
                .filter_map(|o| o.trajectory.clone())
                .collect();
            let successful = investigate_trajectories(tree, &candidates)
                .expect("candidates are leaves");
            for traj in successful {
                let goal = tree.get(&traj.goal_id).expect("investigated goal exists");
                let key = pipeline_key_for(goal);
                if self.memory.contains_key(RecordKind::Pipeline, &key) {
                    continue;
                }
                let ctx = GoalContext {
                    description: &goal.description,
                    milestones: &goal.milestones,
                };
                match consolidate_pipeline(&traj, ctx, llm, cfg.repair_limit) {
                    Ok(c) => {
                        self.memory.store(&key, RecordPayload::Pipeline(c.pipeline))?;
                        stored.push(StoredRecord {
                            kind: RecordKind::Pipeline,
                            key,
                        });
                    }
                    Err(ConsolidationError::Backend(e)) => return Err(e.into()),
                    Err(e) => {
                        log::warn!("no pipeline for {}: {e}", goal.id);
                        failures.push(format!("{}: {e}", goal.id));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::GoalSpec;

    fn id(s: &str) -> GoalId {
        s.parse().unwrap()
    }

    fn run(t: &mut PlanTree, goal: &str, ok: bool) {
        t.set_status(&id(goal), GoalStatus::InProgress).unwrap();
        t.set_status(&id(goal), if ok { GoalStatus::Success } else { GoalStatus::Failure })
            .unwrap();
    }

    fn two_goal_tree() -> PlanTree {
        PlanTree::new("g", vec![GoalSpec::new("a", vec![]), GoalSpec::new("b", vec![])]).unwrap()
    }

    #[test]
    fn bypassed_failure_still_achieves_the_parent() {
        let mut t = two_goal_tree();
        run(&mut t, "1", false);
        let added = t.add_goal(&id("1"), GoalSpec::new("c", vec![])).unwrap();
        run(&mut t, &added.to_string(), true);
        run(&mut t, "2", true);
        let introduced = BTreeMap::from([(id("1"), vec![added])]);
        resolve_statuses(&mut t, &introduced).unwrap();
        assert_eq!(t.root.status, GoalStatus::Success);
    }

    #[test]
    fn unrepaired_failure_fails_the_parent() {
        let mut t = two_goal_tree();
        run(&mut t, "1", false);
        run(&mut t, "2", true);
        resolve_statuses(&mut t, &BTreeMap::new()).unwrap();
        assert_eq!(t.root.status, GoalStatus::Failure);
    }

    #[test]
    fn inner_goals_settle_bottom_up() {
        let mut t = two_goal_tree();
        t.set_status(&id("1"), GoalStatus::InProgress).unwrap();
        t.split_goal(&id("1"), vec![GoalSpec::new("a1", vec![])]).unwrap();
        run(&mut t, "1-1", true);
        run(&mut t, "2", true);
        resolve_statuses(&mut t, &BTreeMap::new()).unwrap();
        assert_eq!(t.get(&id("1")).unwrap().status, GoalStatus::Success);
        assert_eq!(t.root.status, GoalStatus::Success);
    }

    #[test]
    fn config_bounds() {
        assert!(RunConfig::default().validate().is_ok());
        let bad = RunConfig {
            pipeline_threshold: 1.5,
            ..RunConfig::default()
        };
        assert!(matches!(bad.validate(), Err(EngineError::InvalidConfig(_))));
        let bad = RunConfig {
            max_react_steps: 0,
            ..RunConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn task_predicates_fall_back_to_goal_milestones() {
        let task = TaskSpec {
            id: "t".into(),
            goal: "g".into(),
            env_setup: vec![],
            milestones: BTreeMap::from([("a".to_string(), vec!["file_exists: x".to_string()])]),
        };
        assert_eq!(task.predicates_for("a", &[]), ["file_exists: x"]);
        let own = ["file_exists: y".to_string(), "the draft reads well".to_string()];
        assert_eq!(task.predicates_for("b", &own), ["file_exists: y"]);
    }
}
