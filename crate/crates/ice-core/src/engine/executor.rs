//! Subgoal execution: stored pipelines first, ReACT as the fallback.

use serde::{Deserialize, Serialize};

use super::prompts::{self, ReactReply};
use super::{EngineError, MilestoneMode, RunConfig};
use crate::consolidation::{validate_pipeline, NodeType, PipelineAutomaton, PipelineEdge};
use crate::llm::{CallTag, CompletionRequest, LlmBackend, LlmError, Message};
use crate::memory::{pipeline_key_for, MemoryStore, RecordKind, RecordPayload};
use crate::plan::{Goal, GoalId};
use crate::sim_env::{EnvError, Environment};
use crate::trajectory::{Step, StepOutcome, ToolArgs, Trajectory, TrajectoryStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExecMethod {
    Pipeline,
    React,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgoalOutcome {
    pub goal_id: GoalId,
    pub description: String,
    pub method: ExecMethod,
    pub trajectory: Option<Trajectory>,
    /// Name of the pipeline that served the subgoal.
    pub pipeline_used: Option<String>,
    /// Similarity of the retrieved pipeline, also set when it failed and
    /// the subgoal fell back to ReACT.
    pub pipeline_similarity: Option<f64>,
    pub fell_back: bool,
    pub success: bool,
}

#[derive(Debug)]
pub enum PipelineRunError {
    Failed(String),
    Backend(LlmError),
}

impl From<LlmError> for PipelineRunError {
    fn from(e: LlmError) -> Self {
        PipelineRunError::Backend(e)
    }
}

/// One backend call, re-prompted with the parse problem until `parse`
/// accepts the reply or `repair_limit` re-prompts are spent.
pub(crate) fn ask<T>(
    llm: &dyn LlmBackend,
    mut req: CompletionRequest,
    repair_limit: u32,
    mut parse: impl FnMut(&str) -> Result<T, String>,
) -> Result<Result<T, String>, LlmError> {
    let mut problem = String::new();
    for _ in 0..=repair_limit {
        let reply = llm.complete(&req)?;
        match parse(&reply) {
            Ok(v) => return Ok(Ok(v)),
            Err(p) => {
                req.messages.push(Message::assistant(reply));
                req.messages.push(Message::user(prompts::parse_problem_message(&p)));
                problem = p;
            }
        }
    }
    Ok(Err(problem))
}

fn invoke_step(env: &mut Environment, thought: String, tool: &str, args: ToolArgs) -> Step {
    let (outcome, output) = match env.invoke(tool, &args) {
        Ok(r) => r,
        Err(EnvError::UnknownTool(name)) => (StepOutcome::ToolError, format!("unknown tool {name:?}")),
        Err(e) => (StepOutcome::ToolError, e.to_string()),
    };
    Step::new(thought, tool, args, output, outcome)
}

/// Walks `p` from Start. Every ToolServer node costs one call to complete
/// its arguments and one invocation; a node with several outgoing edges
/// costs one more call to pick the edge. Returns the (unfinalized)
/// trajectory once End is reached.
pub fn run_pipeline(
    p: &PipelineAutomaton,
    goal: &Goal,
    env: &mut Environment,
    llm: &dyn LlmBackend,
    repair_limit: u32,
) -> Result<Trajectory, PipelineRunError> {
    if let Some(v) = validate_pipeline(p).first() {
        return Err(PipelineRunError::Failed(format!("invalid pipeline: {v}")));
    }
    let mut traj = Trajectory::new(goal.id.clone());
    let mut previous: Vec<(String, String)> = Vec::new();
    let mut current = p.start().expect("validated pipeline has a start").node_name.clone();
    let mut incoming: Option<&PipelineEdge> = None;
    // Validated pipelines are acyclic, so no walk is longer than this.
    for _ in 0..=p.nodes.len() {
        let node = p.node(&current).expect("validated edge target exists");
        match node.node_type {
            NodeType::End => return Ok(traj),
            NodeType::Start => {}
            NodeType::ToolServer => {
                let Some(tool) = env.tool(&node.tool_name) else {
                    return Err(PipelineRunError::Failed(format!(
                        "node {} uses unknown tool {}",
                        node.node_name, node.tool_name
                    )));
                };
                let guidance = incoming.map(|e| e.comments.clone()).unwrap_or_default();
                let user = prompts::param_prompt(
                    &goal.description,
                    &p.pipeline_name,
                    &node.node_name,
                    &tool.signature(),
                    &guidance,
                    &previous,
                );
                let req = CompletionRequest::new(CallTag::ToolHandling, prompts::PIPELINE_SYSTEM, user);
                let args = ask(llm, req, repair_limit, prompts::parse_args)?.map_err(|e| {
                    PipelineRunError::Failed(format!("arguments for {}: {e}", node.node_name))
                })?;
                let thought = format!("pipeline node {}", node.node_name);
                let step = invoke_step(env, thought, &node.tool_name, args);
                previous.push((node.node_name.clone(), step.tool_output.clone()));
                traj.record_step(step).expect("trajectory is open");
            }
        }
        let out = p.outgoing(&current);
        let edge = match out.as_slice() {
            [] => {
                return Err(PipelineRunError::Failed(format!("dead end at {current}")));
            }
            [only] => *only,
            many => {
                let names: Vec<&str> = many.iter().map(|e| e.edge_name.as_str()).collect();
                let user = prompts::choice_prompt(
                    &goal.description,
                    &p.pipeline_name,
                    &current,
                    traj.steps.last(),
                    many,
                );
                let req = CompletionRequest::new(CallTag::ToolHandling, prompts::PIPELINE_SYSTEM, user);
                let chosen = ask(llm, req, repair_limit, |r| {
                    prompts::parse_choice(r, &names).map(str::to_string)
                })?
                .map_err(|e| PipelineRunError::Failed(format!("edge choice at {current}: {e}")))?;
                *many.iter().find(|e| e.edge_name == chosen).expect("choice is an option")
            }
        };
        incoming = Some(edge);
        current = edge.to_node.clone();
    }
    Err(PipelineRunError::Failed("walk did not reach End".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReactRun {
    pub trajectory: Trajectory,
    /// The backend ended the loop declaring success.
    pub declared_success: bool,
}

/// ReACT loop capped at `cfg.max_react_steps` tool invocations. The
/// returned trajectory is not finalized.
pub fn react_loop(
    goal: &Goal,
    env: &mut Environment,
    llm: &dyn LlmBackend,
    cfg: &RunConfig,
) -> Result<ReactRun, EngineError> {
    let tools = env.tool_catalog();
    let mut traj = Trajectory::new(goal.id.clone());
    while traj.steps.len() < cfg.max_react_steps as usize {
        let user = prompts::react_prompt(&goal.description, &goal.milestones, &tools, &traj.steps);
        let req = CompletionRequest::new(CallTag::ToolHandling, prompts::REACT_SYSTEM, user);
        let reply = match ask(llm, req, cfg.repair_limit, prompts::parse_react)? {
            Ok(r) => r,
            Err(problem) => {
                return Err(EngineError::StepParse {
                    goal: goal.id.clone(),
                    attempts: cfg.repair_limit + 1,
                    problem,
                    partial: Box::new(traj),
                })
            }
        };
        match reply {
            ReactReply::Finish { success, .. } => {
                return Ok(ReactRun {
                    trajectory: traj,
                    declared_success: success,
                })
            }
            ReactReply::Call {
                thought,
                tool_name,
                tool_args,
                finish,
            } => {
                let step = invoke_step(env, thought, &tool_name, tool_args);
                traj.record_step(step).expect("trajectory is open");
                if let Some(success) = finish {
                    return Ok(ReactRun {
                        trajectory: traj,
                        declared_success: success,
                    });
                }
            }
        }
    }
    Ok(ReactRun {
        trajectory: traj,
        declared_success: false,
    })
}

/// Milestone check for a finished attempt: predicates over the world in
/// `Predicates` mode, one `Other`-tagged judge call in `Judge` mode.
pub fn milestones_hold(
    goal: &Goal,
    predicates: &[String],
    traj: &Trajectory,
    env: &Environment,
    llm: &dyn LlmBackend,
    mode: MilestoneMode,
) -> Result<bool, EngineError> {
    match mode {
        MilestoneMode::Predicates => Ok(env.evaluate(predicates)?),
        MilestoneMode::Judge => {
            if goal.milestones.is_empty() {
                return Ok(true);
            }
            let user = prompts::judge_prompt(&goal.description, &goal.milestones, &traj.steps);
            let reply = llm.complete(&CompletionRequest::new(CallTag::Other, prompts::JUDGE_SYSTEM, user))?;
            Ok(reply.trim().to_ascii_lowercase().starts_with("yes"))
        }
    }
}

fn finalized(mut traj: Trajectory, success: bool) -> Trajectory {
    let status = if success {
        TrajectoryStatus::Success
    } else {
        TrajectoryStatus::Failure
    };
    traj.finalize(status).expect("fresh trajectory");
    traj
}

/// Runs one leaf. `pipelines` is the store to consult, `None` when
/// execution-level reuse is off.
pub fn handle_subgoal(
    goal: &Goal,
    predicates: &[String],
    pipelines: Option<&MemoryStore>,
    env: &mut Environment,
    llm: &dyn LlmBackend,
    cfg: &RunConfig,
) -> Result<SubgoalOutcome, EngineError> {
    let mut outcome = SubgoalOutcome {
        goal_id: goal.id.clone(),
        description: goal.description.clone(),
        method: ExecMethod::React,
        trajectory: None,
        pipeline_used: None,
        pipeline_similarity: None,
        fell_back: false,
        success: false,
    };
    if let Some(store) = pipelines {
        let hit = store.retrieve(RecordKind::Pipeline, &pipeline_key_for(goal), cfg.pipeline_threshold)?;
        if let Some((record, sim)) = hit {
            let RecordPayload::Pipeline(p) = &record.payload else {
                unreachable!("retrieve filters by kind")
            };
            outcome.pipeline_similarity = Some(sim);
            match run_pipeline(p, goal, env, llm, cfg.repair_limit) {
                Ok(traj) => {
                    if milestones_hold(goal, predicates, &traj, env, llm, cfg.milestone_mode)? {
                        outcome.method = ExecMethod::Pipeline;
                        outcome.pipeline_used = Some(p.pipeline_name.clone());
                        outcome.trajectory = Some(finalized(traj, true));
                        outcome.success = true;
                        return Ok(outcome);
                    }
                    log::info!("pipeline {} missed milestones of {}", p.pipeline_name, goal.id);
                }
                Err(PipelineRunError::Backend(e)) => return Err(e.into()),
                Err(PipelineRunError::Failed(why)) => {
                    log::info!("pipeline {} failed on {}: {why}", p.pipeline_name, goal.id);
                }
            }
            outcome.fell_back = true;
        }
    }
    match react_loop(goal, env, llm, cfg) {
        Ok(run) => {
            let success = run.declared_success
                && milestones_hold(goal, predicates, &run.trajectory, env, llm, cfg.milestone_mode)?;
            outcome.trajectory = Some(finalized(run.trajectory, success));
            outcome.success = success;
        }
        Err(EngineError::StepParse { partial, problem, .. }) => {
            log::warn!("giving up on {}: {problem}", goal.id);
            outcome.trajectory = Some(finalized(*partial, false));
        }
        Err(e) => return Err(e),
    }
    Ok(outcome)
}
