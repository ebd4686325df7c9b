//! Turning finished runs into reusable experience: workflows from plan
//! trees, pipeline automata from successful trajectories.

pub mod pipeline;
pub mod prompt;
mod workflow;

use thiserror::Error;

use crate::llm::{CallTag, CompletionRequest, LlmBackend, LlmError, Message};
use crate::trajectory::Trajectory;

pub use pipeline::{
    validate_document, validate_pipeline, NodeType, PipelineAutomaton, PipelineEdge,
    PipelineNode, Rule, Violation,
};
pub use workflow::{consolidate_workflows, Workflow, WorkflowEntry, WorkflowOptions};

pub const DEFAULT_REPAIR_LIMIT: u32 = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConsolidationError {
    #[error("plan tree still has goals in progress")]
    UnfinalizedTree,
    #[error("trajectory for {0} did not succeed")]
    UnsuccessfulTrajectory(String),
    #[error("pipeline consolidation failed after {attempts} attempts: {problems:?}")]
    ConsolidationFailed {
        attempts: u32,
        problems: Vec<String>,
    },
    #[error(transparent)]
    Backend(#[from] LlmError),
}

/// What the goal looked like when its trajectory ran.
#[derive(Debug, Clone, Copy)]
pub struct GoalContext<'a> {
    pub description: &'a str,
    pub milestones: &'a [String],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsolidatedPipeline {
    pub pipeline: PipelineAutomaton,
    /// Re-prompts needed after the first reply.
    pub repairs: u32,
}

fn slug(text: &str) -> String {
    let mut out = String::new();
    for c in text.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

/// Start -> tool -> End for trajectories with at most one step.
fn trivial_pipeline(traj: &Trajectory, goal: GoalContext<'_>) -> PipelineAutomaton {
    let mut nodes = vec![
        PipelineNode {
            node_name: "start".into(),
            tool_name: "Start".into(),
            node_type: NodeType::Start,
        },
        PipelineNode {
            node_name: "end".into(),
            tool_name: "End".into(),
            node_type: NodeType::End,
        },
    ];
    let mut edges = Vec::new();
    match traj.steps.first() {
        Some(step) => {
            let name = match slug(&step.tool_name) {
                s if s.is_empty() || s == "start" || s == "end" => "tool_call".to_string(),
                s => s,
            };
            nodes.push(PipelineNode {
                node_name: name.clone(),
                tool_name: step.tool_name.clone(),
                node_type: NodeType::ToolServer,
            });
            let args = serde_json::to_string(&step.tool_args).expect("args serialize");
            edges.push(PipelineEdge {
                edge_name: format!("start_{name}"),
                edge_type: "data".into(),
                from_node: "start".into(),
                to_node: name.clone(),
                comments: vec![format!(
                    "Call {} with arguments shaped like {args}.",
                    step.tool_name
                )],
            });
            edges.push(PipelineEdge {
                edge_name: "end_pipeline".into(),
                edge_type: "data".into(),
                from_node: name,
                to_node: "end".into(),
                comments: vec![],
            });
        }
        None => edges.push(PipelineEdge {
            edge_name: "end_pipeline".into(),
            edge_type: "data".into(),
            from_node: "start".into(),
            to_node: "end".into(),
            comments: vec![],
        }),
    }
    PipelineAutomaton {
        pipeline_name: goal.description.to_string(),
        pipeline_purpose: goal.description.to_string(),
        nodes,
        edges,
    }
}

fn check_reply(reply: &str, traj: &Trajectory) -> Result<PipelineAutomaton, Vec<String>> {
    let Some(doc) = prompt::extract_json_object(reply) else {
        return Err(vec!["reply does not contain a JSON object".to_string()]);
    };
    let pipeline = PipelineAutomaton::from_value(&doc)
        .map_err(|v| v.iter().map(ToString::to_string).collect::<Vec<_>>())?;
    let invented = pipeline.invented_tools(traj.steps.iter().map(|s| s.tool_name.as_str()));
    if !invented.is_empty() {
        return Err(invented.iter().map(ToString::to_string).collect());
    }
    Ok(pipeline)
}

/// Prompts the backend to turn `traj` into a pipeline, re-prompting with
/// the list of problems until the reply validates or `repair_limit`
/// re-prompts have been spent.
pub fn consolidate_pipeline(
    traj: &Trajectory,
    goal: GoalContext<'_>,
    llm: &dyn LlmBackend,
    repair_limit: u32,
) -> Result<ConsolidatedPipeline, ConsolidationError> {
    if !traj.succeeded() {
        return Err(ConsolidationError::UnsuccessfulTrajectory(
            traj.goal_id.to_string(),
        ));
    }
    if traj.steps.len() <= 1 {
        return Ok(ConsolidatedPipeline {
            pipeline: trivial_pipeline(traj, goal),
            repairs: 0,
        });
    }

    let mut user = prompt::render_trajectory_query(goal.description, goal.milestones, &traj.steps);
    user.push_str("Pipeline:");
    let mut req = CompletionRequest::new(CallTag::Consolidation, prompt::system_prompt(), user);
    let mut problems = Vec::new();
    for attempt in 0..=repair_limit {
        let reply = llm.complete(&req)?;
        match check_reply(&reply, traj) {
            Ok(mut pipeline) => {
                for e in &mut pipeline.edges {
                    e.edge_type = "data".into();
                }
                return Ok(ConsolidatedPipeline {
                    pipeline,
                    repairs: attempt,
                });
            }
            Err(p) => {
                log::debug!("pipeline reply rejected (attempt {attempt}): {p:?}");
                req.messages.push(Message::assistant(reply));
                req.messages.push(Message::user(prompt::repair_message(&p)));
                problems = p;
            }
        }
    }
    Err(ConsolidationError::ConsolidationFailed {
        attempts: repair_limit + 1,
        problems,
    })
}
