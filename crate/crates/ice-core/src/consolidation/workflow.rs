//! Linearized workflows built from a finished plan tree.

use serde::{Deserialize, Serialize};

use crate::plan::{Goal, GoalId, GoalStatus, PlanTree};

use super::ConsolidationError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowEntry {
    pub id: GoalId,
    pub description: String,
    pub milestones: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workflow {
    pub source_goal: GoalId,
    pub source_description: String,
    pub entries: Vec<WorkflowEntry>,
}

impl Workflow {
    /// Numbered listing used as an in-context planning reference.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, e) in self.entries.iter().enumerate() {
            out.push_str(&format!("{}. {}", i + 1, e.description));
            if !e.milestones.is_empty() {
                out.push_str(&format!(" (milestones: {})", e.milestones.join("; ")));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowOptions {
    /// Also emit workflows for failed goals whose surviving leaves all
    /// succeeded after rectification.
    #[serde(default)]
    pub workflow_for_rectified_failures: bool,
}

/// Leaves of `goal`'s subtree after pruning failed descendants. Pruning
/// removes the failed node only; its surviving descendants take its place.
/// `Some(leaf)` marks an executed, successful leaf; `None` marks a surviving
/// leaf without a successful trajectory (never executed, or an inner goal
/// left childless by pruning).
fn surviving_leaves<'a>(goal: &'a Goal, out: &mut Vec<Option<&'a Goal>>) {
    for child in &goal.children {
        if child.status == GoalStatus::Failure {
            surviving_leaves(child, out);
        } else if child.is_leaf() {
            out.push((child.status == GoalStatus::Success).then_some(child));
        } else if child.walk().iter().skip(1).all(|g| g.status == GoalStatus::Failure) {
            out.push(None);
        } else {
            surviving_leaves(child, out);
        }
    }
}

/// One workflow per successful inner goal, in pre-order. Each lists the
/// goal's surviving successful leaves left to right. Successful leaves and
/// goals with nothing left after pruning produce no workflow.
pub fn consolidate_workflows(
    tree: &PlanTree,
    opts: &WorkflowOptions,
) -> Result<Vec<Workflow>, ConsolidationError> {
    if !tree.is_finalized() {
        return Err(ConsolidationError::UnfinalizedTree);
    }
    let mut workflows = Vec::new();
    for goal in tree.goals() {
        if goal.is_leaf() {
            continue;
        }
        let eligible = match goal.status {
            GoalStatus::Success => true,
            GoalStatus::Failure => opts.workflow_for_rectified_failures,
            _ => false,
        };
        if !eligible {
            continue;
        }
        let mut leaves = Vec::new();
        surviving_leaves(goal, &mut leaves);
        if goal.status == GoalStatus::Failure && leaves.iter().any(Option::is_none) {
            continue;
        }
        let entries: Vec<WorkflowEntry> = leaves
            .into_iter()
            .flatten()
            .map(|g| WorkflowEntry {
                id: g.id.clone(),
                description: g.description.clone(),
                milestones: g.milestones.clone(),
            })
            .collect();
        if entries.is_empty() {
            continue;
        }
        workflows.push(Workflow {
            source_goal: goal.id.clone(),
            source_description: goal.description.clone(),
            entries,
        });
    }
    Ok(workflows)
}
