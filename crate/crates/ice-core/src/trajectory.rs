//! ReACT execution trajectories and the selection of successful ones.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::plan::{GoalId, GoalStatus, PlanTree};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TrajectoryError {
    #[error("trajectory for {0} is already finalized")]
    AppendAfterFinalize(GoalId),
    #[error("trajectory for {0} is already finalized")]
    AlreadyFinalized(GoalId),
    #[error("trajectory goal {0} is not a leaf of the plan")]
    NonLeafTrajectory(GoalId),
    #[error("trajectory log line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepOutcome {
    Ok,
    ToolError,
}

pub type ToolArgs = Map<String, Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    #[serde(default)]
    pub index: usize,
    #[serde(default)]
    pub thought: String,
    pub tool_name: String,
    #[serde(default)]
    pub tool_args: ToolArgs,
    #[serde(default)]
    pub tool_output: String,
    #[serde(default = "default_outcome")]
    pub outcome: StepOutcome,
}

fn default_outcome() -> StepOutcome {
    StepOutcome::Ok
}

impl Step {
    pub fn new(
        thought: impl Into<String>,
        tool_name: impl Into<String>,
        tool_args: ToolArgs,
        tool_output: impl Into<String>,
        outcome: StepOutcome,
    ) -> Self {
        Step {
            index: 0,
            thought: thought.into(),
            tool_name: tool_name.into(),
            tool_args,
            tool_output: tool_output.into(),
            outcome,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrajectoryStatus {
    Success,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub goal_id: GoalId,
    pub steps: Vec<Step>,
    pub final_status: Option<TrajectoryStatus>,
}

impl Trajectory {
    pub fn new(goal_id: GoalId) -> Self {
        Trajectory {
            goal_id,
            steps: Vec::new(),
            final_status: None,
        }
    }

    pub fn is_finalized(&self) -> bool {
        self.final_status.is_some()
    }

    /// Appends `step`, overwriting its index with the next contiguous one.
    pub fn record_step(&mut self, mut step: Step) -> Result<usize, TrajectoryError> {
        if self.is_finalized() {
            return Err(TrajectoryError::AppendAfterFinalize(self.goal_id.clone()));
        }
        step.index = self.steps.len() + 1;
        self.steps.push(step);
        Ok(self.steps.len())
    }

    pub fn finalize(&mut self, status: TrajectoryStatus) -> Result<(), TrajectoryError> {
        if self.is_finalized() {
            return Err(TrajectoryError::AlreadyFinalized(self.goal_id.clone()));
        }
        self.final_status = Some(status);
        Ok(())
    }

    pub fn succeeded(&self) -> bool {
        self.final_status == Some(TrajectoryStatus::Success)
    }

    pub fn error_count(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| s.outcome == StepOutcome::ToolError)
            .count()
    }
}

/// Keeps the trajectories whose goal finished with `Success`, in input
/// order. Steps that hit tool errors do not disqualify a trajectory.
pub fn investigate_trajectories(
    tree: &PlanTree,
    all: &[Trajectory],
) -> Result<Vec<Trajectory>, TrajectoryError> {
    let mut out = Vec::new();
    for traj in all {
        let goal = tree
            .get(&traj.goal_id)
            .filter(|g| g.is_leaf())
            .ok_or_else(|| TrajectoryError::NonLeafTrajectory(traj.goal_id.clone()))?;
        if goal.status == GoalStatus::Success {
            out.push(traj.clone());
        }
    }
    Ok(out)
}

/// On-disk trajectory log: a header plus the ordered step records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub goal_id: GoalId,
    pub final_status: TrajectoryStatus,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub milestones: Vec<String>,
    pub steps: Vec<LogStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogStep {
    #[serde(default)]
    pub thought: String,
    pub tool_name: String,
    #[serde(default)]
    pub tool_args: ToolArgs,
    #[serde(default)]
    pub tool_output: String,
    #[serde(default = "default_outcome")]
    pub outcome: StepOutcome,
}

impl TrajectoryLog {
    pub fn from_trajectory(
        traj: &Trajectory,
        description: &str,
        milestones: &[String],
    ) -> Option<Self> {
        Some(TrajectoryLog {
            goal_id: traj.goal_id.clone(),
            final_status: traj.final_status?,
            description: description.to_string(),
            milestones: milestones.to_vec(),
            steps: traj
                .steps
                .iter()
                .map(|s| LogStep {
                    thought: s.thought.clone(),
                    tool_name: s.tool_name.clone(),
                    tool_args: s.tool_args.clone(),
                    tool_output: s.tool_output.clone(),
                    outcome: s.outcome,
                })
                .collect(),
        })
    }

    pub fn parse(text: &str) -> Result<Self, TrajectoryError> {
        serde_json::from_str(text).map_err(|e| TrajectoryError::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn to_trajectory(&self) -> Trajectory {
        let mut traj = Trajectory::new(self.goal_id.clone());
        for s in &self.steps {
            traj.record_step(Step::new(
                s.thought.clone(),
                s.tool_name.clone(),
                s.tool_args.clone(),
                s.tool_output.clone(),
                s.outcome,
            ))
            .expect("fresh trajectory accepts steps");
        }
        traj.final_status = Some(self.final_status);
        traj
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::GoalSpec;

    fn step(tool: &str) -> Step {
        Step::new("t", tool, ToolArgs::new(), "out", StepOutcome::Ok)
    }

    #[test]
    fn indices_are_contiguous() {
        let mut t = Trajectory::new(GoalId::root());
        for _ in 0..4 {
            t.record_step(step("x")).unwrap();
        }
        let idx: Vec<usize> = t.steps.iter().map(|s| s.index).collect();
        assert_eq!(idx, [1, 2, 3, 4]);
    }

    #[test]
    fn append_after_finalize_is_rejected() {
        let mut t = Trajectory::new(GoalId::root());
        t.finalize(TrajectoryStatus::Success).unwrap();
        assert_eq!(
            t.record_step(step("x")),
            Err(TrajectoryError::AppendAfterFinalize(GoalId::root()))
        );
        assert!(t.finalize(TrajectoryStatus::Failure).is_err());
    }

    #[test]
    fn keeps_successful_trajectories_with_errors() {
        let mut tree = PlanTree::new(
            "research",
            vec![
                GoalSpec::new("climate research", vec![]),
                GoalSpec::new("other", vec![]),
            ],
        )
        .unwrap();
        let g1: GoalId = "1".parse().unwrap();
        let g2: GoalId = "2".parse().unwrap();
        for (g, s) in [(&g1, GoalStatus::Success), (&g2, GoalStatus::Failure)] {
            tree.set_status(g, GoalStatus::InProgress).unwrap();
            tree.set_status(g, s).unwrap();
        }
        let mut ok = Trajectory::new(g1.clone());
        ok.record_step(step("search")).unwrap();
        ok.record_step(step("search")).unwrap();
        ok.record_step(Step::new("t", "bad", ToolArgs::new(), "err", StepOutcome::ToolError))
            .unwrap();
        ok.finalize(TrajectoryStatus::Success).unwrap();
        let mut bad = Trajectory::new(g2);
        bad.finalize(TrajectoryStatus::Failure).unwrap();

        let kept = investigate_trajectories(&tree, &[ok.clone(), bad]).unwrap();
        assert_eq!(kept, vec![ok]);
        assert_eq!(kept[0].error_count(), 1);
    }

    #[test]
    fn non_leaf_trajectory_is_an_error() {
        let tree = PlanTree::new("g", vec![GoalSpec::new("a", vec![])]).unwrap();
        let t = Trajectory::new(GoalId::root());
        assert_eq!(
            investigate_trajectories(&tree, &[t]),
            Err(TrajectoryError::NonLeafTrajectory(GoalId::root()))
        );
    }

    #[test]
    fn log_parse_reports_line() {
        let err = TrajectoryLog::parse("{\n\"goal_id\": \"1\",\n oops\n}").unwrap_err();
        match err {
            TrajectoryError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
