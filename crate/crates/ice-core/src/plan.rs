//! Plan trees: hierarchical goal decomposition with statuses and a
//! rectification log.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("invalid goal: {0}")]
    InvalidGoal(String),
    #[error("unknown goal {0}")]
    UnknownGoal(GoalId),
    #[error("goal {0} already succeeded and cannot be split")]
    SplitOfSuccessfulGoal(GoalId),
    #[error("cannot add a sibling to the root goal")]
    CannotAddSiblingToRoot,
    #[error("illegal status transition for {goal}: {from:?} -> {to:?}")]
    IllegalTransition {
        goal: GoalId,
        from: GoalStatus,
        to: GoalStatus,
    },
    #[error("malformed goal id {0:?}")]
    MalformedGoalId(String),
}

/// Position of a goal in its tree. The root has an empty path.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct GoalId(Vec<u32>);

impl GoalId {
    pub fn root() -> Self {
        GoalId(Vec::new())
    }

    pub fn from_segments(segments: impl Into<Vec<u32>>) -> Self {
        GoalId(segments.into())
    }

    pub fn segments(&self) -> &[u32] {
        &self.0
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn child(&self, index: u32) -> Self {
        let mut path = self.0.clone();
        path.push(index);
        GoalId(path)
    }

    pub fn parent(&self) -> Option<Self> {
        if self.0.is_empty() {
            None
        } else {
            Some(GoalId(self.0[..self.0.len() - 1].to_vec()))
        }
    }

    pub fn last_segment(&self) -> Option<u32> {
        self.0.last().copied()
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    /// True when `self` is `other` or lies underneath it.
    pub fn is_descendant_of(&self, other: &GoalId) -> bool {
        self.0.starts_with(&other.0)
    }
}

impl fmt::Display for GoalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("root");
        }
        let parts: Vec<String> = self.0.iter().map(|s| s.to_string()).collect();
        f.write_str(&parts.join("-"))
    }
}

impl FromStr for GoalId {
    type Err = PlanError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "root" {
            return Ok(GoalId::root());
        }
        let mut path = Vec::new();
        for part in s.split('-') {
            match part.parse::<u32>() {
                Ok(n) if n > 0 => path.push(n),
                _ => return Err(PlanError::MalformedGoalId(s.to_string())),
            }
        }
        Ok(GoalId(path))
    }
}

impl Serialize for GoalId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GoalId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GoalStatus {
    Pending,
    InProgress,
    Success,
    Failure,
}

impl GoalStatus {
    pub const ALL: [GoalStatus; 4] = [
        GoalStatus::Pending,
        GoalStatus::InProgress,
        GoalStatus::Success,
        GoalStatus::Failure,
    ];

    /// Pending -> InProgress -> {Success, Failure}; nothing else.
    pub fn can_transition_to(self, to: GoalStatus) -> bool {
        matches!(
            (self, to),
            (GoalStatus::Pending, GoalStatus::InProgress)
                | (GoalStatus::InProgress, GoalStatus::Success)
                | (GoalStatus::InProgress, GoalStatus::Failure)
        )
    }
}

/// Description and milestones for a goal that has not been placed yet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalSpec {
    pub description: String,
    #[serde(default)]
    pub milestones: Vec<String>,
}

impl GoalSpec {
    pub fn new(description: impl Into<String>, milestones: Vec<String>) -> Self {
        GoalSpec {
            description: description.into(),
            milestones,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Goal {
    pub id: GoalId,
    pub description: String,
    pub milestones: Vec<String>,
    pub status: GoalStatus,
    pub children: Vec<Goal>,
}

impl Goal {
    fn pending(id: GoalId, spec: GoalSpec) -> Self {
        Goal {
            id,
            description: spec.description,
            milestones: spec.milestones,
            status: GoalStatus::Pending,
            children: Vec::new(),
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Pre-order walk of this goal and everything below it.
    pub fn walk(&self) -> Vec<&Goal> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(g) = stack.pop() {
            out.push(g);
            stack.extend(g.children.iter().rev());
        }
        out
    }

    /// Leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<&Goal> {
        self.walk().into_iter().filter(|g| g.is_leaf()).collect()
    }

    fn find(&self, id: &GoalId) -> Option<&Goal> {
        let mut cur = self;
        for depth in self.id.depth()..id.depth() {
            let seg = id.segments()[depth];
            cur = cur.children.iter().find(|c| c.id.last_segment() == Some(seg))?;
        }
        (cur.id == *id).then_some(cur)
    }

    fn find_mut(&mut self, id: &GoalId) -> Option<&mut Goal> {
        let mut cur = self;
        for depth in cur.id.depth()..id.depth() {
            let seg = id.segments()[depth];
            cur = cur
                .children
                .iter_mut()
                .find(|c| c.id.last_segment() == Some(seg))?;
        }
        (cur.id == *id).then_some(cur)
    }

    fn next_child_index(&self) -> u32 {
        self.children
            .iter()
            .filter_map(|c| c.id.last_segment())
            .max()
            .unwrap_or(0)
            + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RectificationKind {
    Split,
    Add,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RectificationEvent {
    pub kind: RectificationKind,
    pub target: GoalId,
    pub introduced: Vec<GoalId>,
    pub sequence_no: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanTree {
    pub root: Goal,
    #[serde(default)]
    pub log: Vec<RectificationEvent>,
}

impl PlanTree {
    /// Builds a fresh tree whose root has one pending child per subgoal.
    pub fn new(root_description: &str, subgoals: Vec<GoalSpec>) -> Result<Self, PlanError> {
        if root_description.trim().is_empty() {
            return Err(PlanError::InvalidGoal(
                "root description must not be empty".into(),
            ));
        }
        let root_id = GoalId::root();
        let children = subgoals
            .into_iter()
            .enumerate()
            .map(|(i, spec)| Goal::pending(root_id.child(i as u32 + 1), spec))
            .collect();
        Ok(PlanTree {
            root: Goal {
                id: root_id,
                description: root_description.to_string(),
                milestones: Vec::new(),
                status: GoalStatus::Pending,
                children,
            },
            log: Vec::new(),
        })
    }

    pub fn get(&self, id: &GoalId) -> Option<&Goal> {
        self.root.find(id)
    }

    fn get_mut(&mut self, id: &GoalId) -> Result<&mut Goal, PlanError> {
        self.root
            .find_mut(id)
            .ok_or_else(|| PlanError::UnknownGoal(id.clone()))
    }

    pub fn rectification_count(&self) -> usize {
        self.log.len()
    }

    fn next_sequence_no(&self) -> u64 {
        self.log.last().map(|e| e.sequence_no + 1).unwrap_or(1)
    }

    /// Appends `new_children` under `target`. An empty list is a no-op.
    pub fn split_goal(
        &mut self,
        target: &GoalId,
        new_children: Vec<GoalSpec>,
    ) -> Result<Vec<GoalId>, PlanError> {
        let seq = self.next_sequence_no();
        let goal = self.get_mut(target)?;
        if goal.status == GoalStatus::Success {
            return Err(PlanError::SplitOfSuccessfulGoal(target.clone()));
        }
        if new_children.is_empty() {
            return Ok(Vec::new());
        }
        let mut introduced = Vec::with_capacity(new_children.len());
        for spec in new_children {
            let id = goal.id.child(goal.next_child_index());
            introduced.push(id.clone());
            goal.children.push(Goal::pending(id, spec));
        }
        self.log.push(RectificationEvent {
            kind: RectificationKind::Split,
            target: target.clone(),
            introduced: introduced.clone(),
            sequence_no: seq,
        });
        Ok(introduced)
    }

    /// Inserts a new sibling right after `after`. Existing ids are never
    /// renumbered; the new goal takes the next free sibling index.
    pub fn add_goal(&mut self, after: &GoalId, new_goal: GoalSpec) -> Result<GoalId, PlanError> {
        let parent_id = after.parent().ok_or(PlanError::CannotAddSiblingToRoot)?;
        let seq = self.next_sequence_no();
        let parent = self
            .root
            .find_mut(&parent_id)
            .ok_or_else(|| PlanError::UnknownGoal(after.clone()))?;
        let pos = parent
            .children
            .iter()
            .position(|c| c.id == *after)
            .ok_or_else(|| PlanError::UnknownGoal(after.clone()))?;
        let id = parent.id.child(parent.next_child_index());
        parent.children.insert(pos + 1, Goal::pending(id.clone(), new_goal));
        self.log.push(RectificationEvent {
            kind: RectificationKind::Add,
            target: after.clone(),
            introduced: vec![id.clone()],
            sequence_no: seq,
        });
        Ok(id)
    }

    pub fn set_status(&mut self, target: &GoalId, status: GoalStatus) -> Result<(), PlanError> {
        let goal = self.get_mut(target)?;
        if !goal.status.can_transition_to(status) {
            return Err(PlanError::IllegalTransition {
                goal: target.clone(),
                from: goal.status,
                to: status,
            });
        }
        goal.status = status;
        Ok(())
    }

    pub fn successful_set(&self) -> BTreeSet<GoalId> {
        self.root
            .walk()
            .into_iter()
            .filter(|g| g.status == GoalStatus::Success)
            .map(|g| g.id.clone())
            .collect()
    }

    pub fn goals(&self) -> Vec<&Goal> {
        self.root.walk()
    }

    pub fn leaves(&self) -> Vec<&Goal> {
        self.root.leaves()
    }

    /// First pending leaf in depth-first order.
    pub fn next_pending_leaf(&self) -> Option<&Goal> {
        self.root
            .leaves()
            .into_iter()
            .find(|g| g.status == GoalStatus::Pending)
    }

    /// True when no goal is still in progress.
    pub fn is_finalized(&self) -> bool {
        self.goals()
            .iter()
            .all(|g| g.status != GoalStatus::InProgress)
    }

    /// Checks structural invariants; returns a description of each problem.
    pub fn check_invariants(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if !self.root.id.is_root() {
            problems.push(format!("root has id {}", self.root.id));
        }
        let mut seen = BTreeSet::new();
        let mut stack = vec![&self.root];
        while let Some(g) = stack.pop() {
            if !seen.insert(g.id.clone()) {
                problems.push(format!("duplicate id {}", g.id));
            }
            for c in &g.children {
                if c.id.parent().as_ref() != Some(&g.id) {
                    problems.push(format!("{} is not a child path of {}", c.id, g.id));
                }
                if c.id.is_root() {
                    problems.push("non-root goal carries the root id".into());
                }
                stack.push(c);
            }
        }
        let mut last = 0;
        for e in &self.log {
            if e.sequence_no <= last {
                problems.push(format!("sequence number {} not increasing", e.sequence_no));
            }
            last = e.sequence_no;
        }
        problems
    }

    /// Indented one-line-per-goal outline used in prompts and CLI output.
    pub fn outline(&self) -> String {
        let mut out = String::new();
        for g in self.goals() {
            let indent = "  ".repeat(g.id.depth());
            out.push_str(&format!(
                "{indent}[{}] {} ({:?})\n",
                g.id, g.description, g.status
            ));
        }
        out
    }
}
