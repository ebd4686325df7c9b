//! Investigate-consolidate-exploit loop for hierarchical plan-and-act agents.
//!
//! Plans are goal trees, subgoals run as ReACT trajectories against a tool
//! environment, and successful runs are distilled into workflows (for the
//! planner) and pipeline automata (for the executor) kept in an embedding
//! memory.

pub mod consolidation;
pub mod engine;
pub mod harness;
pub mod llm;
pub mod memory;
pub mod plan;
pub mod sim_env;
pub mod trajectory;
