//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::path::PathBuf;

use ice_core::harness::LoadedBench;
use ice_core::plan::{Goal, GoalId, GoalSpec, GoalStatus, PlanTree};
use rand::Rng;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

pub fn suite_bench() -> PathBuf {
    data_dir().join("suite/bench.json")
}

pub fn load_suite() -> LoadedBench {
    LoadedBench::load(&suite_bench()).expect("suite loads")
}

pub fn id(s: &str) -> GoalId {
    s.parse().expect("goal id")
}

fn finish(t: &mut PlanTree, goal: &str, ok: bool) {
    let g = id(goal);
    t.set_status(&g, GoalStatus::InProgress).unwrap();
    t.set_status(&g, if ok { GoalStatus::Success } else { GoalStatus::Failure })
        .unwrap();
}

/// The blog-post case: goal 2 fails, is split into 2-1, which fails too
/// and gets 2-2 and 2-3 added after it.
pub fn fig4_tree() -> PlanTree {
    let spec = |d: &str, m: &str| GoalSpec::new(d, vec![m.to_string()]);
    let mut t = PlanTree::new(
        "Prepare a blog post reviewing the Wayfair product W003247135",
        vec![
            spec("Find the product W003247135 on Wayfair", "product page located"),
            spec(
                "Fetch the details and reviews of W003247135 and save them to blog_post_material.txt",
                "blog_post_material.txt exists",
            ),
            spec("Draft the blog post from blog_post_material.txt", "blog_post.md exists"),
        ],
    )
    .unwrap();
    t.set_status(&GoalId::root(), GoalStatus::InProgress).unwrap();
    finish(&mut t, "1", true);
    t.set_status(&id("2"), GoalStatus::InProgress).unwrap();
    t.split_goal(
        &id("2"),
        vec![spec("Fetch the details of W003247135", "details fetched")],
    )
    .unwrap();
    finish(&mut t, "2-1", false);
    let a = t
        .add_goal(
            &id("2-1"),
            spec(
                "Record why W003247135 is unavailable and pick the suggested product W003247136",
                "fail_reason_and_suggestions.txt exists",
            ),
        )
        .unwrap();
    t.add_goal(
        &a,
        spec(
            "Fetch the details and reviews of W003247136 and save them to blog_post_material.txt",
            "blog_post_material.txt exists",
        ),
    )
    .unwrap();
    finish(&mut t, "2-2", true);
    finish(&mut t, "2-3", true);
    t.set_status(&id("2"), GoalStatus::Failure).unwrap();
    finish(&mut t, "3", true);
    t.set_status(&GoalId::root(), GoalStatus::Success).unwrap();
    t
}

/// Random finalized tree: depth at most `max_depth` below the root,
/// fan-out at most `max_fanout`, statuses drawn from Pending, Success and
/// Failure.
pub fn random_tree(rng: &mut impl Rng, max_depth: usize, max_fanout: usize) -> PlanTree {
    fn status(rng: &mut impl Rng) -> GoalStatus {
        match rng.gen_range(0..5) {
            0 => GoalStatus::Pending,
            1 | 2 => GoalStatus::Failure,
            _ => GoalStatus::Success,
        }
    }
    fn grow(rng: &mut impl Rng, id: GoalId, depth: usize, max_depth: usize, max_fanout: usize) -> Goal {
        let n = if depth >= max_depth || (depth > 0 && rng.gen_bool(0.35)) {
            0
        } else {
            rng.gen_range(1..=max_fanout)
        };
        let children = (1..=n as u32)
            .map(|i| grow(rng, id.child(i), depth + 1, max_depth, max_fanout))
            .collect();
        Goal {
            description: format!("goal {id}"),
            milestones: vec![format!("milestone of {id}")],
            status: status(rng),
            id,
            children,
        }
    }
    PlanTree {
        root: grow(rng, GoalId::root(), 0, max_depth, max_fanout),
        log: vec![],
    }
}

/// Node of an explicitly pruned copy of a tree.
pub struct Pruned {
    pub id: GoalId,
    pub original_leaf: bool,
    pub status: GoalStatus,
    pub children: Vec<Pruned>,
}

/// Copy of `g`'s subtree with every Failure descendant removed and its
/// own surviving children spliced into its place.
pub fn prune(g: &Goal) -> Pruned {
    fn spliced(g: &Goal) -> Vec<Pruned> {
        let mut out = Vec::new();
        for c in &g.children {
            if c.status == GoalStatus::Failure {
                out.extend(spliced(c));
            } else {
                out.push(Pruned {
                    id: c.id.clone(),
                    original_leaf: c.children.is_empty(),
                    status: c.status,
                    children: spliced(c),
                });
            }
        }
        out
    }
    Pruned {
        id: g.id.clone(),
        original_leaf: g.children.is_empty(),
        status: g.status,
        children: spliced(g),
    }
}

pub fn pruned_leaves(p: &Pruned) -> Vec<&Pruned> {
    if p.children.is_empty() {
        return vec![p];
    }
    p.children.iter().flat_map(pruned_leaves).collect()
}

/// Brute force: for each eligible inner goal in pre-order, the DFS leaves
/// of its pruned subtree that are successful leaves of the original tree.
pub fn workflow_oracle(tree: &PlanTree, rectified_failures: bool) -> Vec<(GoalId, Vec<GoalId>)> {
    let mut all: Vec<&Goal> = Vec::new();
    fn pre<'a>(g: &'a Goal, out: &mut Vec<&'a Goal>) {
        out.push(g);
        for c in &g.children {
            pre(c, out);
        }
    }
    pre(&tree.root, &mut all);
    let mut out = Vec::new();
    for g in all {
        if g.children.is_empty() {
            continue;
        }
        let pruned = prune(g);
        if pruned.children.is_empty() {
            continue;
        }
        let leaves = pruned_leaves(&pruned);
        let with_traj: Vec<GoalId> = leaves
            .iter()
            .filter(|l| l.original_leaf && l.status == GoalStatus::Success)
            .map(|l| l.id.clone())
            .collect();
        let keep = match g.status {
            GoalStatus::Success => !with_traj.is_empty(),
            GoalStatus::Failure => rectified_failures && !with_traj.is_empty() && with_traj.len() == leaves.len(),
            _ => false,
        };
        if keep {
            out.push((g.id.clone(), with_traj));
        }
    }
    out
}
