mod common;

use std::collections::BTreeMap;

use ice_core::consolidation::{prompt, PipelineAutomaton, WorkflowOptions};
use ice_core::engine::{Engine, ExecMethod, RunConfig, RunMode, TaskSpec};
use ice_core::llm::{CallTag, LlmBackend, ScriptRule, ScriptedBackend, ScriptedScenario};
use ice_core::memory::{pipeline_key, EmbedderSpec, MemoryStore, RecordKind, RecordPayload};
use ice_core::plan::GoalStatus;
use ice_core::sim_env::{tools, EnvSetupItem};
use serde_json::json;

const GOAL: &str = "Prepare a blog post reviewing the Wayfair product W003247135";

fn subgoal(desc: &str) -> serde_json::Value {
    json!({ "description": desc, "milestones": [] })
}

/// Scripted replies for one ReACT subtask: `calls` tool steps, the last
/// one closing the subtask with `finish`.
fn react(desc: &str, calls: &[(&str, serde_json::Value)], finish: &str) -> Vec<ScriptRule> {
    calls
        .iter()
        .enumerate()
        .map(|(k, (tool, args))| {
            let mut reply = json!({ "thought": "next", "tool_name": tool, "tool_args": args });
            if k + 1 == calls.len() {
                reply["finish"] = json!(finish);
            }
            ScriptRule::all_of(
                &[&format!("Subtask: {desc}\n"), &format!("Steps so far: {k}\n")],
                reply.to_string(),
            )
        })
        .collect()
}

fn read(path: &str) -> (&'static str, serde_json::Value) {
    (tools::READ_FILE, json!({ "filepath": path }))
}

fn write(path: &str) -> (&'static str, serde_json::Value) {
    (tools::WRITE_TO_FILE, json!({ "filepath": path, "content": "text" }))
}

fn blog_task() -> TaskSpec {
    TaskSpec {
        id: "blog".into(),
        goal: GOAL.into(),
        env_setup: vec![EnvSetupItem::Fixture {
            fixture: "wayfair_products".into(),
        }],
        milestones: BTreeMap::new(),
    }
}

/// Goal 2 fails, is split into 2-1, which fails and is bypassed by 2-2
/// and 2-3.
fn blog_scenario() -> ScriptedScenario {
    let mut rules = vec![
        ScriptRule::all_of(
            &["Failed subgoal 2: ", "Rectification:"],
            json!({ "split": [subgoal("Fetch the details of W003247135")], "add_after": [] }).to_string(),
        ),
        ScriptRule::all_of(
            &["Failed subgoal 2-1: ", "Rectification:"],
            json!({
                "split": [],
                "add_after": [
                    subgoal("Record why W003247135 is unavailable"),
                    subgoal("Fetch the details and reviews of W003247136"),
                ]
            })
            .to_string(),
        ),
        ScriptRule::all_of(
            &[&format!("Goal: {GOAL}\n"), "Plan:"],
            json!([
                subgoal("Find the product W003247135"),
                subgoal("Fetch the details and reviews of W003247135"),
                subgoal("Draft the blog post"),
            ])
            .to_string(),
        ),
    ];
    rules.extend(react("Find the product W003247135", &[(tools::KEYWORD_SEARCH, json!({"query": "W003247135"}))], "success"));
    rules.extend(react(
        "Fetch the details and reviews of W003247135",
        &[(tools::PRODUCTS_DETAIL, json!({"sku": "W003247135"}))],
        "failure",
    ));
    rules.extend(react(
        "Fetch the details of W003247135",
        &[(tools::PRODUCTS_DETAIL, json!({"sku": "W003247135"}))],
        "failure",
    ));
    rules.extend(react("Record why W003247135 is unavailable", &[write("fail_reason.txt")], "success"));
    rules.extend(react(
        "Fetch the details and reviews of W003247136",
        &[
            (tools::PRODUCTS_DETAIL, json!({"sku": "W003247136"})),
            (tools::REVIEWS_LIST, json!({"sku": "W003247136"})),
            write("blog_post_material.txt"),
        ],
        "success",
    ));
    rules.extend(react("Draft the blog post", &[read("blog_post_material.txt"), write("blog_post.md")], "success"));
    ScriptedScenario::new(rules)
}

fn config(planning: bool, execution: bool, mode: RunMode) -> RunConfig {
    RunConfig {
        planning_ice: planning,
        execution_ice: execution,
        mode,
        workflow_options: WorkflowOptions {
            workflow_for_rectified_failures: true,
        },
        ..RunConfig::default()
    }
}

#[test]
fn rectified_blog_post_stores_both_workflows() {
    let llm = ScriptedBackend::new(blog_scenario()).unwrap();
    let memory = MemoryStore::new(EmbedderSpec::default());
    let engine = Engine::new(config(true, false, RunMode::Train), &memory, &llm).unwrap();
    let report = engine.run_task(&blog_task()).unwrap();

    let status = |id: &str| report.plan.get(&common::id(id)).unwrap().status;
    for (id, expected) in [
        ("root", GoalStatus::Success),
        ("1", GoalStatus::Success),
        ("2", GoalStatus::Failure),
        ("2-1", GoalStatus::Failure),
        ("2-2", GoalStatus::Success),
        ("2-3", GoalStatus::Success),
        ("3", GoalStatus::Success),
    ] {
        assert_eq!(status(id), expected, "goal {id}");
    }
    // one split, then two additions
    assert_eq!(report.rectifications, 3);
    assert_eq!(report.counters.get(CallTag::Planning), 3);
    assert_eq!(report.counters.get(CallTag::ToolHandling), 9);
    assert_eq!(report.counters, llm.counters());

    let workflows: Vec<Vec<String>> = memory
        .records()
        .into_iter()
        .map(|r| match r.payload {
            RecordPayload::Workflow(w) => w.entries.iter().map(|e| e.id.to_string()).collect(),
            RecordPayload::Pipeline(_) => panic!("execution reuse is off"),
        })
        .collect();
    assert_eq!(workflows, [vec!["1", "2-2", "2-3", "3"], vec!["2-2", "2-3"]]);
}

#[test]
fn train_mode_never_consults_memory() {
    let llm = ScriptedBackend::new(blog_scenario()).unwrap();
    let memory = MemoryStore::new(EmbedderSpec::default());
    let engine = Engine::new(config(true, false, RunMode::Train), &memory, &llm).unwrap();
    engine.run_task(&blog_task()).unwrap();
    let stored = memory.len();
    llm.rewind();
    let again = engine.run_task(&blog_task()).unwrap();
    assert!(again.stored.is_empty(), "same keys are not stored twice");
    assert_eq!(memory.len(), stored);
    assert_eq!(again.rectifications, 3, "no reference changed the plan");
}

#[test]
fn exploit_mode_stores_nothing() {
    let llm = ScriptedBackend::new(blog_scenario()).unwrap();
    let memory = MemoryStore::new(EmbedderSpec::default());
    let engine = Engine::new(config(true, true, RunMode::Exploit), &memory, &llm).unwrap();
    let report = engine.run_task(&blog_task()).unwrap();
    assert!(report.stored.is_empty());
    assert_eq!(memory.op_stats().writes, 0);
    assert!(memory.op_stats().reads > 0);
}

fn single_task(desc: &str) -> (TaskSpec, ScriptRule) {
    let task = TaskSpec {
        id: "t".into(),
        goal: "Write a note".into(),
        env_setup: vec![],
        milestones: BTreeMap::new(),
    };
    let plan = ScriptRule::all_of(&["Goal: Write a note\n", "Plan:"], json!([subgoal(desc)]).to_string());
    (task, plan)
}

#[test]
fn react_loop_stops_at_the_step_cap() {
    let (task, plan) = single_task("Keep reading");
    let endless = ScriptRule::all_of(
        &["Subtask: Keep reading\n"],
        json!({"thought": "more", "tool_name": tools::READ_FILE, "tool_args": {"filepath": "x"}}).to_string(),
    );
    let llm = ScriptedBackend::new(ScriptedScenario::new(vec![plan, endless])).unwrap();
    let memory = MemoryStore::new(EmbedderSpec::default());
    let cfg = RunConfig {
        max_react_steps: 4,
        rectification_budget: 0,
        ..config(false, false, RunMode::Exploit)
    };
    let report = Engine::new(cfg, &memory, &llm).unwrap().run_task(&task).unwrap();
    let outcome = &report.outcomes[0];
    assert!(!outcome.success);
    assert_eq!(outcome.trajectory.as_ref().unwrap().steps.len(), 4);
    assert_eq!(report.counters.get(CallTag::ToolHandling), 4);
    assert_eq!(report.plan.root.status, GoalStatus::Failure);
}

#[test]
fn unparseable_steps_fail_the_subgoal_after_repairs() {
    let (task, plan) = single_task("Say something odd");
    let first = ScriptRule::all_of(
        &["Subtask: Say something odd\n", "Steps so far: 0\n"],
        json!({"thought": "write", "tool_name": tools::WRITE_TO_FILE, "tool_args": {"filepath": "a", "content": "b"}})
            .to_string(),
    )
    .limited(1);
    let garbage = ScriptRule::all_of(&["Subtask: Say something odd\n"], "I would rather not.");
    let llm = ScriptedBackend::new(ScriptedScenario::new(vec![plan, first, garbage])).unwrap();
    let memory = MemoryStore::new(EmbedderSpec::default());
    let cfg = RunConfig {
        repair_limit: 2,
        rectification_budget: 0,
        ..config(false, false, RunMode::Exploit)
    };
    let report = Engine::new(cfg, &memory, &llm).unwrap().run_task(&task).unwrap();
    let outcome = &report.outcomes[0];
    assert!(!outcome.success);
    assert_eq!(outcome.trajectory.as_ref().unwrap().steps.len(), 1);
    // one good step, then the first reply and two repair attempts
    assert_eq!(report.counters.get(CallTag::ToolHandling), 4);
}

#[test]
fn broken_pipeline_falls_back_to_react() {
    let desc = "Save the product material";
    let (task, plan) = single_task(desc);
    let memory = MemoryStore::new(EmbedderSpec::default());
    let stored = PipelineAutomaton::from_json(prompt::EXAMPLE1_PIPELINE).unwrap();
    memory
        .store(&pipeline_key(desc, &[]), RecordPayload::Pipeline(stored))
        .unwrap();
    let mut rules = vec![
        plan,
        ScriptRule::all_of(&[&format!("Subtask: {desc}\n"), "Current node: "], "no arguments today"),
    ];
    rules.extend(react(desc, &[write("material.txt")], "success"));
    let llm = ScriptedBackend::new(ScriptedScenario::new(rules)).unwrap();
    let cfg = RunConfig {
        repair_limit: 1,
        ..config(false, true, RunMode::Exploit)
    };
    let report = Engine::new(cfg, &memory, &llm).unwrap().run_task(&task).unwrap();
    let outcome = &report.outcomes[0];
    assert!(outcome.success);
    assert!(outcome.fell_back);
    assert_eq!(outcome.method, ExecMethod::React);
    assert!((outcome.pipeline_similarity.unwrap() - 1.0).abs() < 1e-9);
    // two argument attempts, then one ReACT step
    assert_eq!(report.counters.get(CallTag::ToolHandling), 3);
    assert_eq!(memory.records().iter().filter(|r| r.kind() == RecordKind::Pipeline).count(), 1);
}

#[test]
fn per_task_counters_sum_to_the_backend() {
    let suite = common::load_suite();
    let llm = suite.spec.arms[0].backend.build(suite.spec.seed).unwrap();
    let memory = MemoryStore::new(EmbedderSpec::default());
    let engine = Engine::new(config(false, false, RunMode::Exploit), &memory, llm.as_ref())
        .unwrap()
        .with_fixtures(suite.fixtures.clone());
    let mut total = 0;
    for task in &suite.test {
        let before = llm.counters();
        let report = engine.run_task(task).unwrap();
        assert_eq!(report.counters, llm.counters().since(&before), "{}", task.id);
        total += report.counters.all;
    }
    assert_eq!(total, llm.counters().all);
}
