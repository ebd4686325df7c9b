//! Prompts the engine sends and parsers for the replies it expects.

use serde_json::Value;

use crate::consolidation::prompt::{extract_json_object, strip_fences};
use crate::consolidation::{PipelineEdge, Workflow};
use crate::plan::GoalSpec;
use crate::trajectory::{Step, StepOutcome, ToolArgs};

pub const PLAN_SYSTEM: &str = "You are the planner of an autonomous agent. Decompose the user's goal \
into an ordered list of subgoals, each small enough to finish with a handful of tool calls, and give \
each subgoal milestones that show it is done. Reply with a JSON list of objects \
{\"description\": \"...\", \"milestones\": [\"...\"]} and nothing else.";

pub const RECTIFY_SYSTEM: &str = "You are the planner of an autonomous agent. A subgoal of the current \
plan failed. Either split the failed subgoal into smaller subgoals that achieve it, or add new \
subgoals after it that bypass it and still fulfil its parent goal. Reply with one JSON object \
{\"split\": [subgoal, ...], \"add_after\": [subgoal, ...]} where each subgoal is \
{\"description\": \"...\", \"milestones\": [\"...\"]}. Leave a list empty to skip that edit.";

pub const REACT_SYSTEM: &str = "You are the executor of an autonomous agent and work on one subtask \
at a time. Each reply is one JSON object. To call a tool reply \
{\"thought\": \"...\", \"tool_name\": \"...\", \"tool_args\": {...}}; add \"finish\": \"success\" \
when this call completes the subtask. When the subtask is done, or cannot be done, reply \
{\"thought\": \"...\", \"finish\": \"success\"} or {\"thought\": \"...\", \"finish\": \"failure\"}.";

pub const PIPELINE_SYSTEM: &str = "You are executing a stored tool pipeline for a subtask. You are \
asked either to complete the arguments of the tool at the current node, replying with a JSON \
object of arguments, or to choose the next edge at a node with several outgoing edges, replying \
with the edge_name only.";

pub const JUDGE_SYSTEM: &str = "You check whether a subtask's milestones were achieved by its \
execution trajectory. Answer yes or no.";

fn reference_section(title: &str, wf: Option<&Workflow>) -> String {
    match wf {
        Some(w) => format!("{title}:\n{}\n", w.render()),
        None => String::new(),
    }
}

pub fn plan_prompt(goal: &str, reference: Option<&Workflow>, tools: &str) -> String {
    format!(
        "Goal: {goal}\n\n{}Available tools:\n{tools}\nPlan:",
        reference_section(
            "Reference workflow (subgoals that achieved a similar goal before)",
            reference
        )
    )
}

#[allow(clippy::too_many_arguments)]
pub fn rectify_prompt(
    root_goal: &str,
    outline: &str,
    failed_id: &str,
    failed_desc: &str,
    parent_desc: &str,
    failed_ref: Option<&Workflow>,
    parent_ref: Option<&Workflow>,
) -> String {
    format!(
        "Goal: {root_goal}\nCurrent plan:\n{outline}\nFailed subgoal {failed_id}: {failed_desc}\n\
         Parent goal: {parent_desc}\n\n{}{}Rectification:",
        reference_section("Reference workflow for the failed subgoal", failed_ref),
        reference_section("Reference workflow for the parent goal", parent_ref),
    )
}

fn render_step(s: &Step) -> String {
    let args = serde_json::to_string(&s.tool_args).expect("args serialize");
    let outcome = match s.outcome {
        StepOutcome::Ok => "Ok",
        StepOutcome::ToolError => "ToolError",
    };
    format!("Step {}: {} {args} -> {outcome}: {}\n", s.index, s.tool_name, s.tool_output)
}

fn milestone_line(milestones: &[String]) -> String {
    if milestones.is_empty() {
        String::new()
    } else {
        format!("Milestones: {}\n", milestones.join("; "))
    }
}

pub fn react_prompt(desc: &str, milestones: &[String], tools: &str, steps: &[Step]) -> String {
    let mut out = format!(
        "Subtask: {desc}\n{}Available tools:\n{tools}\nSteps so far: {}\n",
        milestone_line(milestones),
        steps.len()
    );
    for s in steps {
        out.push_str(&render_step(s));
    }
    out.push_str("Next step:");
    out
}

pub fn param_prompt(
    desc: &str,
    pipeline: &str,
    node: &str,
    tool_signature: &str,
    guidance: &[String],
    previous: &[(String, String)],
) -> String {
    let mut out = format!(
        "Subtask: {desc}\nPipeline: {pipeline}\nCurrent node: {node}\nTool: {tool_signature}\n"
    );
    if !guidance.is_empty() {
        out.push_str("Guidance:\n");
        for g in guidance {
            out.push_str(&format!("- {g}\n"));
        }
    }
    if !previous.is_empty() {
        out.push_str("Previous outputs:\n");
        for (node, output) in previous {
            out.push_str(&format!("- {node}: {output}\n"));
        }
    }
    out.push_str("Arguments:");
    out
}

pub fn choice_prompt(
    desc: &str,
    pipeline: &str,
    node: &str,
    last: Option<&Step>,
    options: &[&PipelineEdge],
) -> String {
    let mut out = format!("Subtask: {desc}\nPipeline: {pipeline}\nBranch at node: {node}\n");
    if let Some(s) = last {
        let outcome = match s.outcome {
            StepOutcome::Ok => "Ok",
            StepOutcome::ToolError => "ToolError",
        };
        out.push_str(&format!("Last output: {outcome}: {}\n", s.tool_output));
    }
    out.push_str("Options:\n");
    for e in options {
        out.push_str(&format!("- {} -> {}: {}\n", e.edge_name, e.to_node, e.comments.join(" ")));
    }
    out.push_str("Next edge:");
    out
}

pub fn judge_prompt(desc: &str, milestones: &[String], steps: &[Step]) -> String {
    let mut out = format!("Subtask: {desc}\n{}Trajectory:\n", milestone_line(milestones));
    for s in steps {
        out.push_str(&render_step(s));
    }
    out.push_str("Have all milestones been achieved?");
    out
}

pub fn parse_problem_message(problem: &str) -> String {
    format!("Your reply could not be used: {problem}. Reply again in the requested JSON format only.")
}

/// A JSON value out of a reply: the whole text, a fenced block, or the
/// outermost `[...]`/`{...}` span.
fn extract_json(reply: &str) -> Option<Value> {
    let trimmed = strip_fences(reply.trim());
    if let Ok(v) = serde_json::from_str::<Value>(trimmed) {
        return Some(v);
    }
    if let (Some(a), Some(b)) = (trimmed.find('['), trimmed.rfind(']')) {
        if a < b {
            if let Ok(v) = serde_json::from_str::<Value>(&trimmed[a..=b]) {
                return Some(v);
            }
        }
    }
    extract_json_object(reply)
}

fn goal_spec(v: &Value) -> Result<GoalSpec, String> {
    match v {
        Value::String(s) if !s.trim().is_empty() => Ok(GoalSpec::new(s.trim(), vec![])),
        Value::Object(m) => {
            let desc = m
                .get("description")
                .and_then(Value::as_str)
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .ok_or("subgoal without a description")?;
            let milestones = match m.get("milestones") {
                None | Some(Value::Null) => vec![],
                Some(Value::Array(a)) => a
                    .iter()
                    .map(|x| x.as_str().map(str::to_string).ok_or("milestones must be strings"))
                    .collect::<Result<_, _>>()?,
                Some(_) => return Err("milestones must be a list".into()),
            };
            Ok(GoalSpec::new(desc, milestones))
        }
        _ => Err(format!("not a subgoal: {v}")),
    }
}

fn goal_specs(v: &Value) -> Result<Vec<GoalSpec>, String> {
    v.as_array()
        .ok_or_else(|| "expected a list of subgoals".to_string())?
        .iter()
        .map(goal_spec)
        .collect()
}

pub fn parse_plan(reply: &str) -> Result<Vec<GoalSpec>, String> {
    let v = extract_json(reply).ok_or("reply contains no JSON")?;
    let list = match &v {
        Value::Object(m) => m.get("subgoals").ok_or("expected a list of subgoals")?,
        other => other,
    };
    let specs = goal_specs(list)?;
    if specs.is_empty() {
        return Err("the plan has no subgoals".into());
    }
    Ok(specs)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Rectification {
    pub split: Vec<GoalSpec>,
    pub add_after: Vec<GoalSpec>,
}

pub fn parse_rectification(reply: &str) -> Result<Rectification, String> {
    let v = extract_json_object(reply).ok_or("reply contains no JSON object")?;
    let field = |name: &str| match v.get(name) {
        None | Some(Value::Null) => Ok(vec![]),
        Some(list) => goal_specs(list),
    };
    Ok(Rectification {
        split: field("split")?,
        add_after: field("add_after")?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReactReply {
    Call {
        thought: String,
        tool_name: String,
        tool_args: ToolArgs,
        finish: Option<bool>,
    },
    Finish {
        thought: String,
        success: bool,
    },
}

fn finish_flag(v: &Value) -> Result<Option<bool>, String> {
    match v.get("finish") {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Bool(b)) => Ok(Some(*b)),
        Some(Value::String(s)) => match s.to_ascii_lowercase().as_str() {
            "success" | "succeeded" | "done" => Ok(Some(true)),
            "failure" | "failed" | "fail" => Ok(Some(false)),
            _ => Err(format!("unknown finish value {s:?}")),
        },
        Some(other) => Err(format!("unknown finish value {other}")),
    }
}

pub fn parse_react(reply: &str) -> Result<ReactReply, String> {
    let v = extract_json_object(reply).ok_or("reply contains no JSON object")?;
    let thought = v
        .get("thought")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let finish = finish_flag(&v)?;
    match v.get("tool_name").and_then(Value::as_str) {
        Some(tool) if !tool.trim().is_empty() => {
            let tool_args = match v.get("tool_args") {
                None | Some(Value::Null) => ToolArgs::new(),
                Some(Value::Object(m)) => m.clone(),
                Some(_) => return Err("tool_args must be an object".into()),
            };
            Ok(ReactReply::Call {
                thought,
                tool_name: tool.trim().to_string(),
                tool_args,
                finish,
            })
        }
        _ => match finish {
            Some(success) => Ok(ReactReply::Finish { thought, success }),
            None => Err("reply has neither tool_name nor finish".into()),
        },
    }
}

pub fn parse_args(reply: &str) -> Result<ToolArgs, String> {
    match extract_json_object(reply) {
        Some(Value::Object(m)) => match m.get("tool_args") {
            Some(Value::Object(inner)) if m.len() == 1 => Ok(inner.clone()),
            _ => Ok(m),
        },
        _ => Err("reply contains no JSON object of arguments".into()),
    }
}

/// The edge named by a reply: the bare name (quotes and backticks
/// allowed), `{"edge_name": ...}`, or the longest option mentioned in
/// free text.
pub fn parse_choice<'a>(reply: &str, options: &[&'a str]) -> Result<&'a str, String> {
    let bare = reply.trim().trim_matches(|c| c == '"' || c == '`' || c == '\'').trim();
    if let Some(o) = options.iter().find(|o| **o == bare) {
        return Ok(o);
    }
    if let Some(name) = extract_json_object(reply)
        .as_ref()
        .and_then(|v| v.get("edge_name"))
        .and_then(Value::as_str)
    {
        return options
            .iter()
            .find(|o| **o == name)
            .copied()
            .ok_or_else(|| format!("{name:?} is not one of the outgoing edges"));
    }
    let mut mentioned: Vec<&str> = options.iter().copied().filter(|o| reply.contains(o)).collect();
    mentioned.sort_by_key(|o| std::cmp::Reverse(o.len()));
    match mentioned.as_slice() {
        [] => Err(format!("reply names none of: {}", options.join(", "))),
        [only] => Ok(only),
        [first, rest @ ..] if rest.iter().all(|o| first.contains(o)) => Ok(first),
        _ => Err("reply names more than one edge".into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_forms() {
        let p = parse_plan("```json\n[{\"description\": \"a\", \"milestones\": [\"m\"]}, \"b\"]\n```").unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].milestones, ["m"]);
        assert!(parse_plan("Sure! {\"subgoals\": [\"x\"]}").is_ok());
        assert!(parse_plan("[]").is_err());
        assert!(parse_plan("no idea").is_err());
    }

    #[test]
    fn rectification_forms() {
        let r = parse_rectification("{\"split\": [\"a\", \"b\"]}").unwrap();
        assert_eq!(r.split.len(), 2);
        assert!(r.add_after.is_empty());
        assert!(parse_rectification("{\"split\": 3}").is_err());
    }

    #[test]
    fn react_forms() {
        let r = parse_react("{\"thought\": \"t\", \"tool_name\": \"X\", \"tool_args\": {\"a\": 1}, \"finish\": \"success\"}").unwrap();
        assert!(matches!(r, ReactReply::Call { finish: Some(true), .. }));
        let r = parse_react("{\"thought\": \"t\", \"finish\": false}").unwrap();
        assert_eq!(r, ReactReply::Finish { thought: "t".into(), success: false });
        assert!(parse_react("{\"thought\": \"t\"}").is_err());
        assert!(parse_react("{\"finish\": \"maybe\"}").is_err());
    }

    #[test]
    fn choice_forms() {
        let opts = ["product_detail_review_list", "product_detail_write_fail_reason_and_suggestions"];
        assert_eq!(parse_choice("`product_detail_review_list`", &opts).unwrap(), opts[0]);
        assert_eq!(
            parse_choice("{\"edge_name\": \"product_detail_write_fail_reason_and_suggestions\"}", &opts).unwrap(),
            opts[1]
        );
        assert_eq!(parse_choice("I pick product_detail_review_list.", &opts).unwrap(), opts[0]);
        assert!(parse_choice("either", &opts).is_err());
        assert!(parse_choice(&format!("{} or {}", opts[0], opts[1]), &opts).is_err());
    }

    #[test]
    fn args_forms() {
        assert_eq!(parse_args("{\"sku\": \"W1\"}").unwrap()["sku"], "W1");
        assert_eq!(parse_args("{\"tool_args\": {\"sku\": \"W1\"}}").unwrap()["sku"], "W1");
        assert!(parse_args("W1").is_err());
    }
}
