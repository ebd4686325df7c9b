//! Prompt rendering and reply parsing for trajectory-to-pipeline extraction.

use serde_json::Value;

use crate::trajectory::{Step, TrajectoryLog};

use super::pipeline::PipelineAutomaton;

pub const EXAMPLE1_PIPELINE: &str = include_str!("../../assets/appendix_a/example1_pipeline.json");
pub const EXAMPLE2_PIPELINE: &str = include_str!("../../assets/appendix_a/example2_pipeline.json");
pub const EXAMPLE1_TRAJECTORY: &str =
    include_str!("../../assets/appendix_a/example1_trajectory.json");
pub const EXAMPLE2_TRAJECTORY: &str =
    include_str!("../../assets/appendix_a/example2_trajectory.json");

const SYSTEM_TEMPLATE: &str = "You are an experienced pipeline extractor who can extract rules and experiences given an execution trajectory.
You are given an execution trajectory with tool calls, which contain the tool name and tool input arguments. You need to generate some information describing what nodes and edges this pipeline contains:
1. some natural language comments and conditions explaining how the current tool call moves to the next tool call.
2. edges between tool calls
3. nodes for every tool call

Here are two examples:
{examples}

Note that:
- If one tool call appears more than once in the tool records, try to i) filter them and leave only one tool call node if those tool calls are useless repeated trials, ii) add switch logic as the example does, which means there are multiple out edges from the tool node.
- Always add the start node and end node in the nodes, and start edge and end edge in the edges.
- Try to simplify the pipeline. Avoid including the wrong tool call trials in the nodes and edges, instead add comments to the edges to state what should be noticed to avoid error happening or add error handle logic such as switch logic.
- Do not miss any properties in nodes and edges. Node name, tool name, and node type in nodes. Edge name, edge type, from node to node, and comments in edges.";

/// `Tool Name / Tool Arguments / Tool Output` records, blank-line separated.
pub fn render_tool_records<'a>(steps: impl IntoIterator<Item = &'a Step>) -> String {
    let mut out = String::new();
    for s in steps {
        let args = serde_json::to_string(&s.tool_args).expect("args serialize");
        let output = serde_json::to_string(&s.tool_output).expect("string serializes");
        out.push_str(&format!(
            "Tool Name: {}\nTool Arguments: {args}\nTool Output: {output}\n\n",
            s.tool_name
        ));
    }
    out
}

/// Query header plus tool records; the same layout is used for the
/// demonstrations and for the trajectory being consolidated.
pub fn render_trajectory_query(description: &str, milestones: &[String], steps: &[Step]) -> String {
    let mut out = format!("Query: {description}\n");
    if !milestones.is_empty() {
        out.push_str(&format!("Milestones: {}\n", milestones.join("; ")));
    }
    out.push_str("\nExecution Trajectory:\n\n");
    out.push_str(&render_tool_records(steps));
    out
}

fn render_example(n: usize, trajectory: &str, pipeline: &str) -> String {
    let log = TrajectoryLog::parse(trajectory).expect("bundled trajectory parses");
    let traj = log.to_trajectory();
    format!(
        "Example {n}:\n{}Pipeline:\n{pipeline}\n",
        render_trajectory_query(&log.description, &[], &traj.steps)
    )
}

pub fn system_prompt() -> String {
    let examples = format!(
        "{}\n{}",
        render_example(1, EXAMPLE1_TRAJECTORY, EXAMPLE1_PIPELINE),
        render_example(2, EXAMPLE2_TRAJECTORY, EXAMPLE2_PIPELINE)
    );
    SYSTEM_TEMPLATE.replace("{examples}", &examples)
}

pub fn repair_message(problems: &[String]) -> String {
    let mut out = String::from("The pipeline you returned is invalid:\n");
    for p in problems {
        out.push_str(&format!("- {p}\n"));
    }
    out.push_str("Return the complete corrected pipeline as a single JSON object.");
    out
}

/// Pulls a JSON object out of a model reply. Accepts fenced blocks, prose
/// around the object, and the brace-less `"key": value, ...` listing.
pub fn extract_json_object(reply: &str) -> Option<Value> {
    let trimmed = strip_fences(reply.trim());
    if let Ok(v @ Value::Object(_)) = serde_json::from_str::<Value>(trimmed) {
        return Some(v);
    }
    if let (Some(a), Some(b)) = (trimmed.find('{'), trimmed.rfind('}')) {
        if a < b {
            if let Ok(v @ Value::Object(_)) = serde_json::from_str::<Value>(&trimmed[a..=b]) {
                return Some(v);
            }
        }
    }
    let wrapped = format!("{{{}}}", trimmed.trim_end_matches(',').trim());
    match serde_json::from_str::<Value>(&wrapped) {
        Ok(v @ Value::Object(_)) => Some(v),
        _ => None,
    }
}

pub(crate) fn strip_fences(text: &str) -> &str {
    let Some(rest) = text.strip_prefix("```") else {
        return text;
    };
    let rest = rest.split_once('\n').map(|(_, body)| body).unwrap_or("");
    rest.trim_end().strip_suffix("```").unwrap_or(rest).trim()
}

pub fn bundled_examples() -> [(TrajectoryLog, PipelineAutomaton); 2] {
    let load = |t: &str, p: &str| {
        (
            TrajectoryLog::parse(t).expect("bundled trajectory parses"),
            PipelineAutomaton::from_json(p).expect("bundled pipeline is valid"),
        )
    };
    [
        load(EXAMPLE1_TRAJECTORY, EXAMPLE1_PIPELINE),
        load(EXAMPLE2_TRAJECTORY, EXAMPLE2_PIPELINE),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn system_prompt_embeds_both_examples() {
        let s = system_prompt();
        assert!(s.starts_with("You are an experienced pipeline extractor"));
        assert!(s.contains("Example 1:\nQuery: Fetch the information of a product with sku W003247135 and W003247136."));
        assert!(s.contains("Example 2:"));
        assert!(s.contains("\"node_name\": \"write_fail_reason_and_suggestions\""));
        assert!(!s.contains("{examples}"));
    }

    #[test]
    fn extraction_variants() {
        let bare = r#""pipeline_name": "x", "nodes": [], "edges": []"#;
        assert_eq!(extract_json_object(bare).unwrap()["pipeline_name"], "x");
        let fenced = "```json\n{\"a\": 1}\n```";
        assert_eq!(extract_json_object(fenced).unwrap()["a"], 1);
        let prose = "Here you go: {\"a\": 2} hope it helps";
        assert_eq!(extract_json_object(prose).unwrap()["a"], 2);
        assert!(extract_json_object("not json at all").is_none());
    }

    #[test]
    fn bundled_examples_are_valid() {
        let [(t1, p1), (t2, p2)] = bundled_examples();
        assert_eq!(t1.steps.len(), 4);
        assert_eq!(p1.nodes.len(), 6);
        assert_eq!(p1.edges.len(), 5);
        assert_eq!(t2.steps.len(), 5);
        assert_eq!(p2.outgoing("product_detail").len(), 2);
    }
}
