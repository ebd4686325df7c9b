//! Pipeline automata: tool-invocation nodes joined by commented edges.
//!
//! The JSON field set is fixed: `pipeline_name`, `pipeline_purpose`,
//! `nodes[{node_name, tool_name, node_type}]` and
//! `edges[{edge_name, edge_type, from_node, to_node, comments[]}]`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeType {
    Start,
    End,
    ToolServer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineNode {
    pub node_name: String,
    pub tool_name: String,
    pub node_type: NodeType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineEdge {
    pub edge_name: String,
    pub edge_type: String,
    pub from_node: String,
    pub to_node: String,
    pub comments: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineAutomaton {
    pub pipeline_name: String,
    pub pipeline_purpose: String,
    pub nodes: Vec<PipelineNode>,
    pub edges: Vec<PipelineEdge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rule {
    NotAnObject,
    MissingField,
    WrongType,
    EmptyField,
    UnknownNodeType,
    MissingStart,
    MultipleStart,
    MissingEnd,
    MultipleEnd,
    DuplicateNodeName,
    DuplicateEdgeName,
    DanglingEdge,
    StartHasIncoming,
    EndHasOutgoing,
    NoStartEndPath,
    NotOnStartEndPath,
    Cycle,
    InventedTool,
}

/// One broken rule. `location` is a JSON pointer into the document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: Rule,
    pub location: String,
    pub detail: String,
}

impl Violation {
    fn new(rule: Rule, location: impl Into<String>, detail: impl Into<String>) -> Self {
        Violation {
            rule,
            location: location.into(),
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at {}: {}", self.rule, self.location, self.detail)
    }
}

const NODE_FIELDS: [&str; 3] = ["node_name", "tool_name", "node_type"];
const EDGE_FIELDS: [&str; 4] = ["edge_name", "edge_type", "from_node", "to_node"];

fn check_string(
    obj: &serde_json::Map<String, Value>,
    base: &str,
    field: &str,
    non_empty: bool,
    out: &mut Vec<Violation>,
) {
    let loc = format!("{base}/{field}");
    match obj.get(field) {
        None => out.push(Violation::new(Rule::MissingField, loc, format!("`{field}` is missing"))),
        Some(Value::String(s)) => {
            if non_empty && s.trim().is_empty() {
                out.push(Violation::new(Rule::EmptyField, loc, format!("`{field}` is empty")));
            }
        }
        Some(_) => out.push(Violation::new(Rule::WrongType, loc, format!("`{field}` must be a string"))),
    }
}

/// Field-level checks on a raw document. Structural rules are only checked
/// once every field is present and well typed.
pub fn validate_document(doc: &Value) -> Vec<Violation> {
    let mut out = Vec::new();
    let Some(top) = doc.as_object() else {
        return vec![Violation::new(Rule::NotAnObject, "", "pipeline must be a JSON object")];
    };
    check_string(top, "", "pipeline_name", true, &mut out);
    check_string(top, "", "pipeline_purpose", false, &mut out);

    match top.get("nodes") {
        None => out.push(Violation::new(Rule::MissingField, "/nodes", "`nodes` is missing")),
        Some(Value::Array(nodes)) => {
            for (i, node) in nodes.iter().enumerate() {
                let base = format!("/nodes/{i}");
                let Some(obj) = node.as_object() else {
                    out.push(Violation::new(Rule::NotAnObject, base, "node must be an object"));
                    continue;
                };
                for field in NODE_FIELDS {
                    check_string(obj, &base, field, true, &mut out);
                }
                if let Some(Value::String(t)) = obj.get("node_type") {
                    if !t.trim().is_empty() && !matches!(t.as_str(), "Start" | "End" | "ToolServer") {
                        out.push(Violation::new(
                            Rule::UnknownNodeType,
                            format!("{base}/node_type"),
                            format!("unknown node type {t:?}"),
                        ));
                    }
                }
            }
        }
        Some(_) => out.push(Violation::new(Rule::WrongType, "/nodes", "`nodes` must be an array")),
    }

    match top.get("edges") {
        None => out.push(Violation::new(Rule::MissingField, "/edges", "`edges` is missing")),
        Some(Value::Array(edges)) => {
            for (i, edge) in edges.iter().enumerate() {
                let base = format!("/edges/{i}");
                let Some(obj) = edge.as_object() else {
                    out.push(Violation::new(Rule::NotAnObject, base, "edge must be an object"));
                    continue;
                };
                for field in EDGE_FIELDS {
                    check_string(obj, &base, field, field != "edge_type", &mut out);
                }
                let loc = format!("{base}/comments");
                match obj.get("comments") {
                    None => out.push(Violation::new(Rule::MissingField, loc, "`comments` is missing")),
                    Some(Value::Array(items)) => {
                        for (j, c) in items.iter().enumerate() {
                            if !c.is_string() {
                                out.push(Violation::new(
                                    Rule::WrongType,
                                    format!("{loc}/{j}"),
                                    "comment must be a string",
                                ));
                            }
                        }
                    }
                    Some(_) => out.push(Violation::new(Rule::WrongType, loc, "`comments` must be an array")),
                }
            }
        }
        Some(_) => out.push(Violation::new(Rule::WrongType, "/edges", "`edges` must be an array")),
    }
    out
}

/// Structural checks on a typed pipeline. An empty result means valid.
pub fn validate_pipeline(p: &PipelineAutomaton) -> Vec<Violation> {
    let mut out = Vec::new();
    if p.pipeline_name.trim().is_empty() {
        out.push(Violation::new(Rule::EmptyField, "/pipeline_name", "`pipeline_name` is empty"));
    }

    let mut by_name: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, n) in p.nodes.iter().enumerate() {
        by_name.entry(n.node_name.as_str()).or_default().push(i);
        for (field, value) in [("node_name", &n.node_name), ("tool_name", &n.tool_name)] {
            if value.trim().is_empty() {
                out.push(Violation::new(
                    Rule::EmptyField,
                    format!("/nodes/{i}/{field}"),
                    format!("`{field}` is empty"),
                ));
            }
        }
    }
    for (name, idx) in &by_name {
        if idx.len() > 1 {
            for i in idx {
                out.push(Violation::new(
                    Rule::DuplicateNodeName,
                    format!("/nodes/{i}/node_name"),
                    format!("node name {name:?} is used {} times", idx.len()),
                ));
            }
        }
    }

    let typed = |t: NodeType| -> Vec<usize> {
        p.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.node_type == t)
            .map(|(i, _)| i)
            .collect()
    };
    let starts = typed(NodeType::Start);
    let ends = typed(NodeType::End);
    for (kind, idx, missing, multiple) in [
        ("start", &starts, Rule::MissingStart, Rule::MultipleStart),
        ("end", &ends, Rule::MissingEnd, Rule::MultipleEnd),
    ] {
        match idx.len() {
            0 => out.push(Violation::new(missing, "/nodes", format!("no {kind} node"))),
            1 => {}
            n => {
                for i in idx.iter() {
                    out.push(Violation::new(
                        multiple,
                        format!("/nodes/{i}/node_type"),
                        format!("{n} {kind} nodes"),
                    ));
                }
            }
        }
    }

    let node_type_of = |name: &str| -> Option<NodeType> {
        by_name.get(name).map(|idx| p.nodes[idx[0]].node_type)
    };

    let mut edge_names: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut adjacency: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut reverse: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (k, e) in p.edges.iter().enumerate() {
        edge_names.entry(e.edge_name.as_str()).or_default().push(k);
        if e.edge_name.trim().is_empty() {
            out.push(Violation::new(
                Rule::EmptyField,
                format!("/edges/{k}/edge_name"),
                "`edge_name` is empty",
            ));
        }
        let mut ok = true;
        for (field, end) in [("from_node", &e.from_node), ("to_node", &e.to_node)] {
            if node_type_of(end).is_none() {
                ok = false;
                out.push(Violation::new(
                    Rule::DanglingEdge,
                    format!("/edges/{k}/{field}"),
                    format!("edge {:?} references unknown node {end:?}", e.edge_name),
                ));
            }
        }
        if node_type_of(&e.to_node) == Some(NodeType::Start) {
            out.push(Violation::new(
                Rule::StartHasIncoming,
                format!("/edges/{k}"),
                format!("edge {:?} enters the start node", e.edge_name),
            ));
        }
        if node_type_of(&e.from_node) == Some(NodeType::End) {
            out.push(Violation::new(
                Rule::EndHasOutgoing,
                format!("/edges/{k}"),
                format!("edge {:?} leaves the end node", e.edge_name),
            ));
        }
        if ok {
            adjacency.entry(&e.from_node).or_default().push(&e.to_node);
            reverse.entry(&e.to_node).or_default().push(&e.from_node);
        }
    }
    for (name, idx) in &edge_names {
        if idx.len() > 1 && !name.trim().is_empty() {
            for k in idx {
                out.push(Violation::new(
                    Rule::DuplicateEdgeName,
                    format!("/edges/{k}/edge_name"),
                    format!("edge name {name:?} is used {} times", idx.len()),
                ));
            }
        }
    }

    let start = (starts.len() == 1).then(|| p.nodes[starts[0]].node_name.as_str());
    let end = (ends.len() == 1).then(|| p.nodes[ends[0]].node_name.as_str());
    let forward = start.map(|s| reachable(s, &adjacency)).unwrap_or_default();
    let backward = end.map(|e| reachable(e, &reverse)).unwrap_or_default();
    if let (Some(s), Some(e)) = (start, end) {
        if !forward.contains(e) {
            out.push(Violation::new(
                Rule::NoStartEndPath,
                "/edges",
                format!("no path from {s:?} to {e:?}"),
            ));
        }
    }
    for (i, n) in p.nodes.iter().enumerate() {
        if n.node_type != NodeType::ToolServer {
            continue;
        }
        let name = n.node_name.as_str();
        if !(forward.contains(name) && backward.contains(name)) {
            out.push(Violation::new(
                Rule::NotOnStartEndPath,
                format!("/nodes/{i}"),
                format!("node {name:?} is not on any start-to-end path"),
            ));
        }
    }

    for (i, n) in p.nodes.iter().enumerate() {
        let name = n.node_name.as_str();
        let succ = adjacency.get(name).cloned().unwrap_or_default();
        let mut seen = BTreeSet::new();
        for s in succ {
            seen.extend(reachable(s, &adjacency));
        }
        if seen.contains(name) {
            out.push(Violation::new(
                Rule::Cycle,
                format!("/nodes/{i}"),
                format!("node {name:?} lies on a cycle"),
            ));
        }
    }
    out
}

fn reachable<'a>(from: &'a str, adjacency: &BTreeMap<&'a str, Vec<&'a str>>) -> BTreeSet<&'a str> {
    let mut seen = BTreeSet::from([from]);
    let mut queue = VecDeque::from([from]);
    while let Some(n) = queue.pop_front() {
        for &m in adjacency.get(n).into_iter().flatten() {
            if seen.insert(m) {
                queue.push_back(m);
            }
        }
    }
    seen
}

impl PipelineAutomaton {
    /// Field checks, then typed decoding, then structural checks.
    pub fn from_value(doc: &Value) -> Result<Self, Vec<Violation>> {
        let field_problems = validate_document(doc);
        if !field_problems.is_empty() {
            return Err(field_problems);
        }
        let p: PipelineAutomaton = serde_json::from_value(doc.clone())
            .map_err(|e| vec![Violation::new(Rule::WrongType, "", e.to_string())])?;
        let problems = validate_pipeline(&p);
        if problems.is_empty() {
            Ok(p)
        } else {
            Err(problems)
        }
    }

    pub fn from_json(text: &str) -> Result<Self, Vec<Violation>> {
        let doc: Value = serde_json::from_str(text)
            .map_err(|e| vec![Violation::new(Rule::NotAnObject, "", e.to_string())])?;
        Self::from_value(&doc)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("pipeline serializes")
    }

    pub fn node(&self, name: &str) -> Option<&PipelineNode> {
        self.nodes.iter().find(|n| n.node_name == name)
    }

    pub fn start(&self) -> Option<&PipelineNode> {
        self.nodes.iter().find(|n| n.node_type == NodeType::Start)
    }

    pub fn outgoing(&self, node_name: &str) -> Vec<&PipelineEdge> {
        self.edges.iter().filter(|e| e.from_node == node_name).collect()
    }

    pub fn tool_nodes(&self) -> impl Iterator<Item = &PipelineNode> {
        self.nodes.iter().filter(|n| n.node_type == NodeType::ToolServer)
    }

    /// Tool nodes whose tool does not appear in `known_tools`.
    pub fn invented_tools<'a>(&self, known_tools: impl IntoIterator<Item = &'a str>) -> Vec<Violation> {
        let known: BTreeSet<&str> = known_tools.into_iter().collect();
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.node_type == NodeType::ToolServer && !known.contains(n.tool_name.as_str()))
            .map(|(i, n)| {
                Violation::new(
                    Rule::InventedTool,
                    format!("/nodes/{i}/tool_name"),
                    format!("tool {:?} does not appear in the trajectory", n.tool_name),
                )
            })
            .collect()
    }
}
