use std::sync::Arc;

use serde_json::{json, Value};

use super::{ArgSpec, ArgType, ToolSpec, WorldState};
use crate::trajectory::ToolArgs;

pub mod tools {
    pub const PRODUCTS_DETAIL: &str = "RapidAPIEnv_rapi_wayfair_products_detail";
    pub const REVIEWS_LIST: &str = "RapidAPIEnv_rapi_wayfair_reviews_list";
    pub const WRITE_TO_FILE: &str = "FileSystemEnv_write_to_file";
    pub const READ_FILE: &str = "FileSystemEnv_read_file";
    pub const KEYWORD_SEARCH: &str = "SearchEnv_keyword_search";
}

pub const PRODUCTS_DATASET: &str = "wayfair_products";

fn str_arg<'a>(args: &'a ToolArgs, name: &str) -> &'a str {
    args.get(name).and_then(Value::as_str).unwrap_or_default()
}

fn product<'a>(world: &'a WorldState, sku: &str) -> Result<&'a Value, String> {
    let products = world.datasets.get(PRODUCTS_DATASET);
    products.and_then(|p| p.get(sku)).ok_or_else(|| {
        let supported: Vec<&str> = products
            .map(|p| p.keys().map(String::as_str).collect())
            .unwrap_or_default();
        format!(
            "fail. Can not find product {sku}. Supported product: {}",
            supported.join(", ")
        )
    })
}

fn products_detail(args: &ToolArgs, world: &mut WorldState) -> Result<String, String> {
    let sku = str_arg(args, "sku");
    let p = product(world, sku)?;
    Ok(json!({
        "sku": sku,
        "name": p.get("name").cloned().unwrap_or(Value::Null),
        "detail": p.get("detail").cloned().unwrap_or(Value::Null),
    })
    .to_string())
}

fn reviews_list(args: &ToolArgs, world: &mut WorldState) -> Result<String, String> {
    let sku = str_arg(args, "sku");
    let p = product(world, sku)?;
    Ok(json!({
        "sku": sku,
        "reviews": p.get("reviews").cloned().unwrap_or_else(|| json!([])),
    })
    .to_string())
}

fn write_to_file(args: &ToolArgs, world: &mut WorldState) -> Result<String, String> {
    let path = str_arg(args, "filepath");
    if path.trim().is_empty() {
        return Err("argument 'filepath' must not be empty".into());
    }
    let content = str_arg(args, "content").to_string();
    world.files.insert(path.to_string(), content.clone());
    Ok(content)
}

fn read_file(args: &ToolArgs, world: &mut WorldState) -> Result<String, String> {
    let path = str_arg(args, "filepath");
    world
        .files
        .get(path)
        .cloned()
        .ok_or_else(|| format!("fail. File {path} does not exist"))
}

/// Records (across every dataset) whose id or JSON text contains all
/// query tokens, case-insensitively. Results are `dataset/id` sorted.
fn keyword_search(args: &ToolArgs, world: &mut WorldState) -> Result<String, String> {
    let query: Vec<String> = crate::memory::tokens(str_arg(args, "query")).collect();
    if query.is_empty() {
        return Err("argument 'query' must contain at least one keyword".into());
    }
    let mut hits = Vec::new();
    for (ds, records) in &world.datasets {
        for (id, record) in records {
            let hay = format!("{id} {record}").to_lowercase();
            if query.iter().all(|q| hay.contains(q.as_str())) {
                hits.push(json!({"id": format!("{ds}/{id}"), "record": record}));
            }
        }
    }
    Ok(Value::Array(hits).to_string())
}

type BehaviorFn = fn(&ToolArgs, &mut WorldState) -> Result<String, String>;

fn tool(name: &str, description: &str, args: Vec<ArgSpec>, f: BehaviorFn) -> ToolSpec {
    ToolSpec {
        name: name.into(),
        description: description.into(),
        args,
        behavior: Arc::new(f),
    }
}

pub fn builtin_toolkit() -> Vec<ToolSpec> {
    vec![
        tool(
            tools::PRODUCTS_DETAIL,
            "Fetch the details of a product by sku.",
            vec![ArgSpec::required("sku", ArgType::String)],
            products_detail,
        ),
        tool(
            tools::REVIEWS_LIST,
            "List customer reviews of a product by sku.",
            vec![ArgSpec::required("sku", ArgType::String)],
            reviews_list,
        ),
        tool(
            tools::WRITE_TO_FILE,
            "Write content into a file, replacing it.",
            vec![
                ArgSpec::required("filepath", ArgType::String),
                ArgSpec::required("content", ArgType::String),
            ],
            write_to_file,
        ),
        tool(
            tools::READ_FILE,
            "Read the content of a file.",
            vec![ArgSpec::required("filepath", ArgType::String)],
            read_file,
        ),
        tool(
            tools::KEYWORD_SEARCH,
            "Search every loaded dataset for records containing all keywords.",
            vec![ArgSpec::required("query", ArgType::String)],
            keyword_search,
        ),
    ]
}
