use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn core_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../ice-core")
}

fn suite() -> PathBuf {
    core_dir().join("tests/data/suite")
}

fn ice(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ice")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn scripted() -> String {
    format!("scripted:{}", suite().join("scenario.json").display())
}

fn train(memory: &Path, tasks: &[PathBuf]) -> Output {
    let backend = scripted();
    let fixtures = suite().join("fixtures");
    let mut args = vec!["--memory", s(memory), "--backend", &backend, "--fixtures", s(&fixtures), "train"];
    args.extend(tasks.iter().map(|t| s(t)));
    ice(&args)
}

fn train_tasks(n: usize) -> Vec<PathBuf> {
    let mut all: Vec<PathBuf> = std::fs::read_dir(suite().join("train"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    all.sort();
    all.truncate(n);
    all
}

#[test]
fn bench_prints_table_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.json");
    let o = ice(&["--out", s(&out), "bench", s(&suite().join("bench.json"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = stdout(&o);
    assert!(table.lines().any(|l| l.starts_with("Standard") && l.contains(" 110 ")));
    assert!(table.lines().any(|l| l.starts_with("Planning + Execution ICE") && l.contains(" 38 ")));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(report["arms"][3]["metrics"]["api_calls_all"], 38);
}

#[test]
fn train_stores_workflows_and_pipelines_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    let tasks = train_tasks(2);
    for m in [&a, &b] {
        let o = train(m, &tasks);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let snapshot = std::fs::read_to_string(&a).unwrap();
    assert_eq!(snapshot, std::fs::read_to_string(&b).unwrap());
    let doc: Value = serde_json::from_str(&snapshot).unwrap();
    let kinds: Vec<&str> = doc["records"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["payload"]["kind"].as_str().unwrap_or(""))
        .collect();
    let listing = stdout(&ice(&["--memory", s(&a), "memory", "list"]));
    assert!(listing.lines().any(|l| l.contains("\tworkflow\t")), "{listing}");
    assert!(listing.lines().any(|l| l.contains("\tpipeline\t")), "{listing}");
    assert_eq!(listing.lines().count(), kinds.len());
}

#[test]
fn train_with_no_tasks_writes_an_empty_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let memory = dir.path().join("m.json");
    let o = train(&memory, &[]);
    assert_eq!(code(&o), 0);
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(memory).unwrap()).unwrap();
    assert_eq!(doc["records"], json!([]));
}

#[test]
fn run_reuses_trained_memory() {
    let dir = tempfile::tempdir().unwrap();
    let memory = dir.path().join("m.json");
    assert_eq!(code(&train(&memory, &train_tasks(5))), 0);
    let before = std::fs::read(&memory).unwrap();
    let backend = scripted();
    let fixtures = suite().join("fixtures");
    let test = suite().join("test/test-2-climate_news.json");
    let out = dir.path().join("reports.json");
    let o = ice(&[
        "--memory", s(&memory), "--backend", &backend, "--fixtures", s(&fixtures), "--out", s(&out), "run", s(&test),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("3/3 subgoals succeeded"), "{}", stdout(&o));
    assert!(stdout(&o).contains("total: 7 calls"));
    assert_eq!(std::fs::read(&memory).unwrap(), before);
    let reports: Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(reports["counters"]["all"], 7);
}

#[test]
fn consolidate_reproduces_the_reference_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let expected = std::fs::read_to_string(core_dir().join("assets/appendix_a/example1_pipeline.json")).unwrap();
    let scenario = dir.path().join("scenario.json");
    std::fs::write(&scenario, json!([{ "match": "Pipeline:", "response": expected }]).to_string()).unwrap();
    let out = dir.path().join("pipeline.json");
    let log = core_dir().join("assets/appendix_a/example1_trajectory.json");
    let backend = format!("scripted:{}", scenario.display());
    let o = ice(&["--backend", &backend, "--out", s(&out), "consolidate", s(&log)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let got: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let want: Value = serde_json::from_str(&expected).unwrap();
    assert_eq!(got, want);
}

#[test]
fn malformed_log_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("broken.json");
    std::fs::write(&log, "{\n  \"goal_id\": \"1\",\n  \"steps\": [\n    oops\n]}").unwrap();
    let o = ice(&["--backend", &scripted(), "consolidate", s(&log)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 4"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn export_then_import_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let memory = dir.path().join("m.json");
    assert_eq!(code(&train(&memory, &train_tasks(1))), 0);
    let export = dir.path().join("export");
    assert_eq!(code(&ice(&["--memory", s(&memory), "memory", "export", s(&export)])), 0);
    let pipeline = std::fs::read_dir(&export)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.to_str().unwrap().ends_with("-pipeline.json"))
        .expect("a pipeline was exported");
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(pipeline).unwrap()).unwrap();
    assert!(doc["nodes"].is_array() && doc["edges"].is_array());

    let copy = dir.path().join("copy.json");
    assert_eq!(code(&ice(&["--memory", s(&copy), "memory", "import", s(&export)])), 0);
    assert_eq!(std::fs::read(&memory).unwrap(), std::fs::read(&copy).unwrap());

    let shown = ice(&["--memory", s(&memory), "memory", "show", "0"]);
    assert_eq!(code(&shown), 0);
    assert_eq!(code(&ice(&["--memory", s(&memory), "memory", "show", "999"])), 1);
}

#[test]
fn exit_codes() {
    assert_eq!(code(&ice(&["frobnicate"])), 1);
    assert_eq!(code(&ice(&["--help"])), 0);
    assert_eq!(code(&ice(&["run", "task.json"])), 2, "missing task file");

    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("empty.json");
    std::fs::write(&scenario, "[]").unwrap();
    let task = suite().join("test/test-1-product_blog.json");
    let backend = format!("scripted:{}", scenario.display());
    let o = ice(&["--backend", &backend, "run", s(&task)]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(code(&ice(&["--backend", "scripted:/nope.json", "run", s(&task)])), 3);
    assert_eq!(code(&ice(&["run", s(&task)])), 1, "no backend given");
}
