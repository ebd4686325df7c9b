mod common;

use ice_core::harness::{run_bench, ArmSpec, BackendSpec};

#[test]
fn broken_backend_only_loses_its_arm() {
    let mut suite = common::load_suite();
    suite.spec.arms.insert(
        1,
        ArmSpec {
            name: "Broken".into(),
            planning_ice: true,
            execution_ice: true,
            backend: BackendSpec::Scripted("/nonexistent/scenario.json".into()),
        },
    );
    suite.spec.ablation_sizes.clear();
    let report = run_bench(&suite, false).unwrap();
    assert_eq!(report.arms.len(), 4);
    assert_eq!(report.failed_arms.len(), 1);
    assert_eq!(report.failed_arms[0].arm, "Broken");
}

#[test]
fn reutilization_column_follows_execution_reuse() {
    let mut suite = common::load_suite();
    suite.spec.ablation_sizes.clear();
    let report = run_bench(&suite, false).unwrap();
    for arm in &report.arms {
        assert_eq!(arm.metrics.reutilization_rate_pct.is_some(), arm.execution_ice, "{}", arm.name);
        assert!(arm.metrics.pipeline_served <= arm.metrics.leaf_subgoals);
    }
    let table = report.render_table();
    let row = |name: &str| table.lines().find(|l| l.starts_with(name)).unwrap().to_string();
    let cells = |line: String| line.split_whitespace().rev().take(2).map(str::to_string).collect::<Vec<_>>();
    // last two columns, right to left: re-utilization, rectifications
    assert_eq!(cells(row("Execution ICE")), ["75.00", "-"]);
    assert_eq!(cells(row("Planning ICE")), ["-", "0"]);
    assert_eq!(cells(row("Standard")), ["-", "5"]);
    let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(json["arms"][2]["metrics"]["rectification_times"], 5);
}

#[test]
fn small_ablation_sweep_is_monotone() {
    let mut suite = common::load_suite();
    suite.spec.ablation_sizes = vec![0, 1, 2];
    suite.spec.arms.truncate(1);
    suite.spec.arms[0].planning_ice = true;
    suite.spec.arms[0].execution_ice = true;
    let report = run_bench(&suite, false).unwrap();
    let rows = &report.ablation;
    assert_eq!(rows.len(), 3);
    for pair in rows.windows(2) {
        assert!(pair[1].metrics.api_calls_all <= pair[0].metrics.api_calls_all);
        assert!(pair[1].metrics.completion_rate_pct >= pair[0].metrics.completion_rate_pct);
    }
    assert!(rows[2].metrics.api_calls_all < rows[0].metrics.api_calls_all);
}
