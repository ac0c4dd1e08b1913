mod common;

use std::fs;

use serde_json::Value;

use common::{idakit, scenario, stdout, topology_file};

fn path(p: &std::path::Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_accepts_shipped_topologies() {
    for name in ["star.json", "mesh4.json", "mesh6.json"] {
        let o = idakit(&["validate", path(&topology_file(name))]);
        assert_eq!(o.status.code(), Some(0), "{name}: {}", stdout(&o));
        assert!(stdout(&o).contains("valid"));
    }
}

#[test]
fn validate_rejects_a_broken_star_with_exit_one() {
    let text = fs::read_to_string(topology_file("star.json")).unwrap();
    let mut json: Value = serde_json::from_str(&text).unwrap();
    json["wiring"] = serde_json::json!({});
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("broken.json");
    fs::write(&file, json.to_string()).unwrap();
    let o = idakit(&["validate", path(&file)]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
}

#[test]
fn malformed_input_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("junk.json");
    fs::write(&file, "{ not json").unwrap();
    assert_eq!(idakit(&["validate", path(&file)]).status.code(), Some(2));
    assert_eq!(idakit(&["sim", path(&file)]).status.code(), Some(2));
    assert_eq!(idakit(&["sim"]).status.code(), Some(2));
    assert_eq!(
        idakit(&["demo-dft", "--samples", "0"]).status.code(),
        Some(2)
    );
}

#[test]
fn fifty_node_star_script() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let o = idakit(&[
        "sim",
        path(&scenario("star_50.json")),
        "--report",
        path(&report),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let last = r["snapshots"].as_array().unwrap().last().unwrap().clone();
    assert_eq!(last["members"], 50);
    assert_eq!(last["edges"], 49);
    assert_eq!(r["join_summary"]["count"], 50);

    let dot = dir.path().join("star.dot");
    let o = idakit(&[
        "graph",
        path(&scenario("star_50.json")),
        "--out",
        path(&dot),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let dot = fs::read_to_string(&dot).unwrap();
    assert!(
        dot.starts_with("graph") || dot.starts_with("digraph"),
        "{dot}"
    );
    assert_eq!(dot.matches("--").count() + dot.matches("->").count(), 49);
}

#[test]
fn graph_at_a_time_shows_the_partial_configuration() {
    let o = idakit(&["graph", path(&scenario("mesh_grid.json")), "--at", "250"]);
    assert_eq!(o.status.code(), Some(0));
    let dot = stdout(&o);
    assert!(dot.contains("n0") && dot.contains("n2"));
    assert!(!dot.contains("n8"));
}

#[test]
fn stats_variant_reports_mean_and_std() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.txt");
    let out = dir.path().join("out.txt");
    fs::write(&input, "1\n2\n3\n4\n5\n").unwrap();
    let o = idakit(&[
        "demo-dft",
        "--stats",
        "--leaves",
        "1",
        "--blocks",
        "1",
        "--samples",
        "5",
        "--input",
        path(&input),
        "--out",
        path(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = fs::read_to_string(&out).unwrap();
    let fields: Vec<f64> = text
        .split_whitespace()
        .map(|f| f.parse().unwrap())
        .collect();
    assert_eq!(fields.len(), 2);
    assert!((fields[0] - 3.0).abs() < 1e-12);
    assert!((fields[1] - 2f64.sqrt()).abs() < 1e-12);
}

#[test]
fn rooms_demo_writes_its_event_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("rooms.jsonl");
    let o = idakit(&[
        "--seed",
        "4",
        "demo-rooms",
        "--steps",
        "200",
        "--out",
        path(&log),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("conservation held at every tick"));
    let lines = fs::read_to_string(&log).unwrap();
    assert!(lines.lines().count() > 200);
    for line in lines.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert!(v["room"].is_number() || v["room"].is_string());
    }
}

#[test]
fn socket_transport_runs_the_dft_demo() {
    let o = idakit(&[
        "--transport",
        "socket",
        "demo-dft",
        "--leaves",
        "2",
        "--blocks",
        "4",
        "--samples",
        "16",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).trim_end().ends_with("PASS"));
}
