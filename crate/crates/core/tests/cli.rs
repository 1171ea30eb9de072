use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dagpar::fixtures;
use dagpar::ingest::load_json;
use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(format!("{name}.json"))
}

fn dagpar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dagpar")).args(args).output().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn fixture_files_match_builders() {
    for g in [
        fixtures::diamond(),
        fixtures::chain(),
        fixtures::seven_node(),
        fixtures::fire_module(),
    ] {
        let (loaded, report) = load_json(&fs::read(fixture(&g.name)).unwrap()).unwrap();
        assert_eq!(loaded, g);
        assert!(report.warnings.is_empty());
    }
}

#[test]
fn analyze_prints_table() {
    let out = dagpar(&["analyze", "--input", fixture("diamond").to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("1.25x"), "{text}");
}

#[test]
fn compile_writes_artifacts_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let report = dir.path().join("report.json");
    let out = dagpar(&[
        "compile",
        "--input",
        fixture("fire_module").to_str().unwrap(),
        "--batch",
        "2",
        "--hypercluster",
        "switched",
        "--out",
        out_dir.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["parallel.py", "sequential.py", "plan.json", "manifest.json"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let r = read_json(&report);
    assert_eq!(r["status"], "ok");
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["hypercluster"]["balance"], "1.00");
    assert_eq!(r["simulation"]["makespan"], 17);
    let manifest = read_json(&out_dir.join("manifest.json"));
    assert_eq!(manifest["batch"], 2);
    assert_eq!(manifest["workers"].as_array().unwrap().len(), 2);
}

#[test]
fn simulate_writes_trace_lines() {
    let dir = tempfile::tempdir().unwrap();
    let out = dagpar(&[
        "simulate",
        "--input",
        fixture("diamond").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let trace = fs::read_to_string(dir.path().join("trace.jsonl")).unwrap();
    let lines: Vec<Value> = trace.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let computes = lines.iter().filter(|l| l["kind"] == "compute").count();
    assert_eq!(computes, 4);
    for l in &lines {
        let keys: Vec<&str> = l.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys, ["batch", "cluster", "end", "kind", "op", "start"]);
    }
    let end = lines.iter().map(|l| l["end"].as_u64().unwrap()).max().unwrap();
    assert_eq!(end, 8);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dagpar(&["analyze", "--input", "/nonexistent/graph.json"]);
    assert_eq!(missing.status.code(), Some(2));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"name": "x", "nodes": 3}"#).unwrap();
    let schema = dagpar(&["analyze", "--input", bad.to_str().unwrap()]);
    assert_eq!(schema.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&schema.stderr).contains("nodes"));

    let b1 = dagpar(&[
        "compile",
        "--input",
        fixture("diamond").to_str().unwrap(),
        "--hypercluster",
        "plain",
    ]);
    assert_eq!(b1.status.code(), Some(2));

    let mut g = fixtures::chain();
    g.nodes[1].op = dagpar::ir::OpKind::Other("Mystery".into());
    let opaque = dir.path().join("opaque.json");
    fs::write(&opaque, dagpar::ingest::to_json(&g)).unwrap();
    let report = dir.path().join("r.json");
    let out = dagpar(&[
        "compile",
        "--input",
        opaque.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let r = read_json(&report);
    assert_eq!(r["status"], "error");
    assert_eq!(r["failure"]["stage"], "codegen");
    assert!(r["clustering"].is_object());
}

#[test]
fn passes_and_policy_flags() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let out = dagpar(&[
        "analyze",
        "--input",
        fixture("seven_node").to_str().unwrap(),
        "--passes",
        "fold,dce,clone",
        "--clone-depth-frac",
        "0.75",
        "--clone-max-growth",
        "3/2",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = read_json(&report);
    let passes: Vec<&str> = r["passes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["pass"].as_str().unwrap())
        .collect();
    assert_eq!(passes, ["fold", "dce", "clone"]);
    assert_eq!(r["config"]["clone_policy"]["max_growth_ratio"], "1.50");

    let bad = dagpar(&[
        "analyze",
        "--input",
        fixture("chain").to_str().unwrap(),
        "--passes",
        "inline",
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn exported_cnn_matches_reference_output() {
    use dagpar::ir::{eval_graph, TensorValue};
    let bytes = fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/small_cnn.onnx")).unwrap();
    let (g, report) = dagpar::ingest::load_onnx(&bytes).unwrap();
    assert_eq!(g.nodes.len(), 12);
    assert!(report.unknown_ops.is_empty(), "{:?}", report.unknown_ops);

    let reference = read_json(&fixture("small_cnn_reference"));
    let floats = |v: &Value| -> Vec<f64> { v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect() };
    let spec = g.inputs[0].clone();
    assert_eq!(spec.name, reference["input"]);
    let mut inputs = std::collections::BTreeMap::new();
    inputs.insert(spec.name.clone(), TensorValue::new(spec, floats(&reference["x"])));
    let outputs = eval_graph(&g, &inputs).unwrap();
    let got = &outputs[&g.outputs[0]];
    let want = floats(&reference["output"]);
    assert_eq!(got.shape(), [1, 5]);
    let dev = got
        .data
        .iter()
        .zip(&want)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(dev < 1e-5, "max deviation {dev}");
}

#[test]
fn exported_cnn_compiles() {
    let dir = tempfile::tempdir().unwrap();
    let input = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/small_cnn.onnx");
    let out = dagpar(&[
        "compile",
        "--input",
        input.to_str().unwrap(),
        "--passes",
        "fold,dce,clone",
        "--batch",
        "2",
        "--hypercluster",
        "plain",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("parallel.py").exists());
}

#[test]
fn cost_model_file_overrides_weights() {
    let dir = tempfile::tempdir().unwrap();
    let cm = dir.path().join("cm.json");
    fs::write(&cm, r#"{"base": {"MatMul": 10}, "edge_cost": 2}"#).unwrap();
    let report = dir.path().join("r.json");
    let out = dagpar(&[
        "analyze",
        "--input",
        fixture("diamond").to_str().unwrap(),
        "--cost-model",
        cm.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let r = read_json(&report);
    // a(1) + b(10) + c(10) + d(1); path a -> b -> d with two edges of 2
    assert_eq!(r["analysis"]["total_weighted_node_cost"], 22);
    assert_eq!(r["analysis"]["weighted_cp_length"], 16);

    fs::write(&cm, r#"{"base": {"MatMul": 0}}"#).unwrap();
    let bad = dagpar(&[
        "analyze",
        "--input",
        fixture("diamond").to_str().unwrap(),
        "--cost-model",
        cm.to_str().unwrap(),
    ]);
    assert_eq!(bad.status.code(), Some(2));
}
