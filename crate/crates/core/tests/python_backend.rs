//! Runs the emitted Python programs when `python3` with torch is on PATH;
//! skips otherwise.

use std::path::Path;
use std::process::Command;

use dagpar::fixtures;
use dagpar::ingest::to_json;
use dagpar::pipeline::{run_compile, HyperMode, PipelineConfig};

fn torch_available() -> bool {
    Command::new("python3")
        .args(["-c", "import torch"])
        .output()
        .is_ok_and(|o| o.status.success())
}

fn run_parallel(dir: &Path) -> f64 {
    let out = Command::new("python3")
        .arg("parallel.py")
        .current_dir(dir)
        .env("INTRA_OP_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let line = String::from_utf8(out.stdout).unwrap();
    let v: serde_json::Value = serde_json::from_str(line.trim().lines().last().unwrap()).unwrap();
    v["max_abs_deviation"].as_f64().unwrap()
}

#[test]
fn generated_programs_agree_with_sequential() {
    if !torch_available() {
        eprintln!("skipping: python3 with torch not found");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (fixtures::diamond(), 1, HyperMode::Off),
        (fixtures::seven_node(), 2, HyperMode::Plain),
        (fixtures::fire_module(), 3, HyperMode::Switched),
    ];
    for (g, batch, mode) in cases {
        let input = dir.path().join(format!("{}.json", g.name));
        std::fs::write(&input, to_json(&g)).unwrap();
        let out = dir.path().join(format!("{}_out", g.name));
        let mut cfg = PipelineConfig::new(&input);
        cfg.batch = batch;
        cfg.hypercluster = mode;
        cfg.out = Some(out.clone());
        let run = run_compile(&cfg);
        assert_eq!(run.exit_code, 0, "{}", run.text);
        let dev = run_parallel(&out);
        assert!(dev <= 1e-5, "{}: deviation {dev}", g.name);
    }
}
