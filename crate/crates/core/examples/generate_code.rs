//! Emission plan and Python/PyTorch sources for the seven-node graph.
//! Pass a directory to write the files there.

use dagpar::analysis::distance_pass;
use dagpar::clustering::{linear_cluster, merge_clusters};
use dagpar::codegen::{build_emission_plan, write_artifacts, Artifacts, PythonTorch, RecordKind};
use dagpar::sim::WorkerPlan;
use dagpar::{fixtures, CostModel};

fn main() {
    let cm = CostModel::default();
    let g = fixtures::seven_node();
    let dm = distance_pass(&g, &cm).unwrap();
    let (set, _) = merge_clusters(&linear_cluster(&g, &dm).unwrap());
    let plan = build_emission_plan(&g, &WorkerPlan::from_clusters(&set)).unwrap();
    assert!(plan.check(&g).is_empty());
    println!(
        "{} workers, {} channels, {} sends, {} recvs",
        plan.workers.len(),
        plan.channels.len(),
        plan.count(RecordKind::Send),
        plan.count(RecordKind::Recv)
    );

    let artifacts = Artifacts::render(&g, &plan, &PythonTorch, "clusters").unwrap();
    match std::env::args().nth(1) {
        Some(dir) => {
            for p in write_artifacts(dir.as_ref(), &artifacts).unwrap() {
                println!("wrote {}", p.display());
            }
        }
        None => {
            let src = &artifacts.files["parallel.py"];
            let start = src.find("def worker_0").unwrap_or(0);
            println!("{}", &src[start..]);
        }
    }
}
