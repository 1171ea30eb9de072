//! Simulated execution of merged clusters with unit message latency,
//! printed as a trace.

use dagpar::analysis::distance_pass;
use dagpar::clustering::{linear_cluster, merge_clusters};
use dagpar::sim::{sequential_makespan, simulate, WorkerPlan};
use dagpar::{fixtures, CostModel};

fn main() {
    let cm = CostModel::default();
    let g = fixtures::diamond();
    let dm = distance_pass(&g, &cm).unwrap();
    let (set, _) = merge_clusters(&linear_cluster(&g, &dm).unwrap());
    let trace = simulate(&g, &WorkerPlan::from_clusters(&set), &cm, cm.edge_cost).unwrap();

    for w in &trace.workers {
        println!("{} (slack {})", w.label, w.slack);
        for i in &w.intervals {
            println!(
                "  {:<9} {:<5} [{}, {})",
                i.kind.as_str(),
                i.instance.to_string(),
                i.start,
                i.end
            );
        }
    }
    println!(
        "makespan {} vs sequential {}, predicted speedup {}",
        trace.makespan,
        sequential_makespan(&g, &cm),
        trace.predicted_speedup
    );
    print!("{}", trace.to_jsonl());
}
