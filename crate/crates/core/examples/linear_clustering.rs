//! Critical-path linear clustering followed by span-based merging.

use dagpar::analysis::distance_pass;
use dagpar::clustering::{linear_cluster, merge_clusters};
use dagpar::{fixtures, CostModel};

fn main() {
    let cm = CostModel::default();
    for g in [fixtures::diamond(), fixtures::seven_node(), fixtures::fire_module()] {
        let dm = distance_pass(&g, &cm).unwrap();
        let linear = linear_cluster(&g, &dm).unwrap();
        let (merged, trace) = merge_clusters(&linear);
        println!("{}: counts per round {:?}", g.name, trace.counts);
        for (stage, set) in [("linear", &linear), ("merged", &merged)] {
            for c in &set.clusters {
                let names: Vec<&str> = c.nodes.iter().map(|&id| g.node(id).unwrap().name.as_str()).collect();
                println!(
                    "  {stage:<6} {:<3} span ({:>2},{:>2})  {}",
                    c.label,
                    c.s_span,
                    c.e_span,
                    names.join(" ")
                );
            }
        }
        println!("  cross-cluster edges: {}", merged.cross_edges().len());
    }
}
