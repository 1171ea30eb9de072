//! Plain and switched hyperclusters for a batch of two samples.

use dagpar::analysis::distance_pass;
use dagpar::clustering::{
    balance, hypercluster, linear_cluster, merge_clusters, per_step_counts, switched_hypercluster,
};
use dagpar::{fixtures, CostModel};

fn main() {
    let cm = CostModel::default();
    let g = fixtures::fire_module();
    let dm = distance_pass(&g, &cm).unwrap();
    let (set, _) = merge_clusters(&linear_cluster(&g, &dm).unwrap());
    let costs = cm.costs(&g);

    for (name, hcs) in [
        ("plain", hypercluster(&set, 2).unwrap()),
        ("switched", switched_hypercluster(&set, 2).unwrap()),
    ] {
        let loads: Vec<u64> = hcs.iter().map(|h| h.cost(&costs)).collect();
        let steps: Vec<String> = per_step_counts(&hcs).iter().map(|f| f.to_string()).collect();
        println!(
            "{name}: loads {loads:?}, per-step {steps:?}, balance {}",
            balance(&loads)
        );
        for h in &hcs {
            let items: Vec<String> = h.instances.iter().map(|i| i.to_string()).collect();
            println!("  {:<6} {}", h.label, items.join(" "));
        }
    }
}
