//! Potential parallelism of the bundled graphs: total weighted node cost
//! over weighted critical path length.

use dagpar::analysis::{critical_path, distance_pass, parallelism_factor, ParallelismReport};
use dagpar::{fixtures, CostModel};

fn main() {
    let cm = CostModel::default();
    println!("{}", ParallelismReport::table_header());
    for g in [
        fixtures::chain(),
        fixtures::diamond(),
        fixtures::seven_node(),
        fixtures::fire_module(),
    ] {
        let report = parallelism_factor(&g, &cm).unwrap();
        println!("{}", report.table_row(&g.name));
    }

    let g = fixtures::diamond();
    let dm = distance_pass(&g, &cm).unwrap();
    let cp = critical_path(&g, &dm).unwrap();
    let names: Vec<&str> = cp.nodes.iter().map(|&id| g.node(id).unwrap().name.as_str()).collect();
    println!("\ndiamond critical path: {} (length {})", names.join(" -> "), cp.length);
    for (id, d) in &dm.0 {
        println!("  dist({}) = {d}", g.node(*id).unwrap().name);
    }
}
