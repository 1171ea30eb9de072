//! Cloning a cheap shared node so each consumer gets a private copy.

use dagpar::analysis::distance_pass;
use dagpar::ir::{Graph, Initializer, Node, OpKind, TensorSpec};
use dagpar::passes::{clone_candidates, clone_pass, ClonePolicy};
use dagpar::ratio::Factor;
use dagpar::CostModel;

fn fan_out() -> Graph {
    let mut g = Graph::new("fan_out");
    g.inputs.push(TensorSpec::f32("x", vec![2, 2]));
    g.nodes.push(
        Node::new(0, OpKind::Relu, "shared")
            .with_inputs(["x"])
            .with_outputs(["s"]),
    );
    for i in 0..3u32 {
        let w = format!("w{i}");
        g.initializers
            .push(Initializer::new(TensorSpec::f32(&w, vec![2, 2]), vec![0.5; 4]));
        g.nodes.push(
            Node::new(1 + i, OpKind::MatMul, format!("branch{i}"))
                .with_inputs(["s".to_string(), w])
                .with_outputs([format!("b{i}")]),
        );
        g.outputs.push(format!("b{i}"));
    }
    g
}

fn main() {
    let cm = CostModel::default();
    let g = fan_out();
    let dm = distance_pass(&g, &cm).unwrap();
    let policy = ClonePolicy {
        max_growth_ratio: Factor::new(3, 2),
        ..ClonePolicy::default()
    };
    println!("candidates: {:?}", clone_candidates(&g, &dm, &cm, &policy));
    let (cloned, report) = clone_pass(&g, &dm, &cm, &policy);
    println!(
        "{} -> {} nodes (growth {})",
        report.nodes_before, report.nodes_after, report.growth_ratio
    );
    for n in &cloned.nodes {
        println!("  {:>2} {:<16} {:?}", n.id.0, n.name, n.inputs);
    }

    // the default 1.25x limit rejects the same rewrite
    let (_, strict) = clone_pass(&g, &dm, &cm, &ClonePolicy::default());
    println!("default policy aborted: {}", strict.aborted);
}
