//! Constant folding and dead-code elimination on a graph with a constant
//! subexpression and an unused branch.

use std::collections::BTreeMap;

use dagpar::ir::{eval_graph, AttrValue, Graph, Initializer, Node, OpKind, TensorSpec, TensorValue};
use dagpar::passes::{constant_fold, dead_code_eliminate};

fn graph() -> Graph {
    let mut g = Graph::new("prunable");
    g.inputs.push(TensorSpec::f32("x", vec![2]));
    g.initializers
        .push(Initializer::new(TensorSpec::f32("k", vec![2]), vec![1.5, -2.0]));
    g.nodes = vec![
        Node::new(0, OpKind::Constant, "two")
            .with_outputs(["two"])
            .with_attr("value", AttrValue::Floats(vec![2.0, 2.0])),
        Node::new(1, OpKind::Mul, "scale")
            .with_inputs(["k", "two"])
            .with_outputs(["k2"]),
        Node::new(2, OpKind::Add, "shift")
            .with_inputs(["x", "k2"])
            .with_outputs(["y"]),
        Node::new(3, OpKind::Sigmoid, "unused")
            .with_inputs(["x"])
            .with_outputs(["dead"]),
        Node::new(4, OpKind::Relu, "out").with_inputs(["y"]).with_outputs(["z"]),
    ];
    g.outputs.push("z".into());
    g
}

fn main() {
    let g = graph();
    let (folded, fold) = constant_fold(&g);
    println!(
        "fold: {} -> {} nodes, folded {:?}",
        fold.nodes_before, fold.nodes_after, fold.folded
    );
    let (pruned, dce) = dead_code_eliminate(&folded);
    println!(
        "dce:  {} -> {} nodes, removed {:?}",
        dce.nodes_before, dce.nodes_after, dce.removed
    );
    for n in &pruned.nodes {
        println!("  {} {} {:?} -> {:?}", n.op, n.name, n.inputs, n.outputs);
    }

    let mut inputs = BTreeMap::new();
    inputs.insert("x".to_string(), TensorValue::f32("x", vec![2], vec![0.25, 1.0]));
    let before = eval_graph(&g, &inputs).unwrap();
    let after = eval_graph(&pruned, &inputs).unwrap();
    println!("z before {:?}, after {:?}", before["z"].data, after["z"].data);
}
