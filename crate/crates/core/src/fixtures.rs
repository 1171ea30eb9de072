//! Small hand-built graphs with known clustering and scheduling behaviour.
//!
//! Costs below are under [`CostModel::default`](crate::analysis::CostModel).

use crate::ir::{AttrValue, Graph, Initializer, Node, OpKind, TensorSpec};

fn weights(name: &str, shape: Vec<usize>, seed: usize) -> Initializer {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|i| (((i * 7 + seed * 3) % 11) as f64 - 5.0) / 8.0).collect();
    Initializer::new(TensorSpec::f32(name, shape), data)
}

/// `a(1) -> {b(4), c(4)} -> d(1)`; ids 0..=3.
pub fn diamond() -> Graph {
    let mut g = Graph::new("diamond");
    g.inputs.push(TensorSpec::f32("x", vec![2, 2]));
    g.initializers.push(weights("w_b", vec![2, 2], 1));
    g.initializers.push(weights("w_c", vec![2, 2], 2));
    g.nodes = vec![
        Node::new(0, OpKind::Relu, "a").with_inputs(["x"]).with_outputs(["a"]),
        Node::new(1, OpKind::MatMul, "b")
            .with_inputs(["a", "w_b"])
            .with_outputs(["b"]),
        Node::new(2, OpKind::MatMul, "c")
            .with_inputs(["a", "w_c"])
            .with_outputs(["c"]),
        Node::new(3, OpKind::Add, "d")
            .with_inputs(["b", "c"])
            .with_outputs(["d"]),
    ];
    g.outputs.push("d".into());
    g
}

/// `a -> b -> c`, all cost 1.
pub fn chain() -> Graph {
    let mut g = Graph::new("chain");
    g.inputs.push(TensorSpec::f32("x", vec![4]));
    g.nodes = vec![
        Node::new(0, OpKind::Relu, "a").with_inputs(["x"]).with_outputs(["a"]),
        Node::new(1, OpKind::Sigmoid, "b")
            .with_inputs(["a"])
            .with_outputs(["b"]),
        Node::new(2, OpKind::Relu, "c").with_inputs(["b"]).with_outputs(["c"]),
    ];
    g.outputs.push("c".into());
    g
}

/// Main path `S -> A -> B -> C -> D -> T` with side paths `S -> P -> B` and
/// `C -> Q -> T`. Costs S1 A4 B1 C4 D1 T1 P1 Q1; ids in that order.
pub fn seven_node() -> Graph {
    let mut g = Graph::new("seven_node");
    g.inputs.push(TensorSpec::f32("x", vec![2, 2]));
    g.initializers.push(weights("w_a", vec![2, 2], 3));
    g.initializers.push(weights("w_c", vec![2, 2], 4));
    g.nodes = vec![
        Node::new(0, OpKind::Relu, "S").with_inputs(["x"]).with_outputs(["s"]),
        Node::new(1, OpKind::MatMul, "A")
            .with_inputs(["s", "w_a"])
            .with_outputs(["a"]),
        Node::new(2, OpKind::Add, "B")
            .with_inputs(["a", "p"])
            .with_outputs(["b"]),
        Node::new(3, OpKind::MatMul, "C")
            .with_inputs(["b", "w_c"])
            .with_outputs(["c"]),
        Node::new(4, OpKind::Relu, "D").with_inputs(["c"]).with_outputs(["d"]),
        Node::new(5, OpKind::Add, "T")
            .with_inputs(["d", "q"])
            .with_outputs(["t"]),
        Node::new(6, OpKind::Sigmoid, "P")
            .with_inputs(["s"])
            .with_outputs(["p"]),
        Node::new(7, OpKind::Sigmoid, "Q")
            .with_inputs(["c"])
            .with_outputs(["q"]),
    ];
    g.outputs.push("t".into());
    g
}

/// One squeeze/expand "fire" block: a 1x1 squeeze conv feeding parallel
/// 1x1 and 3x3 expand convs that are concatenated. Linear clustering yields
/// a 5-op main cluster and a 2-op side cluster.
pub fn fire_module() -> Graph {
    let mut g = Graph::new("fire_module");
    g.inputs.push(TensorSpec::f32("x", vec![1, 2, 4, 4]));
    g.initializers.push(weights("w_sq", vec![1, 2, 1, 1], 5));
    g.initializers.push(weights("w_e1", vec![2, 1, 1, 1], 6));
    g.initializers.push(weights("w_e3", vec![2, 1, 3, 3], 7));
    let ints = |v: &[i64]| AttrValue::Ints(v.to_vec());
    g.nodes = vec![
        Node::new(0, OpKind::Conv, "squeeze")
            .with_inputs(["x", "w_sq"])
            .with_outputs(["sq"])
            .with_attr("kernel", ints(&[1, 1])),
        Node::new(1, OpKind::Relu, "squeeze_relu")
            .with_inputs(["sq"])
            .with_outputs(["sq_r"]),
        Node::new(2, OpKind::Conv, "expand1x1")
            .with_inputs(["sq_r", "w_e1"])
            .with_outputs(["e1"])
            .with_attr("kernel", ints(&[1, 1])),
        Node::new(3, OpKind::Relu, "expand1x1_relu")
            .with_inputs(["e1"])
            .with_outputs(["e1_r"]),
        Node::new(4, OpKind::Conv, "expand3x3")
            .with_inputs(["sq_r", "w_e3"])
            .with_outputs(["e3"])
            .with_attr("kernel", ints(&[3, 3]))
            .with_attr("pads", ints(&[1, 1, 1, 1])),
        Node::new(5, OpKind::Relu, "expand3x3_relu")
            .with_inputs(["e3"])
            .with_outputs(["e3_r"]),
        Node::new(6, OpKind::Concat, "concat")
            .with_inputs(["e1_r", "e3_r"])
            .with_outputs(["out"])
            .with_attr("axis", AttrValue::Int(1)),
    ];
    g.outputs.push("out".into());
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::validate;

    #[test]
    fn fixtures_are_valid() {
        for g in [diamond(), chain(), seven_node(), fire_module()] {
            assert!(validate(&g).is_empty(), "{}: {:?}", g.name, validate(&g));
        }
    }

    #[test]
    fn diamond_has_four_edges() {
        assert_eq!(diamond().edges().len(), 4);
    }
}
