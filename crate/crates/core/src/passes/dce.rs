use std::collections::BTreeSet;

use super::{PassKind, PassReport};
use crate::ir::{Graph, NodeId, Topology};

/// Keeps exactly the nodes some declared output depends on, then drops
/// initializers nothing reads.
pub fn dead_code_eliminate(graph: &Graph) -> (Graph, PassReport) {
    let mut report = PassReport::new(PassKind::Dce, graph.nodes.len());
    let producers = graph.producers();
    let topo = Topology::of(graph);

    let mut live: BTreeSet<NodeId> = BTreeSet::new();
    let mut stack: Vec<NodeId> = graph
        .outputs
        .iter()
        .filter_map(|o| producers.get(o.as_str()).copied())
        .collect();
    while let Some(id) = stack.pop() {
        if live.insert(id) {
            stack.extend(topo.predecessors(id).iter().copied());
        }
    }

    let mut out = graph.clone();
    out.nodes.retain(|n| {
        let keep = live.contains(&n.id);
        if !keep {
            report.removed.push(n.id);
        }
        keep
    });
    report.removed.sort();

    let read: BTreeSet<&str> = out
        .nodes
        .iter()
        .flat_map(|n| n.present_inputs())
        .chain(graph.outputs.iter().map(String::as_str))
        .collect();
    let read: BTreeSet<String> = read.into_iter().map(str::to_string).collect();
    out.initializers.retain(|i| read.contains(&i.spec.name));

    let n = out.nodes.len();
    (out, report.finish(n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::ir::{validate, Node, OpKind, TensorSpec};

    fn chain_xy() -> Graph {
        let mut g = Graph::new("xy");
        g.inputs.push(TensorSpec::f32("in", vec![2]));
        g.nodes = vec![
            Node::new(0, OpKind::Relu, "X").with_inputs(["in"]).with_outputs(["x"]),
            Node::new(1, OpKind::Sigmoid, "Y")
                .with_inputs(["x"])
                .with_outputs(["y"]),
        ];
        g.outputs.push("x".into());
        g
    }

    #[test]
    fn removes_tail_past_the_output() {
        let (g, r) = dead_code_eliminate(&chain_xy());
        assert_eq!(g.node_ids(), vec![NodeId(0)]);
        assert_eq!(r.removed, vec![NodeId(1)]);
        assert!(validate(&g).is_empty());
        assert!(r.is_balanced());
    }

    #[test]
    fn unconsumed_node_is_removed() {
        let mut g = fixtures::diamond();
        g.nodes.push(
            Node::new(4, OpKind::Relu, "dead")
                .with_inputs(["a"])
                .with_outputs(["dead"]),
        );
        let (g, r) = dead_code_eliminate(&g);
        assert_eq!(r.removed, vec![NodeId(4)]);
        assert_eq!(g, fixtures::diamond());
    }

    #[test]
    fn diamond_is_all_live() {
        let (g, r) = dead_code_eliminate(&fixtures::diamond());
        assert!(r.removed.is_empty());
        assert_eq!(g, fixtures::diamond());
    }

    #[test]
    fn drops_unread_initializers() {
        let mut g = fixtures::diamond();
        g.nodes.retain(|n| n.id != NodeId(2));
        g.nodes[2].inputs = vec!["b".into(), "b".into()];
        let (g, _) = dead_code_eliminate(&g);
        assert!(g.initializer("w_c").is_none());
        assert!(g.initializer("w_b").is_some());
    }

    #[test]
    fn idempotent() {
        let (once, _) = dead_code_eliminate(&chain_xy());
        let (twice, r) = dead_code_eliminate(&once);
        assert_eq!(once, twice);
        assert!(r.removed.is_empty());
    }
}
