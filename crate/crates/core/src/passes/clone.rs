use std::collections::{BTreeMap, BTreeSet};

use super::{ClonePolicy, CloneRecord, PassKind, PassReport};
use crate::analysis::{node_cost, CostModel, DistanceMap};
use crate::ir::{Graph, NodeId, Topology};

/// Nodes eligible for cloning: at least two distinct consumers, a single
/// output that is not a graph output, cost within the policy, and
/// `dist >= (1 - depth_fraction) * max dist`.
pub fn clone_candidates(graph: &Graph, dm: &DistanceMap, cm: &CostModel, policy: &ClonePolicy) -> Vec<NodeId> {
    let topo = Topology::of(graph);
    let max = dm.max() as u128;
    let (num, den) = (
        policy.depth_fraction.numer() as u128,
        policy.depth_fraction.denom() as u128,
    );
    graph
        .nodes
        .iter()
        .filter(|n| {
            topo.successors(n.id).len() >= 2
                && n.outputs.len() == 1
                && !graph.outputs.contains(&n.outputs[0])
                && node_cost(n, cm) <= policy.max_clone_cost
                && dm.get(n.id) as u128 * den >= (den - num) * max
        })
        .map(|n| n.id)
        .collect()
}

/// Gives every consumer of a candidate its own copy. Candidates are fixed
/// before any copying and processed from the bottom up, so a candidate
/// feeding another candidate also serves the downstream copies; copies are
/// never candidates themselves. The original keeps its id and serves its
/// lowest-id consumer; copy `k` is named `<name>__clone<k>` and writes
/// `<tensor>__clone<k>`. If the projected node count exceeds
/// `max_growth_ratio` times the original the input is returned unchanged.
pub fn clone_pass(graph: &Graph, dm: &DistanceMap, cm: &CostModel, policy: &ClonePolicy) -> (Graph, PassReport) {
    let mut report = PassReport::new(PassKind::Clone, graph.nodes.len());
    let candidates: BTreeSet<NodeId> = clone_candidates(graph, dm, cm, policy).into_iter().collect();
    let topo = Topology::of(graph);
    let order = match topo.order() {
        Ok(o) => o,
        Err(e) => {
            report.warnings.push(format!("clone skipped: {e}"));
            return (graph.clone(), report.finish(graph.nodes.len()));
        }
    };

    // instances(u) = 1 unless u is a candidate, then the number of consumer instances.
    let mut instances: BTreeMap<NodeId, u128> = BTreeMap::new();
    for &id in order.iter().rev() {
        let n = if candidates.contains(&id) {
            topo.successors(id)
                .iter()
                .map(|s| instances[s])
                .fold(0u128, u128::saturating_add)
        } else {
            1
        };
        instances.insert(id, n);
    }
    let projected = instances.values().fold(0u128, |a, &b| a.saturating_add(b));
    let n = graph.nodes.len() as u128;
    let (gn, gd) = (
        policy.max_growth_ratio.numer() as u128,
        policy.max_growth_ratio.denom() as u128,
    );
    if projected.saturating_mul(gd) > gn * n {
        report.aborted = true;
        report.warnings.push(format!(
            "cloning aborted: {projected} nodes would exceed {} x {n}",
            policy.max_growth_ratio
        ));
        return (graph.clone(), report.finish(graph.nodes.len()));
    }

    let mut g = graph.clone();
    let mut next = g.next_node_id().0;
    for &id in order.iter().rev().filter(|id| candidates.contains(id)) {
        let original = g.node(id).expect("candidate exists").clone();
        let tensor = original.outputs[0].clone();
        let mut consumers: Vec<NodeId> = g
            .nodes
            .iter()
            .filter(|n| n.present_inputs().any(|i| i == tensor))
            .map(|n| n.id)
            .collect();
        consumers.sort();
        let mut copies = Vec::new();
        for (k, &consumer) in consumers.iter().enumerate().skip(1) {
            let renamed = format!("{tensor}__clone{k}");
            let mut copy = original.clone();
            copy.id = NodeId(next);
            next += 1;
            copy.name = format!("{}__clone{k}", original.name);
            copy.outputs = vec![renamed.clone()];
            copies.push(copy.id);
            let c = g.nodes.iter_mut().find(|n| n.id == consumer).expect("consumer exists");
            for input in c.inputs.iter_mut().filter(|i| **i == tensor) {
                *input = renamed.clone();
            }
            g.nodes.push(copy);
        }
        if !copies.is_empty() {
            report.cloned.push(CloneRecord { original: id, copies });
        }
    }
    report.cloned.sort_by_key(|c| c.original);
    let after = g.nodes.len();
    (g, report.finish(after))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{critical_path, distance_pass};
    use crate::ir::{validate, Node, OpKind, TensorSpec};
    use crate::ratio::Factor;

    /// `r -> {a, b, c} -> cat`, plus `pad` nodes hanging off `cat`.
    fn fan(pad: u32) -> Graph {
        let mut g = Graph::new("fan");
        g.inputs.push(TensorSpec::f32("x", vec![2]));
        g.nodes = vec![
            Node::new(0, OpKind::Relu, "r").with_inputs(["x"]).with_outputs(["r"]),
            Node::new(1, OpKind::Sigmoid, "a")
                .with_inputs(["r"])
                .with_outputs(["a"]),
            Node::new(2, OpKind::Sigmoid, "b")
                .with_inputs(["r"])
                .with_outputs(["b"]),
            Node::new(3, OpKind::Sigmoid, "c")
                .with_inputs(["r"])
                .with_outputs(["c"]),
            Node::new(4, OpKind::Concat, "cat")
                .with_inputs(["a", "b", "c"])
                .with_outputs(["y0"])
                .with_attr("axis", crate::ir::AttrValue::Int(0)),
        ];
        for i in 0..pad {
            let prev = format!("y{i}");
            let next = format!("y{}", i + 1);
            g.nodes.push(
                Node::new(5 + i, OpKind::Relu, next.clone())
                    .with_inputs([prev])
                    .with_outputs([next]),
            );
        }
        g.outputs.push(format!("y{pad}"));
        g
    }

    fn run(g: &Graph, policy: ClonePolicy) -> (Graph, PassReport) {
        let cm = CostModel::default();
        let dm = distance_pass(g, &cm).unwrap();
        clone_pass(g, &dm, &cm, &policy)
    }

    #[test]
    fn fan_out_of_three_gets_private_copies() {
        let g = fan(5);
        let (c, r) = run(&g, ClonePolicy::default());
        assert!(!r.aborted);
        assert_eq!(
            r.cloned,
            vec![CloneRecord {
                original: NodeId(0),
                copies: vec![NodeId(10), NodeId(11)]
            }]
        );
        assert!(validate(&c).is_empty());
        let topo = Topology::of(&c);
        for id in [0, 10, 11] {
            assert_eq!(topo.successors(NodeId(id)).len(), 1);
        }
        assert_eq!(c.node(NodeId(10)).unwrap().outputs, vec!["r__clone1"]);
        assert!(r.is_balanced());
    }

    #[test]
    fn expensive_node_is_not_cloned() {
        let mut g = fan(5);
        g.initializers.push(crate::ir::Initializer::new(
            TensorSpec::f32("w", vec![2, 2]),
            vec![1.0; 4],
        ));
        g.inputs[0].shape = vec![1, 2];
        g.nodes[0] = Node::new(0, OpKind::MatMul, "r")
            .with_inputs(["x", "w"])
            .with_outputs(["r"]);
        let (c, r) = run(&g, ClonePolicy::default());
        assert!(r.cloned.is_empty());
        assert_eq!(c, g);
    }

    #[test]
    fn growth_cap_aborts() {
        // 5 nodes would become 7: 1.4x > 1.25x.
        let g = fan(0);
        let (c, r) = run(&g, ClonePolicy::default());
        assert!(r.aborted);
        assert_eq!(c, g);
        assert_eq!(r.nodes_after, 5);
        let loose = ClonePolicy {
            max_growth_ratio: Factor::new(3, 2),
            ..ClonePolicy::default()
        };
        assert!(!run(&g, loose).1.aborted);
    }

    #[test]
    fn deep_nodes_are_not_candidates() {
        let mut g = fan(0);
        // Put the fan-out at the bottom of a long chain.
        for node in &mut g.nodes {
            for i in node.inputs.iter_mut().filter(|i| *i == "x") {
                *i = "h9".into();
            }
        }
        for i in 0..10u32 {
            let src = if i == 0 { "x".to_string() } else { format!("h{}", i - 1) };
            g.nodes.push(
                Node::new(10 + i, OpKind::Relu, format!("h{i}"))
                    .with_inputs([src])
                    .with_outputs([format!("h{i}")]),
            );
        }
        let cm = CostModel::default();
        let dm = distance_pass(&g, &cm).unwrap();
        assert!(clone_candidates(&g, &dm, &cm, &ClonePolicy::default()).is_empty());
    }

    #[test]
    fn stacked_candidates_serve_downstream_copies() {
        // r -> s, t ; s -> u, v ; everything cost 1.
        let mut g = Graph::new("stack");
        g.inputs.push(TensorSpec::f32("x", vec![2]));
        let add = |id, name: &str, a: &str, b: &str| {
            Node::new(id, OpKind::Add, name)
                .with_inputs([a, b])
                .with_outputs([name])
        };
        g.nodes = vec![
            Node::new(0, OpKind::Relu, "r").with_inputs(["x"]).with_outputs(["r"]),
            Node::new(1, OpKind::Relu, "s").with_inputs(["r"]).with_outputs(["s"]),
            Node::new(2, OpKind::Relu, "t").with_inputs(["r"]).with_outputs(["t"]),
            Node::new(3, OpKind::Relu, "u").with_inputs(["s"]).with_outputs(["u"]),
            Node::new(4, OpKind::Relu, "v").with_inputs(["s"]).with_outputs(["v"]),
            add(5, "uv", "u", "v"),
            add(6, "out", "uv", "t"),
        ];
        g.outputs.push("out".into());
        for i in 0..6u32 {
            let prev = if i == 0 {
                "out".to_string()
            } else {
                format!("z{}", i - 1)
            };
            g.nodes.push(
                Node::new(7 + i, OpKind::Relu, format!("z{i}"))
                    .with_inputs([prev])
                    .with_outputs([format!("z{i}")]),
            );
        }
        g.outputs = vec!["z5".into()];
        let (c, r) = run(
            &g,
            ClonePolicy {
                max_growth_ratio: Factor::new(2, 1),
                ..ClonePolicy::default()
            },
        );
        assert!(!r.aborted, "{:?}", r.warnings);
        assert!(validate(&c).is_empty());
        // s serves u and v; r serves t, s and s's copy.
        assert_eq!(r.clones_added(), 1 + 2);
        let topo = Topology::of(&c);
        for rec in &r.cloned {
            for id in std::iter::once(rec.original).chain(rec.copies.iter().copied()) {
                assert_eq!(topo.successors(id).len(), 1, "{id}");
            }
        }
        let before = critical_path(&g, &distance_pass(&g, &CostModel::default()).unwrap()).unwrap();
        let after = critical_path(&c, &distance_pass(&c, &CostModel::default()).unwrap()).unwrap();
        assert!(after.length <= before.length);
    }
}
