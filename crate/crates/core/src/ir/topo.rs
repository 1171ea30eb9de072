use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::{Graph, NodeId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("graph contains a cycle through node {node}")]
pub struct CycleError {
    pub node: NodeId,
}

/// Node-level adjacency of a graph. Parallel edges between the same pair of
/// nodes (through different tensors) collapse to one.
#[derive(Debug, Clone)]
pub struct Topology {
    pub succs: BTreeMap<NodeId, BTreeSet<NodeId>>,
    pub preds: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

impl Topology {
    pub fn of(graph: &Graph) -> Self {
        let mut succs: BTreeMap<NodeId, BTreeSet<NodeId>> =
            graph.nodes.iter().map(|n| (n.id, BTreeSet::new())).collect();
        let mut preds = succs.clone();
        for edge in graph.edges() {
            succs.entry(edge.from).or_default().insert(edge.to);
            preds.entry(edge.to).or_default().insert(edge.from);
        }
        Topology { succs, preds }
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.succs.keys().copied()
    }

    pub fn successors(&self, id: NodeId) -> &BTreeSet<NodeId> {
        &self.succs[&id]
    }

    pub fn predecessors(&self, id: NodeId) -> &BTreeSet<NodeId> {
        &self.preds[&id]
    }

    pub fn sources(&self) -> Vec<NodeId> {
        self.preds
            .iter()
            .filter(|(_, p)| p.is_empty())
            .map(|(&id, _)| id)
            .collect()
    }

    pub fn sinks(&self) -> Vec<NodeId> {
        self.succs
            .iter()
            .filter(|(_, s)| s.is_empty())
            .map(|(&id, _)| id)
            .collect()
    }

    /// Kahn's algorithm, lowest ready id first.
    pub fn order(&self) -> Result<Vec<NodeId>, CycleError> {
        let mut indegree: BTreeMap<NodeId, usize> = self.preds.iter().map(|(&id, p)| (id, p.len())).collect();
        let mut ready: BTreeSet<NodeId> = indegree.iter().filter(|(_, &d)| d == 0).map(|(&id, _)| id).collect();
        let mut order = Vec::with_capacity(indegree.len());
        while let Some(id) = ready.pop_first() {
            order.push(id);
            for &succ in &self.succs[&id] {
                let d = indegree.get_mut(&succ).expect("successor is a node");
                *d -= 1;
                if *d == 0 {
                    ready.insert(succ);
                }
            }
        }
        if order.len() < indegree.len() {
            let node = self.cycle_member(&indegree);
            return Err(CycleError { node });
        }
        Ok(order)
    }

    /// Walks predecessor links among nodes left with positive in-degree
    /// until a node repeats; that node lies on a cycle.
    fn cycle_member(&self, indegree: &BTreeMap<NodeId, usize>) -> NodeId {
        let stuck: BTreeSet<NodeId> = indegree.iter().filter(|(_, &d)| d > 0).map(|(&id, _)| id).collect();
        let mut current = *stuck.first().expect("at least one stuck node");
        let mut seen = BTreeSet::new();
        while seen.insert(current) {
            current = *self.preds[&current]
                .iter()
                .find(|p| stuck.contains(p))
                .expect("stuck node has a stuck predecessor");
        }
        current
    }
}

/// Deterministic topological order: among ready nodes the lowest id goes first.
pub fn topo_order(graph: &Graph) -> Result<Vec<NodeId>, CycleError> {
    Topology::of(graph).order()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{Node, OpKind, TensorSpec};

    fn chain(ids: &[u32]) -> Graph {
        let mut g = Graph::new("chain");
        g.inputs.push(TensorSpec::f32("x", vec![1]));
        let mut prev = "x".to_string();
        for &id in ids {
            let out = format!("t{id}");
            g.nodes.push(
                Node::new(id, OpKind::Relu, format!("r{id}"))
                    .with_inputs([prev.clone()])
                    .with_outputs([out.clone()]),
            );
            prev = out;
        }
        g.outputs.push(prev);
        g
    }

    #[test]
    fn chain_order() {
        assert_eq!(
            topo_order(&chain(&[0, 1, 2])).unwrap(),
            vec![NodeId(0), NodeId(1), NodeId(2)]
        );
    }

    #[test]
    fn diamond_lowest_id_first() {
        let g = crate::fixtures::diamond();
        let order = topo_order(&g).unwrap();
        // The only two valid orders are [0,1,2,3] and [0,2,1,3]; the tie rule picks id 1.
        assert_eq!(order, vec![NodeId(0), NodeId(1), NodeId(2), NodeId(3)]);
    }

    #[test]
    fn disconnected_nodes_by_id() {
        let mut g = Graph::new("two");
        g.inputs.push(TensorSpec::f32("x", vec![1]));
        g.nodes
            .push(Node::new(5, OpKind::Relu, "a").with_inputs(["x"]).with_outputs(["a"]));
        g.nodes
            .push(Node::new(2, OpKind::Relu, "b").with_inputs(["x"]).with_outputs(["b"]));
        assert_eq!(topo_order(&g).unwrap(), vec![NodeId(2), NodeId(5)]);
    }

    #[test]
    fn cycle_is_reported() {
        let mut g = crate::fixtures::diamond();
        // D -> A
        g.nodes[0].inputs.push("d".into());
        let err = topo_order(&g).unwrap_err();
        assert!([NodeId(0), NodeId(1), NodeId(2), NodeId(3)].contains(&err.node));
    }
}
