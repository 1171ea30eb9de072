use std::collections::{BTreeMap, BTreeSet};

use super::ClusterSet;
use crate::analysis::{argmax_dist, DistanceMap};
use crate::ir::{CycleError, Graph, NodeId, Topology};

/// Repeatedly extracts the heaviest remaining path.
///
/// Works on copies of the node set and of both edge directions. Each round
/// starts at the ready node of largest distance and extends through the
/// largest-distance successor. Extending from `c` to `s` drops every other
/// out-edge of `c` and every in-edge of `s`, so later paths cannot reach
/// into nodes already taken. Ties go to the lowest id.
pub fn linear_cluster(graph: &Graph, dm: &DistanceMap) -> Result<ClusterSet, CycleError> {
    let topo = Topology::of(graph);
    topo.order()?;
    let mut nodes: BTreeSet<NodeId> = topo.nodes().collect();
    let mut outs: BTreeMap<NodeId, BTreeSet<NodeId>> = topo.succs.clone();
    let mut ins: BTreeMap<NodeId, BTreeSet<NodeId>> = topo.preds.clone();

    let mut lists = Vec::new();
    while !nodes.is_empty() {
        let ready: Vec<NodeId> = nodes.iter().copied().filter(|n| ins[n].is_empty()).collect();
        let mut c = argmax_dist(&ready, dm).expect("a DAG always has a ready node");
        nodes.remove(&c);
        let mut path = vec![c];
        while let Some(s) = argmax_dist(&outs[&c], dm) {
            for other in std::mem::take(outs.get_mut(&c).unwrap()) {
                ins.get_mut(&other).unwrap().remove(&c);
            }
            for p in std::mem::take(ins.get_mut(&s).unwrap()) {
                outs.get_mut(&p).unwrap().remove(&s);
            }
            nodes.remove(&s);
            path.push(s);
            c = s;
        }
        lists.push(path);
    }
    Ok(ClusterSet::from_lists(lists, dm.clone(), graph.edges()))
}
