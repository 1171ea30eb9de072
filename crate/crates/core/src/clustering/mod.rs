//! Linear clustering along successive critical paths, span-based merging,
//! and batch hyperclusters.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::analysis::DistanceMap;
use crate::ir::{Edge, Graph, NodeId};

mod hyper;
mod linear;
mod merge;

pub use hyper::{
    balance, hypercluster, per_step_counts, project, switched_hypercluster, switched_hypercluster_with, HyperError,
    Hypercluster, Instance, SwitchPolicy,
};
pub use linear::linear_cluster;
pub use merge::{can_merge, merge_clusters, merge_clusters_once, MergeTrace};

/// Ordered node list. `s_span`/`e_span` are the distances of the entry and
/// exit nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Cluster {
    pub label: String,
    pub nodes: Vec<NodeId>,
    pub s_span: u64,
    pub e_span: u64,
}

impl Cluster {
    pub(crate) fn new(label: String, nodes: Vec<NodeId>, dm: &DistanceMap) -> Self {
        let s_span = dm.get(nodes[0]);
        let e_span = dm.get(*nodes.last().expect("cluster is non-empty"));
        Cluster {
            label,
            nodes,
            s_span,
            e_span,
        }
    }

    pub fn cost(&self, costs: &BTreeMap<NodeId, u64>) -> u64 {
        self.nodes.iter().map(|n| costs[n]).sum()
    }
}

pub(crate) fn label(i: usize) -> String {
    format!("C{}", i + 1)
}

/// A partition of the graph's nodes into clusters, labeled `C1..Ck` in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterSet {
    pub clusters: Vec<Cluster>,
    pub dm: DistanceMap,
    pub edges: Vec<Edge>,
}

impl ClusterSet {
    pub(crate) fn from_lists(lists: Vec<Vec<NodeId>>, dm: DistanceMap, edges: Vec<Edge>) -> Self {
        let clusters = lists
            .into_iter()
            .enumerate()
            .map(|(i, nodes)| Cluster::new(label(i), nodes, &dm))
            .collect();
        ClusterSet { clusters, dm, edges }
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Node id → index of its cluster.
    pub fn back_map(&self) -> BTreeMap<NodeId, usize> {
        let mut map = BTreeMap::new();
        for (i, c) in self.clusters.iter().enumerate() {
            for &n in &c.nodes {
                map.insert(n, i);
            }
        }
        map
    }

    /// Edges whose endpoints lie in different clusters.
    pub fn cross_edges(&self) -> Vec<Edge> {
        let back = self.back_map();
        self.edges
            .iter()
            .filter(|e| back.get(&e.from) != back.get(&e.to))
            .cloned()
            .collect()
    }

    /// True if every node of `graph` lies in exactly one cluster and no
    /// cluster names a node outside the graph.
    pub fn is_partition_of(&self, graph: &Graph) -> bool {
        let mut seen = BTreeMap::new();
        for c in &self.clusters {
            if c.nodes.is_empty() {
                return false;
            }
            for &n in &c.nodes {
                if seen.insert(n, ()).is_some() {
                    return false;
                }
            }
        }
        seen.len() == graph.nodes.len() && graph.nodes.iter().all(|n| seen.contains_key(&n.id))
    }

    pub fn summary(&self, costs: &BTreeMap<NodeId, u64>) -> ClusterSummary {
        ClusterSummary {
            clusters: self
                .clusters
                .iter()
                .map(|c| ClusterRow {
                    label: c.label.clone(),
                    nodes: c.nodes.clone(),
                    s_span: c.s_span,
                    e_span: c.e_span,
                    total_cost: c.cost(costs),
                })
                .collect(),
            cross_edges: self.cross_edges(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClusterRow {
    pub label: String,
    pub nodes: Vec<NodeId>,
    pub s_span: u64,
    pub e_span: u64,
    pub total_cost: u64,
}

/// Report view of a [`ClusterSet`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClusterSummary {
    pub clusters: Vec<ClusterRow>,
    pub cross_edges: Vec<Edge>,
}
