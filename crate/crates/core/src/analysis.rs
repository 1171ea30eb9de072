//! Static cost model, distance-to-end, critical path and the potential
//! parallelism factor (total weighted node cost over weighted critical path).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{CycleError, Graph, Node, NodeId, OpKind, Topology};
use crate::ratio::Factor;

/// Integer operator weights. Edges cost `edge_cost` each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    #[serde(default)]
    pub base: BTreeMap<String, u64>,
    /// `(min kernel dim, cost)`, ascending. The last tier whose minimum the
    /// largest kernel dimension reaches applies.
    #[serde(default)]
    pub conv_tiers: Vec<(u64, u64)>,
    #[serde(default = "one")]
    pub edge_cost: u64,
    #[serde(default = "one", rename = "default")]
    pub default_cost: u64,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CostModelError {
    #[error("cost for {0} must be at least 1")]
    NonPositive(String),
    #[error("conv tiers must be sorted ascending by kernel dimension")]
    UnsortedTiers,
    #[error("malformed cost model: {0}")]
    Parse(String),
}

impl Default for CostModel {
    fn default() -> Self {
        let mut base = BTreeMap::new();
        for op in ["Conv", "MatMul", "Gemm"] {
            base.insert(op.to_string(), 4);
        }
        for op in ["MaxPool", "AveragePool", "Softmax", "BatchNorm"] {
            base.insert(op.to_string(), 2);
        }
        for op in [
            "Add",
            "Sub",
            "Mul",
            "Div",
            "Relu",
            "Sigmoid",
            "Concat",
            "Reshape",
            "Slice",
            "Gather",
            "Shape",
            "Transpose",
            "Cast",
            "Squeeze",
            "Unsqueeze",
            "Identity",
            "Constant",
            "Flatten",
        ] {
            base.insert(op.to_string(), 1);
        }
        CostModel {
            base,
            conv_tiers: vec![(1, 4), (5, 8), (7, 12)],
            edge_cost: 1,
            default_cost: 1,
        }
    }
}

impl CostModel {
    /// Parses the cost-model JSON. Keys omitted from `base` fall back to
    /// the built-in table; omitted `conv_tiers` keep the built-in tiers.
    pub fn from_json(bytes: &[u8]) -> Result<Self, CostModelError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct File {
            #[serde(default)]
            base: BTreeMap<String, u64>,
            conv_tiers: Option<Vec<(u64, u64)>>,
            edge_cost: Option<u64>,
            default: Option<u64>,
        }
        let file: File = serde_json::from_slice(bytes).map_err(|e| CostModelError::Parse(e.to_string()))?;
        let mut cm = CostModel::default();
        cm.base.extend(file.base);
        if let Some(t) = file.conv_tiers {
            cm.conv_tiers = t;
        }
        if let Some(e) = file.edge_cost {
            cm.edge_cost = e;
        }
        if let Some(d) = file.default {
            cm.default_cost = d;
        }
        cm.check()?;
        Ok(cm)
    }

    pub fn check(&self) -> Result<(), CostModelError> {
        for (op, &c) in &self.base {
            if c == 0 {
                return Err(CostModelError::NonPositive(op.clone()));
            }
        }
        if self.conv_tiers.iter().any(|&(_, c)| c == 0) {
            return Err(CostModelError::NonPositive("conv tier".into()));
        }
        if self.edge_cost == 0 {
            return Err(CostModelError::NonPositive("edge_cost".into()));
        }
        if self.default_cost == 0 {
            return Err(CostModelError::NonPositive("default".into()));
        }
        if self.conv_tiers.windows(2).any(|w| w[0].0 > w[1].0) {
            return Err(CostModelError::UnsortedTiers);
        }
        Ok(())
    }

    pub fn costs(&self, graph: &Graph) -> BTreeMap<NodeId, u64> {
        graph.nodes.iter().map(|n| (n.id, node_cost(n, self))).collect()
    }
}

/// Static weight of one node.
pub fn node_cost(node: &Node, cm: &CostModel) -> u64 {
    if node.op == OpKind::Conv {
        let kernel = node
            .attr("kernel")
            .and_then(|k| k.as_ints())
            .and_then(|k| k.into_iter().max());
        if let Some(k) = kernel {
            if let Some(&(_, cost)) = cm.conv_tiers.iter().rev().find(|&&(min, _)| k >= min as i64) {
                return cost;
            }
        }
    }
    cm.base.get(node.op.as_str()).copied().unwrap_or(cm.default_cost)
}

/// Weighted longest distance from each node to the end of the graph,
/// counting its own cost: `dist(u) = cost(u) + max_v (edge_cost + dist(v))`,
/// and `dist(sink) = cost(sink)`. Multiple sinks are joined by a virtual
/// end node of cost 0 over zero-cost edges, which leaves these values unchanged.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
#[serde(transparent)]
pub struct DistanceMap(pub BTreeMap<NodeId, u64>);

impl DistanceMap {
    pub fn get(&self, id: NodeId) -> u64 {
        self.0[&id]
    }

    pub fn max(&self) -> u64 {
        self.0.values().copied().max().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn distance_pass(graph: &Graph, cm: &CostModel) -> Result<DistanceMap, CycleError> {
    let topo = Topology::of(graph);
    distances(&topo, &cm.costs(graph), cm.edge_cost)
}

pub(crate) fn distances(
    topo: &Topology,
    costs: &BTreeMap<NodeId, u64>,
    edge_cost: u64,
) -> Result<DistanceMap, CycleError> {
    let order = topo.order()?;
    let mut dist = BTreeMap::new();
    for &id in order.iter().rev() {
        let tail = topo
            .successors(id)
            .iter()
            .map(|s| edge_cost + dist[s])
            .max()
            .unwrap_or(0);
        dist.insert(id, costs[&id] + tail);
    }
    Ok(DistanceMap(dist))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CriticalPath {
    pub nodes: Vec<NodeId>,
    pub length: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error(transparent)]
    Cycle(#[from] CycleError),
}

/// Id with the largest distance; lowest id wins ties.
pub(crate) fn argmax_dist<'a>(ids: impl IntoIterator<Item = &'a NodeId>, dm: &DistanceMap) -> Option<NodeId> {
    ids.into_iter()
        .copied()
        .min_by(|&a, &b| dm.get(b).cmp(&dm.get(a)).then(a.cmp(&b)))
}

/// Follows the max-distance chain from the heaviest source.
pub fn critical_path(graph: &Graph, dm: &DistanceMap) -> Result<CriticalPath, AnalysisError> {
    let topo = Topology::of(graph);
    let sources = topo.sources();
    let start = argmax_dist(&sources, dm).ok_or(AnalysisError::EmptyGraph)?;
    let mut nodes = vec![start];
    let mut current = start;
    while let Some(next) = argmax_dist(topo.successors(current), dm) {
        nodes.push(next);
        current = next;
    }
    Ok(CriticalPath {
        nodes,
        length: dm.get(start),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParallelismReport {
    pub node_count: usize,
    pub total_weighted_node_cost: u64,
    pub weighted_cp_length: u64,
    /// `total_weighted_node_cost / weighted_cp_length`, exact.
    pub parallelism_factor: Factor,
}

impl ParallelismReport {
    pub fn from_totals(node_count: usize, total: u64, cp: u64) -> Self {
        ParallelismReport {
            node_count,
            total_weighted_node_cost: total,
            weighted_cp_length: cp,
            parallelism_factor: Factor::new(total, cp.max(1)),
        }
    }

    /// One row in the `#Nodes  Wt. NodeCost  Wt. CP  ||ism` layout.
    pub fn table_row(&self, name: &str) -> String {
        format!(
            "{:<16} {:>7} {:>12} {:>8} {:>7}x",
            name,
            self.node_count,
            self.total_weighted_node_cost,
            self.weighted_cp_length,
            self.parallelism_factor.fixed(2)
        )
    }

    pub fn table_header() -> String {
        format!(
            "{:<16} {:>7} {:>12} {:>8} {:>8}",
            "graph", "#nodes", "wt.nodecost", "wt.cp", "par"
        )
    }
}

pub fn parallelism_factor(graph: &Graph, cm: &CostModel) -> Result<ParallelismReport, AnalysisError> {
    let dm = distance_pass(graph, cm)?;
    let total: u64 = cm.costs(graph).values().sum();
    let cp = if graph.nodes.is_empty() {
        0
    } else {
        critical_path(graph, &dm)?.length
    };
    Ok(ParallelismReport::from_totals(graph.nodes.len(), total, cp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::ir::{AttrValue, TensorSpec};

    fn ids(v: &[u32]) -> Vec<NodeId> {
        v.iter().map(|&i| NodeId(i)).collect()
    }

    #[test]
    fn relu_costs_one_and_conv_is_tiered() {
        let cm = CostModel::default();
        let relu = Node::new(0, OpKind::Relu, "r");
        assert_eq!(node_cost(&relu, &cm), 1);
        let conv = |k: i64| Node::new(0, OpKind::Conv, "c").with_attr("kernel", AttrValue::Ints(vec![k, k]));
        assert_eq!(node_cost(&conv(7), &cm), 12);
        assert_eq!(node_cost(&conv(5), &cm), 8);
        assert_eq!(node_cost(&conv(3), &cm), 4);
        assert!(node_cost(&conv(7), &cm) > node_cost(&conv(3), &cm));
        assert_eq!(node_cost(&Node::new(0, OpKind::Other("Mystery".into()), "m"), &cm), 1);
    }

    #[test]
    fn chain_distances() {
        let dm = distance_pass(&fixtures::chain(), &CostModel::default()).unwrap();
        assert_eq!(dm.0.values().copied().collect::<Vec<_>>(), vec![5, 3, 1]);
    }

    #[test]
    fn diamond_distances_and_cp() {
        let g = fixtures::diamond();
        let dm = distance_pass(&g, &CostModel::default()).unwrap();
        assert_eq!(dm.0.values().copied().collect::<Vec<_>>(), vec![8, 6, 6, 1]);
        let cp = critical_path(&g, &dm).unwrap();
        assert_eq!(cp.nodes, ids(&[0, 1, 3]));
        assert_eq!(cp.length, 8);
    }

    #[test]
    fn single_node_is_its_own_path() {
        let mut g = Graph::new("one");
        g.inputs.push(TensorSpec::f32("x", vec![1, 1, 8, 8]));
        g.nodes.push(
            Node::new(0, OpKind::Conv, "big")
                .with_inputs(["x"])
                .with_outputs(["y"])
                .with_attr("kernel", AttrValue::Ints(vec![7, 7])),
        );
        let dm = distance_pass(&g, &CostModel::default()).unwrap();
        assert_eq!(dm.get(NodeId(0)), 12);
        let cp = critical_path(&g, &dm).unwrap();
        assert_eq!((cp.nodes, cp.length), (ids(&[0]), 12));
    }

    #[test]
    fn seven_node_distances() {
        let dm = distance_pass(&fixtures::seven_node(), &CostModel::default()).unwrap();
        // S A B C D T P Q
        assert_eq!(
            dm.0.values().copied().collect::<Vec<_>>(),
            vec![17, 15, 10, 8, 3, 1, 12, 3]
        );
    }

    #[test]
    fn empty_graph_has_no_cp() {
        let g = Graph::new("empty");
        let dm = distance_pass(&g, &CostModel::default()).unwrap();
        assert_eq!(critical_path(&g, &dm), Err(AnalysisError::EmptyGraph));
    }

    #[test]
    fn parallelism_rows() {
        let chain = parallelism_factor(&fixtures::chain(), &CostModel::default()).unwrap();
        assert_eq!(chain.parallelism_factor.fixed(2), "0.60");
        let diamond = parallelism_factor(&fixtures::diamond(), &CostModel::default()).unwrap();
        assert_eq!(
            (
                diamond.node_count,
                diamond.total_weighted_node_cost,
                diamond.weighted_cp_length
            ),
            (4, 10, 8)
        );
        assert_eq!(diamond.parallelism_factor.fixed(2), "1.25");
        assert_eq!(
            ParallelismReport::from_totals(66, 187, 218).parallelism_factor.fixed(2),
            "0.86"
        );
        assert_eq!(
            ParallelismReport::from_totals(1426, 8147, 2187)
                .parallelism_factor
                .significant(2),
            "3.7"
        );
    }

    #[test]
    fn cost_model_json_overrides() {
        let cm = CostModel::from_json(br#"{"base":{"Relu":3},"edge_cost":2,"default":5}"#).unwrap();
        assert_eq!(cm.base["Relu"], 3);
        assert_eq!(cm.base["Conv"], 4);
        assert_eq!((cm.edge_cost, cm.default_cost), (2, 5));
        assert_eq!(
            CostModel::from_json(br#"{"conv_tiers":[[5,8],[1,4]]}"#),
            Err(CostModelError::UnsortedTiers)
        );
        assert!(matches!(
            CostModel::from_json(br#"{"edge_cost":0}"#),
            Err(CostModelError::NonPositive(_))
        ));
    }
}
