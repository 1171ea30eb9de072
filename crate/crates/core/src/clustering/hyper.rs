use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use super::ClusterSet;
use crate::ir::NodeId;
use crate::ratio::Factor;

/// One execution of a node for one batch sample (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Instance {
    pub node: NodeId,
    pub batch: usize,
}

impl Instance {
    pub fn new(node: NodeId, batch: usize) -> Self {
        Instance { node, batch }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Hypercluster {
    pub label: String,
    pub instances: Vec<Instance>,
    pub batch: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HyperError {
    #[error("hyperclusters need a batch size of at least 2, got {0}")]
    BatchTooSmall(usize),
}

/// How batch samples are re-assigned across clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SwitchPolicy {
    /// Sample `b` of cluster `j` goes to hypercluster `(j + b - 1) mod k`.
    #[default]
    Rotation,
}

fn check(b: usize) -> Result<(), HyperError> {
    if b < 2 {
        return Err(HyperError::BatchTooSmall(b));
    }
    Ok(())
}

/// One hypercluster per cluster: every op is followed by its copies for
/// the other samples, `(p,1) .. (p,B)` for each position `p`.
pub fn hypercluster(set: &ClusterSet, b: usize) -> Result<Vec<Hypercluster>, HyperError> {
    check(b)?;
    Ok(set
        .clusters
        .iter()
        .enumerate()
        .map(|(i, c)| Hypercluster {
            label: format!("HYC{}", i + 1),
            instances: c
                .nodes
                .iter()
                .flat_map(|&n| (1..=b).map(move |batch| Instance::new(n, batch)))
                .collect(),
            batch: b,
        })
        .collect())
}

pub fn switched_hypercluster(set: &ClusterSet, b: usize) -> Result<Vec<Hypercluster>, HyperError> {
    switched_hypercluster_with(set, b, SwitchPolicy::Rotation)
}

/// Assigns each sample's copy of a cluster to some hypercluster per
/// `policy`, then orders each hypercluster by descending distance, then
/// batch, then id.
pub fn switched_hypercluster_with(
    set: &ClusterSet,
    b: usize,
    policy: SwitchPolicy,
) -> Result<Vec<Hypercluster>, HyperError> {
    check(b)?;
    let k = set.len();
    let mut buckets: Vec<Vec<Instance>> = vec![Vec::new(); k];
    for (j, c) in set.clusters.iter().enumerate() {
        for batch in 1..=b {
            let target = match policy {
                SwitchPolicy::Rotation => (j + batch - 1) % k,
            };
            buckets[target].extend(c.nodes.iter().map(|&n| Instance::new(n, batch)));
        }
    }
    Ok(buckets
        .into_iter()
        .enumerate()
        .map(|(i, mut instances)| {
            instances.sort_by(|x, y| {
                set.dm
                    .get(y.node)
                    .cmp(&set.dm.get(x.node))
                    .then(x.batch.cmp(&y.batch))
                    .then(x.node.cmp(&y.node))
            });
            Hypercluster {
                label: format!("SHYC{}", i + 1),
                instances,
                batch: b,
            }
        })
        .collect())
}

/// Instances of sample `b` in each hypercluster, in order.
pub fn project(hcs: &[Hypercluster], b: usize) -> Vec<Vec<NodeId>> {
    hcs.iter()
        .map(|h| h.instances.iter().filter(|i| i.batch == b).map(|i| i.node).collect())
        .collect()
}

/// Ops each hypercluster runs per sample: `instances / B`.
pub fn per_step_counts(hcs: &[Hypercluster]) -> Vec<Factor> {
    hcs.iter()
        .map(|h| Factor::new(h.instances.len() as u64, h.batch.max(1) as u64))
        .collect()
}

/// Load imbalance: heaviest worker cost over mean worker cost; 1 is perfect.
pub fn balance(worker_costs: &[u64]) -> Factor {
    let total: u64 = worker_costs.iter().sum();
    let max = worker_costs.iter().copied().max().unwrap_or(0);
    if total == 0 {
        return Factor::new(1, 1);
    }
    Factor::new(max * worker_costs.len() as u64, total)
}

impl Hypercluster {
    pub fn cost(&self, costs: &BTreeMap<NodeId, u64>) -> u64 {
        self.instances.iter().map(|i| costs[&i.node]).sum()
    }
}
