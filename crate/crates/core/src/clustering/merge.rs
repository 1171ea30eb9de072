use std::collections::BTreeSet;

use super::{label, Cluster, ClusterSet};

/// Spans do not overlap: one cluster lies entirely after the other.
pub fn can_merge(a: &Cluster, b: &Cluster) -> bool {
    a.s_span < b.e_span || b.s_span < a.e_span
}

/// One round: each cluster not yet consumed takes the first unconsumed
/// partner, in label order, whose span does not overlap its own. Both leave the round; the merged
/// cluster sits at the first one's position with its nodes in descending
/// distance order. Clusters are relabeled `C1..` afterwards.
pub fn merge_clusters_once(set: &ClusterSet) -> (ClusterSet, bool) {
    let cs = &set.clusters;
    let mut skip: BTreeSet<usize> = BTreeSet::new();
    let mut lists = Vec::with_capacity(cs.len());
    let mut merged = false;
    for i in 0..cs.len() {
        if skip.contains(&i) {
            continue;
        }
        let partner = (0..cs.len()).find(|&j| j != i && !skip.contains(&j) && can_merge(&cs[i], &cs[j]));
        match partner {
            Some(j) => {
                skip.insert(i);
                skip.insert(j);
                let mut nodes: Vec<_> = cs[i].nodes.iter().chain(&cs[j].nodes).copied().collect();
                nodes.sort_by(|&a, &b| set.dm.get(b).cmp(&set.dm.get(a)).then(a.cmp(&b)));
                lists.push(nodes);
                merged = true;
            }
            None => lists.push(cs[i].nodes.clone()),
        }
    }
    let mut out = set.clone();
    out.clusters = lists
        .into_iter()
        .enumerate()
        .map(|(i, nodes)| Cluster::new(label(i), nodes, &set.dm))
        .collect();
    (out, merged)
}

/// Cluster counts after each merging round, starting with the input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeTrace {
    pub counts: Vec<usize>,
}

impl MergeTrace {
    /// Rounds run, including the final one that merged nothing.
    pub fn rounds(&self) -> usize {
        self.counts.len()
    }
}

/// Runs [`merge_clusters_once`] until a round merges nothing.
pub fn merge_clusters(set: &ClusterSet) -> (ClusterSet, MergeTrace) {
    let mut current = set.clone();
    let mut counts = vec![current.len()];
    loop {
        let (next, merged) = merge_clusters_once(&current);
        current = next;
        if !merged {
            return (current, MergeTrace { counts });
        }
        counts.push(current.len());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{distance_pass, CostModel, DistanceMap};
    use crate::clustering::linear_cluster;
    use crate::fixtures;
    use crate::ir::NodeId;
    use std::collections::BTreeMap;

    fn linear(g: &crate::ir::Graph) -> ClusterSet {
        linear_cluster(g, &distance_pass(g, &CostModel::default()).unwrap()).unwrap()
    }

    #[test]
    fn seven_node_three_to_two() {
        let cs = linear(&fixtures::seven_node());
        let (once, done) = merge_clusters_once(&cs);
        assert!(done);
        assert_eq!(once.clusters[1].nodes, vec![NodeId(6), NodeId(7)]);
        assert_eq!((once.clusters[1].s_span, once.clusters[1].e_span), (12, 3));
        let (fixed, trace) = merge_clusters(&cs);
        assert_eq!(fixed, once);
        assert_eq!(trace.counts, vec![3, 2]);
        assert_eq!(fixed.clusters[1].label, "C2");
    }

    #[test]
    fn diamond_does_not_merge() {
        let cs = linear(&fixtures::diamond());
        let (out, done) = merge_clusters_once(&cs);
        assert!(!done);
        assert_eq!(out, cs);
    }

    #[test]
    fn single_cluster_unchanged() {
        let cs = linear(&fixtures::chain());
        assert_eq!(merge_clusters_once(&cs), (cs.clone(), false));
    }

    #[test]
    fn touching_spans_do_not_merge() {
        let dm = DistanceMap(BTreeMap::from([(NodeId(0), 5), (NodeId(1), 5)]));
        let cs = ClusterSet::from_lists(vec![vec![NodeId(0)], vec![NodeId(1)]], dm, vec![]);
        assert!(!merge_clusters_once(&cs).1);
    }

    #[test]
    fn singletons_collapse_over_rounds() {
        let dm = DistanceMap((0..8).map(|i| (NodeId(i), 100 - 10 * i as u64)).collect());
        let lists = (0..8).map(|i| vec![NodeId(i)]).collect();
        let cs = ClusterSet::from_lists(lists, dm, vec![]);
        let (fixed, trace) = merge_clusters(&cs);
        assert_eq!(trace.counts, vec![8, 4, 2, 1]);
        assert_eq!(fixed.clusters[0].nodes, (0..8).map(NodeId).collect::<Vec<_>>());
    }
}
