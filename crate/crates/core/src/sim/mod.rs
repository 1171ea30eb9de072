//! Discrete-event simulation of a parallel schedule.
//!
//! Each worker runs its instance list in a fixed order, starting every op
//! as soon as the worker is free and all inputs are available. Inputs from
//! another worker arrive `latency` after their producer finishes; inputs
//! from the same worker are ready immediately. Idle time spent waiting for
//! a message is recorded as a `recv_wait` interval.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::analysis::CostModel;
use crate::clustering::{ClusterSet, Hypercluster, Instance};
use crate::ir::{Graph, NodeId, Topology};
use crate::ratio::Factor;

mod replay;

pub use replay::{replay, Program, ReplayPlan, Step};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Worker {
    pub label: String,
    pub instances: Vec<Instance>,
}

/// Fixed per-worker execution orders over `batch` samples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WorkerPlan {
    pub workers: Vec<Worker>,
    pub batch: usize,
}

impl WorkerPlan {
    /// One worker per cluster, a single sample.
    pub fn from_clusters(set: &ClusterSet) -> Self {
        WorkerPlan {
            workers: set
                .clusters
                .iter()
                .map(|c| Worker {
                    label: c.label.clone(),
                    instances: c.nodes.iter().map(|&n| Instance::new(n, 1)).collect(),
                })
                .collect(),
            batch: 1,
        }
    }

    /// One worker per cluster running sample 1, then sample 2, and so on.
    pub fn from_clusters_batched(set: &ClusterSet, batch: usize) -> Self {
        let batch = batch.max(1);
        WorkerPlan {
            workers: set
                .clusters
                .iter()
                .map(|c| Worker {
                    label: c.label.clone(),
                    instances: (1..=batch)
                        .flat_map(|b| c.nodes.iter().map(move |&n| Instance::new(n, b)))
                        .collect(),
                })
                .collect(),
            batch,
        }
    }

    pub fn from_hyperclusters(hcs: &[Hypercluster]) -> Self {
        WorkerPlan {
            workers: hcs
                .iter()
                .map(|h| Worker {
                    label: h.label.clone(),
                    instances: h.instances.clone(),
                })
                .collect(),
            batch: hcs.first().map_or(1, |h| h.batch),
        }
    }

    /// Everything on one worker in topological order.
    pub fn sequential(graph: &Graph) -> Result<Self, crate::ir::CycleError> {
        let order = Topology::of(graph).order()?;
        Ok(WorkerPlan {
            workers: vec![Worker {
                label: "C1".into(),
                instances: order.into_iter().map(|n| Instance::new(n, 1)).collect(),
            }],
            batch: 1,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalKind {
    Compute,
    RecvWait,
}

impl IntervalKind {
    pub fn as_str(self) -> &'static str {
        match self {
            IntervalKind::Compute => "compute",
            IntervalKind::RecvWait => "recv_wait",
        }
    }
}

/// `[start, end)` on one worker. For `recv_wait`, `instance` is the op
/// whose input was late.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Interval {
    pub instance: Instance,
    pub start: u64,
    pub end: u64,
    pub kind: IntervalKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WorkerTrace {
    pub label: String,
    pub intervals: Vec<Interval>,
    pub slack: u64,
}

impl WorkerTrace {
    pub fn compute(&self) -> impl Iterator<Item = &Interval> {
        self.intervals.iter().filter(|i| i.kind == IntervalKind::Compute)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScheduleTrace {
    pub workers: Vec<WorkerTrace>,
    pub makespan: u64,
    /// Cost of all instances; the single-worker makespan.
    pub total_cost: u64,
    /// `total_cost / makespan`.
    pub predicted_speedup: Factor,
    pub latency: u64,
}

#[derive(Serialize)]
struct TraceLine<'a> {
    cluster: &'a str,
    op: NodeId,
    batch: usize,
    start: u64,
    end: u64,
    kind: &'static str,
}

/// Report block for a trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SimSummary {
    pub makespan: u64,
    pub total_cost: u64,
    pub latency: u64,
    pub slack: BTreeMap<String, u64>,
    pub predicted_speedup: Factor,
}

impl ScheduleTrace {
    fn build(workers: Vec<WorkerTrace>, total_cost: u64, latency: u64) -> Self {
        let makespan = workers
            .iter()
            .flat_map(|w| w.intervals.iter().map(|i| i.end))
            .max()
            .unwrap_or(0);
        let predicted_speedup = if makespan == 0 {
            Factor::new(1, 1)
        } else {
            Factor::new(total_cost, makespan)
        };
        ScheduleTrace {
            workers,
            makespan,
            total_cost,
            predicted_speedup,
            latency,
        }
    }

    pub fn total_slack(&self) -> u64 {
        self.workers.iter().map(|w| w.slack).sum()
    }

    /// Compute interval of every instance.
    pub fn compute_times(&self) -> BTreeMap<Instance, (usize, u64, u64)> {
        let mut map = BTreeMap::new();
        for (w, t) in self.workers.iter().enumerate() {
            for i in t.compute() {
                map.insert(i.instance, (w, i.start, i.end));
            }
        }
        map
    }

    /// One JSON object per interval, workers in order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for w in &self.workers {
            for i in &w.intervals {
                let line = TraceLine {
                    cluster: &w.label,
                    op: i.instance.node,
                    batch: i.instance.batch,
                    start: i.start,
                    end: i.end,
                    kind: i.kind.as_str(),
                };
                out.push_str(&serde_json::to_string(&line).expect("trace line serializes"));
                out.push('\n');
            }
        }
        out
    }

    pub fn summary(&self) -> SimSummary {
        SimSummary {
            makespan: self.makespan,
            total_cost: self.total_cost,
            latency: self.latency,
            slack: self.workers.iter().map(|w| (w.label.clone(), w.slack)).collect(),
            predicted_speedup: self.predicted_speedup,
        }
    }
}

/// A blocked worker and the instance it is stuck on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Waiting {
    pub worker: String,
    pub instance: Instance,
}

fn fmt_cycle(cycle: &[Waiting]) -> String {
    cycle
        .iter()
        .map(|w| format!("{} at {}#{}", w.worker, w.instance.node, w.instance.batch))
        .collect::<Vec<_>>()
        .join(" -> ")
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("deadlock: {}", fmt_cycle(.cycle))]
    Deadlock { cycle: Vec<Waiting> },
    #[error("instance {}#{} needs {from}#{batch}, which no worker runs", .to, .batch)]
    MissingProducer { from: NodeId, to: NodeId, batch: usize },
    #[error("instance {}#{} is scheduled more than once", .0.node, .0.batch)]
    Duplicate(Instance),
    #[error("instance {}#{} is never run", .0.node, .0.batch)]
    Uncovered(Instance),
    #[error("worker schedules unknown node {0}")]
    UnknownNode(NodeId),
    #[error("channel {channel}: expected message {expected}, found {found}")]
    Fifo {
        channel: usize,
        expected: String,
        found: String,
    },
    #[error("worker {worker} computes {}#{} before its input {}#{} is available", .instance.node, .instance.batch, .missing.node, .missing.batch)]
    Unavailable {
        worker: String,
        instance: Instance,
        missing: Instance,
    },
    #[error("channel {0} is used but not declared")]
    UnknownChannel(usize),
    #[error("{0} message(s) left unreceived")]
    Undelivered(usize),
}

impl fmt::Display for Instance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.node, self.batch)
    }
}

/// Single-worker makespan: the sum of all node costs.
pub fn sequential_makespan(graph: &Graph, cm: &CostModel) -> u64 {
    cm.costs(graph).values().sum()
}

/// ASAP simulation of `plan` over `graph`.
pub fn simulate(graph: &Graph, plan: &WorkerPlan, cm: &CostModel, latency: u64) -> Result<ScheduleTrace, SimError> {
    let costs = cm.costs(graph);
    let topo = Topology::of(graph);

    let mut location: BTreeMap<Instance, usize> = BTreeMap::new();
    for (w, worker) in plan.workers.iter().enumerate() {
        for &inst in &worker.instances {
            if !costs.contains_key(&inst.node) {
                return Err(SimError::UnknownNode(inst.node));
            }
            if location.insert(inst, w).is_some() {
                return Err(SimError::Duplicate(inst));
            }
        }
    }
    for &inst in location.keys() {
        for &p in topo.predecessors(inst.node) {
            if !location.contains_key(&Instance::new(p, inst.batch)) {
                return Err(SimError::MissingProducer {
                    from: p,
                    to: inst.node,
                    batch: inst.batch,
                });
            }
        }
    }
    for node in topo.nodes() {
        for batch in 1..=plan.batch {
            let inst = Instance::new(node, batch);
            if !location.contains_key(&inst) {
                return Err(SimError::Uncovered(inst));
            }
        }
    }

    let n = plan.workers.len();
    let mut pc = vec![0usize; n];
    let mut free = vec![0u64; n];
    let mut traces: Vec<WorkerTrace> = plan
        .workers
        .iter()
        .map(|w| WorkerTrace {
            label: w.label.clone(),
            intervals: Vec::new(),
            slack: 0,
        })
        .collect();
    let mut finished: BTreeMap<Instance, u64> = BTreeMap::new();
    let total = location.len();

    while finished.len() < total {
        let mut progress = false;
        for w in 0..n {
            while let Some(&inst) = plan.workers[w].instances.get(pc[w]) {
                let mut ready_at = free[w];
                let mut blocked = false;
                for &p in topo.predecessors(inst.node) {
                    let pi = Instance::new(p, inst.batch);
                    match finished.get(&pi) {
                        Some(&end) => {
                            let arrive = if location[&pi] == w { end } else { end + latency };
                            ready_at = ready_at.max(arrive);
                        }
                        None => blocked = true,
                    }
                }
                if blocked {
                    break;
                }
                let t = &mut traces[w];
                if ready_at > free[w] {
                    t.intervals.push(Interval {
                        instance: inst,
                        start: free[w],
                        end: ready_at,
                        kind: IntervalKind::RecvWait,
                    });
                    t.slack += ready_at - free[w];
                }
                let end = ready_at + costs[&inst.node];
                t.intervals.push(Interval {
                    instance: inst,
                    start: ready_at,
                    end,
                    kind: IntervalKind::Compute,
                });
                free[w] = end;
                finished.insert(inst, end);
                pc[w] += 1;
                progress = true;
            }
        }
        if !progress {
            return Err(SimError::Deadlock {
                cycle: waiting_cycle(plan, &pc, |w| {
                    let inst = plan.workers[w].instances[pc[w]];
                    topo.predecessors(inst.node)
                        .iter()
                        .map(|&p| Instance::new(p, inst.batch))
                        .find(|pi| !finished.contains_key(pi))
                        .map(|pi| location[&pi])
                        .expect("blocked worker waits on something")
                }),
            });
        }
    }

    let total_cost = location.keys().map(|i| costs[&i.node]).sum();
    Ok(ScheduleTrace::build(traces, total_cost, latency))
}

/// Follows "worker waits on worker" links from the first blocked worker
/// until one repeats, and returns the loop.
fn waiting_cycle(plan: &WorkerPlan, pc: &[usize], waits_on: impl Fn(usize) -> usize) -> Vec<Waiting> {
    let blocked = |w: usize| pc[w] < plan.workers[w].instances.len();
    let mut w = (0..plan.workers.len())
        .find(|&w| blocked(w))
        .expect("some worker is blocked");
    let mut path: Vec<usize> = Vec::new();
    let mut seen = BTreeSet::new();
    while seen.insert(w) {
        path.push(w);
        w = waits_on(w);
    }
    let start = path.iter().position(|&x| x == w).expect("loop closes on the path");
    path[start..]
        .iter()
        .map(|&w| Waiting {
            worker: plan.workers[w].label.clone(),
            instance: plan.workers[w].instances[pc[w]],
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::distance_pass;
    use crate::clustering::{hypercluster, linear_cluster, merge_clusters, switched_hypercluster};
    use crate::fixtures;

    fn clustered(g: &Graph) -> ClusterSet {
        let cs = linear_cluster(g, &distance_pass(g, &CostModel::default()).unwrap()).unwrap();
        merge_clusters(&cs).0
    }

    fn iv(node: u32, start: u64, end: u64, kind: IntervalKind) -> Interval {
        Interval {
            instance: Instance::new(NodeId(node), 1),
            start,
            end,
            kind,
        }
    }

    #[test]
    fn diamond_trace() {
        let g = fixtures::diamond();
        let plan = WorkerPlan::from_clusters(&clustered(&g));
        let t = simulate(&g, &plan, &CostModel::default(), 1).unwrap();
        use IntervalKind::*;
        assert_eq!(
            t.workers[0].intervals,
            vec![
                iv(0, 0, 1, Compute),
                iv(1, 1, 5, Compute),
                iv(3, 5, 7, RecvWait),
                iv(3, 7, 8, Compute)
            ]
        );
        assert_eq!(
            t.workers[1].intervals,
            vec![iv(2, 0, 2, RecvWait), iv(2, 2, 6, Compute)]
        );
        assert_eq!(t.makespan, 8);
        assert_eq!(t.predicted_speedup, Factor::new(5, 4));
        assert_eq!(t.summary().slack["C1"], 2);
    }

    #[test]
    fn single_worker_is_sequential() {
        let g = fixtures::seven_node();
        let cm = CostModel::default();
        let t = simulate(&g, &WorkerPlan::sequential(&g).unwrap(), &cm, 1).unwrap();
        assert_eq!(t.makespan, sequential_makespan(&g, &cm));
        assert_eq!(t.total_slack(), 0);
        assert_eq!(sequential_makespan(&fixtures::diamond(), &cm), 10);
        assert_eq!(sequential_makespan(&Graph::new("e"), &cm), 0);
    }

    #[test]
    fn mutual_wait_deadlocks() {
        let g = fixtures::diamond();
        let i = |n| Instance::new(NodeId(n), 1);
        let plan = WorkerPlan {
            workers: vec![
                Worker {
                    label: "C1".into(),
                    instances: vec![i(3), i(0), i(1)],
                },
                Worker {
                    label: "C2".into(),
                    instances: vec![i(2)],
                },
            ],
            batch: 1,
        };
        match simulate(&g, &plan, &CostModel::default(), 1) {
            Err(SimError::Deadlock { cycle }) => {
                assert_eq!(
                    cycle,
                    vec![Waiting {
                        worker: "C1".into(),
                        instance: i(3)
                    }]
                );
            }
            other => panic!("{other:?}"),
        }
        let cross = WorkerPlan {
            workers: vec![
                Worker {
                    label: "C1".into(),
                    instances: vec![i(3), i(0)],
                },
                Worker {
                    label: "C2".into(),
                    instances: vec![i(2), i(1)],
                },
            ],
            batch: 1,
        };
        let Err(SimError::Deadlock { cycle }) = simulate(&g, &cross, &CostModel::default(), 1) else {
            panic!("expected deadlock");
        };
        assert_eq!(cycle.len(), 2);
    }

    #[test]
    fn missing_producer_names_the_edge() {
        let g = fixtures::diamond();
        let i = |n| Instance::new(NodeId(n), 1);
        let plan = WorkerPlan {
            workers: vec![Worker {
                label: "C1".into(),
                instances: vec![i(1), i(2), i(3)],
            }],
            batch: 1,
        };
        assert_eq!(
            simulate(&g, &plan, &CostModel::default(), 1),
            Err(SimError::MissingProducer {
                from: NodeId(0),
                to: NodeId(1),
                batch: 1
            })
        );
    }

    #[test]
    fn fire_module_hyperclusters() {
        let g = fixtures::fire_module();
        let cs = clustered(&g);
        let cm = CostModel::default();
        let plain = simulate(
            &g,
            &WorkerPlan::from_hyperclusters(&hypercluster(&cs, 2).unwrap()),
            &cm,
            1,
        )
        .unwrap();
        let switched = simulate(
            &g,
            &WorkerPlan::from_hyperclusters(&switched_hypercluster(&cs, 2).unwrap()),
            &cm,
            1,
        )
        .unwrap();
        assert_eq!(plain.total_cost, 32);
        assert_eq!(plain.makespan, 22);
        assert_eq!(switched.makespan, 17);
        assert!(switched.total_slack() * plain.makespan <= plain.total_slack() * switched.makespan);
    }

    #[test]
    fn jsonl_lines() {
        let g = fixtures::diamond();
        let t = simulate(&g, &WorkerPlan::from_clusters(&clustered(&g)), &CostModel::default(), 1).unwrap();
        let text = t.to_jsonl();
        assert_eq!(text.lines().count(), 6);
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"cluster":"C1","op":0,"batch":1,"start":0,"end":1,"kind":"compute"}"#
        );
    }
}
