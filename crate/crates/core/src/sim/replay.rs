//! Replays explicit send/recv programs, such as those implied by an
//! emission plan, against FIFO channels.

use std::collections::{BTreeSet, VecDeque};

use serde::Serialize;

use super::{Interval, IntervalKind, ScheduleTrace, SimError, Waiting, WorkerTrace};
use crate::analysis::CostModel;
use crate::clustering::Instance;
use crate::ir::{Graph, Topology};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum Step {
    Compute(Instance),
    /// Non-blocking; the message arrives `latency` later.
    Send {
        channel: usize,
        msg: String,
        producer: Instance,
    },
    /// Blocks until the channel head arrives; the head must be `msg`.
    Recv {
        channel: usize,
        msg: String,
        producer: Instance,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Program {
    pub label: String,
    pub steps: Vec<Step>,
}

/// Worker programs plus the `(sender, receiver)` worker pair of each channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReplayPlan {
    pub programs: Vec<Program>,
    pub channels: Vec<(usize, usize)>,
    pub batch: usize,
}

/// Runs every program step by step. A compute whose input is neither
/// computed locally nor received is an error, as is a receive that finds
/// a different message at the head of its channel.
pub fn replay(graph: &Graph, plan: &ReplayPlan, cm: &CostModel, latency: u64) -> Result<ScheduleTrace, SimError> {
    let costs = cm.costs(graph);
    let topo = Topology::of(graph);
    let n = plan.programs.len();
    let mut queues: Vec<VecDeque<(String, Instance, u64)>> = vec![VecDeque::new(); plan.channels.len()];
    let mut pc = vec![0usize; n];
    let mut time = vec![0u64; n];
    let mut have: Vec<BTreeSet<Instance>> = vec![BTreeSet::new(); n];
    let mut computed: BTreeSet<Instance> = BTreeSet::new();
    let mut traces: Vec<WorkerTrace> = plan
        .programs
        .iter()
        .map(|p| WorkerTrace {
            label: p.label.clone(),
            intervals: Vec::new(),
            slack: 0,
        })
        .collect();
    // A recv_wait is charged to the next compute on the same worker.
    let mut pending_wait: Vec<Option<u64>> = vec![None; n];

    for step in plan.programs.iter().flat_map(|p| &p.steps) {
        if let Step::Send { channel, .. } | Step::Recv { channel, .. } = step {
            if *channel >= plan.channels.len() {
                return Err(SimError::UnknownChannel(*channel));
            }
        }
    }

    loop {
        let mut progress = false;
        for w in 0..n {
            while let Some(step) = plan.programs[w].steps.get(pc[w]) {
                match step {
                    Step::Compute(inst) => {
                        let Some(&cost) = costs.get(&inst.node) else {
                            return Err(SimError::UnknownNode(inst.node));
                        };
                        for &p in topo.predecessors(inst.node) {
                            let pi = Instance::new(p, inst.batch);
                            if !have[w].contains(&pi) {
                                return Err(SimError::Unavailable {
                                    worker: plan.programs[w].label.clone(),
                                    instance: *inst,
                                    missing: pi,
                                });
                            }
                        }
                        if !computed.insert(*inst) {
                            return Err(SimError::Duplicate(*inst));
                        }
                        let t = &mut traces[w];
                        if let Some(from) = pending_wait[w].take() {
                            t.intervals.push(Interval {
                                instance: *inst,
                                start: from,
                                end: time[w],
                                kind: IntervalKind::RecvWait,
                            });
                            t.slack += time[w] - from;
                        }
                        t.intervals.push(Interval {
                            instance: *inst,
                            start: time[w],
                            end: time[w] + cost,
                            kind: IntervalKind::Compute,
                        });
                        time[w] += cost;
                        have[w].insert(*inst);
                    }
                    Step::Send { channel, msg, producer } => {
                        if !have[w].contains(producer) {
                            return Err(SimError::Unavailable {
                                worker: plan.programs[w].label.clone(),
                                instance: *producer,
                                missing: *producer,
                            });
                        }
                        queues[*channel].push_back((msg.clone(), *producer, time[w] + latency));
                    }
                    Step::Recv { channel, msg, producer } => {
                        let Some((head, inst, arrive)) = queues[*channel].front().cloned() else {
                            break;
                        };
                        if head != *msg || inst != *producer {
                            return Err(SimError::Fifo {
                                channel: *channel,
                                expected: msg.clone(),
                                found: head,
                            });
                        }
                        queues[*channel].pop_front();
                        if arrive > time[w] {
                            pending_wait[w].get_or_insert(time[w]);
                            time[w] = arrive;
                        }
                        have[w].insert(inst);
                    }
                }
                pc[w] += 1;
                progress = true;
            }
        }
        if (0..n).all(|w| pc[w] == plan.programs[w].steps.len()) {
            break;
        }
        if !progress {
            let blocked = |w: usize| pc[w] < plan.programs[w].steps.len();
            let mut w = (0..n).find(|&w| blocked(w)).expect("a worker is blocked");
            let mut path = Vec::new();
            let mut seen = BTreeSet::new();
            while seen.insert(w) {
                path.push(w);
                w = match &plan.programs[w].steps[pc[w]] {
                    Step::Recv { channel, .. } => plan.channels[*channel].0,
                    _ => unreachable!("only receives block"),
                };
                if !blocked(w) {
                    // The sender finished without sending: report the lone waiter.
                    path = vec![*path.last().unwrap()];
                    w = path[0];
                    break;
                }
            }
            let start = path.iter().position(|&x| x == w).unwrap_or(0);
            let cycle = path[start..]
                .iter()
                .map(|&w| Waiting {
                    worker: plan.programs[w].label.clone(),
                    instance: match &plan.programs[w].steps[pc[w]] {
                        Step::Recv { producer, .. } => *producer,
                        Step::Compute(i) => *i,
                        Step::Send { producer, .. } => *producer,
                    },
                })
                .collect();
            return Err(SimError::Deadlock { cycle });
        }
    }

    let left: usize = queues.iter().map(VecDeque::len).sum();
    if left > 0 {
        return Err(SimError::Undelivered(left));
    }
    for node in topo.nodes() {
        for batch in 1..=plan.batch {
            let inst = Instance::new(node, batch);
            if !computed.contains(&inst) {
                return Err(SimError::Uncovered(inst));
            }
        }
    }
    let total_cost = computed.iter().map(|i| costs[&i.node]).sum();
    Ok(ScheduleTrace::build(traces, total_cost, latency))
}
