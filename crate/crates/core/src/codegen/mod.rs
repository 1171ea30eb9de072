//! Emission plans: one ordered record list per worker, with explicit
//! message passing between workers.
//!
//! Each op instance is preceded by receives for its remote inputs and
//! followed by one send per crossing edge. Channels are FIFO queues, one
//! per ordered worker pair. Receives on a channel happen in send order:
//! before an op, a worker pops its incoming channels until every message
//! the op needs has arrived, keeping earlier messages for later ops. As
//! long as every worker order is a restriction of one topological order
//! of the instances, this cannot deadlock.
//!
//! SSA names: op outputs are `t_<node>_<output>`, received values
//! `<message>_r<consumer>`, inputs `in<index>_w<worker>` and outputs
//! `out<index>`. With more than one sample every name gets `_b<batch>`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::clustering::Instance;
use crate::ir::{Attrs, Edge, Graph, NodeId, OpKind, TensorSpec};
use crate::sim::{Program, ReplayPlan, Step, WorkerPlan};

mod artifacts;
mod python;

pub use artifacts::{write_artifacts, Artifacts, Manifest, MANIFEST_VERSION};
pub use python::PythonTorch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    OpCall,
    Send,
    Recv,
    BindInput,
    BindOutput,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "name", rename_all = "snake_case")]
pub enum Operand {
    Ssa(String),
    /// Initializer, shared by all workers.
    Param(String),
    /// Graph input tensor (only in `bind_input`).
    Input(String),
    /// Omitted optional input.
    Absent,
}

impl Operand {
    pub fn ssa(&self) -> Option<&str> {
        match self {
            Operand::Ssa(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmissionRecord {
    pub kind: RecordKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
    pub batch: usize,
    /// Names bound by this record.
    pub ssa: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channel: Option<usize>,
    /// For `send`/`recv` the single operand is the message identity.
    pub operands: Vec<Operand>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub op: Option<OpKind>,
    #[serde(skip_serializing_if = "Attrs::is_empty")]
    pub attrs: Attrs,
    /// Crossing edge carried by a `send`/`recv`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edge: Option<Edge>,
    /// Graph tensor bound by `bind_input`/`bind_output`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tensor: Option<String>,
    /// Output position for `bind_output`, input position for `bind_input`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
}

impl EmissionRecord {
    fn new(kind: RecordKind, batch: usize) -> Self {
        EmissionRecord {
            kind,
            node: None,
            batch,
            ssa: Vec::new(),
            channel: None,
            operands: Vec::new(),
            op: None,
            attrs: Attrs::new(),
            edge: None,
            tensor: None,
            index: None,
        }
    }

    fn message(&self) -> &str {
        self.operands[0].ssa().expect("message operand is an ssa name")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkerCode {
    pub label: String,
    pub nodes: Vec<Instance>,
    pub records: Vec<EmissionRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Channel {
    pub id: usize,
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmissionPlan {
    pub graph: String,
    pub batch: usize,
    pub inputs: Vec<TensorSpec>,
    pub outputs: Vec<String>,
    /// Output positions whose value is a graph input, forwarded unchanged.
    pub passthrough: Vec<(usize, String)>,
    pub params: Vec<String>,
    pub workers: Vec<WorkerCode>,
    pub channels: Vec<Channel>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("node {0} is not assigned to any worker")]
    Unclustered(NodeId),
    #[error("instance {0} is assigned twice")]
    Duplicate(Instance),
    #[error("worker plan names node {0}, which is not in the graph")]
    UnknownNode(NodeId),
    #[error("worker {worker} runs {consumer} before its local input {producer}")]
    LocalOrder {
        worker: String,
        consumer: Instance,
        producer: Instance,
    },
    #[error("output \"{0}\" is neither produced nor a graph input")]
    UnboundOutput(String),
    #[error("tensor \"{0}\" has no producer, initializer or input")]
    Dangling(String),
}

struct Naming {
    batched: bool,
}

impl Naming {
    fn suffix(&self, batch: usize) -> String {
        if self.batched {
            format!("_b{batch}")
        } else {
            String::new()
        }
    }

    fn output(&self, node: NodeId, k: usize, batch: usize) -> String {
        format!("t_{}_{k}{}", node.0, self.suffix(batch))
    }

    fn input(&self, idx: usize, worker: usize, batch: usize) -> String {
        format!("in{idx}_w{worker}{}", self.suffix(batch))
    }

    fn graph_output(&self, k: usize, batch: usize) -> String {
        format!("out{k}{}", self.suffix(batch))
    }
}

/// `(from worker, to worker)`.
type Pair = (usize, usize);

/// One pending message on a channel.
#[derive(Clone)]
struct Message {
    msg: String,
    edge: Edge,
    batch: usize,
}

/// Builds the plan for `workers` over `graph`. Every instance must be
/// assigned exactly once; an op may not precede a same-worker producer.
pub fn build_emission_plan(graph: &Graph, workers: &WorkerPlan) -> Result<EmissionPlan, PlanError> {
    let naming = Naming {
        batched: workers.batch > 1,
    };
    let nodes: BTreeMap<NodeId, &crate::ir::Node> = graph.nodes.iter().map(|n| (n.id, n)).collect();
    let mut location: BTreeMap<Instance, (usize, usize)> = BTreeMap::new();
    for (w, worker) in workers.workers.iter().enumerate() {
        for (pos, &inst) in worker.instances.iter().enumerate() {
            if !nodes.contains_key(&inst.node) {
                return Err(PlanError::UnknownNode(inst.node));
            }
            if location.insert(inst, (w, pos)).is_some() {
                return Err(PlanError::Duplicate(inst));
            }
        }
    }
    for &id in nodes.keys() {
        for batch in 1..=workers.batch {
            if !location.contains_key(&Instance::new(id, batch)) {
                return Err(PlanError::Unclustered(id));
            }
        }
    }

    // producer tensor → (node, output index)
    let mut produced: BTreeMap<&str, (NodeId, usize)> = BTreeMap::new();
    for n in &graph.nodes {
        for (k, t) in n.outputs.iter().enumerate() {
            produced.entry(t.as_str()).or_insert((n.id, k));
        }
    }
    let input_index: BTreeMap<&str, usize> = graph
        .inputs
        .iter()
        .enumerate()
        .map(|(i, t)| (t.name.as_str(), i))
        .collect();

    // consumers of each node, per edge
    let mut out_edges: BTreeMap<NodeId, Vec<Edge>> = BTreeMap::new();
    for e in graph.edges() {
        out_edges.entry(e.from).or_default().push(e);
    }

    // Phase 1: message sequences per ordered worker pair, in sender order.
    let mut sends_after: BTreeMap<Instance, Vec<(Pair, Message)>> = BTreeMap::new();
    let mut pair_msgs: BTreeMap<Pair, Vec<Message>> = BTreeMap::new();
    for (w, worker) in workers.workers.iter().enumerate() {
        for &inst in &worker.instances {
            // (pair, consumer location, message)
            let mut outgoing: Vec<(Pair, (usize, usize), Message)> = Vec::new();
            for e in out_edges.get(&inst.node).map(Vec::as_slice).unwrap_or_default() {
                let consumer = Instance::new(e.to, inst.batch);
                let (cw, cpos) = location[&consumer];
                if cw == w {
                    continue;
                }
                let k = produced[e.tensor.as_str()].1;
                outgoing.push((
                    (cw, cpos),
                    (w, cw),
                    Message {
                        msg: naming.output(inst.node, k, inst.batch),
                        edge: e.clone(),
                        batch: inst.batch,
                    },
                ));
            }
            outgoing.sort_by(|a, b| a.0.cmp(&b.0).then(a.2.edge.tensor.cmp(&b.2.edge.tensor)));
            for (_, pair, m) in outgoing {
                pair_msgs.entry(pair).or_default().push(m.clone());
                sends_after.entry(inst).or_default().push((pair, m));
            }
        }
    }
    let channels: Vec<Channel> = pair_msgs
        .keys()
        .enumerate()
        .map(|(id, &(from, to))| Channel { id, from, to })
        .collect();
    let channel_of: BTreeMap<(usize, usize), usize> = channels.iter().map(|c| ((c.from, c.to), c.id)).collect();

    // Phase 2: per-worker records.
    let mut worker_codes = Vec::with_capacity(workers.workers.len());
    let mut params: BTreeSet<String> = BTreeSet::new();
    for (w, worker) in workers.workers.iter().enumerate() {
        let mut records = Vec::new();
        let mut bound: BTreeSet<Instance> = BTreeSet::new();
        // (consumer instance, tensor) → local name of a received value
        let mut received: BTreeMap<(Instance, String), String> = BTreeMap::new();
        let mut incoming: Vec<(usize, VecDeque<Message>)> = channels
            .iter()
            .filter(|c| c.to == w)
            .map(|c| (c.id, pair_msgs[&(c.from, c.to)].iter().cloned().collect()))
            .collect();

        let mut needed_inputs: BTreeSet<(usize, usize)> = BTreeSet::new();
        for &inst in &worker.instances {
            for name in nodes[&inst.node].present_inputs() {
                if let Some(&i) = input_index.get(name) {
                    needed_inputs.insert((i, inst.batch));
                }
            }
        }
        for &(i, batch) in &needed_inputs {
            let mut r = EmissionRecord::new(RecordKind::BindInput, batch);
            r.ssa.push(naming.input(i, w, batch));
            r.operands.push(Operand::Input(graph.inputs[i].name.clone()));
            r.tensor = Some(graph.inputs[i].name.clone());
            r.index = Some(i);
            records.push(r);
        }

        for &inst in &worker.instances {
            let node = nodes[&inst.node];
            for (ch, queue) in incoming.iter_mut() {
                let wanted = queue
                    .iter()
                    .rposition(|m| m.edge.to == inst.node && m.batch == inst.batch);
                let Some(last) = wanted else { continue };
                for m in queue.drain(..=last) {
                    let local = format!("{}_r{}", m.msg, m.edge.to.0);
                    let mut r = EmissionRecord::new(RecordKind::Recv, m.batch);
                    r.ssa.push(local.clone());
                    r.channel = Some(*ch);
                    r.operands.push(Operand::Ssa(m.msg.clone()));
                    r.edge = Some(m.edge.clone());
                    records.push(r);
                    received.insert((Instance::new(m.edge.to, m.batch), m.edge.tensor.clone()), local);
                }
            }

            let mut call = EmissionRecord::new(RecordKind::OpCall, inst.batch);
            call.node = Some(inst.node);
            call.op = Some(node.op.clone());
            call.attrs = node.attrs.clone();
            for name in &node.inputs {
                let operand = if name.is_empty() {
                    Operand::Absent
                } else if let Some(&(p, k)) = produced.get(name.as_str()) {
                    let pi = Instance::new(p, inst.batch);
                    if location[&pi].0 == w {
                        if !bound.contains(&pi) {
                            return Err(PlanError::LocalOrder {
                                worker: worker.label.clone(),
                                consumer: inst,
                                producer: pi,
                            });
                        }
                        Operand::Ssa(naming.output(p, k, inst.batch))
                    } else {
                        Operand::Ssa(received[&(inst, name.clone())].clone())
                    }
                } else if let Some(&i) = input_index.get(name.as_str()) {
                    Operand::Ssa(naming.input(i, w, inst.batch))
                } else if graph.initializer(name).is_some() {
                    params.insert(name.clone());
                    Operand::Param(name.clone())
                } else {
                    return Err(PlanError::Dangling(name.clone()));
                };
                call.operands.push(operand);
            }
            call.ssa = (0..node.outputs.len())
                .map(|k| naming.output(inst.node, k, inst.batch))
                .collect();
            records.push(call);
            bound.insert(inst);

            for (pair, m) in sends_after.remove(&inst).unwrap_or_default() {
                let mut r = EmissionRecord::new(RecordKind::Send, m.batch);
                r.channel = Some(channel_of[&pair]);
                r.operands.push(Operand::Ssa(m.msg));
                r.edge = Some(m.edge);
                records.push(r);
            }

            for (k, out) in graph.outputs.iter().enumerate() {
                if let Some(pos) = node.outputs.iter().position(|o| o == out) {
                    let mut r = EmissionRecord::new(RecordKind::BindOutput, inst.batch);
                    r.ssa.push(naming.graph_output(k, inst.batch));
                    r.operands.push(Operand::Ssa(naming.output(inst.node, pos, inst.batch)));
                    r.tensor = Some(out.clone());
                    r.index = Some(k);
                    records.push(r);
                }
            }
        }
        worker_codes.push(WorkerCode {
            label: worker.label.clone(),
            nodes: worker.instances.clone(),
            records,
        });
    }

    let mut passthrough = Vec::new();
    for (k, out) in graph.outputs.iter().enumerate() {
        if produced.contains_key(out.as_str()) {
            continue;
        }
        if input_index.contains_key(out.as_str()) {
            passthrough.push((k, out.clone()));
        } else {
            return Err(PlanError::UnboundOutput(out.clone()));
        }
    }

    Ok(EmissionPlan {
        graph: graph.name.clone(),
        batch: workers.batch,
        inputs: graph.inputs.clone(),
        outputs: graph.outputs.clone(),
        passthrough,
        params: params.into_iter().collect(),
        workers: worker_codes,
        channels,
    })
}

/// A broken plan invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    FifoMismatch {
        channel: usize,
        sent: Vec<String>,
        received: Vec<String>,
    },
    WrongEndpoint {
        channel: usize,
        worker: usize,
    },
    SsaRebound {
        name: String,
    },
    UseBeforeDef {
        worker: usize,
        name: String,
    },
    NodeCoverage {
        node: NodeId,
        batch: usize,
        count: usize,
    },
    EdgeCoverage {
        edge: Edge,
        batch: usize,
        sends: usize,
        recvs: usize,
    },
}

impl EmissionPlan {
    /// Checks FIFO balance, SSA uniqueness and def-before-use, and that
    /// every instance and crossing edge appears exactly once.
    pub fn check(&self, graph: &Graph) -> Vec<Violation> {
        let mut v = Vec::new();

        let mut sent: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        let mut recvd: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        let mut all_names: BTreeSet<&str> = BTreeSet::new();
        let mut calls: BTreeMap<Instance, usize> = BTreeMap::new();
        let mut edge_use: BTreeMap<(Edge, usize), (usize, usize)> = BTreeMap::new();
        let mut location: BTreeMap<Instance, usize> = BTreeMap::new();

        for (w, code) in self.workers.iter().enumerate() {
            let mut defined: BTreeSet<&str> = BTreeSet::new();
            for r in &code.records {
                match r.kind {
                    RecordKind::Send | RecordKind::Recv => {
                        let ch = r.channel.and_then(|c| self.channels.get(c));
                        let expect = match r.kind {
                            RecordKind::Send => ch.map(|c| c.from),
                            _ => ch.map(|c| c.to),
                        };
                        if expect != Some(w) {
                            v.push(Violation::WrongEndpoint {
                                channel: r.channel.unwrap_or(usize::MAX),
                                worker: w,
                            });
                        }
                        let seq = if r.kind == RecordKind::Send {
                            &mut sent
                        } else {
                            &mut recvd
                        };
                        seq.entry(r.channel.unwrap_or(usize::MAX))
                            .or_default()
                            .push(r.message().to_string());
                        if let Some(e) = &r.edge {
                            let entry = edge_use.entry((e.clone(), r.batch)).or_default();
                            if r.kind == RecordKind::Send {
                                entry.0 += 1;
                            } else {
                                entry.1 += 1;
                            }
                        }
                    }
                    RecordKind::OpCall => {
                        if let Some(n) = r.node {
                            let inst = Instance::new(n, r.batch);
                            *calls.entry(inst).or_default() += 1;
                            location.insert(inst, w);
                        }
                    }
                    _ => {}
                }
                if r.kind != RecordKind::Recv {
                    for name in r.operands.iter().filter_map(Operand::ssa) {
                        if !defined.contains(name) {
                            v.push(Violation::UseBeforeDef {
                                worker: w,
                                name: name.to_string(),
                            });
                        }
                    }
                }
                for name in &r.ssa {
                    if !all_names.insert(name) {
                        v.push(Violation::SsaRebound { name: name.clone() });
                    }
                    defined.insert(name);
                }
            }
        }

        for c in &self.channels {
            let s = sent.remove(&c.id).unwrap_or_default();
            let r = recvd.remove(&c.id).unwrap_or_default();
            if s != r {
                v.push(Violation::FifoMismatch {
                    channel: c.id,
                    sent: s,
                    received: r,
                });
            }
        }
        for (channel, s) in sent {
            v.push(Violation::FifoMismatch {
                channel,
                sent: s,
                received: recvd.remove(&channel).unwrap_or_default(),
            });
        }

        for n in &graph.nodes {
            for batch in 1..=self.batch {
                let count = calls.get(&Instance::new(n.id, batch)).copied().unwrap_or(0);
                if count != 1 {
                    v.push(Violation::NodeCoverage {
                        node: n.id,
                        batch,
                        count,
                    });
                }
            }
        }
        for e in graph.edges() {
            for batch in 1..=self.batch {
                let (a, b) = (Instance::new(e.from, batch), Instance::new(e.to, batch));
                let crossing = location.get(&a) != location.get(&b);
                let (sends, recvs) = edge_use.get(&(e.clone(), batch)).copied().unwrap_or((0, 0));
                let want = usize::from(crossing);
                if sends != want || recvs != want {
                    v.push(Violation::EdgeCoverage {
                        edge: e.clone(),
                        batch,
                        sends,
                        recvs,
                    });
                }
            }
        }
        v
    }

    /// The send/recv programs this plan implies, for [`crate::sim::replay`].
    pub fn replay_plan(&self) -> ReplayPlan {
        let programs = self
            .workers
            .iter()
            .map(|code| Program {
                label: code.label.clone(),
                steps: code
                    .records
                    .iter()
                    .filter_map(|r| {
                        let producer = || Instance::new(r.edge.as_ref().expect("message edge").from, r.batch);
                        match r.kind {
                            RecordKind::OpCall => Some(Step::Compute(Instance::new(r.node?, r.batch))),
                            RecordKind::Send => Some(Step::Send {
                                channel: r.channel?,
                                msg: r.message().to_string(),
                                producer: producer(),
                            }),
                            RecordKind::Recv => Some(Step::Recv {
                                channel: r.channel?,
                                msg: r.message().to_string(),
                                producer: producer(),
                            }),
                            _ => None,
                        }
                    })
                    .collect(),
            })
            .collect();
        ReplayPlan {
            programs,
            channels: self.channels.iter().map(|c| (c.from, c.to)).collect(),
            batch: self.batch,
        }
    }

    pub fn count(&self, kind: RecordKind) -> usize {
        self.workers
            .iter()
            .flat_map(|w| &w.records)
            .filter(|r| r.kind == kind)
            .count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes") + "\n"
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RenderError {
    #[error("backend {backend} has no template for op {op} (node {node})")]
    UnsupportedOp { backend: String, op: String, node: NodeId },
}

/// A text target for emission plans.
pub trait Backend {
    fn name(&self) -> &str;
    fn extension(&self) -> &str;
    /// Workers plus orchestrator.
    fn parallel(&self, plan: &EmissionPlan) -> Result<String, RenderError>;
    /// A single function over a single-worker plan.
    fn sequential(&self, plan: &EmissionPlan) -> Result<String, RenderError>;
}

/// `parallel.<ext>` for `plan`.
pub fn render_parallel(plan: &EmissionPlan, backend: &dyn Backend) -> Result<BTreeMap<String, String>, RenderError> {
    let mut files = BTreeMap::new();
    files.insert(format!("parallel.{}", backend.extension()), backend.parallel(plan)?);
    Ok(files)
}

/// `sequential.<ext>`: all nodes in topological order on one worker,
/// named exactly as in the parallel plan.
pub fn render_sequential(graph: &Graph, backend: &dyn Backend) -> Result<String, RenderError> {
    let plan = sequential_plan(graph);
    backend.sequential(&plan)
}

pub(crate) fn sequential_plan(graph: &Graph) -> EmissionPlan {
    let workers = WorkerPlan::sequential(graph).expect("validated graph is acyclic");
    build_emission_plan(graph, &workers).expect("single worker in topological order")
}
