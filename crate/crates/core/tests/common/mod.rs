#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use dagpar::clustering::Instance;
use dagpar::ir::{AttrValue, Graph, Initializer, Node, NodeId, OpKind, TensorSpec, TensorValue};
use dagpar::sim::{Worker, WorkerPlan};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Structural DAG over `n` nodes with mixed costs. Every node reads one to
/// three earlier tensors (or the graph input); every sink is an output.
pub fn random_dag(rng: &mut ChaCha8Rng, n: usize) -> Graph {
    let mut g = Graph::new("random");
    g.inputs.push(TensorSpec::f32("x", vec![1]));
    let mut tensors = vec!["x".to_string()];
    for i in 0..n {
        let fan = rng.random_range(1..=3.min(tensors.len()));
        let inputs: Vec<String> = tensors.choose_multiple(rng, fan).cloned().collect();
        let mut node = match rng.random_range(0..10) {
            0 | 1 => Node::new(i as u32, OpKind::Relu, format!("n{i}")),
            2 => Node::new(i as u32, OpKind::MatMul, format!("n{i}")),
            3 => Node::new(i as u32, OpKind::MaxPool, format!("n{i}")),
            4 => Node::new(i as u32, OpKind::Softmax, format!("n{i}")),
            5 => Node::new(i as u32, OpKind::Other("Mystery".into()), format!("n{i}")),
            6 | 7 => Node::new(i as u32, OpKind::Add, format!("n{i}")),
            _ => {
                let k = [1, 3, 5, 7][rng.random_range(0..4)];
                Node::new(i as u32, OpKind::Conv, format!("n{i}")).with_attr("kernel", AttrValue::Ints(vec![k, k]))
            }
        };
        node = node.with_inputs(inputs).with_outputs([format!("t{i}")]);
        g.nodes.push(node);
        tensors.push(format!("t{i}"));
    }
    let read: BTreeSet<&str> = g
        .nodes
        .iter()
        .flat_map(|n| n.inputs.iter().map(String::as_str))
        .collect();
    g.outputs = g
        .nodes
        .iter()
        .map(|n| n.outputs[0].clone())
        .filter(|t| !read.contains(t.as_str()))
        .collect();
    g
}

/// Default cost table, restated independently of the library.
pub fn oracle_cost(node: &Node) -> u64 {
    match node.op.as_str() {
        "Conv" => match node
            .attr("kernel")
            .and_then(|k| k.as_ints())
            .and_then(|k| k.into_iter().max())
        {
            Some(k) if k >= 7 => 12,
            Some(k) if k >= 5 => 8,
            _ => 4,
        },
        "MatMul" | "Gemm" => 4,
        "MaxPool" | "AveragePool" | "Softmax" | "BatchNorm" => 2,
        _ => 1,
    }
}

/// Producer-to-consumer adjacency from tensor names.
pub fn oracle_succ(graph: &Graph) -> BTreeMap<NodeId, BTreeSet<NodeId>> {
    let mut producer = BTreeMap::new();
    for n in &graph.nodes {
        for t in &n.outputs {
            producer.insert(t.as_str(), n.id);
        }
    }
    let mut succ: BTreeMap<NodeId, BTreeSet<NodeId>> = graph.nodes.iter().map(|n| (n.id, BTreeSet::new())).collect();
    for n in &graph.nodes {
        for t in &n.inputs {
            if let Some(&p) = producer.get(t.as_str()) {
                succ.get_mut(&p).unwrap().insert(n.id);
            }
        }
    }
    succ
}

/// Longest weighted path by enumerating every path from every node.
pub fn brute_force_cp(graph: &Graph, edge_cost: u64) -> u64 {
    let succ = oracle_succ(graph);
    let cost: BTreeMap<NodeId, u64> = graph.nodes.iter().map(|n| (n.id, oracle_cost(n))).collect();
    fn walk(
        u: NodeId,
        acc: u64,
        succ: &BTreeMap<NodeId, BTreeSet<NodeId>>,
        cost: &BTreeMap<NodeId, u64>,
        e: u64,
    ) -> u64 {
        let here = acc + cost[&u];
        succ[&u]
            .iter()
            .map(|&v| walk(v, here + e, succ, cost, e))
            .fold(here, u64::max)
    }
    graph
        .nodes
        .iter()
        .map(|n| walk(n.id, 0, &succ, &cost, edge_cost))
        .max()
        .unwrap_or(0)
}

/// Weighted length of a node sequence if it is a path, else `None`.
pub fn path_length(graph: &Graph, nodes: &[NodeId], edge_cost: u64) -> Option<u64> {
    let succ = oracle_succ(graph);
    let by_id: BTreeMap<NodeId, &Node> = graph.nodes.iter().map(|n| (n.id, n)).collect();
    for w in nodes.windows(2) {
        if !succ[&w[0]].contains(&w[1]) {
            return None;
        }
    }
    let nodes_cost: u64 = nodes.iter().map(|id| oracle_cost(by_id[id])).sum();
    Some(nodes_cost + edge_cost * nodes.len().saturating_sub(1) as u64)
}

/// Evaluable graph: every value tensor is `[2, 3]` f32. Includes foldable
/// constant chains, cheap fan-out and dead branches.
pub fn fuzz_graph(rng: &mut ChaCha8Rng, target: usize) -> Graph {
    let mut g = Graph::new("fuzz");
    g.inputs.push(TensorSpec::f32("x", vec![2, 3]));
    let mut pool = vec!["x".to_string()];
    let mut next = 0u32;
    let mut push = |g: &mut Graph, op: OpKind, inputs: Vec<String>, attrs: Vec<(&str, AttrValue)>| -> String {
        let id = next;
        next += 1;
        let out = format!("t{id}");
        let mut node = Node::new(id, op, format!("n{id}"))
            .with_inputs(inputs)
            .with_outputs([out.clone()]);
        for (k, v) in attrs {
            node = node.with_attr(k, v);
        }
        g.nodes.push(node);
        out
    };
    let values = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
    while g.nodes.len() < target {
        let a = pool.choose(rng).unwrap().clone();
        let b = pool.choose(rng).unwrap().clone();
        let t = match rng.random_range(0..9) {
            0 => {
                let op = [OpKind::Relu, OpKind::Sigmoid, OpKind::Identity][rng.random_range(0..3)].clone();
                push(&mut g, op, vec![a], vec![])
            }
            1 => {
                let op = [OpKind::Add, OpKind::Sub, OpKind::Mul][rng.random_range(0..3)].clone();
                push(&mut g, op, vec![a, b], vec![])
            }
            2 => {
                let w = format!("w{}", g.initializers.len());
                let data = values(rng, 9);
                g.initializers
                    .push(Initializer::new(TensorSpec::f32(&w, vec![3, 3]), data));
                push(&mut g, OpKind::MatMul, vec![a, w], vec![])
            }
            3 => {
                let value = values(rng, 6);
                let c = push(
                    &mut g,
                    OpKind::Constant,
                    vec![],
                    vec![
                        ("value", AttrValue::Floats(value)),
                        ("shape", AttrValue::Ints(vec![2, 3])),
                    ],
                );
                push(&mut g, OpKind::Mul, vec![c, a], vec![])
            }
            4 => {
                let k = format!("k{}", g.initializers.len());
                let data = values(rng, 6);
                g.initializers
                    .push(Initializer::new(TensorSpec::f32(&k, vec![2, 3]), data));
                let r = push(&mut g, OpKind::Relu, vec![k], vec![]);
                push(&mut g, OpKind::Add, vec![r, a], vec![])
            }
            5 => {
                let s = format!("s{}", g.initializers.len());
                g.initializers.push(Initializer::new(
                    TensorSpec::new(&s, vec![2], dagpar::ir::DType::I64),
                    vec![3.0, 2.0],
                ));
                let r = push(&mut g, OpKind::Reshape, vec![a, s], vec![]);
                let shape = push(&mut g, OpKind::Shape, vec!["x".into()], vec![]);
                push(&mut g, OpKind::Reshape, vec![r, shape], vec![])
            }
            6 => push(&mut g, OpKind::Softmax, vec![a], vec![("axis", AttrValue::Int(-1))]),
            7 => {
                let c = push(&mut g, OpKind::Concat, vec![a, b], vec![("axis", AttrValue::Int(0))]);
                let start = rng.random_range(0..=2);
                push(
                    &mut g,
                    OpKind::Slice,
                    vec![c],
                    vec![
                        ("starts", AttrValue::Ints(vec![start])),
                        ("ends", AttrValue::Ints(vec![start + 2])),
                        ("axes", AttrValue::Ints(vec![0])),
                    ],
                )
            }
            _ => {
                // cheap node read by several consumers
                let r = push(&mut g, OpKind::Relu, vec![a], vec![]);
                let u = push(&mut g, OpKind::Sigmoid, vec![r.clone()], vec![]);
                push(&mut g, OpKind::Add, vec![r, u], vec![])
            }
        };
        pool.push(t);
    }
    let last = g.nodes.last().unwrap().outputs[0].clone();
    g.outputs.push(last.clone());
    if rng.random_bool(0.5) {
        let other = g.nodes.choose(rng).unwrap().outputs[0].clone();
        if other != last {
            g.outputs.push(other);
        }
    }
    g
}

pub fn random_inputs(rng: &mut ChaCha8Rng, graph: &Graph) -> BTreeMap<String, TensorValue> {
    graph
        .inputs
        .iter()
        .map(|spec| {
            let data = (0..spec.numel()).map(|_| rng.random_range(-2.0..2.0)).collect();
            (spec.name.clone(), TensorValue::new(spec.clone(), data))
        })
        .collect()
}

pub fn max_abs_diff(a: &BTreeMap<String, TensorValue>, b: &BTreeMap<String, TensorValue>) -> Option<f64> {
    if a.keys().ne(b.keys()) {
        return None;
    }
    let mut worst = 0.0f64;
    for (k, va) in a {
        let vb = &b[k];
        if va.shape() != vb.shape() {
            return None;
        }
        for (x, y) in va.data.iter().zip(&vb.data) {
            worst = worst.max((x - y).abs());
        }
    }
    Some(worst)
}

/// Random assignment of every `(node, batch)` to one of `k` workers. With
/// `ordered`, each worker follows one global topological key, which cannot
/// deadlock; otherwise worker orders are shuffled.
pub fn random_plan(rng: &mut ChaCha8Rng, graph: &Graph, k: usize, batch: usize, ordered: bool) -> WorkerPlan {
    let order = dagpar::ir::topo_order(graph).unwrap();
    let rank: BTreeMap<NodeId, usize> = order.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let mut instances: Vec<Instance> = (1..=batch)
        .flat_map(|b| order.iter().map(move |&n| Instance::new(n, b)))
        .collect();
    let batch_major = rng.random_bool(0.5);
    instances.sort_by_key(|i| {
        if batch_major {
            (i.batch, rank[&i.node])
        } else {
            (rank[&i.node], i.batch)
        }
    });
    let mut workers: Vec<Worker> = (0..k)
        .map(|w| Worker {
            label: format!("C{}", w + 1),
            instances: Vec::new(),
        })
        .collect();
    for (i, inst) in instances.into_iter().enumerate() {
        // keep every worker non-empty
        let w = if i < k { i } else { rng.random_range(0..k) };
        workers[w].instances.push(inst);
    }
    workers.retain(|w| !w.instances.is_empty());
    if !ordered {
        for w in &mut workers {
            w.instances.shuffle(rng);
        }
    }
    WorkerPlan { workers, batch }
}

/// Start time of every instance under ASAP execution of fixed worker orders,
/// as a longest path over data edges (plus `latency` across workers) and
/// worker-order edges. `None` when those constraints are cyclic.
pub fn oracle_schedule(graph: &Graph, plan: &WorkerPlan, latency: u64) -> Option<BTreeMap<Instance, u64>> {
    let succ = oracle_succ(graph);
    let cost: BTreeMap<NodeId, u64> = graph.nodes.iter().map(|n| (n.id, oracle_cost(n))).collect();
    let mut worker_of = BTreeMap::new();
    let mut edges: BTreeMap<Instance, Vec<(Instance, u64)>> = BTreeMap::new();
    let mut indeg: BTreeMap<Instance, usize> = BTreeMap::new();
    for (w, worker) in plan.workers.iter().enumerate() {
        for &i in &worker.instances {
            worker_of.insert(i, w);
            indeg.insert(i, 0);
        }
    }
    let mut add = |from: Instance, to: Instance, wgt: u64, indeg: &mut BTreeMap<Instance, usize>| {
        edges.entry(from).or_default().push((to, wgt));
        *indeg.get_mut(&to).unwrap() += 1;
    };
    for worker in &plan.workers {
        for pair in worker.instances.windows(2) {
            add(pair[0], pair[1], 0, &mut indeg);
        }
    }
    for (&u, vs) in &succ {
        for &v in vs {
            for b in 1..=plan.batch {
                let (iu, iv) = (Instance::new(u, b), Instance::new(v, b));
                let wgt = if worker_of[&iu] == worker_of[&iv] { 0 } else { latency };
                add(iu, iv, wgt, &mut indeg);
            }
        }
    }
    let mut start: BTreeMap<Instance, u64> = indeg.keys().map(|&i| (i, 0)).collect();
    let mut queue: VecDeque<Instance> = indeg.iter().filter(|(_, &d)| d == 0).map(|(&i, _)| i).collect();
    let mut done = 0;
    while let Some(i) = queue.pop_front() {
        done += 1;
        let end = start[&i] + cost[&i.node];
        for &(j, wgt) in edges.get(&i).map(Vec::as_slice).unwrap_or(&[]) {
            let s = start.get_mut(&j).unwrap();
            *s = (*s).max(end + wgt);
            let d = indeg.get_mut(&j).unwrap();
            *d -= 1;
            if *d == 0 {
                queue.push_back(j);
            }
        }
    }
    (done == indeg.len()).then_some(start)
}
