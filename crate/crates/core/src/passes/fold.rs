use std::collections::BTreeSet;

use super::{PassKind, PassReport};
use crate::ir::{eval_node, Graph, Initializer, NodeId, OpKind, TensorValue, Topology};

/// Whether `node` can be evaluated now: a known op whose present inputs are
/// all initializers, or a `Shape` of a graph input (static shapes only).
fn foldable(graph: &Graph, id: NodeId, outputs: &BTreeSet<&str>) -> Option<Vec<TensorValue>> {
    let node = graph.node(id)?;
    if !node.op.is_known() || node.outputs.iter().any(|o| outputs.contains(o.as_str())) {
        return None;
    }
    if node.op == OpKind::Shape {
        if let Some(spec) = node.inputs.first().and_then(|i| graph.input(i)) {
            let probe = TensorValue::new(spec.clone(), vec![0.0; spec.numel()]);
            return Some(vec![probe]);
        }
    }
    node.present_inputs()
        .map(|name| graph.initializer(name).map(Initializer::value))
        .collect()
}

/// Replaces constant-only nodes by initializers until nothing changes.
/// Producers of declared outputs stay in place so every output keeps a
/// producing node.
pub fn constant_fold(graph: &Graph) -> (Graph, PassReport) {
    let mut report = PassReport::new(PassKind::Fold, graph.nodes.len());
    let mut g = graph.clone();
    let outputs: BTreeSet<String> = graph.outputs.iter().cloned().collect();
    let mut failed: BTreeSet<NodeId> = BTreeSet::new();

    let order = match Topology::of(&g).order() {
        Ok(order) => order,
        Err(e) => {
            report.warnings.push(format!("fold skipped: {e}"));
            return (g, report.finish(graph.nodes.len()));
        }
    };
    loop {
        let mut changed = false;
        for &id in &order {
            if failed.contains(&id) || report.folded.contains(&id) {
                continue;
            }
            let outs: BTreeSet<&str> = outputs.iter().map(String::as_str).collect();
            let Some(values) = foldable(&g, id, &outs) else {
                continue;
            };
            let node = g.node(id).expect("node in order").clone();
            let mut slots = Vec::with_capacity(node.inputs.len());
            let mut vi = values.iter();
            for name in &node.inputs {
                slots.push(if name.is_empty() { None } else { vi.next() });
            }
            match eval_node(&node, &slots) {
                Ok(results) => {
                    for v in results {
                        g.initializers.push(Initializer::new(v.spec, v.data));
                    }
                    g.nodes.retain(|n| n.id != id);
                    report.folded.push(id);
                    changed = true;
                }
                Err(e) => {
                    report.warnings.push(format!("not folding {id}: {e}"));
                    failed.insert(id);
                }
            }
        }
        if !changed {
            break;
        }
    }
    report.folded.sort();
    let n = g.nodes.len();
    (g, report.finish(n))
}
