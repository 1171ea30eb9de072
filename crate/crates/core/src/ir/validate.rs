use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use super::{Graph, NodeId, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagnosticKind {
    Cycle,
    DanglingInput,
    DuplicateName,
    DuplicateNodeId,
    UnproducedOutput,
}

impl DiagnosticKind {
    pub fn code(self) -> &'static str {
        match self {
            DiagnosticKind::Cycle => "cycle",
            DiagnosticKind::DanglingInput => "dangling-input",
            DiagnosticKind::DuplicateName => "duplicate-name",
            DiagnosticKind::DuplicateNodeId => "duplicate-node-id",
            DiagnosticKind::UnproducedOutput => "unproduced-output",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tensor: Option<String>,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind.code())?;
        if let Some(node) = self.node {
            write!(f, " at node {node}")?;
        }
        if let Some(tensor) = &self.tensor {
            write!(f, " (tensor \"{tensor}\")")?;
        }
        Ok(())
    }
}

/// Checks every structural graph invariant. Never fails; an empty list
/// means the graph is well formed.
pub fn validate(graph: &Graph) -> Vec<Diagnostic> {
    let mut diags = Vec::new();

    let mut ids = BTreeSet::new();
    for node in &graph.nodes {
        if !ids.insert(node.id) {
            diags.push(Diagnostic {
                kind: DiagnosticKind::DuplicateNodeId,
                node: Some(node.id),
                tensor: None,
            });
        }
    }

    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    let defined = graph
        .inputs
        .iter()
        .map(|t| t.name.as_str())
        .chain(graph.initializers.iter().map(|i| i.spec.name.as_str()))
        .chain(graph.nodes.iter().flat_map(|n| n.outputs.iter().map(String::as_str)));
    for name in defined {
        *seen.entry(name).or_default() += 1;
    }
    for (name, count) in &seen {
        if *count > 1 {
            diags.push(Diagnostic {
                kind: DiagnosticKind::DuplicateName,
                node: None,
                tensor: Some(name.to_string()),
            });
        }
    }

    for node in &graph.nodes {
        for input in node.present_inputs() {
            if !seen.contains_key(input) {
                diags.push(Diagnostic {
                    kind: DiagnosticKind::DanglingInput,
                    node: Some(node.id),
                    tensor: Some(input.to_string()),
                });
            }
        }
    }

    let producers = graph.producers();
    for out in &graph.outputs {
        if !producers.contains_key(out.as_str()) && graph.input(out).is_none() {
            diags.push(Diagnostic {
                kind: DiagnosticKind::UnproducedOutput,
                node: None,
                tensor: Some(out.clone()),
            });
        }
    }

    if diags.iter().all(|d| d.kind != DiagnosticKind::DuplicateNodeId) {
        if let Err(e) = Topology::of(graph).order() {
            diags.push(Diagnostic {
                kind: DiagnosticKind::Cycle,
                node: Some(e.node),
                tensor: None,
            });
        }
    }
    diags
}
