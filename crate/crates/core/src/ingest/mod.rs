//! Graph loaders: the canonical JSON format and a restricted ONNX subset.

mod json;
pub mod onnx;

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::ir::{Diagnostic, Graph};

pub use json::{load_json, to_json};
pub use onnx::load_onnx;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    Json,
    Onnx,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportReport {
    pub format: SourceFormat,
    pub node_count: usize,
    /// Op kinds outside the known vocabulary, with occurrence counts.
    pub unknown_ops: BTreeMap<String, usize>,
    pub warnings: Vec<String>,
}

impl ImportReport {
    fn for_graph(format: SourceFormat, graph: &Graph, warnings: Vec<String>) -> Self {
        let mut unknown_ops = BTreeMap::new();
        for node in &graph.nodes {
            if !node.op.is_known() {
                *unknown_ops.entry(node.op.as_str().to_string()).or_insert(0) += 1;
            }
        }
        ImportReport {
            format,
            node_count: graph.nodes.len(),
            unknown_ops,
            warnings,
        }
    }

    /// Human-readable summary for the CLI.
    pub fn render_text(&self) -> String {
        let mut s = format!("imported {} nodes ({:?})\n", self.node_count, self.format).to_lowercase();
        for (op, n) in &self.unknown_ops {
            s.push_str(&format!("  unknown op {op} x{n}\n"));
        }
        for w in &self.warnings {
            s.push_str(&format!("  warning: {w}\n"));
        }
        s
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed graph file at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("duplicate tensor name \"{0}\"")]
    DuplicateTensor(String),
    #[error("invalid graph: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
    #[error("unparsable ONNX protobuf: {0}")]
    Protobuf(#[from] prost::DecodeError),
    #[error("unsupported ONNX construct: {0}")]
    Unsupported(String),
}

/// Rejects graphs that break a structural invariant after loading.
fn check(graph: &Graph) -> Result<(), IngestError> {
    let diags = crate::ir::validate(graph);
    if let Some(dup) = diags
        .iter()
        .find(|d| d.kind == crate::ir::DiagnosticKind::DuplicateName)
    {
        return Err(IngestError::DuplicateTensor(dup.tensor.clone().unwrap_or_default()));
    }
    if diags.is_empty() {
        Ok(())
    } else {
        Err(IngestError::Invalid(diags))
    }
}
