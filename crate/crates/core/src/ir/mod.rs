//! In-memory dataflow graph.
//!
//! A [`Graph`] is a DAG of operator [`Node`]s connected through named
//! tensors. Edges are never stored; they are derived from tensor names on
//! demand so that passes only have to keep node input/output lists
//! consistent.

mod eval;
mod topo;
mod validate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use eval::{eval_graph, eval_node, EvalError, TensorValue};
pub use topo::{topo_order, CycleError, Topology};
pub use validate::{validate, Diagnostic, DiagnosticKind};

/// Stable node identifier. Assigned densely in file order at ingestion;
/// passes that remove nodes leave gaps, passes that add nodes append.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    I64,
    Bool,
}

impl DType {
    pub fn as_str(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::I64 => "i64",
            DType::Bool => "bool",
        }
    }

    pub fn parse(s: &str) -> Option<DType> {
        match s {
            "f32" => Some(DType::F32),
            "i64" => Some(DType::I64),
            "bool" => Some(DType::Bool),
            _ => None,
        }
    }

    /// Rounds a wide intermediate to the value this dtype can hold.
    pub fn narrow(self, v: f64) -> f64 {
        match self {
            DType::F32 => v as f32 as f64,
            DType::I64 => v.trunc(),
            DType::Bool => {
                if v != 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
}

impl TensorSpec {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, dtype: DType) -> Self {
        TensorSpec {
            name: name.into(),
            shape,
            dtype,
        }
    }

    pub fn f32(name: impl Into<String>, shape: Vec<usize>) -> Self {
        Self::new(name, shape, DType::F32)
    }

    /// Number of scalars; 1 for a scalar (empty shape).
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Constant payload of an initializer.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Values(Vec<f64>),
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Initializer {
    pub spec: TensorSpec,
    pub payload: Payload,
}

impl Initializer {
    pub fn new(spec: TensorSpec, data: Vec<f64>) -> Self {
        Initializer {
            spec,
            payload: Payload::Values(data),
        }
    }

    pub fn value(&self) -> TensorValue {
        let n = self.spec.numel();
        let data = match &self.payload {
            Payload::Values(v) => v.clone(),
            Payload::Zeros => vec![0.0; n],
            Payload::Ones => vec![1.0; n],
        };
        TensorValue {
            spec: self.spec.clone(),
            data,
        }
    }
}

/// Scalar or list attribute value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Int(i64),
    Float(f64),
    Ints(Vec<i64>),
    Floats(Vec<f64>),
    Str(String),
}

impl AttrValue {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            AttrValue::Int(i) => Some(*i),
            AttrValue::Float(f) if f.fract() == 0.0 => Some(*f as i64),
            _ => None,
        }
    }

    pub fn as_float(&self) -> Option<f64> {
        match self {
            AttrValue::Int(i) => Some(*i as f64),
            AttrValue::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn as_ints(&self) -> Option<Vec<i64>> {
        match self {
            AttrValue::Ints(v) => Some(v.clone()),
            AttrValue::Int(i) => Some(vec![*i]),
            AttrValue::Floats(v) if v.is_empty() => Some(Vec::new()),
            _ => None,
        }
    }

    pub fn as_floats(&self) -> Option<Vec<f64>> {
        match self {
            AttrValue::Floats(v) => Some(v.clone()),
            AttrValue::Ints(v) => Some(v.iter().map(|&i| i as f64).collect()),
            AttrValue::Float(f) => Some(vec![*f]),
            AttrValue::Int(i) => Some(vec![*i as f64]),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            AttrValue::Str(s) => Some(s),
            _ => None,
        }
    }
}

pub type Attrs = BTreeMap<String, AttrValue>;

macro_rules! op_kinds {
    ($($variant:ident),* $(,)?) => {
        /// Operator kind. Anything outside the known vocabulary is kept as
        /// [`OpKind::Other`]: legal for structural analysis, rejected by the
        /// evaluator.
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum OpKind {
            $($variant,)*
            Other(String),
        }

        impl OpKind {
            pub const KNOWN: &'static [&'static str] = &[$(stringify!($variant)),*];

            pub fn parse(s: &str) -> OpKind {
                match s {
                    $(stringify!($variant) => OpKind::$variant,)*
                    other => OpKind::Other(other.to_string()),
                }
            }

            pub fn as_str(&self) -> &str {
                match self {
                    $(OpKind::$variant => stringify!($variant),)*
                    OpKind::Other(s) => s,
                }
            }
        }
    };
}

op_kinds!(
    Conv,
    MatMul,
    Gemm,
    Add,
    Sub,
    Mul,
    Div,
    Relu,
    Sigmoid,
    Softmax,
    Concat,
    Reshape,
    Transpose,
    Slice,
    Gather,
    Shape,
    Unsqueeze,
    Squeeze,
    Cast,
    MaxPool,
    AveragePool,
    BatchNorm,
    Identity,
    Constant,
    Flatten,
);

impl OpKind {
    pub fn is_known(&self) -> bool {
        !matches!(self, OpKind::Other(_))
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for OpKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for OpKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(OpKind::parse(&s))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub op: OpKind,
    pub name: String,
    /// Input tensor names. An empty string marks an absent optional input.
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub attrs: Attrs,
}

impl Node {
    pub fn new(id: u32, op: OpKind, name: impl Into<String>) -> Self {
        Node {
            id: NodeId(id),
            op,
            name: name.into(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            attrs: Attrs::new(),
        }
    }

    pub fn with_inputs<I, S>(mut self, inputs: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.inputs = inputs.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_outputs<I, S>(mut self, outputs: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.outputs = outputs.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_attr(mut self, key: impl Into<String>, value: AttrValue) -> Self {
        self.attrs.insert(key.into(), value);
        self
    }

    pub fn attr(&self, key: &str) -> Option<&AttrValue> {
        self.attrs.get(key)
    }

    /// Present (non-empty) input names.
    pub fn present_inputs(&self) -> impl Iterator<Item = &str> {
        self.inputs.iter().map(String::as_str).filter(|s| !s.is_empty())
    }
}

/// Producer → consumer dependence carried by one tensor.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub tensor: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Graph {
    pub name: String,
    pub inputs: Vec<TensorSpec>,
    pub outputs: Vec<String>,
    pub initializers: Vec<Initializer>,
    pub nodes: Vec<Node>,
}

impl Graph {
    pub fn new(name: impl Into<String>) -> Self {
        Graph {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        self.nodes.iter().map(|n| n.id).collect()
    }

    /// Next unused node id (max + 1).
    pub fn next_node_id(&self) -> NodeId {
        NodeId(self.nodes.iter().map(|n| n.id.0 + 1).max().unwrap_or(0))
    }

    pub fn initializer(&self, name: &str) -> Option<&Initializer> {
        self.initializers.iter().find(|i| i.spec.name == name)
    }

    pub fn input(&self, name: &str) -> Option<&TensorSpec> {
        self.inputs.iter().find(|i| i.name == name)
    }

    /// Tensor name → producing node. Later duplicates are ignored.
    pub fn producers(&self) -> BTreeMap<&str, NodeId> {
        let mut map = BTreeMap::new();
        for node in &self.nodes {
            for out in &node.outputs {
                map.entry(out.as_str()).or_insert(node.id);
            }
        }
        map
    }

    /// Derived edge set, sorted and deduplicated. A consumer reading the
    /// same tensor twice yields one edge.
    pub fn edges(&self) -> Vec<Edge> {
        let producers = self.producers();
        let mut edges = BTreeSet::new();
        for node in &self.nodes {
            for input in node.present_inputs() {
                if let Some(&from) = producers.get(input) {
                    edges.insert(Edge {
                        from,
                        to: node.id,
                        tensor: input.to_string(),
                    });
                }
            }
        }
        edges.into_iter().collect()
    }

    /// All tensor names defined by the graph (inputs, initializers, node outputs).
    pub fn tensor_names(&self) -> BTreeSet<&str> {
        let mut names: BTreeSet<&str> = self.inputs.iter().map(|t| t.name.as_str()).collect();
        names.extend(self.initializers.iter().map(|i| i.spec.name.as_str()));
        for node in &self.nodes {
            names.extend(node.outputs.iter().map(String::as_str));
        }
        names
    }

    /// True if `name` is a compile-time constant (initializer).
    pub fn is_constant(&self, name: &str) -> bool {
        self.initializer(name).is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edges_are_derived_from_tensor_names() {
        let mut g = Graph::new("g");
        g.inputs.push(TensorSpec::f32("x", vec![2]));
        g.nodes
            .push(Node::new(0, OpKind::Relu, "a").with_inputs(["x"]).with_outputs(["a"]));
        g.nodes.push(
            Node::new(1, OpKind::Add, "b")
                .with_inputs(["a", "a"])
                .with_outputs(["b"]),
        );
        g.outputs.push("b".into());
        let edges = g.edges();
        assert_eq!(
            edges,
            vec![Edge {
                from: NodeId(0),
                to: NodeId(1),
                tensor: "a".into()
            }]
        );
    }

    #[test]
    fn op_kind_parse_roundtrip() {
        for name in OpKind::KNOWN {
            assert_eq!(OpKind::parse(name).as_str(), *name);
        }
        assert_eq!(OpKind::parse("Mystery"), OpKind::Other("Mystery".into()));
    }

    #[test]
    fn payload_fill_expands() {
        let init = Initializer {
            spec: TensorSpec::f32("w", vec![2, 2]),
            payload: Payload::Ones,
        };
        assert_eq!(init.value().data, vec![1.0; 4]);
    }
}
