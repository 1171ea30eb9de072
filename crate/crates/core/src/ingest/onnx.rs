//! Restricted ONNX import.
//!
//! Only the protobuf fields needed to recover graph structure, attributes
//! and initializer payloads are declared; prost skips everything else on
//! decode. Attribute names are normalized to the core IR vocabulary by
//! [`map_node`].

use std::collections::BTreeSet;

use prost::Message;

use super::{check, ImportReport, IngestError, SourceFormat};
use crate::ir::{AttrValue, Attrs, DType, Graph, Initializer, Node, NodeId, OpKind, TensorSpec};

/// Wire-compatible subset of `onnx.proto`.
pub mod proto {
    #[derive(Clone, PartialEq, ::prost::Message)]
    pub struct ModelProto {
        #[prost(int64, tag = "1")]
        pub ir_version: i64,
        #[prost(string, tag = "2")]
        pub producer_name: String,
        #[prost(message, optional, tag = "7")]
        pub graph: Option<GraphProto>,
        #[prost(message, repeated, tag = "8")]
        pub opset_import: Vec<OperatorSetIdProto>,
    }

    #[derive(Clone, PartialEq, ::prost::Message)]
    pub struct OperatorSetIdProto {
        #[prost(string, tag = "1")]
        pub domain: String,
        #[prost(int64, tag = "2")]
        pub version: i64,
    }

    #[derive(Clone, PartialEq, ::prost::Message)]
    pub struct GraphProto {
        #[prost(message, repeated, tag = "1")]
        pub node: Vec<NodeProto>,
        #[prost(string, tag = "2")]
        pub name: String,
        #[prost(message, repeated, tag = "5")]
        pub initializer: Vec<TensorProto>,
        #[prost(message, repeated, tag = "11")]
        pub input: Vec<ValueInfoProto>,
        #[prost(message, repeated, tag = "12")]
        pub output: Vec<ValueInfoProto>,
    }

    #[derive(Clone, PartialEq, ::prost::Message)]
    pub struct NodeProto {
        #[prost(string, repeated, tag = "1")]
        pub input: Vec<String>,
        #[prost(string, repeated, tag = "2")]
        pub output: Vec<String>,
        #[prost(string, tag = "3")]
        pub name: String,
        #[prost(string, tag = "4")]
        pub op_type: String,
        #[prost(message, repeated, tag = "5")]
        pub attribute: Vec<AttributeProto>,
        #[prost(string, tag = "7")]
        pub domain: String,
    }

    #[derive(Clone, PartialEq, ::prost::Message)]
    pub struct AttributeProto {
        #[prost(string, tag = "1")]
        pub name: String,
        #[prost(float, tag = "2")]
        pub f: f32,
        #[prost(int64, tag = "3")]
        pub i: i64,
        #[prost(bytes = "vec", tag = "4")]
        pub s: Vec<u8>,
        #[prost(message, optional, tag = "5")]
        pub t: Option<TensorProto>,
        #[prost(message, optional, tag = "6")]
        pub g: Option<GraphProto>,
        #[prost(float, repeated, tag = "7")]
        pub floats: Vec<f32>,
        #[prost(int64, repeated, tag = "8")]
        pub ints: Vec<i64>,
        #[prost(message, repeated, tag = "11")]
        pub graphs: Vec<GraphProto>,
        #[prost(int32, tag = "20")]
        pub r#type: i32,
    }

    /// `AttributeProto.AttributeType` values.
    pub mod attribute_type {
        pub const FLOAT: i32 = 1;
        pub const INT: i32 = 2;
        pub const STRING: i32 = 3;
        pub const TENSOR: i32 = 4;
        pub const GRAPH: i32 = 5;
        pub const FLOATS: i32 = 6;
        pub const INTS: i32 = 7;
        pub const GRAPHS: i32 = 10;
    }

    #[derive(Clone, PartialEq, ::prost::Message)]
    pub struct TensorProto {
        #[prost(int64, repeated, tag = "1")]
        pub dims: Vec<i64>,
        #[prost(int32, tag = "2")]
        pub data_type: i32,
        #[prost(float, repeated, tag = "4")]
        pub float_data: Vec<f32>,
        #[prost(int32, repeated, tag = "5")]
        pub int32_data: Vec<i32>,
        #[prost(int64, repeated, tag = "7")]
        pub int64_data: Vec<i64>,
        #[prost(string, tag = "8")]
        pub name: String,
        #[prost(bytes = "vec", tag = "9")]
        pub raw_data: Vec<u8>,
        #[prost(double, repeated, tag = "10")]
        pub double_data: Vec<f64>,
    }

    /// `TensorProto.DataType` values this importer understands.
    pub mod data_type {
        pub const FLOAT: i32 = 1;
        pub const INT32: i32 = 6;
        pub const INT64: i32 = 7;
        pub const BOOL: i32 = 9;
        pub const DOUBLE: i32 = 11;
    }

    #[derive(Clone, PartialEq, ::prost::Message)]
    pub struct ValueInfoProto {
        #[prost(string, tag = "1")]
        pub name: String,
        #[prost(message, optional, tag = "2")]
        pub r#type: Option<TypeProto>,
    }

    #[derive(Clone, PartialEq, ::prost::Message)]
    pub struct TypeProto {
        /// `oneof value { Tensor tensor_type = 1; ... }`
        #[prost(message, optional, tag = "1")]
        pub tensor_type: Option<TypeProtoTensor>,
    }

    #[derive(Clone, PartialEq, ::prost::Message)]
    pub struct TypeProtoTensor {
        #[prost(int32, tag = "1")]
        pub elem_type: i32,
        #[prost(message, optional, tag = "2")]
        pub shape: Option<TensorShapeProto>,
    }

    #[derive(Clone, PartialEq, ::prost::Message)]
    pub struct TensorShapeProto {
        #[prost(message, repeated, tag = "1")]
        pub dim: Vec<Dimension>,
    }

    #[derive(Clone, PartialEq, ::prost::Message)]
    pub struct Dimension {
        #[prost(int64, optional, tag = "1")]
        pub dim_value: Option<i64>,
        #[prost(string, optional, tag = "2")]
        pub dim_param: Option<String>,
    }
}

use proto::{attribute_type as at, data_type as dt};

const CONTROL_FLOW: &[&str] = &["If", "Loop", "Scan", "SequenceMap"];

fn dtype_of(code: i32, what: &str, warnings: &mut Vec<String>) -> Result<DType, IngestError> {
    match code {
        dt::FLOAT => Ok(DType::F32),
        dt::INT64 => Ok(DType::I64),
        dt::BOOL => Ok(DType::Bool),
        dt::INT32 => {
            warnings.push(format!("{what}: int32 widened to i64"));
            Ok(DType::I64)
        }
        dt::DOUBLE => {
            warnings.push(format!("{what}: double narrowed to f32"));
            Ok(DType::F32)
        }
        other => Err(IngestError::Unsupported(format!("{what}: tensor data type {other}"))),
    }
}

fn tensor_values(t: &proto::TensorProto, dtype: DType) -> Result<Vec<f64>, IngestError> {
    let numel: usize = t.dims.iter().map(|&d| d.max(0) as usize).product();
    let values: Vec<f64> = if !t.raw_data.is_empty() {
        let raw = &t.raw_data;
        match t.data_type {
            dt::FLOAT => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            dt::DOUBLE => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            dt::INT64 => raw
                .chunks_exact(8)
                .map(|c| i64::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            dt::INT32 => raw
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            dt::BOOL => raw.iter().map(|&b| (b != 0) as u8 as f64).collect(),
            other => return Err(IngestError::Unsupported(format!("raw data of type {other}"))),
        }
    } else {
        match t.data_type {
            dt::FLOAT => t.float_data.iter().map(|&v| v as f64).collect(),
            dt::DOUBLE => t.double_data.clone(),
            dt::INT64 => t.int64_data.iter().map(|&v| v as f64).collect(),
            dt::INT32 | dt::BOOL => t.int32_data.iter().map(|&v| v as f64).collect(),
            other => return Err(IngestError::Unsupported(format!("tensor data of type {other}"))),
        }
    };
    if values.len() != numel {
        return Err(IngestError::Unsupported(format!(
            "tensor \"{}\" has {} values for dims {:?} (external data is not supported)",
            t.name,
            values.len(),
            t.dims
        )));
    }
    Ok(values.into_iter().map(|v| dtype.narrow(v)).collect())
}

fn value_info_spec(v: &proto::ValueInfoProto, warnings: &mut Vec<String>) -> Result<TensorSpec, IngestError> {
    let tensor = v
        .r#type
        .as_ref()
        .and_then(|t| t.tensor_type.as_ref())
        .ok_or_else(|| IngestError::Unsupported(format!("input \"{}\" is not a tensor", v.name)))?;
    let dtype = dtype_of(tensor.elem_type, &v.name, warnings)?;
    let mut shape = Vec::new();
    for d in tensor.shape.iter().flat_map(|s| &s.dim) {
        match d.dim_value {
            Some(n) if n >= 0 => shape.push(n as usize),
            _ => {
                warnings.push(format!(
                    "input \"{}\": symbolic dimension {} fixed to 1",
                    v.name,
                    d.dim_param.as_deref().unwrap_or("?")
                ));
                shape.push(1);
            }
        }
    }
    Ok(TensorSpec::new(v.name.clone(), shape, dtype))
}

fn generic_attr(a: &proto::AttributeProto) -> Option<AttrValue> {
    Some(match a.r#type {
        at::FLOAT => AttrValue::Float(a.f as f64),
        at::INT => AttrValue::Int(a.i),
        at::STRING => AttrValue::Str(String::from_utf8_lossy(&a.s).into_owned()),
        at::FLOATS => AttrValue::Floats(a.floats.iter().map(|&f| f as f64).collect()),
        at::INTS => AttrValue::Ints(a.ints.clone()),
        // untyped (IR v1) attributes: guess from populated field
        0 if !a.ints.is_empty() => AttrValue::Ints(a.ints.clone()),
        0 if !a.floats.is_empty() => AttrValue::Floats(a.floats.iter().map(|&f| f as f64).collect()),
        0 if !a.s.is_empty() => AttrValue::Str(String::from_utf8_lossy(&a.s).into_owned()),
        0 if a.f != 0.0 => AttrValue::Float(a.f as f64),
        0 => AttrValue::Int(a.i),
        _ => return None,
    })
}

/// ONNX attribute name → core IR attribute name, per op.
fn rename(op: &OpKind, onnx_name: &str) -> Option<&'static str> {
    use OpKind::*;
    Some(match (op, onnx_name) {
        (Conv | MaxPool | AveragePool, "kernel_shape") => "kernel",
        (Conv | MaxPool | AveragePool, "strides") => "strides",
        (Conv | MaxPool | AveragePool, "pads") => "pads",
        (Conv | MaxPool, "dilations") => "dilations",
        (Conv, "group") => "group",
        (AveragePool, "count_include_pad") => "count_include_pad",
        (Gemm, "transA") => "trans_a",
        (Gemm, "transB") => "trans_b",
        (Gemm, "alpha") => "alpha",
        (Gemm, "beta") => "beta",
        (BatchNorm, "epsilon") => "epsilon",
        (Softmax | Concat | Gather | Flatten, "axis") => "axis",
        (Transpose, "perm") => "perm",
        (Squeeze | Unsqueeze | Slice, "axes") => "axes",
        (Slice, "starts") => "starts",
        (Slice, "ends") => "ends",
        _ => return None,
    })
}

fn map_op(op_type: &str) -> OpKind {
    match op_type {
        "BatchNormalization" => OpKind::BatchNorm,
        other => OpKind::parse(other),
    }
}

fn map_node(index: usize, n: &proto::NodeProto, warnings: &mut Vec<String>) -> Result<Node, IngestError> {
    if CONTROL_FLOW.contains(&n.op_type.as_str())
        || n.attribute
            .iter()
            .any(|a| a.g.is_some() || !a.graphs.is_empty() || a.r#type == at::GRAPH || a.r#type == at::GRAPHS)
    {
        return Err(IngestError::Unsupported(format!(
            "control-flow node {} ({})",
            if n.name.is_empty() { "<unnamed>" } else { &n.name },
            n.op_type
        )));
    }
    let op = if n.domain.is_empty() || n.domain == "ai.onnx" {
        map_op(&n.op_type)
    } else {
        OpKind::Other(format!("{}.{}", n.domain, n.op_type))
    };
    let name = if n.name.is_empty() {
        format!("{}_{index}", n.op_type)
    } else {
        n.name.clone()
    };
    let mut attrs = Attrs::new();
    for a in &n.attribute {
        match (&op, a.name.as_str()) {
            (OpKind::Other(_), _) => {
                if let Some(v) = generic_attr(a) {
                    attrs.insert(a.name.clone(), v);
                }
            }
            (OpKind::Cast, "to") => {
                let to = dtype_of(a.i as i32, &format!("{name}.to"), warnings)?;
                attrs.insert("to".into(), AttrValue::Str(to.as_str().into()));
            }
            (OpKind::Constant, "value") => {
                let t =
                    a.t.as_ref()
                        .ok_or_else(|| IngestError::Unsupported(format!("{name}: constant without tensor")))?;
                let dtype = dtype_of(t.data_type, &name, warnings)?;
                attrs.insert("value".into(), AttrValue::Floats(tensor_values(t, dtype)?));
                attrs.insert("shape".into(), AttrValue::Ints(t.dims.clone()));
                attrs.insert("dtype".into(), AttrValue::Str(dtype.as_str().into()));
            }
            (OpKind::Constant, "value_float" | "value_floats" | "value_int" | "value_ints") => {
                let (values, scalar, dtype) = match a.name.as_str() {
                    "value_float" => (vec![a.f as f64], true, DType::F32),
                    "value_floats" => (a.floats.iter().map(|&f| f as f64).collect(), false, DType::F32),
                    "value_int" => (vec![a.i as f64], true, DType::I64),
                    _ => (a.ints.iter().map(|&i| i as f64).collect(), false, DType::I64),
                };
                let shape = if scalar { vec![] } else { vec![values.len() as i64] };
                attrs.insert("value".into(), AttrValue::Floats(values));
                attrs.insert("shape".into(), AttrValue::Ints(shape));
                attrs.insert("dtype".into(), AttrValue::Str(dtype.as_str().into()));
            }
            (OpKind::Conv | OpKind::MaxPool | OpKind::AveragePool, "auto_pad") => {
                let mode = String::from_utf8_lossy(&a.s);
                if mode != "NOTSET" && !mode.is_empty() {
                    warnings.push(format!("{name}: auto_pad {mode} ignored; explicit pads used"));
                }
            }
            (op, attr) => match (rename(op, attr), generic_attr(a)) {
                (Some(core), Some(v)) => {
                    attrs.insert(core.into(), v);
                }
                _ => warnings.push(format!("{name}: attribute {attr} dropped")),
            },
        }
    }
    if let OpKind::Other(kind) = &op {
        warnings.push(format!("{name}: op {kind} imported as opaque node"));
    }
    let mut inputs = n.input.clone();
    while inputs.last().is_some_and(|s| s.is_empty()) {
        inputs.pop();
    }
    Ok(Node {
        id: NodeId(index as u32),
        op,
        name,
        inputs,
        outputs: n.output.clone(),
        attrs,
    })
}

/// Decodes an ONNX model and normalizes it into a core graph.
pub fn load_onnx(bytes: &[u8]) -> Result<(Graph, ImportReport), IngestError> {
    let model = proto::ModelProto::decode(bytes)?;
    let gp = model
        .graph
        .ok_or_else(|| IngestError::Unsupported("model has no graph".into()))?;
    let mut warnings = Vec::new();
    let mut graph = Graph::new(if gp.name.is_empty() {
        "onnx_graph".to_string()
    } else {
        gp.name.clone()
    });

    let init_names: BTreeSet<&str> = gp.initializer.iter().map(|t| t.name.as_str()).collect();
    for t in &gp.initializer {
        let dtype = dtype_of(t.data_type, &t.name, &mut warnings)?;
        let data = tensor_values(t, dtype)?;
        let shape = t.dims.iter().map(|&d| d.max(0) as usize).collect();
        graph
            .initializers
            .push(Initializer::new(TensorSpec::new(t.name.clone(), shape, dtype), data));
    }
    for v in &gp.input {
        // pre-IR-v4 models list initializers among the inputs
        if !init_names.contains(v.name.as_str()) {
            graph.inputs.push(value_info_spec(v, &mut warnings)?);
        }
    }
    graph.outputs = gp.output.iter().map(|v| v.name.clone()).collect();
    for (i, n) in gp.node.iter().enumerate() {
        graph.nodes.push(map_node(i, n, &mut warnings)?);
    }
    check(&graph)?;
    let report = ImportReport::for_graph(SourceFormat::Onnx, &graph, warnings);
    Ok((graph, report))
}
