use serde::{Deserialize, Serialize};

use super::{check, ImportReport, IngestError, SourceFormat};
use crate::ir::{Attrs, DType, Graph, Initializer, Node, NodeId, OpKind, Payload, TensorSpec};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    name: String,
    inputs: Vec<TensorSpec>,
    outputs: Vec<String>,
    #[serde(default)]
    initializers: Vec<InitializerFile>,
    nodes: Vec<NodeFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitializerFile {
    name: String,
    shape: Vec<usize>,
    dtype: DType,
    data: PayloadFile,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PayloadFile {
    Fill(Fill),
    Values(Vec<f64>),
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Fill {
    Zeros,
    Ones,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeFile {
    op: OpKind,
    #[serde(default)]
    name: String,
    inputs: Vec<String>,
    outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Attrs::is_empty")]
    attrs: Attrs,
}

/// Parses the canonical JSON graph format. Node ids are assigned in file order.
pub fn load_json(bytes: &[u8]) -> Result<(Graph, ImportReport), IngestError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let file: GraphFile = serde_path_to_error::deserialize(de).map_err(|e| IngestError::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;

    let mut graph = Graph::new(file.name);
    graph.inputs = file.inputs;
    graph.outputs = file.outputs;
    for (i, init) in file.initializers.into_iter().enumerate() {
        let spec = TensorSpec::new(init.name, init.shape, init.dtype);
        let payload = match init.data {
            PayloadFile::Fill(Fill::Zeros) => Payload::Zeros,
            PayloadFile::Fill(Fill::Ones) => Payload::Ones,
            PayloadFile::Values(v) => {
                if v.len() != spec.numel() {
                    return Err(IngestError::Schema {
                        path: format!("initializers[{i}].data"),
                        message: format!("{} values for shape {:?}", v.len(), spec.shape),
                    });
                }
                Payload::Values(v)
            }
        };
        graph.initializers.push(Initializer { spec, payload });
    }
    for (i, n) in file.nodes.into_iter().enumerate() {
        graph.nodes.push(Node {
            id: NodeId(i as u32),
            op: n.op,
            name: n.name,
            inputs: n.inputs,
            outputs: n.outputs,
            attrs: n.attrs,
        });
    }
    check(&graph)?;
    let report = ImportReport::for_graph(SourceFormat::Json, &graph, Vec::new());
    Ok((graph, report))
}

/// Serializes to the canonical JSON format (pretty-printed, stable key order).
/// Node ids are implicit in node order.
pub fn to_json(graph: &Graph) -> String {
    let mut nodes: Vec<&Node> = graph.nodes.iter().collect();
    nodes.sort_by_key(|n| n.id);
    let file = GraphFile {
        name: graph.name.clone(),
        inputs: graph.inputs.clone(),
        outputs: graph.outputs.clone(),
        initializers: graph
            .initializers
            .iter()
            .map(|i| InitializerFile {
                name: i.spec.name.clone(),
                shape: i.spec.shape.clone(),
                dtype: i.spec.dtype,
                data: match &i.payload {
                    Payload::Zeros => PayloadFile::Fill(Fill::Zeros),
                    Payload::Ones => PayloadFile::Fill(Fill::Ones),
                    Payload::Values(v) => PayloadFile::Values(v.clone()),
                },
            })
            .collect(),
        nodes: nodes
            .into_iter()
            .map(|n| NodeFile {
                op: n.op.clone(),
                name: n.name.clone(),
                inputs: n.inputs.clone(),
                outputs: n.outputs.clone(),
                attrs: n.attrs.clone(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("graph serializes")
}
