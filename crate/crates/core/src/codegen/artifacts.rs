use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use super::{render_parallel, render_sequential, Backend, EmissionPlan, RenderError};
use crate::clustering::Instance;
use crate::ir::{Graph, Payload, TensorSpec};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestWorker {
    pub index: usize,
    pub label: String,
    pub function: String,
    pub nodes: Vec<Instance>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: crate::ir::DType,
    /// Flat values, or `"zeros"` / `"ones"`.
    pub data: Value,
}

/// Everything a runner needs besides the source files.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub graph: String,
    pub backend: String,
    pub mode: String,
    pub batch: usize,
    pub inputs: Vec<TensorSpec>,
    pub outputs: Vec<String>,
    pub workers: Vec<ManifestWorker>,
    pub channels: Vec<(usize, usize)>,
    pub params: Vec<ManifestParam>,
    pub files: Vec<String>,
}

/// Rendered output files by name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifacts {
    pub files: BTreeMap<String, String>,
}

impl Artifacts {
    /// Renders `parallel.<ext>`, `sequential.<ext>`, `plan.json` and
    /// `manifest.json`. `mode` is recorded in the manifest verbatim.
    pub fn render(graph: &Graph, plan: &EmissionPlan, backend: &dyn Backend, mode: &str) -> Result<Self, RenderError> {
        let mut files = render_parallel(plan, backend)?;
        files.insert(
            format!("sequential.{}", backend.extension()),
            render_sequential(graph, backend)?,
        );
        files.insert("plan.json".into(), plan.to_json());
        let mut names: Vec<String> = files.keys().cloned().collect();
        names.push("manifest.json".into());
        names.sort();
        let manifest = Manifest {
            schema_version: MANIFEST_VERSION,
            graph: graph.name.clone(),
            backend: backend.name().to_string(),
            mode: mode.to_string(),
            batch: plan.batch,
            inputs: plan.inputs.clone(),
            outputs: plan.outputs.clone(),
            workers: plan
                .workers
                .iter()
                .enumerate()
                .map(|(index, w)| ManifestWorker {
                    index,
                    label: w.label.clone(),
                    function: format!("worker_{index}"),
                    nodes: w.nodes.clone(),
                })
                .collect(),
            channels: plan.channels.iter().map(|c| (c.from, c.to)).collect(),
            params: graph
                .initializers
                .iter()
                .filter(|i| plan.params.contains(&i.spec.name))
                .map(|i| ManifestParam {
                    name: i.spec.name.clone(),
                    shape: i.spec.shape.clone(),
                    dtype: i.spec.dtype,
                    data: match &i.payload {
                        Payload::Values(v) => serde_json::to_value(v).expect("finite values"),
                        Payload::Zeros => Value::from("zeros"),
                        Payload::Ones => Value::from("ones"),
                    },
                })
                .collect(),
            files: names,
        };
        files.insert(
            "manifest.json".into(),
            serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n",
        );
        Ok(Artifacts { files })
    }
}

/// Writes every artifact under `dir`, creating it if needed.
pub fn write_artifacts(dir: &Path, artifacts: &Artifacts) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, text) in &artifacts.files {
        let path = dir.join(name);
        fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}
