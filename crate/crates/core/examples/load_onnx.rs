//! Import an ONNX model (the bundled CNN by default) and evaluate it.

use std::collections::BTreeMap;
use std::path::PathBuf;

use dagpar::analysis::parallelism_factor;
use dagpar::ingest::load_onnx;
use dagpar::ir::{eval_graph, TensorValue};
use dagpar::CostModel;

fn main() {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/small_cnn.onnx"));
    let (g, report) = load_onnx(&std::fs::read(&path).unwrap()).unwrap();
    print!("{}", report.render_text());
    for n in &g.nodes {
        println!("  {:>2} {:<18} {}", n.id.0, n.op.as_str(), n.name);
    }
    let par = parallelism_factor(&g, &CostModel::default()).unwrap();
    println!("parallelism {}x", par.parallelism_factor);

    let inputs: BTreeMap<String, TensorValue> = g
        .inputs
        .iter()
        .map(|s| (s.name.clone(), TensorValue::new(s.clone(), vec![0.1; s.numel()])))
        .collect();
    match eval_graph(&g, &inputs) {
        Ok(out) => {
            for (name, v) in out {
                println!("{name} {:?}: {:?}", v.shape(), v.data);
            }
        }
        Err(e) => println!("cannot evaluate: {e}"),
    }
}
