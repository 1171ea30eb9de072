//! The full compile pipeline driven from code, as the CLI does.
//! Usage: `cargo run --example pipeline [graph.json|model.onnx] [out_dir]`

use std::path::PathBuf;

use dagpar::passes::PassKind;
use dagpar::pipeline::{run_compile, HyperMode, PipelineConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let input = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/fire_module.json"));
    let mut cfg = PipelineConfig::new(input);
    cfg.passes = vec![PassKind::Fold, PassKind::Dce, PassKind::Clone];
    cfg.batch = 4;
    cfg.hypercluster = HyperMode::Switched;
    cfg.out = args.next().map(PathBuf::from);

    let run = run_compile(&cfg);
    print!("{}", run.text);
    println!("artifacts: {:?}", run.report.artifacts);
    std::process::exit(run.exit_code);
}
