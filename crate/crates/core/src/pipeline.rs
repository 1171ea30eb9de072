//! End-to-end driver: load, prune/clone, analyze, cluster, simulate and
//! emit code, recording each stage in a JSON report.

use std::fs;
use std::path::PathBuf;

use serde::Serialize;

use crate::analysis::{critical_path, distance_pass, parallelism_factor, CostModel, CriticalPath, ParallelismReport};
use crate::clustering::{
    balance, hypercluster, linear_cluster, merge_clusters, per_step_counts, switched_hypercluster, ClusterSummary,
    Hypercluster,
};
use crate::codegen::{build_emission_plan, write_artifacts, Artifacts, PythonTorch};
use crate::ingest::{load_json, load_onnx, ImportReport, SourceFormat};
use crate::ir::Graph;
use crate::passes::{clone_pass, constant_fold, dead_code_eliminate, ClonePolicy, PassKind, PassReport};
use crate::ratio::Factor;
use crate::sim::{simulate, ScheduleTrace, SimSummary, WorkerPlan};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum HyperMode {
    #[default]
    Off,
    Plain,
    Switched,
}

impl HyperMode {
    pub fn as_str(self) -> &'static str {
        match self {
            HyperMode::Off => "off",
            HyperMode::Plain => "plain",
            HyperMode::Switched => "switched",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub format: SourceFormat,
    pub cost_model: Option<PathBuf>,
    pub passes: Vec<PassKind>,
    pub clone_policy: ClonePolicy,
    pub batch: usize,
    pub hypercluster: HyperMode,
    /// Message latency; `None` means the cost model's edge cost.
    pub latency: Option<u64>,
    pub out: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn new(input: impl Into<PathBuf>) -> Self {
        let input = input.into();
        let format = match input.extension().and_then(|e| e.to_str()) {
            Some("onnx") => SourceFormat::Onnx,
            _ => SourceFormat::Json,
        };
        PipelineConfig {
            input,
            format,
            cost_model: None,
            passes: Vec::new(),
            clone_policy: ClonePolicy::default(),
            batch: 1,
            hypercluster: HyperMode::Off,
            latency: None,
            out: None,
            report: None,
        }
    }

    pub fn check(&self) -> Result<(), String> {
        if self.batch < 1 {
            return Err("batch size must be at least 1".into());
        }
        if self.hypercluster != HyperMode::Off && self.batch < 2 {
            return Err(format!(
                "hypercluster mode {} needs --batch >= 2",
                self.hypercluster.as_str()
            ));
        }
        self.clone_policy.check().map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Load,
    Passes,
    Analysis,
    Clustering,
    Hyperclustering,
    Simulation,
    Codegen,
    Write,
}

impl Stage {
    /// Exit code for a failure in this stage: 2 for bad input, 3 otherwise.
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config | Stage::Load => 2,
            _ => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClusteringReport {
    pub clusters_before_merge: usize,
    pub clusters_after_merge: usize,
    /// Cluster count after each merge round.
    pub merge_rounds: Vec<usize>,
    pub before_merge: ClusterSummary,
    pub after_merge: ClusterSummary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HyperReport {
    pub mode: HyperMode,
    pub batch: usize,
    pub hyperclusters: Vec<Hypercluster>,
    pub per_step_counts: Vec<Factor>,
    pub worker_costs: Vec<u64>,
    pub balance: Factor,
}

/// Stable, versioned pipeline report. Stages that did not run are absent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub command: &'static str,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<Failure>,
    pub config: PipelineConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub import: Option<ImportReport>,
    pub passes: Vec<PassReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analysis: Option<ParallelismReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub critical_path: Option<CriticalPath>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clustering: Option<ClusteringReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hypercluster: Option<HyperReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimSummary>,
    pub artifacts: Vec<String>,
}

impl Report {
    fn new(command: &'static str, config: &PipelineConfig) -> Self {
        Report {
            schema_version: SCHEMA_VERSION,
            command,
            status: "ok",
            failure: None,
            config: config.clone(),
            import: None,
            passes: Vec::new(),
            analysis: None,
            critical_path: None,
            clustering: None,
            hypercluster: None,
            simulation: None,
            artifacts: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Result of one command: the report, a human summary, and the trace when
/// a simulation ran.
#[derive(Debug, Clone)]
pub struct Run {
    pub report: Report,
    pub text: String,
    pub trace: Option<ScheduleTrace>,
    pub exit_code: i32,
}

struct Ctx {
    report: Report,
    text: String,
    trace: Option<ScheduleTrace>,
}

type StageResult<T> = Result<T, Failure>;

fn fail<E: ToString>(stage: Stage) -> impl Fn(E) -> Failure {
    move |e| Failure {
        stage,
        message: e.to_string(),
    }
}

fn cost_model(cfg: &PipelineConfig) -> StageResult<CostModel> {
    match &cfg.cost_model {
        None => Ok(CostModel::default()),
        Some(p) => {
            let bytes = fs::read(p).map_err(|e| Failure {
                stage: Stage::Load,
                message: format!("{}: {e}", p.display()),
            })?;
            CostModel::from_json(&bytes).map_err(fail(Stage::Load))
        }
    }
}

/// Loads the graph and runs the configured passes.
fn front(cfg: &PipelineConfig, ctx: &mut Ctx) -> StageResult<(Graph, CostModel)> {
    cfg.check().map_err(fail(Stage::Config))?;
    let cm = cost_model(cfg)?;
    let bytes = fs::read(&cfg.input).map_err(|e| Failure {
        stage: Stage::Load,
        message: format!("{}: {e}", cfg.input.display()),
    })?;
    let (mut graph, import) = match cfg.format {
        SourceFormat::Json => load_json(&bytes),
        SourceFormat::Onnx => load_onnx(&bytes),
    }
    .map_err(fail(Stage::Load))?;
    ctx.text.push_str(&import.render_text());
    ctx.report.import = Some(import);

    for pass in &cfg.passes {
        let (g, r) = match pass {
            PassKind::Fold => constant_fold(&graph),
            PassKind::Dce => dead_code_eliminate(&graph),
            PassKind::Clone => {
                let dm = distance_pass(&graph, &cm).map_err(fail(Stage::Passes))?;
                clone_pass(&graph, &dm, &cm, &cfg.clone_policy)
            }
        };
        ctx.text.push_str(&format!(
            "pass {}: {} -> {} nodes{}\n",
            pass.as_str(),
            r.nodes_before,
            r.nodes_after,
            if r.aborted { " (aborted)" } else { "" }
        ));
        graph = g;
        ctx.report.passes.push(r);
    }

    let par = parallelism_factor(&graph, &cm).map_err(fail(Stage::Analysis))?;
    ctx.text.push_str(&ParallelismReport::table_header());
    ctx.text.push('\n');
    ctx.text.push_str(&par.table_row(&graph.name));
    ctx.text.push('\n');
    ctx.report.analysis = Some(par);
    if !graph.nodes.is_empty() {
        let dm = distance_pass(&graph, &cm).map_err(fail(Stage::Analysis))?;
        ctx.report.critical_path = Some(critical_path(&graph, &dm).map_err(fail(Stage::Analysis))?);
    }
    Ok((graph, cm))
}

/// Clusters, optionally hyperclusters, and simulates.
fn middle(cfg: &PipelineConfig, graph: &Graph, cm: &CostModel, ctx: &mut Ctx) -> StageResult<WorkerPlan> {
    let dm = distance_pass(graph, cm).map_err(fail(Stage::Clustering))?;
    let linear = linear_cluster(graph, &dm).map_err(fail(Stage::Clustering))?;
    let (merged, trace) = merge_clusters(&linear);
    let costs = cm.costs(graph);
    ctx.text.push_str(&format!(
        "clusters: {} linear, {} after merging\n",
        linear.len(),
        merged.len()
    ));
    ctx.report.clustering = Some(ClusteringReport {
        clusters_before_merge: linear.len(),
        clusters_after_merge: merged.len(),
        merge_rounds: trace.counts,
        before_merge: linear.summary(&costs),
        after_merge: merged.summary(&costs),
    });

    let plan = match cfg.hypercluster {
        HyperMode::Off => WorkerPlan::from_clusters_batched(&merged, cfg.batch),
        mode => {
            let hcs = match mode {
                HyperMode::Plain => hypercluster(&merged, cfg.batch),
                _ => switched_hypercluster(&merged, cfg.batch),
            }
            .map_err(fail(Stage::Hyperclustering))?;
            let worker_costs: Vec<u64> = hcs.iter().map(|h| h.cost(&costs)).collect();
            let report = HyperReport {
                mode,
                batch: cfg.batch,
                per_step_counts: per_step_counts(&hcs),
                balance: balance(&worker_costs),
                worker_costs,
                hyperclusters: hcs.clone(),
            };
            ctx.text.push_str(&format!(
                "hyperclusters ({}): balance {}\n",
                mode.as_str(),
                report.balance
            ));
            ctx.report.hypercluster = Some(report);
            WorkerPlan::from_hyperclusters(&hcs)
        }
    };

    let latency = cfg.latency.unwrap_or(cm.edge_cost);
    let trace = simulate(graph, &plan, cm, latency).map_err(fail(Stage::Simulation))?;
    ctx.text.push_str(&format!(
        "simulated makespan {} (sequential {}), predicted speedup {}\n",
        trace.makespan, trace.total_cost, trace.predicted_speedup
    ));
    ctx.report.simulation = Some(trace.summary());
    ctx.trace = Some(trace);
    Ok(plan)
}

fn finish(command: &'static str, cfg: &PipelineConfig, body: impl FnOnce(&mut Ctx) -> StageResult<()>) -> Run {
    let mut ctx = Ctx {
        report: Report::new(command, cfg),
        text: String::new(),
        trace: None,
    };
    let mut exit_code = match body(&mut ctx) {
        Ok(()) => 0,
        Err(f) => {
            ctx.text
                .push_str(&format!("error in {:?} stage: {}\n", f.stage, f.message).to_lowercase());
            ctx.report.status = "error";
            let code = f.stage.exit_code();
            ctx.report.failure = Some(f);
            code
        }
    };
    if let Some(path) = &cfg.report {
        if let Err(e) = fs::write(path, ctx.report.to_json()) {
            ctx.text
                .push_str(&format!("cannot write report {}: {e}\n", path.display()));
            if exit_code == 0 {
                exit_code = 3;
            }
        }
    }
    Run {
        report: ctx.report,
        text: ctx.text,
        trace: ctx.trace,
        exit_code,
    }
}

/// Load, passes and the parallelism table.
pub fn run_analyze(cfg: &PipelineConfig) -> Run {
    finish("analyze", cfg, |ctx| front(cfg, ctx).map(|_| ()))
}

/// Everything up to the simulated schedule; writes `trace.jsonl` under
/// `out` when set.
pub fn run_simulate(cfg: &PipelineConfig) -> Run {
    finish("simulate", cfg, |ctx| {
        let (graph, cm) = front(cfg, ctx)?;
        middle(cfg, &graph, &cm, ctx)?;
        if let Some(dir) = &cfg.out {
            let trace = ctx.trace.as_ref().expect("simulation ran");
            fs::create_dir_all(dir)
                .and_then(|_| fs::write(dir.join("trace.jsonl"), trace.to_jsonl()))
                .map_err(fail(Stage::Write))?;
            ctx.report.artifacts.push("trace.jsonl".into());
        }
        Ok(())
    })
}

/// Full pipeline including code generation into `out`.
pub fn run_compile(cfg: &PipelineConfig) -> Run {
    finish("compile", cfg, |ctx| {
        let (graph, cm) = front(cfg, ctx)?;
        let workers = middle(cfg, &graph, &cm, ctx)?;
        let plan = build_emission_plan(&graph, &workers).map_err(fail(Stage::Codegen))?;
        let violations = plan.check(&graph);
        if !violations.is_empty() {
            return Err(Failure {
                stage: Stage::Codegen,
                message: format!(
                    "emission plan violates {} invariant(s): {:?}",
                    violations.len(),
                    violations
                ),
            });
        }
        let mode = match cfg.hypercluster {
            HyperMode::Off => "clusters",
            m => m.as_str(),
        };
        let artifacts = Artifacts::render(&graph, &plan, &PythonTorch, mode).map_err(fail(Stage::Codegen))?;
        ctx.report.artifacts = artifacts.files.keys().cloned().collect();
        if let Some(dir) = &cfg.out {
            write_artifacts(dir, &artifacts).map_err(fail(Stage::Write))?;
            ctx.text
                .push_str(&format!("wrote {} files to {}\n", artifacts.files.len(), dir.display()));
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::ingest::to_json;

    fn write_fixture(dir: &std::path::Path, g: &Graph) -> PathBuf {
        let p = dir.join(format!("{}.json", g.name));
        fs::write(&p, to_json(g)).unwrap();
        p
    }

    #[test]
    fn analyze_diamond() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig::new(write_fixture(dir.path(), &fixtures::diamond()));
        let run = run_analyze(&cfg);
        assert_eq!(run.exit_code, 0);
        let a = run.report.analysis.unwrap();
        assert_eq!(
            (a.node_count, a.total_weighted_node_cost, a.weighted_cp_length),
            (4, 10, 8)
        );
        assert_eq!(a.parallelism_factor.to_string(), "1.25");
    }

    #[test]
    fn compile_diamond() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig::new(write_fixture(dir.path(), &fixtures::diamond()));
        cfg.out = Some(dir.path().join("out"));
        let run = run_compile(&cfg);
        assert_eq!(run.exit_code, 0, "{}", run.text);
        assert_eq!(run.report.clustering.as_ref().unwrap().clusters_after_merge, 2);
        assert_eq!(
            run.report.simulation.as_ref().unwrap().predicted_speedup,
            Factor::new(5, 4)
        );
        assert_eq!(run.report.artifacts.len(), 4);
        assert!(dir.path().join("out/parallel.py").exists());
    }

    #[test]
    fn seven_node_merge_counts() {
        let dir = tempfile::tempdir().unwrap();
        let run = run_simulate(&PipelineConfig::new(write_fixture(dir.path(), &fixtures::seven_node())));
        let c = run.report.clustering.unwrap();
        assert_eq!((c.clusters_before_merge, c.clusters_after_merge), (3, 2));
    }

    #[test]
    fn switched_batch_four() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig::new(write_fixture(dir.path(), &fixtures::fire_module()));
        cfg.batch = 4;
        cfg.hypercluster = HyperMode::Switched;
        let run = run_compile(&cfg);
        assert_eq!(run.exit_code, 0, "{}", run.text);
        let h = run.report.hypercluster.unwrap();
        let total: usize = h.hyperclusters.iter().map(|h| h.instances.len()).sum();
        assert_eq!(total, 4 * 7);
    }

    #[test]
    fn exit_codes() {
        let dir = tempfile::tempdir().unwrap();
        let missing = run_analyze(&PipelineConfig::new(dir.path().join("nope.json")));
        assert_eq!(missing.exit_code, 2);
        assert_eq!(missing.report.failure.unwrap().stage, Stage::Load);

        let mut cfg = PipelineConfig::new(write_fixture(dir.path(), &fixtures::diamond()));
        cfg.hypercluster = HyperMode::Plain;
        assert_eq!(run_compile(&cfg).exit_code, 2);

        let mut g = fixtures::chain();
        g.nodes[1].op = crate::ir::OpKind::Other("Mystery".into());
        let cfg = PipelineConfig::new(write_fixture(dir.path(), &g));
        let run = run_compile(&cfg);
        assert_eq!(run.exit_code, 3);
        assert_eq!(run.report.failure.as_ref().unwrap().stage, Stage::Codegen);
        assert!(run.report.simulation.is_some(), "partial report keeps earlier stages");
    }
}
