use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dagpar::ingest::SourceFormat;
use dagpar::passes::PassKind;
use dagpar::pipeline::{run_analyze, run_compile, run_simulate, HyperMode, PipelineConfig};
use dagpar::ratio::Factor;

#[derive(Parser)]
#[command(name = "dagpar", version, about = "Parallelize operator dataflow graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the parallelism table for a graph
    Analyze(Opts),
    /// Cluster, simulate and emit parallel code
    Compile(Opts),
    /// Cluster and simulate; writes trace.jsonl under --out
    Simulate(Opts),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Onnx,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Off,
    Plain,
    Switched,
}

#[derive(Args)]
struct Opts {
    #[arg(long)]
    input: PathBuf,
    /// Defaults to the input file extension
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[arg(long)]
    cost_model: Option<PathBuf>,
    /// Comma-separated: fold, dce, clone (run in order)
    #[arg(long, value_delimiter = ',', value_parser = parse_pass)]
    passes: Vec<PassKind>,
    #[arg(long)]
    clone_max_cost: Option<u64>,
    /// Fraction like 1/2 or 0.5
    #[arg(long, value_parser = parse_factor)]
    clone_depth_frac: Option<Factor>,
    #[arg(long, value_parser = parse_factor)]
    clone_max_growth: Option<Factor>,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long, value_enum, default_value = "off")]
    hypercluster: Mode,
    /// Message latency; defaults to the cost model's edge cost
    #[arg(long)]
    latency: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the JSON report here
    #[arg(long)]
    report: Option<PathBuf>,
}

fn parse_pass(s: &str) -> Result<PassKind, String> {
    PassKind::parse(s).ok_or_else(|| format!("unknown pass '{s}' (expected fold, dce or clone)"))
}

fn parse_factor(s: &str) -> Result<Factor, String> {
    let bad = || format!("'{s}' is not a non-negative fraction");
    if let Some((n, d)) = s.split_once('/') {
        let n: u64 = n.trim().parse().map_err(|_| bad())?;
        let d: u64 = d.trim().parse().map_err(|_| bad())?;
        if d == 0 {
            return Err(bad());
        }
        return Ok(Factor::new(n, d));
    }
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if frac.len() > 9 || (int.is_empty() && frac.is_empty()) {
        return Err(bad());
    }
    let digits = format!("{int}{frac}");
    let n: u64 = digits.parse().map_err(|_| bad())?;
    Ok(Factor::new(n, 10u64.pow(frac.len() as u32)))
}

impl Opts {
    fn config(self) -> PipelineConfig {
        let mut cfg = PipelineConfig::new(self.input);
        if let Some(f) = self.format {
            cfg.format = match f {
                Format::Json => SourceFormat::Json,
                Format::Onnx => SourceFormat::Onnx,
            };
        }
        cfg.cost_model = self.cost_model;
        cfg.passes = self.passes;
        if let Some(v) = self.clone_max_cost {
            cfg.clone_policy.max_clone_cost = v;
        }
        if let Some(v) = self.clone_depth_frac {
            cfg.clone_policy.depth_fraction = v;
        }
        if let Some(v) = self.clone_max_growth {
            cfg.clone_policy.max_growth_ratio = v;
        }
        cfg.batch = self.batch;
        cfg.hypercluster = match self.hypercluster {
            Mode::Off => HyperMode::Off,
            Mode::Plain => HyperMode::Plain,
            Mode::Switched => HyperMode::Switched,
        };
        cfg.latency = self.latency;
        cfg.out = self.out;
        cfg.report = self.report;
        cfg
    }
}

fn main() -> ExitCode {
    let run = match Cli::parse().command {
        Command::Analyze(o) => run_analyze(&o.config()),
        Command::Compile(o) => run_compile(&o.config()),
        Command::Simulate(o) => run_simulate(&o.config()),
    };
    if run.exit_code == 0 {
        print!("{}", run.text);
    } else {
        eprint!("{}", run.text);
    }
    ExitCode::from(run.exit_code as u8)
}
