//! Python 3 + PyTorch text backend.
//!
//! Workers run as separate processes connected by `multiprocessing`
//! queues. Initializers are read from `manifest.json` next to the script.

use std::fmt::Write;

use super::{Backend, EmissionPlan, EmissionRecord, Operand, RecordKind, RenderError};
use crate::ir::{AttrValue, DType, OpKind};

const PRELUDE: &str = r#"import json
import multiprocessing as mp
import os

import torch
import torch.nn.functional as F

_HERE = os.path.dirname(os.path.abspath(__file__))
_DTYPES = {"f32": torch.float32, "i64": torch.int64, "bool": torch.bool}


def _load_params():
    with open(os.path.join(_HERE, "manifest.json")) as f:
        manifest = json.load(f)
    params = {}
    for p in manifest["params"]:
        dtype = _DTYPES[p["dtype"]]
        if p["data"] == "zeros":
            t = torch.zeros(p["shape"], dtype=dtype)
        elif p["data"] == "ones":
            t = torch.ones(p["shape"], dtype=dtype)
        else:
            t = torch.tensor(p["data"], dtype=torch.float64).to(dtype).reshape(p["shape"])
        params[p["name"]] = t
    return manifest, params


MANIFEST, P = _load_params()


def _ints(v):
    if v is None:
        return None
    if isinstance(v, torch.Tensor):
        return [int(x) for x in v.reshape(-1).tolist()]
    return [int(x) for x in v]


def _axis(a, rank):
    return a + rank if a < 0 else a


def _div(a, b):
    if a.is_floating_point():
        return torch.div(a, b)
    return torch.div(a, b, rounding_mode="trunc")


def _gemm(a, b, c, alpha, beta, trans_a, trans_b):
    if trans_a:
        a = a.t()
    if trans_b:
        b = b.t()
    y = alpha * torch.matmul(a, b)
    if c is not None:
        y = y + beta * c
    return y


def _conv(x, w, b, strides, pads, dilations, group):
    x = F.pad(x, (pads[1], pads[3], pads[0], pads[2]))
    return F.conv2d(x, w, b, stride=strides, dilation=dilations, groups=group)


def _pool(kind, x, kernel, strides, pads, dilations, count_include_pad):
    n, c, h, w = x.shape
    kh, kw = kernel
    oh = (h + pads[0] + pads[2] - (dilations[0] * (kh - 1) + 1)) // strides[0] + 1
    ow = (w + pads[1] + pads[3] - (dilations[1] * (kw - 1) + 1)) // strides[1] + 1
    pad = (pads[1], pads[3], pads[0], pads[2])

    def windows(t, fill):
        t = F.pad(t, pad, value=fill)
        cols = F.unfold(t.reshape(n * c, 1, t.shape[2], t.shape[3]), kernel, dilation=dilations, stride=strides)
        return cols.reshape(n, c, kh * kw, oh, ow)

    if kind == "max":
        return windows(x, float("-inf")).amax(dim=2)
    total = windows(x, 0.0).sum(dim=2)
    if count_include_pad:
        return total / (kh * kw)
    count = windows(torch.ones_like(x), 0.0).sum(dim=2)
    return total / count


def _batch_norm(x, scale, bias, mean, var, epsilon):
    shape = [1, -1] + [1] * (x.dim() - 2)
    inv = torch.rsqrt(var.reshape(shape) + epsilon)
    return scale.reshape(shape) * (x - mean.reshape(shape)) * inv + bias.reshape(shape)


def _reshape(x, shape):
    shape = _ints(shape)
    dims = [x.shape[i] if d == 0 else d for i, d in enumerate(shape)]
    return torch.reshape(x, dims)


def _flatten(x, axis):
    if axis < 0:
        axis += x.dim()
    lead, tail = 1, 1
    for d in x.shape[:axis]:
        lead *= d
    for d in x.shape[axis:]:
        tail *= d
    return torch.reshape(x, (lead, tail))


def _transpose(x, perm):
    if perm is None:
        perm = list(reversed(range(x.dim())))
    return x.permute(perm)


def _slice(x, starts, ends, axes, steps):
    starts, ends = _ints(starts), _ints(ends)
    axes = _ints(axes) if axes is not None else list(range(len(starts)))
    steps = _ints(steps) if steps is not None else [1] * len(starts)
    for s, e, a, st in zip(starts, ends, axes, steps):
        a = _axis(a, x.dim())
        dim = x.shape[a]
        s = s + dim if s < 0 else s
        e = e + dim if e < 0 else e
        if st > 0:
            s, e = min(max(s, 0), dim), min(max(e, 0), dim)
        else:
            s, e = min(max(s, 0), dim - 1), min(max(e, -1), dim - 1)
        idx = torch.arange(s, e, st, dtype=torch.int64)
        x = torch.index_select(x, a, idx)
    return x


def _gather(x, idx, axis):
    axis = _axis(axis, x.dim())
    dim = x.shape[axis]
    flat = idx.reshape(-1).to(torch.int64)
    flat = torch.where(flat < 0, flat + dim, flat)
    out = torch.index_select(x, axis, flat)
    return out.reshape(list(x.shape[:axis]) + list(idx.shape) + list(x.shape[axis + 1:]))


def _shape(x):
    return torch.tensor(list(x.shape), dtype=torch.int64)


def _unsqueeze(x, axes):
    rank = x.dim() + len(_ints(axes))
    for a in sorted(set(_axis(a, rank) for a in _ints(axes))):
        x = x.unsqueeze(a)
    return x


def _squeeze(x, axes):
    if axes is None:
        axes = [d for d in range(x.dim()) if x.shape[d] == 1]
    axes = sorted(set(_axis(a, x.dim()) for a in _ints(axes)))
    for a in reversed(axes):
        x = x.squeeze(a)
    return x


def _recv(chan, name):
    got, value = chan.get()
    if got != name:
        raise RuntimeError("expected message %s, got %s" % (name, got))
    return value


def _emit(results, batch, index, value):
    results.put((batch, index, value))
    return value


def _random_inputs(seed):
    g = torch.Generator().manual_seed(seed)
    out = {}
    for spec in MANIFEST["inputs"]:
        dtype = _DTYPES[spec["dtype"]]
        if dtype == torch.float32:
            out[spec["name"]] = torch.randn(spec["shape"], generator=g)
        else:
            out[spec["name"]] = torch.zeros(spec["shape"], dtype=dtype)
    return out
"#;

/// Reference backend: Python 3 with PyTorch.
#[derive(Debug, Clone, Copy, Default)]
pub struct PythonTorch;

fn py_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

fn py_float(v: f64) -> String {
    if v.is_nan() {
        "float(\"nan\")".into()
    } else if v.is_infinite() {
        if v > 0.0 { "float(\"inf\")" } else { "float(\"-inf\")" }.into()
    } else {
        format!("{v:?}")
    }
}

fn py_bool(b: bool) -> &'static str {
    if b {
        "True"
    } else {
        "False"
    }
}

fn py_attr(v: &AttrValue) -> String {
    match v {
        AttrValue::Int(i) => i.to_string(),
        AttrValue::Float(f) => py_float(*f),
        AttrValue::Ints(v) => format!("[{}]", v.iter().map(i64::to_string).collect::<Vec<_>>().join(", ")),
        AttrValue::Floats(v) => format!("[{}]", v.iter().map(|f| py_float(*f)).collect::<Vec<_>>().join(", ")),
        AttrValue::Str(s) => py_str(s),
    }
}

fn torch_dtype(s: Option<&str>) -> &'static str {
    match s.and_then(DType::parse).unwrap_or(DType::F32) {
        DType::F32 => "torch.float32",
        DType::I64 => "torch.int64",
        DType::Bool => "torch.bool",
    }
}

fn operand(o: &Operand) -> String {
    match o {
        Operand::Ssa(s) => s.clone(),
        Operand::Param(p) => format!("P[{}]", py_str(p)),
        Operand::Input(i) => format!("inputs[{}]", py_str(i)),
        Operand::Absent => "None".into(),
    }
}

/// Expression computing an op call.
fn call(r: &EmissionRecord) -> Result<String, RenderError> {
    let op = r.op.as_ref().expect("op_call has an op");
    let args: Vec<String> = r.operands.iter().map(operand).collect();
    let arg = |i: usize| args.get(i).cloned().unwrap_or_else(|| "None".into());
    let attr = |k: &str| r.attrs.get(k).map(py_attr);
    let int = |k: &str, d: i64| r.attrs.get(k).and_then(|a| a.as_int()).unwrap_or(d);
    let float = |k: &str, d: f64| py_float(r.attrs.get(k).and_then(|a| a.as_float()).unwrap_or(d));
    let list = |k: &str, d: &str| attr(k).unwrap_or_else(|| d.to_string());
    // Integer list from operand `i` when present, else from attribute `k`.
    let from = |i: usize, k: &str| match r.operands.get(i) {
        Some(Operand::Absent) | None => attr(k).unwrap_or_else(|| "None".into()),
        Some(_) => arg(i),
    };
    let window = || {
        format!(
            "strides={}, pads={}, dilations={}",
            list("strides", "[1, 1]"),
            list("pads", "[0, 0, 0, 0]"),
            list("dilations", "[1, 1]")
        )
    };
    let binary = |f: &str| format!("{f}({}, {})", arg(0), arg(1));
    Ok(match op {
        OpKind::Add => binary("torch.add"),
        OpKind::Sub => binary("torch.sub"),
        OpKind::Mul => binary("torch.mul"),
        OpKind::Div => binary("_div"),
        OpKind::Relu => format!("torch.relu({})", arg(0)),
        OpKind::Sigmoid => format!("torch.sigmoid({})", arg(0)),
        OpKind::Identity => arg(0),
        OpKind::Softmax => format!("torch.softmax({}, dim={})", arg(0), int("axis", -1)),
        OpKind::MatMul => binary("torch.matmul"),
        OpKind::Gemm => format!(
            "_gemm({}, {}, {}, alpha={}, beta={}, trans_a={}, trans_b={})",
            arg(0),
            arg(1),
            arg(2),
            float("alpha", 1.0),
            float("beta", 1.0),
            py_bool(int("trans_a", 0) != 0),
            py_bool(int("trans_b", 0) != 0)
        ),
        OpKind::Conv => format!(
            "_conv({}, {}, {}, {}, group={})",
            arg(0),
            arg(1),
            arg(2),
            window(),
            int("group", 1).max(1)
        ),
        OpKind::MaxPool | OpKind::AveragePool => format!(
            "_pool({}, {}, kernel={}, {}, count_include_pad={})",
            py_str(if *op == OpKind::MaxPool { "max" } else { "avg" }),
            arg(0),
            list("kernel", "None"),
            window(),
            py_bool(int("count_include_pad", 0) != 0)
        ),
        OpKind::BatchNorm => format!(
            "_batch_norm({}, {}, {}, {}, {}, epsilon={})",
            arg(0),
            arg(1),
            arg(2),
            arg(3),
            arg(4),
            float("epsilon", 1e-5)
        ),
        OpKind::Concat => {
            let parts: Vec<String> = r
                .operands
                .iter()
                .filter(|o| **o != Operand::Absent)
                .map(operand)
                .collect();
            format!("torch.cat([{}], dim={})", parts.join(", "), int("axis", 0))
        }
        OpKind::Reshape => format!("_reshape({}, {})", arg(0), from(1, "shape")),
        OpKind::Flatten => format!("_flatten({}, {})", arg(0), int("axis", 1)),
        OpKind::Transpose => format!("_transpose({}, {})", arg(0), list("perm", "None")),
        OpKind::Slice => format!(
            "_slice({}, {}, {}, {}, {})",
            arg(0),
            from(1, "starts"),
            from(2, "ends"),
            from(3, "axes"),
            from(4, "steps")
        ),
        OpKind::Gather => format!("_gather({}, {}, axis={})", arg(0), arg(1), int("axis", 0)),
        OpKind::Shape => format!("_shape({})", arg(0)),
        OpKind::Unsqueeze => format!("_unsqueeze({}, {})", arg(0), from(1, "axes")),
        OpKind::Squeeze => format!("_squeeze({}, {})", arg(0), from(1, "axes")),
        OpKind::Cast => format!(
            "{}.to({})",
            arg(0),
            torch_dtype(r.attrs.get("to").and_then(|a| a.as_str()))
        ),
        OpKind::Constant => {
            let value = list("value", "[]");
            let shape = attr("shape").unwrap_or_else(|| "[-1]".into());
            format!(
                "torch.tensor({value}, dtype=torch.float64).to({}).reshape({shape})",
                torch_dtype(r.attrs.get("dtype").and_then(|a| a.as_str()))
            )
        }
        OpKind::Other(name) => {
            return Err(RenderError::UnsupportedOp {
                backend: "python-torch".into(),
                op: name.clone(),
                node: r.node.expect("op_call has a node"),
            })
        }
    })
}

enum Mode {
    Parallel,
    Sequential,
}

/// One line per record.
fn statement(r: &EmissionRecord, mode: &Mode) -> Result<String, RenderError> {
    let b = r.batch.saturating_sub(1);
    Ok(match r.kind {
        RecordKind::BindInput => {
            let name = py_str(r.tensor.as_deref().unwrap_or_default());
            match mode {
                Mode::Parallel => format!("{} = inputs[{b}][{name}]", r.ssa[0]),
                Mode::Sequential => format!("{} = inputs[{name}]", r.ssa[0]),
            }
        }
        RecordKind::OpCall => {
            let comment = format!("  # {}", r.op.as_ref().expect("op").as_str());
            format!("{} = {}{comment}", r.ssa.join(", "), call(r)?)
        }
        RecordKind::Send => format!(
            "chans[{}].put(({}, {}))",
            r.channel.expect("send channel"),
            py_str(r.operands[0].ssa().unwrap_or_default()),
            operand(&r.operands[0])
        ),
        RecordKind::Recv => format!(
            "{} = _recv(chans[{}], {})",
            r.ssa[0],
            r.channel.expect("recv channel"),
            py_str(r.operands[0].ssa().unwrap_or_default())
        ),
        RecordKind::BindOutput => match mode {
            Mode::Parallel => format!(
                "{} = _emit(results, {b}, {}, {})",
                r.ssa[0],
                r.index.expect("output index"),
                operand(&r.operands[0])
            ),
            Mode::Sequential => format!("{} = {}", r.ssa[0], operand(&r.operands[0])),
        },
    })
}

fn py_list<T: AsRef<str>>(items: &[T]) -> String {
    format!(
        "[{}]",
        items.iter().map(|s| py_str(s.as_ref())).collect::<Vec<_>>().join(", ")
    )
}

impl Backend for PythonTorch {
    fn name(&self) -> &str {
        "python-torch"
    }

    fn extension(&self) -> &str {
        "py"
    }

    fn parallel(&self, plan: &EmissionPlan) -> Result<String, RenderError> {
        let mut s = String::new();
        writeln!(
            s,
            "# Parallel program for graph {}: {} worker(s), batch {}.\n",
            py_str(&plan.graph),
            plan.workers.len(),
            plan.batch
        )
        .unwrap();
        s.push_str(PRELUDE);
        for (w, code) in plan.workers.iter().enumerate() {
            let nodes: Vec<String> = code
                .nodes
                .iter()
                .map(|i| {
                    if plan.batch > 1 {
                        format!("{}#{}", i.node.0, i.batch)
                    } else {
                        i.node.0.to_string()
                    }
                })
                .collect();
            write!(s, "\n\ndef worker_{w}(chans, inputs, results, done):\n").unwrap();
            writeln!(s, "    \"\"\"{}: {}\"\"\"", code.label, nodes.join(", ")).unwrap();
            writeln!(
                s,
                "    torch.set_num_threads(int(os.environ.get(\"INTRA_OP_THREADS\", \"1\")))"
            )
            .unwrap();
            for r in &code.records {
                writeln!(s, "    {}", statement(r, &Mode::Parallel)?).unwrap();
            }
            writeln!(s, "    done.wait()").unwrap();
        }

        let results = plan
            .workers
            .iter()
            .flat_map(|w| &w.records)
            .filter(|r| r.kind == RecordKind::BindOutput)
            .count();
        let workers: Vec<String> = (0..plan.workers.len()).map(|w| format!("worker_{w}")).collect();
        let channels: Vec<String> = plan
            .channels
            .iter()
            .map(|c| format!("({}, {})", c.from, c.to))
            .collect();
        let passthrough: Vec<String> = plan
            .passthrough
            .iter()
            .map(|(k, n)| format!("({k}, {})", py_str(n)))
            .collect();
        write!(
            s,
            r#"

WORKERS = [{workers}]
CHANNELS = [{channels}]
BATCH = {batch}
OUTPUTS = {outputs}
PASSTHROUGH = [{passthrough}]
N_RESULTS = {results}


def run(batches, timeout=None):
    """Runs one process per worker on `batches` (one input dict per sample)."""
    if len(batches) != BATCH:
        raise ValueError("expected %d input sample(s), got %d" % (BATCH, len(batches)))
    ctx = mp.get_context("spawn")
    chans = [ctx.Queue() for _ in CHANNELS]
    results = ctx.Queue()
    done = ctx.Event()
    procs = [ctx.Process(target=w, args=(chans, batches, results, done), daemon=True) for w in WORKERS]
    for p in procs:
        p.start()
    outs = [{{}} for _ in range(BATCH)]
    try:
        for _ in range(N_RESULTS):
            b, k, value = results.get(timeout=timeout)
            outs[b][OUTPUTS[k]] = value.clone()
    finally:
        done.set()
        for p in procs:
            p.join()
    for k, name in PASSTHROUGH:
        for b in range(BATCH):
            outs[b][OUTPUTS[k]] = batches[b][name]
    return outs


if __name__ == "__main__":
    import sys

    sys.path.insert(0, _HERE)
    import sequential

    batches = [_random_inputs(b) for b in range(BATCH)]
    par = run(batches, timeout=60)
    seq = sequential.run(batches)
    dev = 0.0
    for p, q in zip(par, seq):
        for name in OUTPUTS:
            dev = max(dev, (p[name].double() - q[name].double()).abs().max().item() if p[name].numel() else 0.0)
    print(json.dumps({{"graph": MANIFEST["graph"], "batch": BATCH, "max_abs_deviation": dev}}))
"#,
            workers = workers.join(", "),
            channels = channels.join(", "),
            batch = plan.batch,
            outputs = py_list(&plan.outputs),
            passthrough = passthrough.join(", "),
        )
        .unwrap();
        Ok(s)
    }

    fn sequential(&self, plan: &EmissionPlan) -> Result<String, RenderError> {
        let mut s = String::new();
        writeln!(s, "# Sequential reference for graph {}.\n", py_str(&plan.graph)).unwrap();
        s.push_str(PRELUDE);
        s.push_str("\n\ndef forward(inputs):\n");
        for r in plan.workers.iter().flat_map(|w| &w.records) {
            writeln!(s, "    {}", statement(r, &Mode::Sequential)?).unwrap();
        }
        let mut outs: Vec<String> = Vec::new();
        for (k, name) in plan.outputs.iter().enumerate() {
            let value = match plan.passthrough.iter().find(|(i, _)| *i == k) {
                Some((_, input)) => format!("inputs[{}]", py_str(input)),
                None => format!("out{k}"),
            };
            outs.push(format!("{}: {value}", py_str(name)));
        }
        writeln!(s, "    return {{{}}}", outs.join(", ")).unwrap();
        s.push_str(
            r#"

def run(batches):
    torch.set_num_threads(int(os.environ.get("INTRA_OP_THREADS", "1")))
    return [forward(inputs) for inputs in batches]
"#,
        );
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{distance_pass, CostModel};
    use crate::clustering::{linear_cluster, merge_clusters};
    use crate::codegen::{build_emission_plan, render_parallel, render_sequential};
    use crate::fixtures;
    use crate::ir::{Graph, Node, TensorSpec};
    use crate::sim::WorkerPlan;

    fn diamond_plan() -> EmissionPlan {
        let g = fixtures::diamond();
        let cs = linear_cluster(&g, &distance_pass(&g, &CostModel::default()).unwrap()).unwrap();
        build_emission_plan(&g, &WorkerPlan::from_clusters(&merge_clusters(&cs).0)).unwrap()
    }

    #[test]
    fn diamond_workers() {
        let files = render_parallel(&diamond_plan(), &PythonTorch).unwrap();
        let text = &files["parallel.py"];
        assert_eq!(text.matches("\ndef worker_").count(), 2);
        assert!(text.contains("    t_2_0_r3 = _recv(chans[1], \"t_2_0\")\n"));
        assert!(text.contains("    chans[0].put((\"t_0_0\", t_0_0))\n"));
        assert!(text.contains("    t_3_0 = torch.add(t_1_0, t_2_0_r3)  # Add\n"));
        assert!(text.contains("\ndef run(batches"));
    }

    #[test]
    fn deterministic() {
        let a = render_parallel(&diamond_plan(), &PythonTorch).unwrap();
        let b = render_parallel(&diamond_plan(), &PythonTorch).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn diamond_sequential_in_topo_order() {
        let text = render_sequential(&fixtures::diamond(), &PythonTorch).unwrap();
        let body: Vec<&str> = text
            .lines()
            .skip_while(|l| !l.starts_with("def forward"))
            .filter(|l| l.starts_with("    t_"))
            .collect();
        assert_eq!(
            body,
            vec![
                "    t_0_0 = torch.relu(in0_w0)  # Relu",
                "    t_1_0 = torch.matmul(t_0_0, P[\"w_b\"])  # MatMul",
                "    t_2_0 = torch.matmul(t_0_0, P[\"w_c\"])  # MatMul",
                "    t_3_0 = torch.add(t_1_0, t_2_0)  # Add",
            ]
        );
        assert!(text.contains("    return {\"d\": out0}\n"));
    }

    #[test]
    fn empty_graph_passes_through() {
        let mut g = Graph::new("id");
        g.inputs.push(TensorSpec::f32("x", vec![2]));
        g.outputs.push("x".into());
        let text = render_sequential(&g, &PythonTorch).unwrap();
        assert!(text.contains("    return {\"x\": inputs[\"x\"]}\n"));
        let plan = crate::codegen::sequential_plan(&g);
        let par = render_parallel(&plan, &PythonTorch).unwrap();
        assert!(par["parallel.py"].contains("PASSTHROUGH = [(0, \"x\")]"));
    }

    #[test]
    fn unknown_op_is_named() {
        let mut g = fixtures::chain();
        g.nodes[1] = Node::new(1, OpKind::Other("Mystery".into()), "b")
            .with_inputs(["a"])
            .with_outputs(["b"]);
        let err = render_sequential(&g, &PythonTorch).unwrap_err();
        assert!(err.to_string().contains("Mystery"));
    }
}
