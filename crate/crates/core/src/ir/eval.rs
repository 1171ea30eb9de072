//! Naive reference evaluator.
//!
//! Every operator is implemented by the most direct loop nest available
//! (direct convolution, triple-loop matmul). Intermediates are carried in
//! `f64` and narrowed to the tensor dtype after each operator, so the
//! evaluator doubles as the semantic oracle for graph transformations.

use std::collections::BTreeMap;

use thiserror::Error;

use super::{DType, Graph, Node, NodeId, OpKind, TensorSpec, Topology};

#[derive(Debug, Clone, PartialEq)]
pub struct TensorValue {
    pub spec: TensorSpec,
    /// Row-major scalars, `len == spec.numel()`.
    pub data: Vec<f64>,
}

impl TensorValue {
    pub fn new(spec: TensorSpec, data: Vec<f64>) -> Self {
        debug_assert_eq!(spec.numel(), data.len());
        TensorValue { spec, data }
    }

    pub fn f32(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self::new(TensorSpec::f32(name, shape), data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.spec.shape
    }

    pub fn dtype(&self) -> DType {
        self.spec.dtype
    }

    fn build(shape: Vec<usize>, dtype: DType, data: Vec<f64>) -> Self {
        let data = data.into_iter().map(|v| dtype.narrow(v)).collect();
        TensorValue {
            spec: TensorSpec::new(String::new(), shape, dtype),
            data,
        }
    }

    fn as_i64s(&self) -> Vec<i64> {
        self.data.iter().map(|&v| v as i64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("node {node} has op kind {op} which the evaluator does not support")]
    Unsupported { node: NodeId, op: String },
    #[error("node {node}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        node: NodeId,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("node {node}: {reason}")]
    Invalid { node: NodeId, reason: String },
    #[error("no value bound for tensor \"{0}\"")]
    Unbound(String),
    #[error("binding for input \"{name}\" has shape {got:?}, expected {expected:?}")]
    BindingShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error(transparent)]
    Cycle(#[from] super::topo::CycleError),
}

/// Evaluates all graph outputs for the given input bindings.
pub fn eval_graph(
    graph: &Graph,
    bindings: &BTreeMap<String, TensorValue>,
) -> Result<BTreeMap<String, TensorValue>, EvalError> {
    let mut env: BTreeMap<String, TensorValue> = BTreeMap::new();
    for spec in &graph.inputs {
        let value = bindings
            .get(&spec.name)
            .ok_or_else(|| EvalError::Unbound(spec.name.clone()))?;
        if value.shape() != spec.shape.as_slice() {
            return Err(EvalError::BindingShape {
                name: spec.name.clone(),
                expected: spec.shape.clone(),
                got: value.shape().to_vec(),
            });
        }
        let mut value = value.clone();
        value.spec.name = spec.name.clone();
        env.insert(spec.name.clone(), value);
    }
    for init in &graph.initializers {
        env.insert(init.spec.name.clone(), init.value());
    }

    let order = Topology::of(graph).order()?;
    let by_id: BTreeMap<NodeId, &Node> = graph.nodes.iter().map(|n| (n.id, n)).collect();
    for id in order {
        let node = by_id[&id];
        let inputs = node
            .inputs
            .iter()
            .map(|name| {
                if name.is_empty() {
                    Ok(None)
                } else {
                    env.get(name).map(Some).ok_or_else(|| EvalError::Unbound(name.clone()))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let outputs = eval_node(node, &inputs)?;
        for value in outputs {
            env.insert(value.spec.name.clone(), value);
        }
    }

    graph
        .outputs
        .iter()
        .map(|name| {
            env.get(name)
                .cloned()
                .map(|v| (name.clone(), v))
                .ok_or_else(|| EvalError::Unbound(name.clone()))
        })
        .collect()
}

/// Evaluates one node on concrete inputs (`None` for absent optional inputs).
pub fn eval_node(node: &Node, inputs: &[Option<&TensorValue>]) -> Result<Vec<TensorValue>, EvalError> {
    let ctx = Ctx { node, inputs };
    let results = match &node.op {
        OpKind::Add => vec![ctx.binary(|a, b| a + b)?],
        OpKind::Sub => vec![ctx.binary(|a, b| a - b)?],
        OpKind::Mul => vec![ctx.binary(|a, b| a * b)?],
        OpKind::Div => {
            let int = ctx.input(0)?.dtype() != DType::F32;
            vec![ctx.binary(move |a, b| if int { (a / b).trunc() } else { a / b })?]
        }
        OpKind::Relu => vec![ctx.unary(|v| v.max(0.0))?],
        OpKind::Sigmoid => vec![ctx.unary(|v| 1.0 / (1.0 + (-v).exp()))?],
        OpKind::Identity => vec![ctx.unary(|v| v)?],
        OpKind::Softmax => vec![ctx.softmax()?],
        OpKind::MatMul => vec![ctx.matmul()?],
        OpKind::Gemm => vec![ctx.gemm()?],
        OpKind::Conv => vec![ctx.conv()?],
        OpKind::MaxPool => vec![ctx.pool(PoolKind::Max)?],
        OpKind::AveragePool => vec![ctx.pool(PoolKind::Average)?],
        OpKind::BatchNorm => vec![ctx.batch_norm()?],
        OpKind::Concat => vec![ctx.concat()?],
        OpKind::Reshape => vec![ctx.reshape()?],
        OpKind::Flatten => vec![ctx.flatten()?],
        OpKind::Transpose => vec![ctx.transpose()?],
        OpKind::Slice => vec![ctx.slice()?],
        OpKind::Gather => vec![ctx.gather()?],
        OpKind::Shape => {
            let x = ctx.input(0)?;
            let dims: Vec<f64> = x.shape().iter().map(|&d| d as f64).collect();
            vec![TensorValue::build(vec![dims.len()], DType::I64, dims)]
        }
        OpKind::Unsqueeze => vec![ctx.unsqueeze()?],
        OpKind::Squeeze => vec![ctx.squeeze()?],
        OpKind::Cast => vec![ctx.cast()?],
        OpKind::Constant => vec![ctx.constant()?],
        OpKind::Other(op) => {
            return Err(EvalError::Unsupported {
                node: node.id,
                op: op.clone(),
            })
        }
    };
    if node.outputs.len() != results.len() {
        return Err(ctx.invalid(format!(
            "expected {} output(s), node declares {}",
            results.len(),
            node.outputs.len()
        )));
    }
    Ok(results
        .into_iter()
        .zip(&node.outputs)
        .map(|(mut v, name)| {
            v.spec.name = name.clone();
            v
        })
        .collect())
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Iterates all multi-indices of `shape` in row-major order.
fn for_each_index(shape: &[usize], mut f: impl FnMut(&[usize])) {
    if shape.contains(&0) {
        return;
    }
    let mut idx = vec![0; shape.len()];
    loop {
        f(&idx);
        let mut axis = shape.len();
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < shape[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
}

fn normalize_axis(axis: i64, rank: usize) -> Option<usize> {
    let r = rank as i64;
    let a = if axis < 0 { axis + r } else { axis };
    (0..r.max(1)).contains(&a).then_some(a as usize)
}

#[derive(Clone, Copy)]
enum PoolKind {
    Max,
    Average,
}

struct Ctx<'a> {
    node: &'a Node,
    inputs: &'a [Option<&'a TensorValue>],
}

impl<'a> Ctx<'a> {
    fn invalid(&self, reason: impl Into<String>) -> EvalError {
        EvalError::Invalid {
            node: self.node.id,
            reason: reason.into(),
        }
    }

    fn mismatch(&self, left: &[usize], right: &[usize]) -> EvalError {
        EvalError::ShapeMismatch {
            node: self.node.id,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    fn input(&self, i: usize) -> Result<&'a TensorValue, EvalError> {
        self.inputs
            .get(i)
            .copied()
            .flatten()
            .ok_or_else(|| self.invalid(format!("missing input #{i}")))
    }

    fn optional(&self, i: usize) -> Option<&'a TensorValue> {
        self.inputs.get(i).copied().flatten()
    }

    fn int_attr(&self, key: &str, default: i64) -> i64 {
        self.node.attr(key).and_then(|a| a.as_int()).unwrap_or(default)
    }

    fn float_attr(&self, key: &str, default: f64) -> f64 {
        self.node.attr(key).and_then(|a| a.as_float()).unwrap_or(default)
    }

    fn ints_attr(&self, key: &str) -> Option<Vec<i64>> {
        self.node.attr(key).and_then(|a| a.as_ints())
    }

    /// Integer list taken from input `i` when present, else from attribute `key`.
    fn ints_from(&self, i: usize, key: &str) -> Option<Vec<i64>> {
        self.optional(i).map(|t| t.as_i64s()).or_else(|| self.ints_attr(key))
    }

    fn unary(&self, f: impl Fn(f64) -> f64) -> Result<TensorValue, EvalError> {
        let x = self.input(0)?;
        Ok(TensorValue::build(
            x.shape().to_vec(),
            x.dtype(),
            x.data.iter().map(|&v| f(v)).collect(),
        ))
    }

    fn binary(&self, f: impl Fn(f64, f64) -> f64) -> Result<TensorValue, EvalError> {
        let a = self.input(0)?;
        let b = self.input(1)?;
        let rank = a.shape().len().max(b.shape().len());
        let pad = |s: &[usize]| {
            let mut v = vec![1; rank - s.len()];
            v.extend_from_slice(s);
            v
        };
        let (sa, sb) = (pad(a.shape()), pad(b.shape()));
        let mut out = Vec::with_capacity(rank);
        for (&x, &y) in sa.iter().zip(&sb) {
            out.push(match (x, y) {
                _ if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => return Err(self.mismatch(a.shape(), b.shape())),
            });
        }
        let (ta, tb) = (strides(&sa), strides(&sb));
        let mut data = Vec::with_capacity(out.iter().product());
        for_each_index(&out, |idx| {
            let mut ia = 0;
            let mut ib = 0;
            for d in 0..rank {
                if sa[d] != 1 {
                    ia += idx[d] * ta[d];
                }
                if sb[d] != 1 {
                    ib += idx[d] * tb[d];
                }
            }
            data.push(f(a.data[ia], b.data[ib]));
        });
        Ok(TensorValue::build(out, a.dtype(), data))
    }

    fn softmax(&self) -> Result<TensorValue, EvalError> {
        let x = self.input(0)?;
        let shape = x.shape();
        let axis = normalize_axis(self.int_attr("axis", -1), shape.len())
            .ok_or_else(|| self.invalid("softmax axis out of range"))?;
        if shape.is_empty() {
            return Ok(TensorValue::build(vec![], x.dtype(), vec![1.0]));
        }
        let st = strides(shape);
        let len = shape[axis];
        let mut data = x.data.clone();
        let mut outer = shape.to_vec();
        outer[axis] = 1;
        for_each_index(&outer, |idx| {
            let base: usize = idx.iter().zip(&st).map(|(i, s)| i * s).sum();
            let at = |k: usize| base + k * st[axis];
            let max = (0..len).map(|k| x.data[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = (0..len).map(|k| (x.data[at(k)] - max).exp()).sum();
            for k in 0..len {
                data[at(k)] = (x.data[at(k)] - max).exp() / sum;
            }
        });
        Ok(TensorValue::build(shape.to_vec(), x.dtype(), data))
    }

    fn matmul(&self) -> Result<TensorValue, EvalError> {
        let a = self.input(0)?;
        let b = self.input(1)?;
        let (mut sa, mut sb) = (a.shape().to_vec(), b.shape().to_vec());
        if sa.is_empty() || sb.is_empty() {
            return Err(self.mismatch(&sa, &sb));
        }
        let a_vec = sa.len() == 1;
        let b_vec = sb.len() == 1;
        if a_vec {
            sa.insert(0, 1);
        }
        if b_vec {
            sb.push(1);
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(self.mismatch(a.shape(), b.shape()));
        }
        let (ba, bb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        let rank = ba.len().max(bb.len());
        let pad = |s: &[usize]| {
            let mut v = vec![1; rank - s.len()];
            v.extend_from_slice(s);
            v
        };
        let (pa, pb) = (pad(ba), pad(bb));
        let mut batch = Vec::with_capacity(rank);
        for (&x, &y) in pa.iter().zip(&pb) {
            batch.push(match (x, y) {
                _ if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => return Err(self.mismatch(a.shape(), b.shape())),
            });
        }
        let (ta, tb) = (strides(&pa), strides(&pb));
        let mut data = Vec::new();
        let mut visit = |idx: &[usize]| {
            let mut oa = 0;
            let mut ob = 0;
            for d in 0..rank {
                if pa[d] != 1 {
                    oa += idx[d] * ta[d];
                }
                if pb[d] != 1 {
                    ob += idx[d] * tb[d];
                }
            }
            let (oa, ob) = (oa * m * k, ob * k * n);
            for i in 0..m {
                for j in 0..n {
                    let mut acc = 0.0;
                    for p in 0..k {
                        acc += a.data[oa + i * k + p] * b.data[ob + p * n + j];
                    }
                    data.push(acc);
                }
            }
        };
        if batch.is_empty() {
            visit(&[]);
        } else {
            for_each_index(&batch, visit);
        }
        let mut out = batch;
        if !a_vec {
            out.push(m);
        }
        if !b_vec {
            out.push(n);
        }
        Ok(TensorValue::build(out, a.dtype(), data))
    }

    fn gemm(&self) -> Result<TensorValue, EvalError> {
        let a = self.input(0)?;
        let b = self.input(1)?;
        if a.shape().len() != 2 || b.shape().len() != 2 {
            return Err(self.mismatch(a.shape(), b.shape()));
        }
        let ta = self.int_attr("trans_a", 0) != 0;
        let tb = self.int_attr("trans_b", 0) != 0;
        let alpha = self.float_attr("alpha", 1.0);
        let beta = self.float_attr("beta", 1.0);
        let (m, k) = if ta {
            (a.shape()[1], a.shape()[0])
        } else {
            (a.shape()[0], a.shape()[1])
        };
        let (k2, n) = if tb {
            (b.shape()[1], b.shape()[0])
        } else {
            (b.shape()[0], b.shape()[1])
        };
        if k != k2 {
            return Err(self.mismatch(a.shape(), b.shape()));
        }
        let at = |i: usize, p: usize| if ta { a.data[p * m + i] } else { a.data[i * k + p] };
        let bt = |p: usize, j: usize| if tb { b.data[j * k + p] } else { b.data[p * n + j] };
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += at(i, p) * bt(p, j);
                }
                data[i * n + j] = alpha * acc;
            }
        }
        if let Some(c) = self.optional(2) {
            let cs = c.shape();
            let (cm, cn) = match cs.len() {
                0 => (1, 1),
                1 => (1, cs[0]),
                2 => (cs[0], cs[1]),
                _ => return Err(self.mismatch(&[m, n], cs)),
            };
            if !(cm == 1 || cm == m) || !(cn == 1 || cn == n) {
                return Err(self.mismatch(&[m, n], cs));
            }
            for i in 0..m {
                for j in 0..n {
                    let ci = if cm == 1 { 0 } else { i };
                    let cj = if cn == 1 { 0 } else { j };
                    data[i * n + j] += beta * c.data[ci * cn + cj];
                }
            }
        }
        Ok(TensorValue::build(vec![m, n], a.dtype(), data))
    }

    /// Spatial parameters shared by Conv and the pooling ops.
    fn window(&self, kernel: [usize; 2]) -> Result<Window, EvalError> {
        let strides = self.ints_attr("strides").unwrap_or_else(|| vec![1, 1]);
        let pads = self.ints_attr("pads").unwrap_or_else(|| vec![0, 0, 0, 0]);
        let dilations = self.ints_attr("dilations").unwrap_or_else(|| vec![1, 1]);
        if strides.len() != 2 || pads.len() != 4 || dilations.len() != 2 {
            return Err(self.invalid("2-D strides/pads/dilations expected"));
        }
        if strides.iter().chain(&dilations).any(|&v| v < 1) || pads.iter().any(|&p| p < 0) {
            return Err(self.invalid("non-positive stride/dilation or negative pad"));
        }
        Ok(Window {
            kernel,
            strides: [strides[0] as usize, strides[1] as usize],
            pads: [pads[0] as usize, pads[1] as usize, pads[2] as usize, pads[3] as usize],
            dilations: [dilations[0] as usize, dilations[1] as usize],
        })
    }

    fn conv(&self) -> Result<TensorValue, EvalError> {
        let x = self.input(0)?;
        let w = self.input(1)?;
        let bias = self.optional(2);
        let (xs, ws) = (x.shape(), w.shape());
        if xs.len() != 4 || ws.len() != 4 {
            return Err(self.mismatch(xs, ws));
        }
        let group = self.int_attr("group", 1).max(1) as usize;
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (m, cg, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if c != cg * group || m % group != 0 {
            return Err(self.mismatch(xs, ws));
        }
        if let Some(k) = self.ints_attr("kernel") {
            if k != [kh as i64, kw as i64] {
                return Err(self.invalid(format!("kernel attribute {k:?} disagrees with weight shape")));
            }
        }
        if let Some(b) = bias {
            if b.shape() != [m] {
                return Err(self.mismatch(b.shape(), &[m]));
            }
        }
        let win = self.window([kh, kw])?;
        let (oh, ow) = win
            .output(h, wd)
            .ok_or_else(|| self.invalid("window larger than input"))?;
        let mg = m / group;
        let mut data = vec![0.0; n * m * oh * ow];
        for b in 0..n {
            for oc in 0..m {
                let g = oc / mg;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = bias.map_or(0.0, |t| t.data[oc]);
                        for ic in 0..cg {
                            let cin = g * cg + ic;
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    if let Some((iy, ix)) = win.source(oy, ox, ky, kx, h, wd) {
                                        acc += x.data[((b * c + cin) * h + iy) * wd + ix]
                                            * w.data[((oc * cg + ic) * kh + ky) * kw + kx];
                                    }
                                }
                            }
                        }
                        data[((b * m + oc) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        Ok(TensorValue::build(vec![n, m, oh, ow], x.dtype(), data))
    }

    fn pool(&self, kind: PoolKind) -> Result<TensorValue, EvalError> {
        let x = self.input(0)?;
        let xs = x.shape();
        if xs.len() != 4 {
            return Err(self.invalid(format!("pooling expects rank-4 input, got {xs:?}")));
        }
        let kernel = self
            .ints_attr("kernel")
            .filter(|k| k.len() == 2 && k.iter().all(|&v| v > 0))
            .ok_or_else(|| self.invalid("pooling requires a 2-D kernel attribute"))?;
        let win = self.window([kernel[0] as usize, kernel[1] as usize])?;
        let include_pad = self.int_attr("count_include_pad", 0) != 0;
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (oh, ow) = win
            .output(h, w)
            .ok_or_else(|| self.invalid("window larger than input"))?;
        let mut data = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut max = f64::NEG_INFINITY;
                    let mut sum = 0.0;
                    let mut count = 0usize;
                    for ky in 0..win.kernel[0] {
                        for kx in 0..win.kernel[1] {
                            if let Some((iy, ix)) = win.source(oy, ox, ky, kx, h, w) {
                                let v = x.data[(plane * h + iy) * w + ix];
                                max = max.max(v);
                                sum += v;
                                count += 1;
                            }
                        }
                    }
                    data.push(match kind {
                        PoolKind::Max => max,
                        PoolKind::Average if include_pad => sum / (win.kernel[0] * win.kernel[1]) as f64,
                        PoolKind::Average => sum / count.max(1) as f64,
                    });
                }
            }
        }
        Ok(TensorValue::build(vec![n, c, oh, ow], x.dtype(), data))
    }

    fn batch_norm(&self) -> Result<TensorValue, EvalError> {
        let x = self.input(0)?;
        let params: Vec<&TensorValue> = (1..5).map(|i| self.input(i)).collect::<Result<_, _>>()?;
        let xs = x.shape();
        if xs.len() < 2 {
            return Err(self.invalid("batch norm expects rank >= 2"));
        }
        let c = xs[1];
        for p in &params {
            if p.shape() != [c] {
                return Err(self.mismatch(p.shape(), &[c]));
            }
        }
        let eps = self.float_attr("epsilon", 1e-5);
        let inner: usize = xs[2..].iter().product();
        let data = x
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let ch = (i / inner) % c;
                let (scale, bias, mean, var) = (
                    params[0].data[ch],
                    params[1].data[ch],
                    params[2].data[ch],
                    params[3].data[ch],
                );
                scale * (v - mean) / (var + eps).sqrt() + bias
            })
            .collect();
        Ok(TensorValue::build(xs.to_vec(), x.dtype(), data))
    }

    fn concat(&self) -> Result<TensorValue, EvalError> {
        let parts: Vec<&TensorValue> = self.inputs.iter().flatten().copied().collect();
        let first = *parts.first().ok_or_else(|| self.invalid("concat needs inputs"))?;
        let rank = first.shape().len();
        let axis = self
            .node
            .attr("axis")
            .and_then(|a| a.as_int())
            .and_then(|a| normalize_axis(a, rank))
            .filter(|_| rank > 0)
            .ok_or_else(|| self.invalid("concat requires a valid axis"))?;
        let mut out = first.shape().to_vec();
        out[axis] = 0;
        for p in &parts {
            let s = p.shape();
            if s.len() != rank || (0..rank).any(|d| d != axis && s[d] != first.shape()[d]) {
                return Err(self.mismatch(first.shape(), s));
            }
            out[axis] += s[axis];
        }
        let outer: usize = out[..axis].iter().product();
        let mut data = Vec::with_capacity(out.iter().product());
        for o in 0..outer {
            for p in &parts {
                let chunk: usize = p.shape()[axis..].iter().product();
                data.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
            }
        }
        Ok(TensorValue::build(out, first.dtype(), data))
    }

    fn reshape(&self) -> Result<TensorValue, EvalError> {
        let x = self.input(0)?;
        let target = self
            .ints_from(1, "shape")
            .ok_or_else(|| self.invalid("reshape needs a shape"))?;
        let total = x.data.len();
        let mut out = Vec::with_capacity(target.len());
        let mut infer = None;
        for (i, &d) in target.iter().enumerate() {
            match d {
                -1 if infer.is_none() => {
                    infer = Some(i);
                    out.push(1);
                }
                0 => out.push(
                    *x.shape()
                        .get(i)
                        .ok_or_else(|| self.invalid("reshape 0 beyond input rank"))?,
                ),
                d if d > 0 => out.push(d as usize),
                _ => return Err(self.invalid(format!("bad reshape target {target:?}"))),
            }
        }
        let known: usize = out.iter().product();
        if let Some(i) = infer {
            if known == 0 || total % known != 0 {
                return Err(self.mismatch(x.shape(), &out));
            }
            out[i] = total / known;
        }
        if out.iter().product::<usize>() != total {
            return Err(self.mismatch(x.shape(), &out));
        }
        Ok(TensorValue::build(out, x.dtype(), x.data.clone()))
    }

    fn flatten(&self) -> Result<TensorValue, EvalError> {
        let x = self.input(0)?;
        let rank = x.shape().len() as i64;
        let mut axis = self.int_attr("axis", 1);
        if axis < 0 {
            axis += rank;
        }
        if !(0..=rank).contains(&axis) {
            return Err(self.invalid(format!("flatten axis {axis} out of range for rank {rank}")));
        }
        let (head, tail) = x.shape().split_at(axis as usize);
        let out = vec![head.iter().product(), tail.iter().product()];
        Ok(TensorValue::build(out, x.dtype(), x.data.clone()))
    }

    fn transpose(&self) -> Result<TensorValue, EvalError> {
        let x = self.input(0)?;
        let rank = x.shape().len();
        let perm: Vec<usize> = match self.ints_attr("perm") {
            Some(p) => p.into_iter().map(|v| v as usize).collect(),
            None => (0..rank).rev().collect(),
        };
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        if sorted != (0..rank).collect::<Vec<_>>() {
            return Err(self.invalid(format!("invalid permutation {perm:?}")));
        }
        let out: Vec<usize> = perm.iter().map(|&p| x.shape()[p]).collect();
        let st = strides(x.shape());
        let mut data = Vec::with_capacity(x.data.len());
        for_each_index(&out, |idx| {
            let src: usize = idx.iter().zip(&perm).map(|(&i, &p)| i * st[p]).sum();
            data.push(x.data[src]);
        });
        if rank == 0 {
            data = x.data.clone();
        }
        Ok(TensorValue::build(out, x.dtype(), data))
    }

    fn slice(&self) -> Result<TensorValue, EvalError> {
        let x = self.input(0)?;
        let shape = x.shape();
        let rank = shape.len();
        let starts = self
            .ints_from(1, "starts")
            .ok_or_else(|| self.invalid("slice needs starts"))?;
        let ends = self
            .ints_from(2, "ends")
            .ok_or_else(|| self.invalid("slice needs ends"))?;
        let axes = self
            .ints_from(3, "axes")
            .unwrap_or_else(|| (0..starts.len() as i64).collect());
        let steps = self.ints_from(4, "steps").unwrap_or_else(|| vec![1; starts.len()]);
        if starts.len() != ends.len() || axes.len() != starts.len() || steps.len() != starts.len() {
            return Err(self.invalid("slice parameter lengths differ"));
        }
        // per-axis (start, step, count)
        let mut plan: Vec<(i64, i64, usize)> = shape.iter().map(|&d| (0, 1, d)).collect();
        for k in 0..starts.len() {
            let axis = normalize_axis(axes[k], rank).ok_or_else(|| self.invalid("slice axis out of range"))?;
            let dim = shape[axis] as i64;
            let step = steps[k];
            if step == 0 {
                return Err(self.invalid("slice step 0"));
            }
            let fix = |v: i64| if v < 0 { v + dim } else { v };
            let (start, end) = (fix(starts[k]), fix(ends[k]));
            let (start, end) = if step > 0 {
                (start.clamp(0, dim), end.clamp(0, dim))
            } else {
                (start.clamp(0, dim - 1), end.clamp(-1, dim - 1))
            };
            let count = if step > 0 {
                ((end - start).max(0) + step - 1) / step
            } else {
                ((start - end).max(0) + (-step) - 1) / (-step)
            };
            plan[axis] = (start, step, count as usize);
        }
        let out: Vec<usize> = plan.iter().map(|p| p.2).collect();
        let st = strides(shape);
        let mut data = Vec::with_capacity(out.iter().product());
        for_each_index(&out, |idx| {
            let src: i64 = idx
                .iter()
                .zip(&plan)
                .zip(&st)
                .map(|((&i, &(start, step, _)), &s)| (start + i as i64 * step) * s as i64)
                .sum();
            data.push(x.data[src as usize]);
        });
        if rank == 0 {
            data = x.data.clone();
        }
        Ok(TensorValue::build(out, x.dtype(), data))
    }

    fn gather(&self) -> Result<TensorValue, EvalError> {
        let x = self.input(0)?;
        let idx = self.input(1)?;
        let rank = x.shape().len();
        let axis = normalize_axis(self.int_attr("axis", 0), rank)
            .filter(|_| rank > 0)
            .ok_or_else(|| self.invalid("gather axis out of range"))?;
        let dim = x.shape()[axis] as i64;
        let indices: Vec<usize> = idx
            .as_i64s()
            .into_iter()
            .map(|i| {
                let j = if i < 0 { i + dim } else { i };
                (0..dim)
                    .contains(&j)
                    .then_some(j as usize)
                    .ok_or_else(|| self.invalid(format!("gather index {i} out of range")))
            })
            .collect::<Result<_, _>>()?;
        let outer: usize = x.shape()[..axis].iter().product();
        let inner: usize = x.shape()[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &i in &indices {
                let base = (o * x.shape()[axis] + i) * inner;
                data.extend_from_slice(&x.data[base..base + inner]);
            }
        }
        let mut out = x.shape()[..axis].to_vec();
        out.extend_from_slice(idx.shape());
        out.extend_from_slice(&x.shape()[axis + 1..]);
        Ok(TensorValue::build(out, x.dtype(), data))
    }

    fn unsqueeze(&self) -> Result<TensorValue, EvalError> {
        let x = self.input(0)?;
        let axes = self
            .ints_from(1, "axes")
            .ok_or_else(|| self.invalid("unsqueeze needs axes"))?;
        let rank = x.shape().len() + axes.len();
        let mut axes: Vec<usize> = axes
            .iter()
            .map(|&a| normalize_axis(a, rank).ok_or_else(|| self.invalid("unsqueeze axis out of range")))
            .collect::<Result<_, _>>()?;
        axes.sort_unstable();
        axes.dedup();
        let mut out = x.shape().to_vec();
        for a in axes {
            if a > out.len() {
                return Err(self.invalid("unsqueeze axis out of range"));
            }
            out.insert(a, 1);
        }
        Ok(TensorValue::build(out, x.dtype(), x.data.clone()))
    }

    fn squeeze(&self) -> Result<TensorValue, EvalError> {
        let x = self.input(0)?;
        let rank = x.shape().len();
        let axes: Vec<usize> = match self.ints_from(1, "axes") {
            Some(a) => a
                .iter()
                .map(|&v| normalize_axis(v, rank).ok_or_else(|| self.invalid("squeeze axis out of range")))
                .collect::<Result<_, _>>()?,
            None => (0..rank).filter(|&d| x.shape()[d] == 1).collect(),
        };
        if axes.iter().any(|&a| x.shape()[a] != 1) {
            return Err(self.invalid(format!("cannot squeeze non-unit axes of {:?}", x.shape())));
        }
        let out = x
            .shape()
            .iter()
            .enumerate()
            .filter(|(d, _)| !axes.contains(d))
            .map(|(_, &s)| s)
            .collect();
        Ok(TensorValue::build(out, x.dtype(), x.data.clone()))
    }

    fn cast(&self) -> Result<TensorValue, EvalError> {
        let x = self.input(0)?;
        let to = self
            .node
            .attr("to")
            .and_then(|a| a.as_str())
            .and_then(DType::parse)
            .ok_or_else(|| self.invalid("cast requires `to` of f32|i64|bool"))?;
        Ok(TensorValue::build(x.shape().to_vec(), to, x.data.clone()))
    }

    fn constant(&self) -> Result<TensorValue, EvalError> {
        let value = self
            .node
            .attr("value")
            .and_then(|a| a.as_floats())
            .ok_or_else(|| self.invalid("constant requires a `value` list"))?;
        let shape: Vec<usize> = match self.ints_attr("shape") {
            Some(s) => s.into_iter().map(|d| d.max(0) as usize).collect(),
            None => vec![value.len()],
        };
        if shape.iter().product::<usize>() != value.len() {
            return Err(self.mismatch(&shape, &[value.len()]));
        }
        let dtype = self
            .node
            .attr("dtype")
            .and_then(|a| a.as_str())
            .and_then(DType::parse)
            .unwrap_or(DType::F32);
        Ok(TensorValue::build(shape, dtype, value))
    }
}

struct Window {
    kernel: [usize; 2],
    strides: [usize; 2],
    /// top, left, bottom, right
    pads: [usize; 4],
    dilations: [usize; 2],
}

impl Window {
    fn output(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let span = |k: usize, d: usize| d * (k - 1) + 1;
        let eh = h + self.pads[0] + self.pads[2];
        let ew = w + self.pads[1] + self.pads[3];
        let (sh, sw) = (
            span(self.kernel[0], self.dilations[0]),
            span(self.kernel[1], self.dilations[1]),
        );
        if eh < sh || ew < sw {
            return None;
        }
        Some(((eh - sh) / self.strides[0] + 1, (ew - sw) / self.strides[1] + 1))
    }

    /// Input coordinate read by output (oy, ox) at kernel tap (ky, kx), or
    /// `None` inside the padding.
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize, h: usize, w: usize) -> Option<(usize, usize)> {
        let iy = (oy * self.strides[0] + ky * self.dilations[0]).checked_sub(self.pads[0])?;
        let ix = (ox * self.strides[1] + kx * self.dilations[1]).checked_sub(self.pads[1])?;
        (iy < h && ix < w).then_some((iy, ix))
    }
}
