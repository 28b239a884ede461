//! Eager tape for reverse-mode differentiation.
//!
//! Every op computes its value immediately and records enough to replay the
//! chain rule. Shape errors inside the tape are programmer errors and panic;
//! model-level entry points validate user-facing shapes before building nodes.

use std::collections::HashMap;

use crate::error::{NnError, Result};
use crate::linalg::{gemm, gemm_nt, gemm_tn};
use crate::params::{Gradients, ParamId, ParameterStore};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl ConvGeom {
    pub fn new(stride: (usize, usize), pad: (usize, usize)) -> Self {
        Self { stride, pad }
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Variable,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MatMul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sum(Var),
    Mean(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Permute {
        input: Var,
        perm: Vec<usize>,
    },
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    MaxPool2d {
        input: Var,
        argmax: Vec<usize>,
    },
    GlobalMax {
        input: Var,
        argmax: Vec<usize>,
    },
    SpatialMean(Var),
    MeanRows(Var),
    RepeatRows(Var),
    Gather {
        table: Var,
        indices: Vec<usize>,
    },
    AddOuter(Var, Var),
    Softmax(Var),
    LogSoftmax(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Vec<f64>,
        count: usize,
    },
    BceWithLogits {
        logits: Var,
        targets: Vec<f64>,
    },
    RowNorm(Var),
}

impl Op {
    fn label(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Variable => "variable",
            Op::Param(_) => "param",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddRow(..) => "add_row",
            Op::MatMul(..) => "matmul",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Relu(_) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Reshape(_) => "reshape",
            Op::Permute { .. } => "permute",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2d { .. } => "max_pool2d",
            Op::GlobalMax { .. } => "global_max",
            Op::SpatialMean(_) => "spatial_mean",
            Op::MeanRows(_) => "mean_rows",
            Op::RepeatRows(_) => "repeat_rows",
            Op::Gather { .. } => "gather",
            Op::AddOuter(..) => "add_outer",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::BceWithLogits { .. } => "bce_with_logits",
            Op::RowNorm(_) => "row_norm",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// A recorded computation. Build it, call [`Graph::backward`] once on a scalar.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    grads: Vec<Option<Tensor>>,
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Splits a shape around `axis` into (outer, axis_len, inner).
fn around_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        let requires_grad = match &op {
            Op::Constant => false,
            Op::Variable | Op::Param(_) => true,
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) | Op::MatMul(a, b) | Op::AddOuter(a, b) => {
                self.rg(*a) || self.rg(*b)
            }
            Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::LeakyRelu(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Reshape(a)
            | Op::SpatialMean(a)
            | Op::MeanRows(a)
            | Op::RepeatRows(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::RowNorm(a) => self.rg(*a),
            Op::Concat { inputs, .. } => inputs.iter().any(|v| self.rg(*v)),
            Op::Slice { input, .. }
            | Op::Permute { input, .. }
            | Op::MaxPool2d { input, .. }
            | Op::GlobalMax { input, .. } => self.rg(*input),
            Op::Conv2d {
                input, weight, bias, ..
            } => self.rg(*input) || self.rg(*weight) || bias.is_some_and(|b| self.rg(b)),
            Op::Gather { table, .. } => self.rg(*table),
            Op::CrossEntropy { logits, .. } | Op::BceWithLogits { logits, .. } => self.rg(*logits),
        };
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn label(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.label()
    }

    // ---- leaves -------------------------------------------------------

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Constant, t)
    }

    /// A leaf whose gradient is recorded (for input-gradient checks).
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(Op::Variable, t)
    }

    /// Trainable parameter; repeated requests return the same node.
    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(Op::Param(id), store.value(id).clone());
        self.params.insert(id, v);
        v
    }

    /// Parameter value used as a constant: no gradient flows back to it.
    pub fn param_frozen(&mut self, store: &ParameterStore, id: ParamId) -> Var {
        self.constant(store.value(id).clone())
    }

    // ---- elementwise --------------------------------------------------

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{what}: operand shapes differ"
        );
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let mut t = self.value(a).clone();
        t.add_assign(self.value(b));
        self.push(Op::Add(a, b), t)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let mut t = self.value(a).clone();
        for (x, y) in t.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *x -= y;
        }
        self.push(Op::Sub(a, b), t)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let mut t = self.value(a).clone();
        for (x, y) in t.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *x *= y;
        }
        self.push(Op::Mul(a, b), t)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut t = self.value(a).clone();
        t.scale_assign(s);
        self.push(Op::Scale(a, s), t)
    }

    /// `x[.., c] + b[c]`, broadcasting `b` over all leading positions.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let (_, c) = self.value(x).as_matrix_dims();
        assert_eq!(self.value(b).len(), c, "add_row: bias length");
        let bias = self.value(b).data().to_vec();
        let mut t = self.value(x).clone();
        for row in t.data_mut().chunks_mut(c) {
            for (v, bv) in row.iter_mut().zip(&bias) {
                *v += bv;
            }
        }
        self.push(Op::AddRow(x, b), t)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let mut t = self.value(a).clone();
        for v in t.data_mut() {
            *v = f(*v);
        }
        self.push(op, t)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.map(
            a,
            move |x| if x > 0.0 { x } else { slope * x },
            Op::LeakyRelu(a, slope),
        )
    }

    // ---- reductions ---------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.sum() / t.len() as f64;
        self.push(Op::Mean(a), Tensor::scalar(s))
    }

    /// `[r, c] -> [1, c]` column means.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.value(a).as_matrix_dims();
        let mut out = vec![0.0; c];
        for row in self.value(a).data().chunks(c) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= r as f64;
        }
        self.push(Op::MeanRows(a), Tensor::row(&out))
    }

    /// Euclidean norm of every row: `[r, c] -> [r]`.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let (r, c) = self.value(a).as_matrix_dims();
        let out: Vec<f64> = self
            .value(a)
            .data()
            .chunks(c)
            .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        self.push(Op::RowNorm(a), Tensor::new(vec![r], out).unwrap())
    }

    // ---- shape ops ----------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let t = self
            .value(a)
            .clone()
            .reshaped(shape)
            .expect("reshape: element count");
        self.push(Op::Reshape(a), t)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Var {
        assert!(!inputs.is_empty(), "concat: no inputs");
        let first = self.shape(inputs[0]).to_vec();
        let mut out_shape = first.clone();
        out_shape[axis] = 0;
        for &v in inputs {
            let s = self.shape(v);
            assert_eq!(s.len(), first.len(), "concat: rank");
            for (d, (&x, &y)) in s.iter().zip(&first).enumerate() {
                if d != axis {
                    assert_eq!(x, y, "concat: non-axis extent");
                }
            }
            out_shape[axis] += s[axis];
        }
        let (outer, total, inner) = around_axis(&out_shape, axis);
        let mut data = vec![0.0; outer * total * inner];
        let mut offset = 0;
        for &v in inputs {
            let len = self.shape(v)[axis];
            let src = self.value(v).data();
            for o in 0..outer {
                let dst = (o * total + offset) * inner;
                data[dst..dst + len * inner]
                    .copy_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
            offset += len;
        }
        let t = Tensor::new(out_shape, data).unwrap();
        self.push(
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            t,
        )
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Var {
        let shape = self.shape(a).to_vec();
        assert!(start + len <= shape[axis], "slice: out of range");
        let (outer, total, inner) = around_axis(&shape, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * total + start) * inner;
            data.extend_from_slice(&src[s..s + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let t = Tensor::new(out_shape, data).unwrap();
        self.push(
            Op::Slice {
                input: a,
                axis,
                start,
            },
            t,
        )
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Var {
        let t = permute_tensor(self.value(a), perm);
        self.push(
            Op::Permute {
                input: a,
                perm: perm.to_vec(),
            },
            t,
        )
    }

    /// `[1, c] -> [n, c]`
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Var {
        let (r, c) = self.value(a).as_matrix_dims();
        assert_eq!(r, 1, "repeat_rows: expects a single row");
        let row = self.value(a).data().to_vec();
        let mut data = Vec::with_capacity(n * c);
        for _ in 0..n {
            data.extend_from_slice(&row);
        }
        self.push(Op::RepeatRows(a), Tensor::new(vec![n, c], data).unwrap())
    }

    /// Row lookup: `table[v, e]`, indices `[k]` -> `[k, e]`.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Var {
        let (v, e) = self.value(table).as_matrix_dims();
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(indices.len() * e);
        for &i in indices {
            assert!(i < v, "gather: index {i} out of range {v}");
            data.extend_from_slice(&src[i * e..(i + 1) * e]);
        }
        let t = Tensor::new(vec![indices.len(), e], data).unwrap();
        self.push(
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
            t,
        )
    }

    /// Pairwise row sums: `q[b, a]`, `k[t, a]` -> `[b*t, a]` with row `b*t_len + t = q[b] + k[t]`.
    pub fn add_outer(&mut self, q: Var, k: Var) -> Var {
        let (b, a) = self.value(q).as_matrix_dims();
        let (t, a2) = self.value(k).as_matrix_dims();
        assert_eq!(a, a2, "add_outer: width");
        let qd = self.value(q).data();
        let kd = self.value(k).data();
        let mut data = Vec::with_capacity(b * t * a);
        for bi in 0..b {
            let qr = &qd[bi * a..(bi + 1) * a];
            for ti in 0..t {
                let kr = &kd[ti * a..(ti + 1) * a];
                data.extend(qr.iter().zip(kr).map(|(x, y)| x + y));
            }
        }
        self.push(Op::AddOuter(q, k), Tensor::new(vec![b * t, a], data).unwrap())
    }

    // ---- linear algebra ----------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let sa = self.shape(a);
        let sb = self.shape(b);
        assert!(sa.len() == 2 && sb.len() == 2, "matmul: expects matrices");
        assert_eq!(sa[1], sb[0], "matmul: inner dimensions");
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push(Op::MatMul(a, b), Tensor::new(vec![m, n], out).unwrap())
    }

    /// NCHW convolution; `weight` is `[oc, c, kh, kw]`, `bias` is `[oc]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, geom: ConvGeom) -> Var {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        assert_eq!(xs.len(), 4, "conv2d: input must be NCHW");
        assert_eq!(ws.len(), 4, "conv2d: weight must be [oc, c, kh, kw]");
        assert_eq!(xs[1], ws[1], "conv2d: channel mismatch");
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (oc, kh, kw) = (ws[0], ws[2], ws[3]);
        let (oh, ow) = conv_out(h, w, kh, kw, geom);
        let ckk = c * kh * kw;
        let p = oh * ow;
        let cols = im2col(self.value(input).data(), n, c, h, w, kh, kw, geom, oh, ow);
        let wd = self.value(weight).data();
        let mut out = vec![0.0; n * oc * p];
        for b in 0..n {
            let col = &cols[b * p * ckk..(b + 1) * p * ckk];
            gemm_nt(wd, col, &mut out[b * oc * p..(b + 1) * oc * p], oc, ckk, p);
        }
        if let Some(bv) = bias {
            let bd = self.value(bv).data();
            assert_eq!(bd.len(), oc, "conv2d: bias length");
            for b in 0..n {
                for o in 0..oc {
                    let s = (b * oc + o) * p;
                    for v in &mut out[s..s + p] {
                        *v += bd[o];
                    }
                }
            }
        }
        let t = Tensor::new(vec![n, oc, oh, ow], out).unwrap();
        self.push(
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                cols,
            },
            t,
        )
    }

    /// Non-overlapping `k×k` max pooling on NCHW (floor mode).
    pub fn max_pool2d(&mut self, input: Var, k: (usize, usize)) -> Var {
        let xs = self.shape(input).to_vec();
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (oh, ow) = (h / k.0, w / k.1);
        assert!(oh > 0 && ow > 0, "max_pool2d: window larger than input");
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut at = 0;
                    for di in 0..k.0 {
                        for dj in 0..k.1 {
                            let idx = base + (i * k.0 + di) * w + j * k.1 + dj;
                            if x[idx] > best {
                                best = x[idx];
                                at = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(at);
                }
            }
        }
        let t = Tensor::new(vec![n, c, oh, ow], out).unwrap();
        self.push(Op::MaxPool2d { input, argmax }, t)
    }

    /// `[n, c, h, w] -> [n, c]` maximum over the spatial extent.
    pub fn global_max(&mut self, input: Var) -> Var {
        let xs = self.shape(input).to_vec();
        let (n, c) = (xs[0], xs[1]);
        let hw: usize = xs[2..].iter().product();
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(n * c);
        let mut argmax = Vec::with_capacity(n * c);
        for plane in 0..n * c {
            let s = &x[plane * hw..(plane + 1) * hw];
            let mut at = 0;
            for (i, v) in s.iter().enumerate() {
                if *v > s[at] {
                    at = i;
                }
            }
            out.push(s[at]);
            argmax.push(plane * hw + at);
        }
        let t = Tensor::new(vec![n, c], out).unwrap();
        self.push(Op::GlobalMax { input, argmax }, t)
    }

    /// `[n, c, h, w] -> [n, c]` mean over the spatial extent.
    pub fn spatial_mean(&mut self, input: Var) -> Var {
        let xs = self.shape(input).to_vec();
        let (n, c) = (xs[0], xs[1]);
        let hw: usize = xs[2..].iter().product();
        let out: Vec<f64> = self
            .value(input)
            .data()
            .chunks(hw)
            .map(|s| s.iter().sum::<f64>() / hw as f64)
            .collect();
        self.push(Op::SpatialMean(input), Tensor::new(vec![n, c], out).unwrap())
    }

    // ---- probabilistic heads -----------------------------------------

    pub fn softmax(&mut self, a: Var) -> Var {
        let (_, c) = self.value(a).as_matrix_dims();
        let mut t = self.value(a).clone();
        let src = self.value(a).data().to_vec();
        for (o, row) in t.data_mut().chunks_mut(c).zip(src.chunks(c)) {
            softmax_row(row, o);
        }
        self.push(Op::Softmax(a), t)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let (_, c) = self.value(a).as_matrix_dims();
        let mut t = self.value(a).clone();
        for row in t.data_mut().chunks_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for v in row {
                *v -= lse;
            }
        }
        self.push(Op::LogSoftmax(a), t)
    }

    /// Mean negative log-likelihood of `targets` under row-softmax of `logits`,
    /// over rows where `mask` is true.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Var {
        let (r, c) = self.value(logits).as_matrix_dims();
        assert_eq!(targets.len(), r, "cross_entropy: targets per row");
        assert_eq!(mask.len(), r, "cross_entropy: mask per row");
        let count = mask.iter().filter(|m| **m).count();
        assert!(count > 0, "cross_entropy: every row masked out");
        let x = self.value(logits).data();
        let mut probs = vec![0.0; r * c];
        let mut loss = 0.0;
        for i in 0..r {
            softmax_row(&x[i * c..(i + 1) * c], &mut probs[i * c..(i + 1) * c]);
            if mask[i] {
                let row = &x[i * c..(i + 1) * c];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                loss += lse - row[targets[i]];
            }
        }
        loss /= count as f64;
        self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
                count,
            },
            Tensor::scalar(loss),
        )
    }

    /// Mean binary cross-entropy of logits against 0/1 (or soft) targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Var {
        let x = self.value(logits).data();
        assert_eq!(x.len(), targets.len(), "bce_with_logits: targets");
        let loss = x
            .iter()
            .zip(targets)
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .sum::<f64>()
            / x.len() as f64;
        self.push(
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            Tensor::scalar(loss),
        )
    }

    // ---- backward -----------------------------------------------------

    /// Reverse sweep from the scalar `loss`. Returns parameter gradients;
    /// gradients of [`Graph::variable`] leaves stay available via [`Graph::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(NnError::Contract(format!(
                "loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        let mut out = Gradients::new();
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if !g.all_finite() {
                return Err(NnError::NonFinite {
                    index: i,
                    label: self.nodes[i].op.label(),
                });
            }
            match &self.nodes[i].op {
                Op::Param(id) => {
                    out.insert(*id, g);
                    continue;
                }
                Op::Variable => {
                    grads[i] = Some(g);
                    continue;
                }
                _ => {}
            }
            self.propagate(i, &g, &mut grads);
        }
        self.grads = grads;
        Ok(out)
    }

    /// Gradient of a [`Graph::variable`] leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// First node holding a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.nodes
            .iter()
            .enumerate()
            .find(|(_, n)| !n.value.all_finite())
            .map(|(i, n)| (i, n.op.label()))
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let y = &nodes[i].value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(nodes[v.0].value.shape()));
            f(slot.data_mut());
        };
        let gd = g.data();
        match &nodes[i].op {
            Op::Constant | Op::Variable | Op::Param(_) => {}
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, gd));
                acc(*b, &mut |gb| add_into(gb, gd));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, gd));
                acc(*b, &mut |gb| {
                    for (x, y) in gb.iter_mut().zip(gd) {
                        *x -= y;
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                acc(*a, &mut |ga| {
                    for ((x, gv), bv) in ga.iter_mut().zip(gd).zip(bv) {
                        *x += gv * bv;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((x, gv), av) in gb.iter_mut().zip(gd).zip(av) {
                        *x += gv * av;
                    }
                });
            }
            Op::Scale(a, s) => acc(*a, &mut |ga| {
                for (x, gv) in ga.iter_mut().zip(gd) {
                    *x += s * gv;
                }
            }),
            Op::AddRow(x, b) => {
                acc(*x, &mut |gx| add_into(gx, gd));
                acc(*b, &mut |gb| {
                    let c = gb.len();
                    for row in gd.chunks(c) {
                        add_into(gb, row);
                    }
                });
            }
            Op::MatMul(a, b) => {
                let sa = nodes[a.0].value.shape();
                let sb = nodes[b.0].value.shape();
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                acc(*a, &mut |ga| gemm_nt(gd, bv, ga, m, n, k));
                acc(*b, &mut |gb| gemm_tn(av, gd, gb, k, m, n));
            }
            Op::Tanh(a) => acc(*a, &mut |ga| {
                for ((x, gv), yv) in ga.iter_mut().zip(gd).zip(y.data()) {
                    *x += gv * (1.0 - yv * yv);
                }
            }),
            Op::Sigmoid(a) => acc(*a, &mut |ga| {
                for ((x, gv), yv) in ga.iter_mut().zip(gd).zip(y.data()) {
                    *x += gv * yv * (1.0 - yv);
                }
            }),
            Op::Relu(a) => {
                let xv = nodes[a.0].value.data();
                acc(*a, &mut |ga| {
                    for ((x, gv), xv) in ga.iter_mut().zip(gd).zip(xv) {
                        if *xv > 0.0 {
                            *x += gv;
                        }
                    }
                })
            }
            Op::LeakyRelu(a, slope) => {
                let xv = nodes[a.0].value.data();
                acc(*a, &mut |ga| {
                    for ((x, gv), xv) in ga.iter_mut().zip(gd).zip(xv) {
                        *x += if *xv > 0.0 { *gv } else { slope * gv };
                    }
                })
            }
            Op::Sum(a) => acc(*a, &mut |ga| {
                for x in ga.iter_mut() {
                    *x += gd[0];
                }
            }),
            Op::Mean(a) => acc(*a, &mut |ga| {
                let s = gd[0] / ga.len() as f64;
                for x in ga.iter_mut() {
                    *x += s;
                }
            }),
            Op::MeanRows(a) => acc(*a, &mut |ga| {
                let c = gd.len();
                let r = ga.len() / c;
                for row in ga.chunks_mut(c) {
                    for (x, gv) in row.iter_mut().zip(gd) {
                        *x += gv / r as f64;
                    }
                }
            }),
            Op::RowNorm(a) => {
                let xv = nodes[a.0].value.data();
                let norms = y.data();
                acc(*a, &mut |ga| {
                    let c = ga.len() / norms.len();
                    for (r, (&nr, &gv)) in norms.iter().zip(gd).enumerate() {
                        if nr == 0.0 {
                            continue;
                        }
                        for j in 0..c {
                            ga[r * c + j] += gv * xv[r * c + j] / nr;
                        }
                    }
                })
            }
            Op::Reshape(a) => acc(*a, &mut |ga| add_into(ga, gd)),
            Op::Concat { inputs, axis } => {
                let out_shape = y.shape();
                let (outer, total, inner) = around_axis(out_shape, *axis);
                let mut offset = 0;
                for v in inputs {
                    let len = nodes[v.0].value.shape()[*axis];
                    acc(*v, &mut |gv| {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            add_into(
                                &mut gv[o * len * inner..(o + 1) * len * inner],
                                &gd[src..src + len * inner],
                            );
                        }
                    });
                    offset += len;
                }
            }
            Op::Slice { input, axis, start } => {
                let in_shape = nodes[input.0].value.shape();
                let (outer, total, inner) = around_axis(in_shape, *axis);
                let len = y.shape()[*axis];
                acc(*input, &mut |ga| {
                    for o in 0..outer {
                        let dst = (o * total + start) * inner;
                        add_into(
                            &mut ga[dst..dst + len * inner],
                            &gd[o * len * inner..(o + 1) * len * inner],
                        );
                    }
                });
            }
            Op::Permute { input, perm } => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let back = permute_tensor(g, &inv);
                acc(*input, &mut |ga| add_into(ga, back.data()));
            }
            Op::RepeatRows(a) => acc(*a, &mut |ga| {
                let c = ga.len();
                for row in gd.chunks(c) {
                    add_into(ga, row);
                }
            }),
            Op::Gather { table, indices } => acc(*table, &mut |gt| {
                let e = gd.len() / indices.len().max(1);
                for (k, &idx) in indices.iter().enumerate() {
                    add_into(&mut gt[idx * e..(idx + 1) * e], &gd[k * e..(k + 1) * e]);
                }
            }),
            Op::AddOuter(q, k) => {
                let (b, a) = nodes[q.0].value.as_matrix_dims();
                let (t, _) = nodes[k.0].value.as_matrix_dims();
                acc(*q, &mut |gq| {
                    for bi in 0..b {
                        for ti in 0..t {
                            let r = (bi * t + ti) * a;
                            add_into(&mut gq[bi * a..(bi + 1) * a], &gd[r..r + a]);
                        }
                    }
                });
                acc(*k, &mut |gk| {
                    for bi in 0..b {
                        for ti in 0..t {
                            let r = (bi * t + ti) * a;
                            add_into(&mut gk[ti * a..(ti + 1) * a], &gd[r..r + a]);
                        }
                    }
                });
            }
            Op::Softmax(a) => {
                let (_, c) = y.as_matrix_dims();
                acc(*a, &mut |ga| {
                    for ((gr, yr), gar) in gd.chunks(c).zip(y.data().chunks(c)).zip(ga.chunks_mut(c)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                        for ((x, gv), yv) in gar.iter_mut().zip(gr).zip(yr) {
                            *x += yv * (gv - dot);
                        }
                    }
                })
            }
            Op::LogSoftmax(a) => {
                let (_, c) = y.as_matrix_dims();
                acc(*a, &mut |ga| {
                    for ((gr, yr), gar) in gd.chunks(c).zip(y.data().chunks(c)).zip(ga.chunks_mut(c)) {
                        let total: f64 = gr.iter().sum();
                        for ((x, gv), yv) in gar.iter_mut().zip(gr).zip(yr) {
                            *x += gv - yv.exp() * total;
                        }
                    }
                })
            }
            Op::CrossEntropy {
                logits,
                targets,
                mask,
                probs,
                count,
            } => {
                let c = probs.len() / targets.len();
                let s = gd[0] / *count as f64;
                acc(*logits, &mut |ga| {
                    for (r, (&t, &m)) in targets.iter().zip(mask).enumerate() {
                        if !m {
                            continue;
                        }
                        for j in 0..c {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            ga[r * c + j] += s * (probs[r * c + j] - onehot);
                        }
                    }
                })
            }
            Op::BceWithLogits { logits, targets } => {
                let xv = nodes[logits.0].value.data();
                let s = gd[0] / targets.len() as f64;
                acc(*logits, &mut |ga| {
                    for ((x, &xv), &t) in ga.iter_mut().zip(xv).zip(targets) {
                        *x += s * (sigmoid(xv) - t);
                    }
                })
            }
            Op::MaxPool2d { input, argmax } | Op::GlobalMax { input, argmax } => {
                acc(*input, &mut |ga| {
                    for (&at, gv) in argmax.iter().zip(gd) {
                        ga[at] += gv;
                    }
                })
            }
            Op::SpatialMean(a) => acc(*a, &mut |ga| {
                let hw = ga.len() / gd.len();
                for (plane, gv) in gd.iter().enumerate() {
                    for x in &mut ga[plane * hw..(plane + 1) * hw] {
                        *x += gv / hw as f64;
                    }
                }
            }),
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                cols,
            } => {
                let xs = nodes[input.0].value.shape();
                let ws = nodes[weight.0].value.shape();
                let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let (oc, kh, kw) = (ws[0], ws[2], ws[3]);
                let (oh, ow) = (y.shape()[2], y.shape()[3]);
                let p = oh * ow;
                let ckk = c * kh * kw;
                if let Some(b) = bias {
                    acc(*b, &mut |gb| {
                        for bi in 0..n {
                            for o in 0..oc {
                                let s = (bi * oc + o) * p;
                                gb[o] += gd[s..s + p].iter().sum::<f64>();
                            }
                        }
                    });
                }
                acc(*weight, &mut |gw| {
                    for bi in 0..n {
                        gemm(
                            &gd[bi * oc * p..(bi + 1) * oc * p],
                            &cols[bi * p * ckk..(bi + 1) * p * ckk],
                            gw,
                            oc,
                            p,
                            ckk,
                        );
                    }
                });
                let wd = nodes[weight.0].value.data();
                acc(*input, &mut |gx| {
                    let mut dcol = vec![0.0; p * ckk];
                    for bi in 0..n {
                        dcol.iter_mut().for_each(|v| *v = 0.0);
                        gemm_tn(&gd[bi * oc * p..(bi + 1) * oc * p], wd, &mut dcol, p, oc, ckk);
                        col2im_add(
                            &dcol,
                            &mut gx[bi * c * h * w..(bi + 1) * c * h * w],
                            c,
                            h,
                            w,
                            kh,
                            kw,
                            *geom,
                            oh,
                            ow,
                        );
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn conv_out(h: usize, w: usize, kh: usize, kw: usize, geom: ConvGeom) -> (usize, usize) {
    let hp = h + 2 * geom.pad.0;
    let wp = w + 2 * geom.pad.1;
    assert!(hp >= kh && wp >= kw, "conv2d: kernel larger than padded input");
    ((hp - kh) / geom.stride.0 + 1, (wp - kw) / geom.stride.1 + 1)
}

/// Patches laid out `[n][oh*ow][c*kh*kw]`.
#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    geom: ConvGeom,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let ckk = c * kh * kw;
    let mut cols = vec![0.0; n * oh * ow * ckk];
    for b in 0..n {
        for i in 0..oh {
            for j in 0..ow {
                let row = ((b * oh + i) * ow + j) * ckk;
                for ch in 0..c {
                    for di in 0..kh {
                        let y = (i * geom.stride.0 + di) as isize - geom.pad.0 as isize;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        for dj in 0..kw {
                            let xx = (j * geom.stride.1 + dj) as isize - geom.pad.1 as isize;
                            if xx < 0 || xx >= w as isize {
                                continue;
                            }
                            cols[row + (ch * kh + di) * kw + dj] =
                                x[((b * c + ch) * h + y as usize) * w + xx as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im_add(
    dcol: &[f64],
    gx: &mut [f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    geom: ConvGeom,
    oh: usize,
    ow: usize,
) {
    let ckk = c * kh * kw;
    for i in 0..oh {
        for j in 0..ow {
            let row = (i * ow + j) * ckk;
            for ch in 0..c {
                for di in 0..kh {
                    let y = (i * geom.stride.0 + di) as isize - geom.pad.0 as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    for dj in 0..kw {
                        let xx = (j * geom.stride.1 + dj) as isize - geom.pad.1 as isize;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        gx[(ch * h + y as usize) * w + xx as usize] +=
                            dcol[row + (ch * kh + di) * kw + dj];
                    }
                }
            }
        }
    }
}

/// Axis permutation: output axis `i` is input axis `perm[i]`.
pub fn permute_tensor(t: &Tensor, perm: &[usize]) -> Tensor {
    let shape = t.shape();
    assert_eq!(perm.len(), shape.len(), "permute: rank");
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides(shape);
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = t.len();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; shape.len()];
    let src = t.data();
    for _ in 0..n {
        let off: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        out.push(src[off]);
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor::new(out_shape, out).unwrap()
}

/// Runs the backward pass from `loss` after checking every node is finite.
pub fn evaluate_with_gradients(g: &mut Graph, loss: Var) -> Result<(f64, Gradients)> {
    if !g.value(loss).is_scalar() {
        return Err(NnError::Contract(format!(
            "loss must be scalar, got shape {:?}",
            g.shape(loss)
        )));
    }
    if let Some((index, label)) = g.first_non_finite() {
        return Err(NnError::NonFinite { index, label });
    }
    let grads = g.backward(loss)?;
    Ok((g.value(loss).item(), grads))
}
