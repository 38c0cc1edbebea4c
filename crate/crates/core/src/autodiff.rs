//! Reverse-mode differentiation over a dynamic tape.
//!
//! A [`Graph`] is rebuilt for every forward pass. Each operation appends one
//! node holding its output buffer and whatever it needs for its local
//! backward rule; nodes are therefore stored in topological order and
//! [`Graph::backward`] is a single reverse sweep.
//!
//! Feature maps use the layout `[N, V, T, C]` (batch, joint, frame, channel)
//! with the channel axis last. Operations that only care about the channel
//! axis accept any rank and treat the leading axes as independent rows.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Operation families, used to tag nodes for diagnostics and fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    Scale,
    Relu,
    Sigmoid,
    Tanh,
    AddBias,
    Concat,
    Slice,
    Reshape,
    BatchNorm,
    ConvTemporal,
    JointMix,
    JointWeightedMean,
    JointMean,
    JointMax,
    GateBroadcast,
    MeanMiddle,
    TakeFrame,
    StackFrames,
    Sum,
    SoftmaxCrossEntropy,
}

/// Batch-norm normalization mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

pub const BN_EPS: f64 = 1e-5;

/// Per-channel statistics observed by a training-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    AddBias { x: usize, b: usize, c: usize },
    Concat { a: usize, b: usize, ca: usize, cb: usize },
    Slice { x: usize, start: usize, len: usize, c: usize },
    Reshape(usize),
    BatchNorm { x: usize, gamma: usize, beta: usize, c: usize, xhat: Vec<f64>, inv_std: Vec<f64>, batch: bool },
    ConvTemporal { x: usize, w: usize, seqs: usize, t_in: usize, t_out: usize, cin: usize, cout: usize, k: usize, stride: usize },
    JointMix { adj: usize, x: usize, n: usize, v: usize, rest: usize },
    JointWeightedMean { x: usize, w: usize, n: usize, v: usize, t: usize, c: usize, denom: Vec<f64> },
    JointMean { x: usize, n: usize, v: usize, t: usize, c: usize },
    JointMax { x: usize, argmax: Vec<usize> },
    GateBroadcast { gate: usize, ctx: usize, n: usize, v: usize, t: usize, c: usize },
    MeanMiddle { x: usize, a: usize, b: usize, c: usize },
    TakeFrame { x: usize, t_len: usize, c: usize, t: usize },
    StackFrames { xs: Vec<usize>, n: usize, c: usize },
    Sum(usize),
    SoftmaxCe { logits: usize, probs: Vec<f64>, labels: Vec<usize>, n: usize, k: usize },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf | Op::Param(_) => OpKind::Leaf,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Relu(_) => OpKind::Relu,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Tanh(_) => OpKind::Tanh,
            Op::AddBias { .. } => OpKind::AddBias,
            Op::Concat { .. } => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::Reshape(_) => OpKind::Reshape,
            Op::BatchNorm { .. } => OpKind::BatchNorm,
            Op::ConvTemporal { .. } => OpKind::ConvTemporal,
            Op::JointMix { .. } => OpKind::JointMix,
            Op::JointWeightedMean { .. } => OpKind::JointWeightedMean,
            Op::JointMean { .. } => OpKind::JointMean,
            Op::JointMax { .. } => OpKind::JointMax,
            Op::GateBroadcast { .. } => OpKind::GateBroadcast,
            Op::MeanMiddle { .. } => OpKind::MeanMiddle,
            Op::TakeFrame { .. } => OpKind::TakeFrame,
            Op::StackFrames { .. } => OpKind::StackFrames,
            Op::Sum(_) => OpKind::Sum,
            Op::SoftmaxCe { .. } => OpKind::SoftmaxCrossEntropy,
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    op: Op,
}

/// The computation tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    fault: Option<OpKind>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Corrupt the backward rule of one operation family (scales its
    /// incoming gradient by 1.5). Only useful as a negative control for
    /// gradient checking.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(numel(&shape), data.len());
        self.nodes.push(Node { shape, data, op });
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.data.clone()).expect("node shape is consistent")
    }

    /// The parameter a leaf is bound to, if any.
    pub fn param_of(&self, v: Var) -> Option<ParamId> {
        match self.nodes[v.0].op {
            Op::Param(id) => Some(id),
            _ => None,
        }
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    /// A leaf holding a copy of `t`; gradients with respect to it are
    /// available from [`Gradients::wrt`].
    pub fn input(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf)
    }

    /// Leaf bound to a parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let t = &store.get(id).value;
        let v = self.push(t.shape().to_vec(), t.data().to_vec(), Op::Param(id));
        self.params.insert(id, v);
        v
    }

    /// Standard matrix product of two rank-2 tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch { op: "matmul", lhs: sa, rhs: sb });
        }
        self.matmul_rows(a, b)
    }

    /// Projects the last axis of `x` (any rank) by `w: [C_in, C_out]`.
    /// Realizes every 1×1 convolution.
    pub fn project(&mut self, x: Var, w: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sw.len() != 2 || sx.last() != Some(&sw[0]) {
            return Err(Error::ShapeMismatch { op: "project", lhs: sx, rhs: sw });
        }
        self.matmul_rows(x, w)
    }

    fn matmul_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b);
        let k = *sa.last().unwrap();
        let n = sb[1];
        let m = numel(&sa) / k;
        let (ad, bd) = (self.value(a), self.value(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ad[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        let mut shape = sa;
        *shape.last_mut().unwrap() = n;
        Ok(self.push(shape, out, Op::MatMul { a: a.0, b: b.0, m, k, n }))
    }

    fn binary_shapes(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb || numel(sb) == 1 {
            Ok(sa.to_vec())
        } else if numel(sa) == 1 {
            Ok(sb.to_vec())
        } else {
            Err(Error::ShapeMismatch { op, lhs: sa.to_vec(), rhs: sb.to_vec() })
        }
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (ad, bd) = (self.value(a), self.value(b));
        let n = ad.len().max(bd.len());
        (0..n)
            .map(|i| {
                let x = if ad.len() == 1 { ad[0] } else { ad[i] };
                let y = if bd.len() == 1 { bd[0] } else { bd[i] };
                f(x, y)
            })
            .collect()
    }

    /// Element-wise sum; operands must have equal shapes or one must be a scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.binary_shapes("add", a, b)?;
        let data = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(shape, data, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.binary_shapes("sub", a, b)?;
        let data = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(shape, data, Op::Sub(a.0, b.0)))
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.binary_shapes("mul", a, b)?;
        let data = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(shape, data, Op::Mul(a.0, b.0)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let data = self.value(a).iter().map(|x| x * s).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, data, Op::Scale(a.0, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data = self.value(a).iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, data, Op::Relu(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let data = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, data, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let data = self.value(a).iter().map(|x| x.tanh()).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, data, Op::Tanh(a.0))
    }

    /// Adds `b: [C]` to every row of `x: [..., C]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(b).to_vec());
        let c = *sx.last().unwrap();
        if sb != [c] {
            return Err(Error::ShapeMismatch { op: "add_bias", lhs: sx, rhs: sb });
        }
        let bd = self.value(b);
        let data = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + bd[i % c])
            .collect();
        Ok(self.push(sx, data, Op::AddBias { x: x.0, b: b.0, c }))
    }

    /// Concatenation along the channel (last) axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::ShapeMismatch { op: "concat_channels", lhs: sa, rhs: sb });
        }
        let ca = *sa.last().unwrap();
        let cb = *sb.last().unwrap();
        let rows = numel(&sa) / ca;
        let (ad, bd) = (self.value(a), self.value(b));
        let mut data = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            data.extend_from_slice(&ad[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&bd[r * cb..(r + 1) * cb]);
        }
        let mut shape = sa;
        *shape.last_mut().unwrap() = ca + cb;
        Ok(self.push(shape, data, Op::Concat { a: a.0, b: b.0, ca, cb }))
    }

    /// Channels `start..start+len` of the last axis.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let c = *sx.last().unwrap();
        if len == 0 || start + len > c {
            return Err(Error::invalid(format!(
                "slice_channels: range {start}..{} outside {c} channels",
                start + len
            )));
        }
        let rows = numel(&sx) / c;
        let xd = self.value(x);
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&xd[r * c + start..r * c + start + len]);
        }
        let mut shape = sx;
        *shape.last_mut().unwrap() = len;
        Ok(self.push(shape, data, Op::Slice { x: x.0, start, len, c }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != numel(self.shape(x)) || shape.contains(&0) {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let data = self.value(x).to_vec();
        Ok(self.push(shape.to_vec(), data, Op::Reshape(x.0)))
    }

    /// Batch normalization over the last (channel) axis; every other axis is
    /// a batch axis. In training mode the batch statistics are returned so
    /// the caller can update its running estimates; in eval mode `running`
    /// supplies them.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: Mode,
        running: &BatchStats,
    ) -> Result<(Var, Option<BatchStats>)> {
        let sx = self.shape(x).to_vec();
        let c = *sx.last().unwrap();
        for p in [gamma, beta] {
            if self.shape(p) != [c] {
                return Err(Error::ShapeMismatch { op: "batch_norm", lhs: sx, rhs: self.shape(p).to_vec() });
            }
        }
        if running.mean.len() != c || running.var.len() != c {
            return Err(Error::invalid(format!(
                "batch_norm: running statistics sized {} for {c} channels",
                running.mean.len()
            )));
        }
        let m = numel(&sx) / c;
        if m == 0 {
            return Err(Error::invalid("batch_norm: empty batch"));
        }
        let xd = self.value(x);
        let (mean, var, observed) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; c];
                for (i, v) in xd.iter().enumerate() {
                    mean[i % c] += v;
                }
                mean.iter_mut().for_each(|v| *v /= m as f64);
                let mut var = vec![0.0; c];
                for (i, v) in xd.iter().enumerate() {
                    let d = v - mean[i % c];
                    var[i % c] += d * d;
                }
                var.iter_mut().for_each(|v| *v /= m as f64);
                let stats = BatchStats { mean: mean.clone(), var: var.clone() };
                (mean, var, Some(stats))
            }
            Mode::Eval => (running.mean.clone(), running.var.clone(), None),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let xhat: Vec<f64> = xd
            .iter()
            .enumerate()
            .map(|(i, v)| (v - mean[i % c]) * inv_std[i % c])
            .collect();
        let (gd, bd) = (self.value(gamma), self.value(beta));
        let data = xhat
            .iter()
            .enumerate()
            .map(|(i, h)| h * gd[i % c] + bd[i % c])
            .collect();
        let op = Op::BatchNorm {
            x: x.0,
            gamma: gamma.0,
            beta: beta.0,
            c,
            xhat,
            inv_std,
            batch: mode == Mode::Train,
        };
        Ok((self.push(sx, data, op), observed))
    }

    /// 1-D convolution along the frame axis of `x: [..., T, C_in]` with
    /// `w: [C_out, C_in, K]`, zero "same" padding of `(K-1)/2` and the given
    /// stride. Output length is `ceil(T / stride)`.
    pub fn conv_temporal(&mut self, x: Var, w: Var, stride: usize) -> Result<Var> {
        if stride < 1 {
            return Err(Error::invalid("conv_temporal: stride must be at least 1"));
        }
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() < 2 || sw.len() != 3 || sx[sx.len() - 1] != sw[1] {
            return Err(Error::ShapeMismatch { op: "conv_temporal", lhs: sx, rhs: sw });
        }
        let (cout, cin, k) = (sw[0], sw[1], sw[2]);
        if k % 2 == 0 {
            return Err(Error::invalid(format!("conv_temporal: kernel size {k} must be odd")));
        }
        let t_in = sx[sx.len() - 2];
        let t_out = t_in.div_ceil(stride);
        let seqs = numel(&sx) / (t_in * cin);
        let pad = (k - 1) / 2;
        let wt = transpose_kernel(self.value(w), cout, cin, k);
        let xd = self.value(x);
        let mut out = vec![0.0; seqs * t_out * cout];
        for s in 0..seqs {
            let xs = &xd[s * t_in * cin..(s + 1) * t_in * cin];
            for to in 0..t_out {
                let orow = &mut out[(s * t_out + to) * cout..(s * t_out + to + 1) * cout];
                for kk in 0..k {
                    let ti = (to * stride + kk) as isize - pad as isize;
                    if ti < 0 || ti >= t_in as isize {
                        continue;
                    }
                    let xrow = &xs[ti as usize * cin..(ti as usize + 1) * cin];
                    for (ci, &xv) in xrow.iter().enumerate() {
                        let wrow = &wt[(kk * cin + ci) * cout..(kk * cin + ci + 1) * cout];
                        for (o, &wv) in orow.iter_mut().zip(wrow) {
                            *o += xv * wv;
                        }
                    }
                }
            }
        }
        let mut shape = sx;
        let r = shape.len();
        shape[r - 2] = t_out;
        shape[r - 1] = cout;
        let op = Op::ConvTemporal { x: x.0, w: w.0, seqs, t_in, t_out, cin, cout, k, stride };
        Ok(self.push(shape, out, op))
    }

    /// Aggregates over joints: `out[n, v, ..] = Σ_u adj[v, u] · x[n, u, ..]`
    /// for `x: [N, V, ...]` and `adj: [V, V]` (row = receiver, column = sender).
    pub fn joint_mix(&mut self, adj: Var, x: Var) -> Result<Var> {
        let (sa, sx) = (self.shape(adj).to_vec(), self.shape(x).to_vec());
        if sa.len() != 2 || sa[0] != sa[1] || sx.len() < 3 || sx[1] != sa[0] {
            return Err(Error::ShapeMismatch { op: "joint_mix", lhs: sa, rhs: sx });
        }
        let (n, v) = (sx[0], sx[1]);
        let rest = numel(&sx[2..]);
        let (ad, xd) = (self.value(adj), self.value(x));
        let mut out = vec![0.0; xd.len()];
        for b in 0..n {
            for r in 0..v {
                let orow = &mut out[(b * v + r) * rest..(b * v + r + 1) * rest];
                for u in 0..v {
                    let a = ad[r * v + u];
                    if a == 0.0 {
                        continue;
                    }
                    let xrow = &xd[(b * v + u) * rest..(b * v + u + 1) * rest];
                    for (o, &xv) in orow.iter_mut().zip(xrow) {
                        *o += a * xv;
                    }
                }
            }
        }
        Ok(self.push(sx, out, Op::JointMix { adj: adj.0, x: x.0, n, v, rest }))
    }

    fn check_nvtc(&self, op: &'static str, x: Var) -> Result<(usize, usize, usize, usize)> {
        let s = self.shape(x);
        if s.len() != 4 {
            return Err(Error::ShapeMismatch { op, lhs: s.to_vec(), rhs: vec![] });
        }
        Ok((s[0], s[1], s[2], s[3]))
    }

    /// Weighted joint average `Σ_v w_v x_v / Σ_v w_v` per frame:
    /// `x: [N, V, T, C]`, `w: [N, V, T, 1]` (positive weights) → `[N, 1, T, C]`.
    pub fn joint_weighted_mean(&mut self, x: Var, w: Var) -> Result<Var> {
        let (n, v, t, c) = self.check_nvtc("joint_weighted_mean", x)?;
        if self.shape(w) != [n, v, t, 1] {
            return Err(Error::ShapeMismatch {
                op: "joint_weighted_mean",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(w).to_vec(),
            });
        }
        let (xd, wd) = (self.value(x), self.value(w));
        let mut out = vec![0.0; n * t * c];
        let mut denom = vec![0.0; n * t];
        for b in 0..n {
            for f in 0..t {
                let orow = &mut out[(b * t + f) * c..(b * t + f + 1) * c];
                let mut s = 0.0;
                for j in 0..v {
                    let wv = wd[(b * v + j) * t + f];
                    s += wv;
                    let xrow = &xd[((b * v + j) * t + f) * c..((b * v + j) * t + f + 1) * c];
                    for (o, &xv) in orow.iter_mut().zip(xrow) {
                        *o += wv * xv;
                    }
                }
                orow.iter_mut().for_each(|o| *o /= s);
                denom[b * t + f] = s;
            }
        }
        let op = Op::JointWeightedMean { x: x.0, w: w.0, n, v, t, c, denom };
        Ok(self.push(vec![n, 1, t, c], out, op))
    }

    /// Plain joint average per frame, `[N, V, T, C] → [N, 1, T, C]`.
    pub fn joint_mean(&mut self, x: Var) -> Result<Var> {
        let (n, v, t, c) = self.check_nvtc("joint_mean", x)?;
        let xd = self.value(x);
        let mut out = vec![0.0; n * t * c];
        for b in 0..n {
            for f in 0..t {
                let orow = &mut out[(b * t + f) * c..(b * t + f + 1) * c];
                for j in 0..v {
                    let xrow = &xd[((b * v + j) * t + f) * c..((b * v + j) * t + f + 1) * c];
                    for (o, &xv) in orow.iter_mut().zip(xrow) {
                        *o += xv;
                    }
                }
                orow.iter_mut().for_each(|o| *o /= v as f64);
            }
        }
        Ok(self.push(vec![n, 1, t, c], out, Op::JointMean { x: x.0, n, v, t, c }))
    }

    /// Per-channel maximum over joints, `[N, V, T, C] → [N, 1, T, C]`.
    /// Ties go to the lowest joint index.
    pub fn joint_max(&mut self, x: Var) -> Result<Var> {
        let (n, v, t, c) = self.check_nvtc("joint_max", x)?;
        let xd = self.value(x);
        let mut out = vec![f64::NEG_INFINITY; n * t * c];
        let mut argmax = vec![0; n * t * c];
        for b in 0..n {
            for j in 0..v {
                for f in 0..t {
                    for ch in 0..c {
                        let src = ((b * v + j) * t + f) * c + ch;
                        let dst = (b * t + f) * c + ch;
                        if xd[src] > out[dst] {
                            out[dst] = xd[src];
                            argmax[dst] = src;
                        }
                    }
                }
            }
        }
        Ok(self.push(vec![n, 1, t, c], out, Op::JointMax { x: x.0, argmax }))
    }

    /// Scalar gate per joint times a per-frame context vector:
    /// `gate: [N, V, T, 1]`, `ctx: [N, 1, T, C]` → `[N, V, T, C]`.
    pub fn gate_broadcast(&mut self, gate: Var, ctx: Var) -> Result<Var> {
        let (n, v, t, one) = self.check_nvtc("gate_broadcast", gate)?;
        let sc = self.shape(ctx).to_vec();
        if one != 1 || sc.len() != 4 || sc[0] != n || sc[1] != 1 || sc[2] != t {
            return Err(Error::ShapeMismatch {
                op: "gate_broadcast",
                lhs: self.shape(gate).to_vec(),
                rhs: sc,
            });
        }
        let c = sc[3];
        let (gd, cd) = (self.value(gate), self.value(ctx));
        let mut out = vec![0.0; n * v * t * c];
        for b in 0..n {
            for j in 0..v {
                for f in 0..t {
                    let a = gd[(b * v + j) * t + f];
                    let crow = &cd[(b * t + f) * c..(b * t + f + 1) * c];
                    let orow = &mut out[((b * v + j) * t + f) * c..((b * v + j) * t + f + 1) * c];
                    for (o, &cv) in orow.iter_mut().zip(crow) {
                        *o = a * cv;
                    }
                }
            }
        }
        let op = Op::GateBroadcast { gate: gate.0, ctx: ctx.0, n, v, t, c };
        Ok(self.push(vec![n, v, t, c], out, op))
    }

    /// Views `x` as `[a, b, c]` and averages the middle axis → `[a, c]`.
    pub fn mean_middle(&mut self, x: Var, a: usize, b: usize, c: usize) -> Result<Var> {
        if a * b * c != numel(self.shape(x)) {
            return Err(Error::ShapeMismatch {
                op: "mean_middle",
                lhs: self.shape(x).to_vec(),
                rhs: vec![a, b, c],
            });
        }
        let xd = self.value(x);
        let mut out = vec![0.0; a * c];
        for i in 0..a {
            let orow = &mut out[i * c..(i + 1) * c];
            for j in 0..b {
                let xrow = &xd[(i * b + j) * c..(i * b + j + 1) * c];
                for (o, &xv) in orow.iter_mut().zip(xrow) {
                    *o += xv;
                }
            }
            orow.iter_mut().for_each(|o| *o /= b as f64);
        }
        Ok(self.push(vec![a, c], out, Op::MeanMiddle { x: x.0, a, b, c }))
    }

    /// Frame `t` of `x: [N, T, C]` → `[N, C]`.
    pub fn take_frame(&mut self, x: Var, t: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || t >= s[1] {
            return Err(Error::ShapeMismatch { op: "take_frame", lhs: s, rhs: vec![t] });
        }
        let (n, t_len, c) = (s[0], s[1], s[2]);
        let xd = self.value(x);
        let mut out = Vec::with_capacity(n * c);
        for b in 0..n {
            out.extend_from_slice(&xd[(b * t_len + t) * c..(b * t_len + t + 1) * c]);
        }
        Ok(self.push(vec![n, c], out, Op::TakeFrame { x: x.0, t_len, c, t }))
    }

    /// Stacks `T` tensors of shape `[N, C]` into `[N, T, C]`.
    pub fn stack_frames(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::invalid("stack_frames: empty sequence"))?;
        let s0 = self.shape(*first).to_vec();
        if s0.len() != 2 {
            return Err(Error::ShapeMismatch { op: "stack_frames", lhs: s0, rhs: vec![] });
        }
        for x in xs {
            if self.shape(*x) != s0.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "stack_frames",
                    lhs: s0,
                    rhs: self.shape(*x).to_vec(),
                });
            }
        }
        let (n, c, t) = (s0[0], s0[1], xs.len());
        let mut out = vec![0.0; n * t * c];
        for (f, x) in xs.iter().enumerate() {
            let xd = self.value(*x);
            for b in 0..n {
                out[(b * t + f) * c..(b * t + f + 1) * c].copy_from_slice(&xd[b * c..(b + 1) * c]);
            }
        }
        let op = Op::StackFrames { xs: xs.iter().map(|v| v.0).collect(), n, c };
        Ok(self.push(vec![n, t, c], out, op))
    }

    /// Sum of all elements → shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.push(vec![1], vec![s], Op::Sum(x.0))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                lhs: s,
                rhs: vec![labels.len()],
            });
        }
        let (n, k) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::invalid(format!(
                "softmax_cross_entropy: label {bad} outside [0, {k})"
            )));
        }
        let ld = self.value(logits);
        let probs = softmax_rows(ld, k);
        let mut loss = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            let row = &ld[i * k..(i + 1) * k];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            loss += lse - row[l];
        }
        loss /= n as f64;
        let op = Op::SoftmaxCe { logits: logits.0, probs, labels: labels.to_vec(), n, k };
        Ok(self.push(vec![1], vec![loss], op))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if numel(self.shape(loss)) != 1 {
            return Err(Error::invalid(format!(
                "backward: loss must be a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(mut g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if self.fault == Some(node.op.kind()) {
                g.iter_mut().for_each(|v| *v *= 1.5);
            }
            self.backward_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let params = self.params.iter().map(|(&id, v)| (id, v.0)).collect();
        Ok(Gradients { grads, params })
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |j: usize| self.nodes[j].data.as_slice();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            &Op::MatMul { a, b, m, k, n } => {
                let (ad, bd) = (val(a), val(b));
                let da = acc(grads, a, m * k);
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &bd[p * n..(p + 1) * n];
                        da[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
                let db = acc(grads, b, k * n);
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let av = ad[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        for (d, &gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *d += av * gv;
                        }
                    }
                }
            }
            &Op::Add(a, b) => {
                accumulate_broadcast(grads, a, val(a).len(), g, |_| 1.0);
                accumulate_broadcast(grads, b, val(b).len(), g, |_| 1.0);
            }
            &Op::Sub(a, b) => {
                accumulate_broadcast(grads, a, val(a).len(), g, |_| 1.0);
                accumulate_broadcast(grads, b, val(b).len(), g, |_| -1.0);
            }
            &Op::Mul(a, b) => {
                let (ad, bd) = (val(a), val(b));
                let pick = |d: &[f64], i: usize| if d.len() == 1 { d[0] } else { d[i] };
                accumulate_broadcast(grads, a, ad.len(), g, |i| pick(bd, i));
                accumulate_broadcast(grads, b, bd.len(), g, |i| pick(ad, i));
            }
            &Op::Scale(a, s) => {
                let da = acc(grads, a, g.len());
                for (d, gv) in da.iter_mut().zip(g) {
                    *d += s * gv;
                }
            }
            &Op::Relu(a) => {
                let ad = val(a);
                let da = acc(grads, a, g.len());
                for ((d, gv), &x) in da.iter_mut().zip(g).zip(ad) {
                    if x > 0.0 {
                        *d += gv;
                    }
                }
            }
            &Op::Sigmoid(a) => {
                let y = &node.data;
                let da = acc(grads, a, g.len());
                for ((d, gv), &yv) in da.iter_mut().zip(g).zip(y) {
                    *d += gv * yv * (1.0 - yv);
                }
            }
            &Op::Tanh(a) => {
                let y = &node.data;
                let da = acc(grads, a, g.len());
                for ((d, gv), &yv) in da.iter_mut().zip(g).zip(y) {
                    *d += gv * (1.0 - yv * yv);
                }
            }
            &Op::AddBias { x, b, c } => {
                let dx = acc(grads, x, g.len());
                for (d, gv) in dx.iter_mut().zip(g) {
                    *d += gv;
                }
                let db = acc(grads, b, c);
                for (i, gv) in g.iter().enumerate() {
                    db[i % c] += gv;
                }
            }
            &Op::Concat { a, b, ca, cb } => {
                let rows = g.len() / (ca + cb);
                let da = acc(grads, a, rows * ca);
                for r in 0..rows {
                    for j in 0..ca {
                        da[r * ca + j] += g[r * (ca + cb) + j];
                    }
                }
                let db = acc(grads, b, rows * cb);
                for r in 0..rows {
                    for j in 0..cb {
                        db[r * cb + j] += g[r * (ca + cb) + ca + j];
                    }
                }
            }
            &Op::Slice { x, start, len, c } => {
                let rows = g.len() / len;
                let dx = acc(grads, x, rows * c);
                for r in 0..rows {
                    for j in 0..len {
                        dx[r * c + start + j] += g[r * len + j];
                    }
                }
            }
            &Op::Reshape(x) => {
                let dx = acc(grads, x, g.len());
                for (d, gv) in dx.iter_mut().zip(g) {
                    *d += gv;
                }
            }
            Op::BatchNorm { x, gamma, beta, c, xhat, inv_std, batch } => {
                let (x, gamma, beta, c) = (*x, *gamma, *beta, *c);
                let gd = val(gamma);
                let m = g.len() / c;
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for (i, gv) in g.iter().enumerate() {
                    sum_g[i % c] += gv;
                    sum_gx[i % c] += gv * xhat[i];
                }
                let dx = acc(grads, x, g.len());
                if *batch {
                    let mf = m as f64;
                    for (i, gv) in g.iter().enumerate() {
                        let ch = i % c;
                        dx[i] += gd[ch] * inv_std[ch] / mf
                            * (mf * gv - sum_g[ch] - xhat[i] * sum_gx[ch]);
                    }
                } else {
                    for (i, gv) in g.iter().enumerate() {
                        let ch = i % c;
                        dx[i] += gv * gd[ch] * inv_std[ch];
                    }
                }
                let dgamma = acc(grads, gamma, c);
                for ch in 0..c {
                    dgamma[ch] += sum_gx[ch];
                }
                let dbeta = acc(grads, beta, c);
                for ch in 0..c {
                    dbeta[ch] += sum_g[ch];
                }
            }
            &Op::ConvTemporal { x, w, seqs, t_in, t_out, cin, cout, k, stride } => {
                let pad = (k - 1) / 2;
                let xd = val(x);
                let wt = transpose_kernel(val(w), cout, cin, k);
                let mut dwt = vec![0.0; k * cin * cout];
                let dx = acc(grads, x, seqs * t_in * cin);
                for s in 0..seqs {
                    for to in 0..t_out {
                        let grow = &g[(s * t_out + to) * cout..(s * t_out + to + 1) * cout];
                        for kk in 0..k {
                            let ti = (to * stride + kk) as isize - pad as isize;
                            if ti < 0 || ti >= t_in as isize {
                                continue;
                            }
                            let base = (s * t_in + ti as usize) * cin;
                            for ci in 0..cin {
                                let off = (kk * cin + ci) * cout;
                                let wrow = &wt[off..off + cout];
                                dx[base + ci] += grow.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
                                let xv = xd[base + ci];
                                if xv != 0.0 {
                                    for (d, &gv) in dwt[off..off + cout].iter_mut().zip(grow) {
                                        *d += xv * gv;
                                    }
                                }
                            }
                        }
                    }
                }
                let dw = acc(grads, w, cout * cin * k);
                for co in 0..cout {
                    for ci in 0..cin {
                        for kk in 0..k {
                            dw[(co * cin + ci) * k + kk] += dwt[(kk * cin + ci) * cout + co];
                        }
                    }
                }
            }
            &Op::JointMix { adj, x, n, v, rest } => {
                let (ad, xd) = (val(adj), val(x));
                let dx = acc(grads, x, n * v * rest);
                for b in 0..n {
                    for r in 0..v {
                        let grow = &g[(b * v + r) * rest..(b * v + r + 1) * rest];
                        for u in 0..v {
                            let a = ad[r * v + u];
                            if a == 0.0 {
                                continue;
                            }
                            for (d, &gv) in dx[(b * v + u) * rest..(b * v + u + 1) * rest].iter_mut().zip(grow) {
                                *d += a * gv;
                            }
                        }
                    }
                }
                let da = acc(grads, adj, v * v);
                for b in 0..n {
                    for r in 0..v {
                        let grow = &g[(b * v + r) * rest..(b * v + r + 1) * rest];
                        for u in 0..v {
                            let xrow = &xd[(b * v + u) * rest..(b * v + u + 1) * rest];
                            da[r * v + u] += grow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
            }
            Op::JointWeightedMean { x, w, n, v, t, c, denom } => {
                let (x, w, n, v, t, c) = (*x, *w, *n, *v, *t, *c);
                let (xd, wd) = (val(x), val(w));
                let out = &node.data;
                let dx = acc(grads, x, n * v * t * c);
                for b in 0..n {
                    for j in 0..v {
                        for f in 0..t {
                            let scale = wd[(b * v + j) * t + f] / denom[b * t + f];
                            let grow = &g[(b * t + f) * c..(b * t + f + 1) * c];
                            let o = ((b * v + j) * t + f) * c;
                            for (d, &gv) in dx[o..o + c].iter_mut().zip(grow) {
                                *d += scale * gv;
                            }
                        }
                    }
                }
                let dw = acc(grads, w, n * v * t);
                for b in 0..n {
                    for j in 0..v {
                        for f in 0..t {
                            let o = ((b * v + j) * t + f) * c;
                            let q = (b * t + f) * c;
                            let mut s = 0.0;
                            for ch in 0..c {
                                s += g[q + ch] * (xd[o + ch] - out[q + ch]);
                            }
                            dw[(b * v + j) * t + f] += s / denom[b * t + f];
                        }
                    }
                }
            }
            &Op::JointMean { x, n, v, t, c } => {
                let dx = acc(grads, x, n * v * t * c);
                for b in 0..n {
                    for j in 0..v {
                        for f in 0..t {
                            let grow = &g[(b * t + f) * c..(b * t + f + 1) * c];
                            let o = ((b * v + j) * t + f) * c;
                            for (d, &gv) in dx[o..o + c].iter_mut().zip(grow) {
                                *d += gv / v as f64;
                            }
                        }
                    }
                }
            }
            Op::JointMax { x, argmax } => {
                let len = val(*x).len();
                let dx = acc(grads, *x, len);
                for (gv, &src) in g.iter().zip(argmax) {
                    dx[src] += gv;
                }
            }
            &Op::GateBroadcast { gate, ctx, n, v, t, c } => {
                let (gd, cd) = (val(gate), val(ctx));
                let dg = acc(grads, gate, n * v * t);
                for b in 0..n {
                    for j in 0..v {
                        for f in 0..t {
                            let o = ((b * v + j) * t + f) * c;
                            let crow = &cd[(b * t + f) * c..(b * t + f + 1) * c];
                            dg[(b * v + j) * t + f] +=
                                g[o..o + c].iter().zip(crow).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
                let dc = acc(grads, ctx, n * t * c);
                for b in 0..n {
                    for j in 0..v {
                        for f in 0..t {
                            let a = gd[(b * v + j) * t + f];
                            let o = ((b * v + j) * t + f) * c;
                            for (d, &gv) in dc[(b * t + f) * c..(b * t + f + 1) * c].iter_mut().zip(&g[o..o + c]) {
                                *d += a * gv;
                            }
                        }
                    }
                }
            }
            &Op::MeanMiddle { x, a, b, c } => {
                let dx = acc(grads, x, a * b * c);
                for i in 0..a {
                    for j in 0..b {
                        for ch in 0..c {
                            dx[(i * b + j) * c + ch] += g[i * c + ch] / b as f64;
                        }
                    }
                }
            }
            &Op::TakeFrame { x, t_len, c, t } => {
                let n = g.len() / c;
                let dx = acc(grads, x, n * t_len * c);
                for b in 0..n {
                    for ch in 0..c {
                        dx[(b * t_len + t) * c + ch] += g[b * c + ch];
                    }
                }
            }
            Op::StackFrames { xs, n, c } => {
                let (n, c, t) = (*n, *c, xs.len());
                for (f, &x) in xs.iter().enumerate() {
                    let dx = acc(grads, x, n * c);
                    for b in 0..n {
                        for ch in 0..c {
                            dx[b * c + ch] += g[(b * t + f) * c + ch];
                        }
                    }
                }
            }
            &Op::Sum(x) => {
                let len = val(x).len();
                let dx = acc(grads, x, len);
                dx.iter_mut().for_each(|d| *d += g[0]);
            }
            Op::SoftmaxCe { logits, probs, labels, n, k } => {
                let (n, k) = (*n, *k);
                let dl = acc(grads, *logits, n * k);
                for i in 0..n {
                    for j in 0..k {
                        let onehot = if labels[i] == j { 1.0 } else { 0.0 };
                        dl[i * k + j] += g[0] * (probs[i * k + j] - onehot) / n as f64;
                    }
                }
            }
        }
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], i: usize, len: usize) -> &mut Vec<f64> {
    grads[i].get_or_insert_with(|| vec![0.0; len])
}

fn accumulate_broadcast(
    grads: &mut [Option<Vec<f64>>],
    i: usize,
    len: usize,
    g: &[f64],
    local: impl Fn(usize) -> f64,
) {
    let d = acc(grads, i, len);
    if len == 1 && g.len() > 1 {
        d[0] += g.iter().enumerate().map(|(j, gv)| gv * local(j)).sum::<f64>();
    } else {
        for (j, (dv, gv)) in d.iter_mut().zip(g).enumerate() {
            *dv += gv * local(j);
        }
    }
}

/// `[C_out, C_in, K]` → `[K, C_in, C_out]` so the output channel is contiguous.
fn transpose_kernel(w: &[f64], cout: usize, cin: usize, k: usize) -> Vec<f64> {
    let mut wt = vec![0.0; w.len()];
    for co in 0..cout {
        for ci in 0..cin {
            for kk in 0..k {
                wt[(kk * cin + ci) * cout + co] = w[(co * cin + ci) * k + kk];
            }
        }
    }
    wt
}

/// Row-wise numerically stabilized softmax of a `[rows, k]` buffer.
pub fn softmax_rows(data: &[f64], k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks(k) {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - mx).exp()).collect();
        let z: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / z));
    }
    out
}

/// Result of a reverse sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to any node, or `None` if the
    /// node does not influence the loss.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Adds the gradient of every parameter leaf into the parameter's grad
    /// buffer. Parameters unreachable from the loss receive zeros.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(id, node) in &self.params {
            let buf = store.get_mut(id).value.grad_mut();
            if let Some(g) = &self.grads[node] {
                for (b, gv) in buf.iter_mut().zip(g) {
                    *b += gv;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_backward_by_hand() {
        let mut g = Graph::new();
        let a = g.input(&t(&[1, 2], &[1.0, 2.0]));
        let b = g.input(&t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let y = g.matmul(a, b).unwrap();
        assert_eq!(g.value(y), [13.0, 16.0]);
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        // d/da = row sums of b, d/db = a broadcast over columns
        assert_eq!(grads.wrt(a).unwrap(), [7.0, 11.0]);
        assert_eq!(grads.wrt(b).unwrap(), [1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn reused_node_accumulates() {
        let mut g = Graph::new();
        let x = g.input(&t(&[1, 1], &[3.0]));
        let y = g.mul(x, x).unwrap();
        let s = g.sum(y);
        assert_eq!(g.backward(s).unwrap().wrt(x).unwrap(), [6.0]);
    }

    #[test]
    fn unreachable_node_has_no_gradient() {
        let mut g = Graph::new();
        let x = g.input(&t(&[1, 1], &[1.0]));
        let z = g.input(&t(&[1, 1], &[2.0]));
        let s = g.sum(x);
        assert!(g.backward(s).unwrap().wrt(z).is_none());
    }

    #[test]
    fn joint_max_ties_route_to_lowest_joint() {
        let mut g = Graph::new();
        let x = g.input(&t(&[1, 3, 1, 1], &[2.0, 2.0, 1.0]));
        let m = g.joint_max(x).unwrap();
        let s = g.sum(m);
        assert_eq!(g.backward(s).unwrap().wrt(x).unwrap(), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let mut g = Graph::new();
        let a = g.input(&t(&[1, 2], &[1.0, 2.0]));
        let b = g.input(&t(&[3, 1], &[1.0, 2.0, 3.0]));
        assert!(g.matmul(a, b).is_err());
        assert!(g.add(a, b).is_err());
        assert!(g.softmax_cross_entropy(a, &[2]).is_err());
    }

    #[test]
    fn injected_fault_changes_only_that_rule() {
        let run = |fault: Option<OpKind>| {
            let mut g = Graph::new();
            if let Some(k) = fault {
                g.inject_fault(k);
            }
            let x = g.input(&t(&[1, 2], &[0.5, -0.5]));
            let y = g.tanh(x);
            let s = g.sum(y);
            g.backward(s).unwrap().wrt(x).unwrap().to_vec()
        };
        assert_eq!(run(None), run(Some(OpKind::Sigmoid)));
        assert_ne!(run(None), run(Some(OpKind::Tanh)));
    }
}
