use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::kernels::{self, ConvGeom};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::shape::{broadcast_shape, numel, IndexMap};
use crate::tensor::Tensor;

/// Handle to a node of one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Clone, Copy, Debug)]
enum MatMulKind {
    /// `[.., m, k] · [k, n]`, leading axes flattened into `rows`.
    Shared { rows: usize, k: usize, n: usize },
    /// `[B.., m, k] · [B.., k, n]`.
    Batched { batch: usize, m: usize, k: usize, n: usize },
}

enum Op<T> {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale(T),
    MatMul(MatMulKind),
    Permute(Vec<usize>),
    Reshape,
    Relu,
    Sigmoid,
    Tanh,
    Gelu,
    Exp,
    Softmax,
    CrossEntropy {
        labels: Vec<usize>,
        probs: Vec<T>,
        reduction: Reduction,
    },
    LayerNorm {
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Sum,
    Mean,
    MeanTrailing,
    AvgPool3d([usize; 3]),
    Conv3d(ConvGeom),
    Concat(usize),
    Slice {
        axis: usize,
        start: usize,
    },
    BroadcastTo,
    SelectRows(Vec<usize>),
    L2Normalize(Vec<T>),
    LogSumExpMasked(Vec<bool>),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::MatMul(_) => "matmul",
            Op::Permute(_) => "permute",
            Op::Reshape => "reshape",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::Tanh => "tanh",
            Op::Gelu => "gelu",
            Op::Exp => "exp",
            Op::Softmax => "softmax",
            Op::CrossEntropy { .. } => "softmax_cross_entropy",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::MeanTrailing => "mean_trailing",
            Op::AvgPool3d(_) => "avg_pool3d",
            Op::Conv3d(_) => "conv3d",
            Op::Concat(_) => "concat",
            Op::Slice { .. } => "slice",
            Op::BroadcastTo => "broadcast_to",
            Op::SelectRows(_) => "select_rows",
            Op::L2Normalize(_) => "l2_normalize",
            Op::LogSumExpMasked(_) => "logsumexp_masked",
        }
    }
}

struct Node<T> {
    op: Op<T>,
    inputs: Vec<Var>,
    value: Tensor<T>,
    needs_grad: bool,
    reached: bool,
}

/// Define-by-run computation graph: nodes are appended in evaluation order,
/// so every node's inputs precede it.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: Vec<(ParamId, Var)>,
    param_lookup: HashMap<ParamId, Var>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Graph {
            nodes: Vec::new(),
            params: Vec::new(),
            param_lookup: HashMap::new(),
        }
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    /// Gradient of the last backward root w.r.t. `v`, if `v` was on a
    /// differentiable path. Unreached differentiable leaves hold zeros.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    /// Whether the last backward pass actually propagated into `v`.
    pub fn is_reached(&self, v: Var) -> bool {
        self.nodes[v.0].reached
    }

    /// `(param, gradient, reached)` for every parameter leaf in this graph.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, Option<&[T]>, bool)> + '_ {
        self.params
            .iter()
            .map(move |&(id, v)| (id, self.grad(v), self.is_reached(v)))
    }

    pub fn param_var(&self, id: ParamId) -> Option<Var> {
        self.param_lookup.get(&id).copied()
    }

    fn push(&mut self, op: Op<T>, inputs: Vec<Var>, shape: Vec<usize>, data: Vec<T>) -> Result<Var> {
        if data.iter().any(|x| !x.is_finite()) {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            op,
            inputs,
            value: Tensor::from_parts(shape, data),
            needs_grad,
            reached: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Insert a leaf. Differentiable iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let needs_grad = tensor.requires_grad();
        let mut tensor = tensor;
        tensor.clear_grad();
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            value: tensor,
            needs_grad,
            reached: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    /// Parameter leaf; repeated calls for one id return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.param_lookup.get(&id) {
            return v;
        }
        let v = self.leaf(store.get(id).clone());
        self.params.push((id, v));
        self.param_lookup.insert(id, v);
        v
    }

    // ----- elementwise -------------------------------------------------

    fn binary(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out = broadcast_shape(&sa, &sb).ok_or_else(|| {
            TensorError::dim(op.name(), format!("cannot broadcast {sa:?} with {sb:?}"))
        })?;
        let (ma, mb) = (IndexMap::new(&sa, &out), IndexMap::new(&sb, &out));
        let (da, db) = (self.data(a), self.data(b));
        let data = (0..numel(&out)).map(|o| f(da[ma.at(o)], db[mb.at(o)])).collect();
        self.push(op, vec![a, b], out, data)
    }

    /// Broadcasting `a + b`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add, |x, y| x + y)
    }

    /// Broadcasting `a - b`.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub, |x, y| x - y)
    }

    /// Broadcasting elementwise product `a ⊙ b`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul, |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let data = self.data(x).iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::Scale(c), vec![x], shape, data)
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Result<Var> {
        let data = self.data(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(op, vec![x], shape, data)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Relu, |v| v.max(T::zero()))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sigmoid, sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Tanh, |v| v.tanh())
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Gelu, |v| gelu(v).0)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Exp, |v| v.exp())
    }

    // ----- linear algebra ----------------------------------------------

    /// Matrix product. Supports `[.., m, k] · [k, n]` (shared right operand)
    /// and `[B.., m, k] · [B.., k, n]` (batched, equal leading axes).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || TensorError::dim("matmul", format!("incompatible shapes {sa:?} and {sb:?}"));
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let k = sa[sa.len() - 1];
        if sb.len() == 2 {
            if sb[0] != k {
                return Err(mismatch());
            }
            let n = sb[1];
            let rows = numel(&sa) / k;
            let mut out = vec![T::zero(); rows * n];
            kernels::mm_acc(self.data(a), self.data(b), &mut out, rows, k, n);
            let mut shape = sa[..sa.len() - 1].to_vec();
            shape.push(n);
            return self.push(Op::MatMul(MatMulKind::Shared { rows, k, n }), vec![a, b], shape, out);
        }
        if sa.len() != sb.len() || sa[..sa.len() - 2] != sb[..sb.len() - 2] || sb[sb.len() - 2] != k {
            return Err(mismatch());
        }
        let batch = numel(&sa[..sa.len() - 2]);
        let (m, n) = (sa[sa.len() - 2], sb[sb.len() - 1]);
        let mut out = vec![T::zero(); batch * m * n];
        {
            let (da, db) = (self.data(a), self.data(b));
            for i in 0..batch {
                kernels::mm_acc(
                    &da[i * m * k..(i + 1) * m * k],
                    &db[i * k * n..(i + 1) * k * n],
                    &mut out[i * m * n..(i + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        self.push(Op::MatMul(MatMulKind::Batched { batch, m, k, n }), vec![a, b], shape, out)
    }

    /// `x · w + bias` with `w: [in, out]`, `bias: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match bias {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::dim("permute", format!("{perm:?} is not a permutation of {shape:?}")));
        }
        let data = kernels::permute(self.data(x), &shape, perm);
        let out: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        self.push(Op::Permute(perm.to_vec()), vec![x], out, data)
    }

    pub fn transpose(&mut self, x: Var, a1: usize, a2: usize) -> Result<Var> {
        let nd = self.shape(x).len();
        if a1 >= nd || a2 >= nd {
            return Err(TensorError::dim("transpose", format!("axes ({a1}, {a2}) out of range for rank {nd}")));
        }
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(a1, a2);
        self.permute(x, &perm)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let src = self.shape(x);
        if shape.contains(&0) || numel(shape) != numel(src) {
            return Err(TensorError::dim("reshape", format!("cannot view {src:?} as {shape:?}")));
        }
        let data = self.data(x).to_vec();
        self.push(Op::Reshape, vec![x], shape.to_vec(), data)
    }

    // ----- normalization and losses ------------------------------------

    /// Softmax over the last axis, stabilized by row-max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().ok_or_else(|| TensorError::dim("softmax", "scalar input"))?;
        let mut data = self.data(x).to_vec();
        data.chunks_mut(c).for_each(softmax_row);
        self.push(Op::Softmax, vec![x], shape, data)
    }

    /// Cross-entropy of `logits: [b, C]` against class ids.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], reduction: Reduction) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 {
            return Err(TensorError::dim("softmax_cross_entropy", format!("logits must be [b, C], got {shape:?}")));
        }
        let (b, c) = (shape[0], shape[1]);
        if labels.len() != b {
            return Err(TensorError::Validation(format!("{} labels for a batch of {b}", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(TensorError::Validation(format!("label {bad} out of range for {c} classes")));
        }
        let x = self.data(logits);
        let mut probs = x.to_vec();
        let mut total = T::zero();
        for (n, row) in probs.chunks_mut(c).enumerate() {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            total += lse - x[n * c + labels[n]];
            softmax_row(row);
        }
        if reduction == Reduction::Mean {
            total /= T::c(b as f64);
        }
        self.push(
            Op::CrossEntropy {
                labels: labels.to_vec(),
                probs,
                reduction,
            },
            vec![logits],
            vec![],
            vec![total],
        )
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta: [e]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let e = *shape.last().ok_or_else(|| TensorError::dim("layer_norm", "scalar input"))?;
        if self.shape(gamma) != [e] || self.shape(beta) != [e] {
            return Err(TensorError::dim(
                "layer_norm",
                format!("affine params {:?}/{:?} for width {e}", self.shape(gamma), self.shape(beta)),
            ));
        }
        let (xs, gs, bs) = (self.data(x), self.data(gamma), self.data(beta));
        let rows = xs.len() / e;
        let mut xhat = vec![T::zero(); xs.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xs.len()];
        let inv_e = T::one() / T::c(e as f64);
        for r in 0..rows {
            let row = &xs[r * e..(r + 1) * e];
            let mean = row.iter().copied().sum::<T>() * inv_e;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_e;
            let rs = T::one() / (var + T::c(eps)).sqrt();
            rstd[r] = rs;
            for j in 0..e {
                let h = (row[j] - mean) * rs;
                xhat[r * e + j] = h;
                out[r * e + j] = h * gs[j] + bs[j];
            }
        }
        self.push(Op::LayerNorm { xhat, rstd }, vec![x, gamma, beta], shape, out)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().copied().sum();
        self.push(Op::Sum, vec![x], vec![], vec![s])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let d = self.data(x);
        let s = d.iter().copied().sum::<T>() / T::c(d.len() as f64);
        self.push(Op::Mean, vec![x], vec![], vec![s])
    }

    /// Mean over every axis from `keep` on: `[b, c, ...] -> [b, c]` for `keep = 2`.
    pub fn mean_trailing(&mut self, x: Var, keep: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if keep == 0 || keep >= shape.len() {
            return Err(TensorError::dim("mean_trailing", format!("cannot keep {keep} axes of {shape:?}")));
        }
        let inner = numel(&shape[keep..]);
        let scale = T::one() / T::c(inner as f64);
        let data = self.data(x).chunks(inner).map(|c| c.iter().copied().sum::<T>() * scale).collect();
        self.push(Op::MeanTrailing, vec![x], shape[..keep].to_vec(), data)
    }

    /// Non-overlapping average pooling of `[b, c, h, w, d]` with window = stride = `k`.
    pub fn avg_pool3d(&mut self, x: Var, k: [usize; 3]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 5 || k.contains(&0) || (0..3).any(|i| k[i] > shape[2 + i]) {
            return Err(TensorError::dim("avg_pool3d", format!("window {k:?} on input {shape:?}")));
        }
        let inp = [shape[2], shape[3], shape[4]];
        let data = kernels::avg_pool3d(self.data(x), shape[0] * shape[1], inp, k);
        let out = vec![shape[0], shape[1], inp[0] / k[0], inp[1] / k[1], inp[2] / k[2]];
        self.push(Op::AvgPool3d(k), vec![x], out, data)
    }

    /// 3D cross-correlation of `x: [b, c, h, w, d]` with `kernel: [o, c, kh, kw, kd]`.
    pub fn conv3d(&mut self, x: Var, kernel: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(kernel).to_vec());
        if sx.len() != 5 || sk.len() != 5 || sx[1] != sk[1] {
            return Err(TensorError::dim("conv3d", format!("input {sx:?} with kernel {sk:?}")));
        }
        if stride == 0 {
            return Err(TensorError::Config("conv3d stride must be positive".into()));
        }
        if (0..3).any(|i| sk[2 + i] > sx[2 + i] + 2 * pad) {
            return Err(TensorError::dim(
                "conv3d",
                format!("kernel {:?} larger than padded input {:?} (pad {pad})", &sk[2..], &sx[2..]),
            ));
        }
        if let Some(b) = bias {
            if self.shape(b) != [sk[0]] {
                return Err(TensorError::dim("conv3d", format!("bias {:?} for {} filters", self.shape(b), sk[0])));
            }
        }
        let dim = |i: usize| (sx[2 + i] + 2 * pad - sk[2 + i]) / stride + 1;
        let geom = ConvGeom {
            batch: sx[0],
            c_in: sx[1],
            c_out: sk[0],
            inp: [sx[2], sx[3], sx[4]],
            ker: [sk[2], sk[3], sk[4]],
            out: [dim(0), dim(1), dim(2)],
            stride,
            pad,
        };
        let data = kernels::conv3d_forward(&geom, self.data(x), self.data(kernel), bias.map(|b| self.data(b)));
        let shape = vec![geom.batch, geom.c_out, geom.out[0], geom.out[1], geom.out[2]];
        let mut inputs = vec![x, kernel];
        inputs.extend(bias);
        self.push(Op::Conv3d(geom), inputs, shape, data)
    }

    // ----- structural --------------------------------------------------

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Contract("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::dim("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len() || (0..s.len()).any(|i| i != axis && s[i] != base[i]) {
                return Err(TensorError::dim("concat", format!("{base:?} vs {s:?} along axis {axis}")));
            }
            total += s[axis];
        }
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis + 1..]);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let chunk = self.shape(p)[axis] * inner;
                data.extend_from_slice(&self.data(p)[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push(Op::Concat(axis), parts.to_vec(), shape, data)
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(TensorError::dim("slice", format!("[{start}, {}) on axis {axis} of {shape:?}", start + len)));
        }
        let outer = numel(&shape[..axis]);
        let inner = numel(&shape[axis + 1..]);
        let src = self.data(x);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out = shape;
        out[axis] = len;
        self.push(Op::Slice { axis, start }, vec![x], out, data)
    }

    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let src = self.shape(x).to_vec();
        if broadcast_shape(&src, shape).as_deref() != Some(shape) {
            return Err(TensorError::dim("broadcast_to", format!("cannot broadcast {src:?} to {shape:?}")));
        }
        let map = IndexMap::new(&src, shape);
        let d = self.data(x);
        let data = (0..numel(shape)).map(|o| d[map.at(o)]).collect();
        self.push(Op::BroadcastTo, vec![x], shape.to_vec(), data)
    }

    /// Gather rows (axis 0) by index; indices may repeat.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() || rows.is_empty() || rows.iter().any(|&r| r >= shape[0]) {
            return Err(TensorError::dim("select_rows", format!("rows {rows:?} of {shape:?}")));
        }
        let inner = numel(&shape[1..]);
        let src = self.data(x);
        let data = rows.iter().flat_map(|&r| src[r * inner..(r + 1) * inner].iter().copied()).collect();
        let mut out = shape;
        out[0] = rows.len();
        self.push(Op::SelectRows(rows.to_vec()), vec![x], out, data)
    }

    /// Unit-normalize along the last axis. Zero rows are an error.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let e = *shape.last().ok_or_else(|| TensorError::dim("l2_normalize", "scalar input"))?;
        let src = self.data(x);
        let mut norms = Vec::with_capacity(src.len() / e);
        let mut data = Vec::with_capacity(src.len());
        for (r, row) in src.chunks(e).enumerate() {
            let n = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            if n == T::zero() {
                return Err(TensorError::Normalization(format!("row {r} has zero norm")));
            }
            norms.push(n);
            data.extend(row.iter().map(|&v| v / n));
        }
        self.push(Op::L2Normalize(norms), vec![x], shape, data)
    }

    /// `log Σ exp(x)` over the last axis, counting only entries where `mask` is set.
    pub fn logsumexp_masked(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().ok_or_else(|| TensorError::dim("logsumexp_masked", "scalar input"))?;
        if mask.len() != numel(&shape) {
            return Err(TensorError::dim("logsumexp_masked", format!("mask of {} for {shape:?}", mask.len())));
        }
        let src = self.data(x);
        let mut data = Vec::with_capacity(src.len() / c);
        for (r, (row, m)) in src.chunks(c).zip(mask.chunks(c)).enumerate() {
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &on)| on)
                .map(|(&v, _)| v)
                .fold(T::neg_infinity(), T::max);
            if max == T::neg_infinity() {
                return Err(TensorError::Contract(format!("logsumexp_masked: row {r} has no unmasked entry")));
            }
            let s: T = row.iter().zip(m).filter(|(_, &on)| on).map(|(&v, _)| (v - max).exp()).sum();
            data.push(s.ln() + max);
        }
        self.push(Op::LogSumExpMasked(mask.to_vec()), vec![x], shape[..shape.len() - 1].to_vec(), data)
    }

    // ----- backward ----------------------------------------------------

    /// Reverse-mode accumulation from a scalar `root`. Populates the gradient
    /// of every node on a differentiable path; gradients of fan-out nodes sum.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes[root.0].value.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        for node in &mut self.nodes {
            node.value.clear_grad();
            node.reached = false;
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].needs_grad {
                let input_grads = self.local_backward(i, &g);
                for (inp, ig) in self.nodes[i].inputs.clone().into_iter().zip(input_grads) {
                    let Some(ig) = ig else { continue };
                    if !self.nodes[inp.0].needs_grad {
                        continue;
                    }
                    match &mut grads[inp.0] {
                        Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += *b),
                        slot @ None => *slot = Some(ig),
                    }
                }
            }
            self.nodes[i].reached = true;
            self.nodes[i].value.set_grad(g);
        }
        for node in &mut self.nodes {
            if matches!(node.op, Op::Leaf) && node.needs_grad && node.value.grad().is_none() {
                let zeros = vec![T::zero(); node.value.numel()];
                node.value.set_grad(zeros);
            }
        }
        Ok(())
    }

    /// Gradients w.r.t. each input of node `i`, `None` where not needed.
    fn local_backward(&self, i: usize, g: &[T]) -> Vec<Option<Vec<T>>> {
        let node = &self.nodes[i];
        let want: Vec<bool> = node.inputs.iter().map(|v| self.nodes[v.0].needs_grad).collect();
        let inp = |k: usize| &self.nodes[node.inputs[k].0].value;
        let out = &node.value;
        match &node.op {
            Op::Leaf => vec![],
            Op::Add | Op::Sub | Op::Mul => {
                let (a, b) = (inp(0), inp(1));
                let ma = IndexMap::new(a.shape(), out.shape());
                let mb = IndexMap::new(b.shape(), out.shape());
                let mut da = want[0].then(|| vec![T::zero(); a.numel()]);
                let mut db = want[1].then(|| vec![T::zero(); b.numel()]);
                for (o, &gv) in g.iter().enumerate() {
                    let (ia, ib) = (ma.at(o), mb.at(o));
                    let (ga, gb) = match node.op {
                        Op::Add => (gv, gv),
                        Op::Sub => (gv, -gv),
                        _ => (gv * b.data()[ib], gv * a.data()[ia]),
                    };
                    if let Some(da) = &mut da {
                        da[ia] += ga;
                    }
                    if let Some(db) = &mut db {
                        db[ib] += gb;
                    }
                }
                vec![da, db]
            }
            Op::Scale(c) => vec![Some(g.iter().map(|&v| v * *c).collect())],
            Op::MatMul(kind) => {
                let (a, b) = (inp(0), inp(1));
                match *kind {
                    MatMulKind::Shared { rows, k, n } => {
                        let da = want[0].then(|| {
                            let mut d = vec![T::zero(); rows * k];
                            kernels::mm_nt_acc(g, b.data(), &mut d, rows, k, n);
                            d
                        });
                        let db = want[1].then(|| {
                            let mut d = vec![T::zero(); k * n];
                            kernels::mm_tn_acc(a.data(), g, &mut d, rows, k, n);
                            d
                        });
                        vec![da, db]
                    }
                    MatMulKind::Batched { batch, m, k, n } => {
                        let da = want[0].then(|| {
                            let mut d = vec![T::zero(); batch * m * k];
                            for t in 0..batch {
                                kernels::mm_nt_acc(
                                    &g[t * m * n..(t + 1) * m * n],
                                    &b.data()[t * k * n..(t + 1) * k * n],
                                    &mut d[t * m * k..(t + 1) * m * k],
                                    m,
                                    k,
                                    n,
                                );
                            }
                            d
                        });
                        let db = want[1].then(|| {
                            let mut d = vec![T::zero(); batch * k * n];
                            for t in 0..batch {
                                kernels::mm_tn_acc(
                                    &a.data()[t * m * k..(t + 1) * m * k],
                                    &g[t * m * n..(t + 1) * m * n],
                                    &mut d[t * k * n..(t + 1) * k * n],
                                    m,
                                    k,
                                    n,
                                );
                            }
                            d
                        });
                        vec![da, db]
                    }
                }
            }
            Op::Permute(perm) => {
                let inv = kernels::inverse_perm(perm);
                vec![Some(kernels::permute(g, out.shape(), &inv))]
            }
            Op::Reshape | Op::Slice { .. } | Op::Concat(_) | Op::SelectRows(_) | Op::BroadcastTo => {
                self.structural_backward(node, g, &want)
            }
            Op::Relu => {
                let x = inp(0).data();
                vec![Some(g.iter().zip(x).map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() }).collect())]
            }
            Op::Sigmoid => {
                let y = out.data();
                vec![Some(g.iter().zip(y).map(|(&gv, &yv)| gv * yv * (T::one() - yv)).collect())]
            }
            Op::Tanh => {
                let y = out.data();
                vec![Some(g.iter().zip(y).map(|(&gv, &yv)| gv * (T::one() - yv * yv)).collect())]
            }
            Op::Gelu => {
                let x = inp(0).data();
                vec![Some(g.iter().zip(x).map(|(&gv, &xv)| gv * gelu(xv).1).collect())]
            }
            Op::Exp => {
                let y = out.data();
                vec![Some(g.iter().zip(y).map(|(&gv, &yv)| gv * yv).collect())]
            }
            Op::Softmax => {
                let y = out.data();
                let c = *out.shape().last().unwrap_or(&1);
                let mut dx = vec![T::zero(); y.len()];
                for ((dr, yr), gr) in dx.chunks_mut(c).zip(y.chunks(c)).zip(g.chunks(c)) {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..c {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                vec![Some(dx)]
            }
            Op::CrossEntropy {
                labels,
                probs,
                reduction,
            } => {
                let c = inp(0).shape()[1];
                let scale = match reduction {
                    Reduction::Mean => g[0] / T::c(labels.len() as f64),
                    Reduction::Sum => g[0],
                };
                let mut dx: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (n, &y) in labels.iter().enumerate() {
                    dx[n * c + y] -= scale;
                }
                vec![Some(dx)]
            }
            Op::LayerNorm { xhat, rstd } => {
                let gamma = inp(1).data();
                let e = gamma.len();
                let inv_e = T::one() / T::c(e as f64);
                let dx = want[0].then(|| {
                    let mut dx = vec![T::zero(); g.len()];
                    for (r, &rs) in rstd.iter().enumerate() {
                        let gr = &g[r * e..(r + 1) * e];
                        let hr = &xhat[r * e..(r + 1) * e];
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..e {
                            let dh = gr[j] * gamma[j];
                            s1 += dh;
                            s2 += dh * hr[j];
                        }
                        for j in 0..e {
                            let dh = gr[j] * gamma[j];
                            dx[r * e + j] = rs * (dh - s1 * inv_e - hr[j] * s2 * inv_e);
                        }
                    }
                    dx
                });
                let dgamma = want[1].then(|| {
                    let mut d = vec![T::zero(); e];
                    for (gr, hr) in g.chunks(e).zip(xhat.chunks(e)) {
                        for j in 0..e {
                            d[j] += gr[j] * hr[j];
                        }
                    }
                    d
                });
                let dbeta = want[2].then(|| {
                    let mut d = vec![T::zero(); e];
                    for gr in g.chunks(e) {
                        for j in 0..e {
                            d[j] += gr[j];
                        }
                    }
                    d
                });
                vec![dx, dgamma, dbeta]
            }
            Op::Sum => vec![Some(vec![g[0]; inp(0).numel()])],
            Op::Mean => {
                let n = inp(0).numel();
                vec![Some(vec![g[0] / T::c(n as f64); n])]
            }
            Op::MeanTrailing => {
                let n = inp(0).numel();
                let inner = n / out.numel();
                let scale = T::one() / T::c(inner as f64);
                vec![Some((0..n).map(|i| g[i / inner] * scale).collect())]
            }
            Op::AvgPool3d(k) => {
                let s = inp(0).shape();
                vec![Some(kernels::avg_pool3d_backward(g, s[0] * s[1], [s[2], s[3], s[4]], *k))]
            }
            Op::Conv3d(geom) => {
                let want_bias = want.get(2).copied().unwrap_or(false);
                let (dx, dw, db) =
                    kernels::conv3d_backward(geom, inp(0).data(), inp(1).data(), g, [want[0], want[1], want_bias]);
                let mut res = vec![dx, dw];
                if node.inputs.len() == 3 {
                    res.push(db);
                }
                res
            }
            Op::L2Normalize(norms) => {
                let y = out.data();
                let e = y.len() / norms.len();
                let mut dx = vec![T::zero(); y.len()];
                for (r, &nrm) in norms.iter().enumerate() {
                    let (yr, gr) = (&y[r * e..(r + 1) * e], &g[r * e..(r + 1) * e]);
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..e {
                        dx[r * e + j] = (gr[j] - yr[j] * dot) / nrm;
                    }
                }
                vec![Some(dx)]
            }
            Op::LogSumExpMasked(mask) => {
                let x = inp(0).data();
                let c = x.len() / out.numel();
                let lse = out.data();
                let dx = x
                    .iter()
                    .zip(mask)
                    .enumerate()
                    .map(|(i, (&v, &on))| {
                        if on {
                            g[i / c] * (v - lse[i / c]).exp()
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                vec![Some(dx)]
            }
        }
    }

    fn structural_backward(&self, node: &Node<T>, g: &[T], want: &[bool]) -> Vec<Option<Vec<T>>> {
        let out_shape = node.value.shape();
        match &node.op {
            Op::Reshape => vec![Some(g.to_vec())],
            Op::Slice { axis, start } => {
                let src = self.nodes[node.inputs[0].0].value.shape();
                let outer = numel(&src[..*axis]);
                let inner = numel(&src[axis + 1..]);
                let len = out_shape[*axis];
                let mut dx = vec![T::zero(); numel(src)];
                for o in 0..outer {
                    let base = (o * src[*axis] + start) * inner;
                    dx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(dx)]
            }
            Op::Concat(axis) => {
                let outer = numel(&out_shape[..*axis]);
                let inner = numel(&out_shape[axis + 1..]);
                let total = out_shape[*axis] * inner;
                let mut offset = 0;
                node.inputs
                    .iter()
                    .zip(want)
                    .map(|(v, &w)| {
                        let chunk = self.nodes[v.0].value.shape()[*axis] * inner;
                        let res = w.then(|| {
                            let mut d = Vec::with_capacity(outer * chunk);
                            for o in 0..outer {
                                d.extend_from_slice(&g[o * total + offset..o * total + offset + chunk]);
                            }
                            d
                        });
                        offset += chunk;
                        res
                    })
                    .collect()
            }
            Op::SelectRows(rows) => {
                let src = self.nodes[node.inputs[0].0].value.shape();
                let inner = numel(&src[1..]);
                let mut dx = vec![T::zero(); numel(src)];
                for (k, &r) in rows.iter().enumerate() {
                    for j in 0..inner {
                        dx[r * inner + j] += g[k * inner + j];
                    }
                }
                vec![Some(dx)]
            }
            Op::BroadcastTo => {
                let src = self.nodes[node.inputs[0].0].value.shape();
                let map = IndexMap::new(src, out_shape);
                let mut dx = vec![T::zero(); numel(src)];
                for (o, &gv) in g.iter().enumerate() {
                    dx[map.at(o)] += gv;
                }
                vec![Some(dx)]
            }
            _ => unreachable!("not a structural op"),
        }
    }
}

#[inline]
fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// GELU value and derivative (tanh approximation).
#[inline]
fn gelu<T: Real>(x: T) -> (T, T) {
    let k = T::c((2.0 / std::f64::consts::PI).sqrt());
    let a = T::c(0.044715);
    let half = T::c(0.5);
    let inner = k * (x + a * x * x * x);
    let t = inner.tanh();
    let value = half * x * (T::one() + t);
    let d_inner = k * (T::one() + T::c(3.0) * a * x * x);
    let deriv = half * (T::one() + t) + half * x * (T::one() - t * t) * d_inner;
    (value, deriv)
}

fn softmax_row<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_hand_case_and_identity() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let ones = g.constant(t(&[2, 1], &[1.0, 1.0]));
        let y = g.matmul(a, ones).unwrap();
        assert_eq!(g.data(y), &[3.0, 7.0]);
        let eye = g.constant(Tensor::eye(2).unwrap());
        let y = g.matmul(a, eye).unwrap();
        assert_eq!(g.data(y), g.data(a));
    }

    #[test]
    fn matmul_mismatch_names_both_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros([2, 3]).unwrap());
        let b = g.constant(Tensor::zeros([4, 5]).unwrap());
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[4, 5]"), "{err}");
    }

    #[test]
    fn quadratic_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[1], &[3.0]).with_requires_grad(true));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn disconnected_leaf_gets_zero_gradient_and_is_not_reached() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]).with_requires_grad(true));
        let p = g.leaf(t(&[3], &[1.0, 1.0, 1.0]).with_requires_grad(true));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(p).unwrap(), &[0.0, 0.0, 0.0]);
        assert!(!g.is_reached(p));
        assert!(g.is_reached(x));
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]).with_requires_grad(true));
        assert!(matches!(g.backward(x), Err(TensorError::Contract(_))));
    }

    #[test]
    fn cross_entropy_uniform_and_saturated() {
        let mut g = Graph::new();
        let z = g.constant(t(&[1, 2], &[0.3, 0.3]));
        let l = g.cross_entropy(z, &[1], Reduction::Mean).unwrap();
        assert!((g.data(l)[0] - std::f64::consts::LN_2).abs() < 1e-12);
        let z = g.constant(t(&[1, 2], &[1000.0, 0.0]));
        let l = g.cross_entropy(z, &[0], Reduction::Mean).unwrap();
        assert!(g.data(l)[0].abs() < 1e-12 && g.data(l)[0].is_finite());
        assert!(matches!(
            g.cross_entropy(z, &[2], Reduction::Mean),
            Err(TensorError::Validation(_))
        ));
    }

    #[test]
    fn exp_overflow_surfaces_as_error() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1], &[1000.0]));
        assert!(matches!(g.exp(x), Err(TensorError::NonFinite { op: "exp" })));
    }

    #[test]
    fn conv_counting_case() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::ones([1, 1, 4, 4, 4]).unwrap());
        let k = g.constant(Tensor::ones([1, 1, 2, 2, 2]).unwrap());
        let y = g.conv3d(x, k, None, 1, 0).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 3, 3, 3]);
        assert!(g.data(y).iter().all(|&v| v == 8.0));
    }

    #[test]
    fn conv_identity_kernel_and_oversized_kernel() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn([1, 1, 2, 3, 2], |i| i as f64 * 0.5).unwrap());
        let k = g.constant(Tensor::ones([1, 1, 1, 1, 1]).unwrap());
        let y = g.conv3d(x, k, None, 1, 0).unwrap();
        assert_eq!(g.value(y), g.value(x));
        let big = g.constant(Tensor::ones([1, 1, 5, 1, 1]).unwrap());
        assert!(matches!(g.conv3d(x, big, None, 1, 1), Err(TensorError::Dimension { .. })));
    }

    #[test]
    fn logsumexp_masked_needs_an_entry_per_row() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 2], &[0.0, 1.0]));
        assert!(g.logsumexp_masked(x, &[false, false]).is_err());
        let y = g.logsumexp_masked(x, &[false, true]).unwrap();
        assert!((g.data(y)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn l2_normalize_zero_row() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 2], &[1.0, 1.0, 0.0, 0.0]));
        assert!(matches!(g.l2_normalize(x), Err(TensorError::Normalization(_))));
    }
}
