use std::collections::BTreeMap;

use super::gemm::{gemm, MatRef};
use super::tensor::Tensor;
use crate::error::{arg_err, shape_err, Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the right operand of an elementwise op is broadcast.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    None,
    /// `[R×1]` repeated across the columns of an `[R×C]` left operand.
    Column,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Mul,
    Add,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Scale(Var, f64),
    Sum(Var),
    MeanCols(Var),
    Softmax(Var),
    Relu(Var),
    Sigmoid(Var),
    Prelu(Var, Var),
    GlobalLayerNorm { x: Var, gain: Var, bias: Var, mean: f64, inv_std: f64 },
    Conv1d { input: Var, kernel: Var, stride: usize },
    ConvTranspose1d { input: Var, kernel: Var, stride: usize },
    DepthwiseConv1d { input: Var, kernel: Var, dilation: usize },
    MeanPool { x: Var, m: usize },
    Upsample { x: Var, m: usize },
    ConcatRows(Var, Var),
    FitCols(Var),
    NegSisdr { estimate: Var, reference: Var },
    CrossEntropy { logits: Var, label: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    trainable: bool,
}

/// Per-graph operation counters.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OpStats {
    /// Number of forward evaluations per op name.
    pub calls: BTreeMap<&'static str, usize>,
    /// Forward multiply-adds issued by matmul and the convolutions.
    pub madds: u64,
}

impl OpStats {
    pub fn count(&self, op: &str) -> usize {
        self.calls.get(op).copied().unwrap_or(0)
    }
}

/// Variance floor for [`Graph::global_layer_norm`].
pub const NORM_EPS: f64 = 1e-8;
/// Denominator floor inside the negative SiSDR objective.
pub const SISDR_EPS: f64 = 1e-8;

/// Tape of operations recorded during one forward pass.
///
/// Leaves are either constant inputs or trainable parameters. After
/// [`Graph::backward`] each trainable leaf holds `∂loss/∂leaf`; further
/// backward calls accumulate into the same buffers until
/// [`Graph::zero_grad`].
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Tensor>>,
    stats: OpStats,
}

fn col_len(t: &Tensor) -> usize {
    t.cols()
}

fn require_matrix(t: &Tensor, what: &str) -> Result<()> {
    if t.is_matrix() {
        Ok(())
    } else {
        shape_err(format!("{what} expects a matrix, got {:?}", t.shape()))
    }
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

    pub fn stats(&self) -> &OpStats {
        &self.stats
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a trainable leaf, if any backward reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.leaf_grads {
            *g = None;
        }
    }

    /// Constant leaf; no gradient is tracked.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push_leaf(t, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push_leaf(t, true)
    }

    fn push_leaf(&mut self, value: Tensor, trainable: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: trainable, trainable });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        *self.stats.calls.entry(name).or_default() += 1;
        self.nodes.push(Node { value, op, requires_grad, trainable: false });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        require_matrix(av, "matmul")?;
        require_matrix(bv, "matmul")?;
        if av.cols() != bv.rows() {
            return shape_err(format!("matmul {:?} · {:?}", av.shape(), bv.shape()));
        }
        let (p, q, r) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![0.0; p * r];
        gemm(MatRef::new(av.data(), p, q), MatRef::new(bv.data(), q, r), &mut out, 0.0);
        self.stats.madds += (p * q * r) as u64;
        let t = Tensor::new(&[p, r], out)?;
        Ok(self.push("matmul", t, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        require_matrix(self.value(a), "transpose")?;
        let t = self.value(a).transpose();
        Ok(self.push("transpose", t, Op::Transpose(a), &[a]))
    }

    fn bcast_kind(&self, a: Var, b: Var) -> Result<Bcast> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa == sb {
            Ok(Bcast::None)
        } else if sa.len() == 2 && sb.len() == 2 && sb[1] == 1 && sa[0] == sb[0] {
            Ok(Bcast::Column)
        } else {
            shape_err(format!("incompatible elementwise shapes {sa:?} and {sb:?}"))
        }
    }

    /// `a ∘ b` for `∘ ∈ {mul, add}`; `b` may be a column vector broadcast across `a`'s columns.
    pub fn elementwise(&mut self, a: Var, b: Var, op: ElementwiseOp) -> Result<Var> {
        let kind = self.bcast_kind(a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let f = match op {
            ElementwiseOp::Mul => |x: f64, y: f64| x * y,
            ElementwiseOp::Add => |x: f64, y: f64| x + y,
        };
        let out: Vec<f64> = match kind {
            Bcast::None => av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect(),
            Bcast::Column => {
                let c = av.cols();
                av.data().iter().enumerate().map(|(i, &x)| f(x, bv.data()[i / c])).collect()
            }
        };
        let t = Tensor::new(av.shape(), out)?;
        Ok(match op {
            ElementwiseOp::Mul => self.push("mul", t, Op::Mul(a, b, kind), &[a, b]),
            ElementwiseOp::Add => self.push("add", t, Op::Add(a, b, kind), &[a, b]),
        })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, ElementwiseOp::Mul)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, ElementwiseOp::Add)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|x| c * x);
        self.push("scale", t, Op::Scale(a, c), &[a])
    }

    /// Sum of all entries, as a `[1×1]` scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).sum());
        self.push("sum", t, Op::Sum(a), &[a])
    }

    /// Row means: `[N×T] → [N×1]`.
    pub fn mean_cols(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        require_matrix(av, "mean_cols")?;
        let c = av.cols();
        if c == 0 {
            return shape_err("mean_cols of an empty matrix");
        }
        let out: Vec<f64> = av.data().chunks(c).map(|r| r.iter().sum::<f64>() / c as f64).collect();
        let t = Tensor::new(&[av.rows(), 1], out)?;
        Ok(self.push("mean_cols", t, Op::MeanCols(a), &[a]))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        require_matrix(av, "softmax")?;
        if av.data().iter().any(|x| x.is_nan()) {
            return Err(Error::Numeric("softmax input contains NaN".into()));
        }
        let c = av.cols();
        let mut out = Vec::with_capacity(av.len());
        for row in av.data().chunks(c) {
            let m = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let start = out.len();
            out.extend(row.iter().map(|&x| (x - m).exp()));
            let z: f64 = out[start..].iter().sum();
            for v in &mut out[start..] {
                *v /= z;
            }
        }
        let t = Tensor::new(av.shape(), out)?;
        Ok(self.push("softmax", t, Op::Softmax(a), &[a]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.max(0.0));
        self.push("relu", t, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push("sigmoid", t, Op::Sigmoid(a), &[a])
    }

    /// Parametric ReLU with one shared slope (`[1×1]`).
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        if self.value(slope).len() != 1 {
            return shape_err("prelu slope must be a scalar");
        }
        let a = self.value(slope).item();
        let t = self.value(x).map(|v| if v >= 0.0 { v } else { a * v });
        Ok(self.push("prelu", t, Op::Prelu(x, slope), &[x, slope]))
    }

    /// Normalizes over all `N·T` entries, then applies per-row gain and bias (`[N×1]`).
    pub fn global_layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        require_matrix(xv, "global_layer_norm")?;
        let n = xv.rows();
        for (p, name) in [(gain, "gain"), (bias, "bias")] {
            if self.value(p).shape() != [n, 1] {
                return shape_err(format!(
                    "global_layer_norm {name} must be [{n}, 1], got {:?}",
                    self.value(p).shape()
                ));
            }
        }
        let len = xv.len() as f64;
        let mean = xv.sum() / len;
        let var = xv.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len;
        let inv_std = 1.0 / (var + NORM_EPS).sqrt();
        let c = xv.cols();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let out: Vec<f64> = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| g[i / c] * (v - mean) * inv_std + b[i / c])
            .collect();
        let t = Tensor::new(xv.shape(), out)?;
        Ok(self.push(
            "global_layer_norm",
            t,
            Op::GlobalLayerNorm { x, gain, bias, mean, inv_std },
            &[x, gain, bias],
        ))
    }

    /// Strided cross-correlation without padding.
    ///
    /// `input [C_in×L]`, `kernel [C_out×C_in×K]` → `[C_out×T]`, `T = (L−K)/stride + 1`.
    pub fn conv1d(&mut self, input: Var, kernel: Var, stride: usize) -> Result<Var> {
        let (x, k) = (self.value(input), self.value(kernel));
        require_matrix(x, "conv1d input")?;
        if k.shape().len() != 3 {
            return shape_err(format!("conv1d kernel must be 3-d, got {:?}", k.shape()));
        }
        let (c_out, c_in, kw) = (k.shape()[0], k.shape()[1], k.shape()[2]);
        if x.rows() != c_in {
            return shape_err(format!("conv1d input has {} channels, kernel expects {c_in}", x.rows()));
        }
        if stride == 0 {
            return arg_err("conv1d stride must be positive");
        }
        let l = x.cols();
        if l < kw || kw == 0 {
            return arg_err(format!("conv1d input length {l} shorter than kernel {kw}"));
        }
        let t = (l - kw) / stride + 1;
        let cols = im2col(x.data(), c_in, l, kw, stride, t);
        let mut out = vec![0.0; c_out * t];
        gemm(MatRef::new(k.data(), c_out, c_in * kw), MatRef::new(&cols, c_in * kw, t), &mut out, 0.0);
        self.stats.madds += (c_out * c_in * kw * t) as u64;
        let v = Tensor::new(&[c_out, t], out)?;
        Ok(self.push("conv1d", v, Op::Conv1d { input, kernel, stride }, &[input, kernel]))
    }

    /// Adjoint of [`Graph::conv1d`]: `input [C_in×T]`, `kernel [C_in×C_out×K]` → `[C_out×(T−1)·stride+K]`.
    pub fn conv_transpose1d(&mut self, input: Var, kernel: Var, stride: usize) -> Result<Var> {
        let (x, k) = (self.value(input), self.value(kernel));
        require_matrix(x, "conv_transpose1d input")?;
        if k.shape().len() != 3 {
            return shape_err(format!("conv_transpose1d kernel must be 3-d, got {:?}", k.shape()));
        }
        let (c_in, c_out, kw) = (k.shape()[0], k.shape()[1], k.shape()[2]);
        if x.rows() != c_in {
            return shape_err(format!(
                "conv_transpose1d input has {} channels, kernel expects {c_in}",
                x.rows()
            ));
        }
        if stride == 0 {
            return arg_err("conv_transpose1d stride must be positive");
        }
        let t = x.cols();
        if t == 0 || kw == 0 {
            return arg_err("conv_transpose1d needs at least one frame and a non-empty kernel");
        }
        let l = (t - 1) * stride + kw;
        // cols[(co,k), t] = Σ_ci kernel[ci,(co,k)] · x[ci,t]
        let mut cols = vec![0.0; c_out * kw * t];
        gemm(MatRef::new(k.data(), c_in, c_out * kw).t(), MatRef::new(x.data(), c_in, t), &mut cols, 0.0);
        let out = col2im(&cols, c_out, l, kw, stride, t);
        self.stats.madds += (c_out * c_in * kw * t) as u64;
        let v = Tensor::new(&[c_out, l], out)?;
        Ok(self.push(
            "conv_transpose1d",
            v,
            Op::ConvTranspose1d { input, kernel, stride },
            &[input, kernel],
        ))
    }

    /// Per-channel dilated convolution with length-preserving zero padding.
    ///
    /// `input [C×T]`, `kernel [C×P]` with `P` odd.
    pub fn depthwise_conv1d(&mut self, input: Var, kernel: Var, dilation: usize) -> Result<Var> {
        let (x, k) = (self.value(input), self.value(kernel));
        require_matrix(x, "depthwise_conv1d input")?;
        require_matrix(k, "depthwise_conv1d kernel")?;
        if k.rows() != x.rows() || k.cols() % 2 == 0 {
            return shape_err(format!(
                "depthwise kernel {:?} incompatible with input {:?} (odd width required)",
                k.shape(),
                x.shape()
            ));
        }
        if dilation == 0 {
            return arg_err("dilation must be positive");
        }
        let (c, t, p) = (x.rows(), x.cols(), k.cols());
        let half = (p / 2) as isize;
        let mut out = vec![0.0; c * t];
        for ch in 0..c {
            let xr = &x.data()[ch * t..(ch + 1) * t];
            let kr = &k.data()[ch * p..(ch + 1) * p];
            let or = &mut out[ch * t..(ch + 1) * t];
            for (pi, &w) in kr.iter().enumerate() {
                let off = (pi as isize - half) * dilation as isize;
                let (lo, hi) = valid_range(t, off);
                for j in lo..hi {
                    or[j] += w * xr[(j as isize + off) as usize];
                }
            }
        }
        self.stats.madds += (c * p * t) as u64;
        let v = Tensor::new(&[c, t], out)?;
        Ok(self.push(
            "depthwise_conv1d",
            v,
            Op::DepthwiseConv1d { input, kernel, dilation },
            &[input, kernel],
        ))
    }

    /// Averages consecutive groups of `m` columns; a short final group averages what remains.
    pub fn mean_pool1d(&mut self, x: Var, m: usize) -> Result<Var> {
        if m == 0 {
            return arg_err("pool size must be positive");
        }
        let xv = self.value(x);
        require_matrix(xv, "mean_pool1d")?;
        let (n, t) = (xv.rows(), xv.cols());
        let tm = t.div_ceil(m);
        let mut out = vec![0.0; n * tm];
        for r in 0..n {
            let row = &xv.data()[r * t..(r + 1) * t];
            for (g, chunk) in row.chunks(m).enumerate() {
                out[r * tm + g] = chunk.iter().sum::<f64>() / chunk.len() as f64;
            }
        }
        let v = Tensor::new(&[n, tm], out)?;
        Ok(self.push("mean_pool1d", v, Op::MeanPool { x, m }, &[x]))
    }

    /// Repeats each column `m` times and keeps the first `t` columns.
    pub fn nearest_upsample1d(&mut self, x: Var, m: usize, t: usize) -> Result<Var> {
        let xv = self.value(x);
        require_matrix(xv, "nearest_upsample1d")?;
        if m == 0 || t == 0 || xv.cols() != t.div_ceil(m) {
            return arg_err(format!(
                "cannot upsample {} columns by {m} to {t} (needs ceil(T/M) columns)",
                xv.cols()
            ));
        }
        let (n, tm) = (xv.rows(), xv.cols());
        let mut out = vec![0.0; n * t];
        for r in 0..n {
            for j in 0..t {
                out[r * t + j] = xv.data()[r * tm + j / m];
            }
        }
        let v = Tensor::new(&[n, t], out)?;
        Ok(self.push("nearest_upsample1d", v, Op::Upsample { x, m }, &[x]))
    }

    /// Stacks `a` on top of `b` (equal column counts).
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        require_matrix(av, "concat_rows")?;
        require_matrix(bv, "concat_rows")?;
        if av.cols() != bv.cols() {
            return shape_err(format!("concat_rows {:?} and {:?}", av.shape(), bv.shape()));
        }
        let mut out = av.data().to_vec();
        out.extend_from_slice(bv.data());
        let v = Tensor::new(&[av.rows() + bv.rows(), av.cols()], out)?;
        Ok(self.push("concat_rows", v, Op::ConcatRows(a, b), &[a, b]))
    }

    /// Truncates or zero-pads the column dimension to `cols`.
    pub fn fit_cols(&mut self, a: Var, cols: usize) -> Result<Var> {
        let av = self.value(a);
        require_matrix(av, "fit_cols")?;
        let (r, c) = (av.rows(), av.cols());
        let keep = c.min(cols);
        let mut out = vec![0.0; r * cols];
        for i in 0..r {
            out[i * cols..i * cols + keep].copy_from_slice(&av.data()[i * c..i * c + keep]);
        }
        let v = Tensor::new(&[r, cols], out)?;
        Ok(self.push("fit_cols", v, Op::FitCols(a), &[a]))
    }

    /// Negative SiSDR in dB between `[1×L]` signals, unclamped.
    ///
    /// Both signals are mean-removed first. The gradient flows to `estimate`
    /// only; `reference` is treated as data.
    pub fn neg_sisdr(&mut self, estimate: Var, reference: Var) -> Result<Var> {
        let (e, r) = (self.value(estimate), self.value(reference));
        if e.shape() != r.shape() || !e.is_matrix() || e.rows() != 1 {
            return shape_err(format!("neg_sisdr needs equal [1×L] signals, got {:?} and {:?}", e.shape(), r.shape()));
        }
        let parts = SisdrParts::new(e.data(), r.data())?;
        let loss = -10.0 * (parts.target_energy / (parts.noise_energy + SISDR_EPS)).log10();
        Ok(self.push("neg_sisdr", Tensor::scalar(loss), Op::NegSisdr { estimate, reference }, &[estimate]))
    }

    /// `logsumexp(z) − z[label]` for a vector of logits.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.value(logits);
        if !(z.is_matrix() && (z.rows() == 1 || z.cols() == 1)) {
            return shape_err(format!("cross_entropy expects a vector of logits, got {:?}", z.shape()));
        }
        if label >= z.len() {
            return arg_err(format!("label {label} out of range for {} classes", z.len()));
        }
        let m = z.data().iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let lse = m + z.data().iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        let v = Tensor::scalar(lse - z.data()[label]);
        Ok(self.push("cross_entropy", v, Op::CrossEntropy { logits, label }, &[logits]))
    }

    /// Reverse pass from a scalar `loss`, accumulating into trainable leaves.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return arg_err(format!("backward needs a scalar loss, got {:?}", self.value(loss).shape()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if node.trainable {
                match &mut self.leaf_grads[i] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(Tensor::new(node.value.shape(), g)?),
                }
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| &nodes[v.0].value;
        let needs = |v: Var| nodes[v.0].requires_grad;
        let out = &nodes[i].value;
        let mut acc = |v: Var, contrib: Vec<f64>| {
            if !nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(buf) => buf.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(contrib),
            }
        };
        match nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(a), val(b));
                let (p, q, r) = (av.rows(), av.cols(), bv.cols());
                let gm = MatRef::new(g, p, r);
                if needs(a) {
                    let mut da = vec![0.0; p * q];
                    gemm(gm, MatRef::new(bv.data(), q, r).t(), &mut da, 0.0);
                    acc(a, da);
                }
                if needs(b) {
                    let mut db = vec![0.0; q * r];
                    gemm(MatRef::new(av.data(), p, q).t(), gm, &mut db, 0.0);
                    acc(b, db);
                }
            }
            Op::Transpose(a) => {
                let t = Tensor::new(out.shape(), g.to_vec()).expect("shape").transpose();
                acc(a, t.into_data());
            }
            Op::Add(a, b, kind) => {
                acc(a, g.to_vec());
                match kind {
                    Bcast::None => acc(b, g.to_vec()),
                    Bcast::Column => acc(b, g.chunks(out.cols()).map(|r| r.iter().sum()).collect()),
                }
            }
            Op::Mul(a, b, kind) => {
                let (av, bv) = (val(a), val(b));
                match kind {
                    Bcast::None => {
                        if needs(a) {
                            acc(a, g.iter().zip(bv.data()).map(|(x, y)| x * y).collect());
                        }
                        if needs(b) {
                            acc(b, g.iter().zip(av.data()).map(|(x, y)| x * y).collect());
                        }
                    }
                    Bcast::Column => {
                        let c = out.cols();
                        if needs(a) {
                            acc(a, g.iter().enumerate().map(|(k, x)| x * bv.data()[k / c]).collect());
                        }
                        if needs(b) {
                            let db = g
                                .chunks(c)
                                .zip(av.data().chunks(c))
                                .map(|(gr, ar)| gr.iter().zip(ar).map(|(x, y)| x * y).sum())
                                .collect();
                            acc(b, db);
                        }
                    }
                }
            }
            Op::Scale(a, c) => acc(a, g.iter().map(|x| c * x).collect()),
            Op::Sum(a) => acc(a, vec![g[0]; val(a).len()]),
            Op::MeanCols(a) => {
                let c = col_len(val(a));
                let mut da = Vec::with_capacity(val(a).len());
                for &gi in g {
                    da.extend(std::iter::repeat_n(gi / c as f64, c));
                }
                acc(a, da);
            }
            Op::Softmax(a) => {
                let c = out.cols();
                let mut da = Vec::with_capacity(out.len());
                for (yr, gr) in out.data().chunks(c).zip(g.chunks(c)) {
                    let s: f64 = yr.iter().zip(gr).map(|(y, gg)| y * gg).sum();
                    da.extend(yr.iter().zip(gr).map(|(y, gg)| y * (gg - s)));
                }
                acc(a, da);
            }
            Op::Relu(a) => {
                acc(a, g.iter().zip(val(a).data()).map(|(gg, &x)| if x > 0.0 { *gg } else { 0.0 }).collect());
            }
            Op::Sigmoid(a) => {
                acc(a, g.iter().zip(out.data()).map(|(gg, y)| gg * y * (1.0 - y)).collect());
            }
            Op::Prelu(x, slope) => {
                let s = val(slope).item();
                let xv = val(x).data();
                if needs(x) {
                    acc(x, g.iter().zip(xv).map(|(gg, &v)| if v >= 0.0 { *gg } else { s * gg }).collect());
                }
                if needs(slope) {
                    let ds: f64 = g.iter().zip(xv).filter(|(_, &v)| v < 0.0).map(|(gg, v)| gg * v).sum();
                    acc(slope, vec![ds]);
                }
            }
            Op::GlobalLayerNorm { x, gain, bias, mean, inv_std } => {
                let xv = val(x);
                let c = xv.cols();
                let gn = val(gain).data();
                let xhat: Vec<f64> = xv.data().iter().map(|v| (v - mean) * inv_std).collect();
                if needs(gain) {
                    acc(gain, g.chunks(c).zip(xhat.chunks(c)).map(|(a, b)| a.iter().zip(b).map(|(p, q)| p * q).sum()).collect());
                }
                if needs(bias) {
                    acc(bias, g.chunks(c).map(|r| r.iter().sum()).collect());
                }
                if needs(x) {
                    let n = xv.len() as f64;
                    let gh: Vec<f64> = g.iter().enumerate().map(|(k, gg)| gg * gn[k / c]).collect();
                    let mean_gh = gh.iter().sum::<f64>() / n;
                    let mean_ghx = gh.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n;
                    acc(x, gh.iter().zip(&xhat).map(|(a, xh)| inv_std * (a - mean_gh - xh * mean_ghx)).collect());
                }
            }
            Op::Conv1d { input, kernel, stride } => {
                let (xv, kv) = (val(input), val(kernel));
                let (c_out, c_in, kw) = (kv.shape()[0], kv.shape()[1], kv.shape()[2]);
                let (l, t) = (xv.cols(), out.cols());
                let gm = MatRef::new(g, c_out, t);
                if needs(kernel) {
                    let cols = im2col(xv.data(), c_in, l, kw, stride, t);
                    let mut dk = vec![0.0; c_out * c_in * kw];
                    gemm(gm, MatRef::new(&cols, c_in * kw, t).t(), &mut dk, 0.0);
                    acc(kernel, dk);
                }
                if needs(input) {
                    let mut dcols = vec![0.0; c_in * kw * t];
                    gemm(MatRef::new(kv.data(), c_out, c_in * kw).t(), gm, &mut dcols, 0.0);
                    acc(input, col2im(&dcols, c_in, l, kw, stride, t));
                }
            }
            Op::ConvTranspose1d { input, kernel, stride } => {
                let (xv, kv) = (val(input), val(kernel));
                let (c_in, c_out, kw) = (kv.shape()[0], kv.shape()[1], kv.shape()[2]);
                let (t, l) = (xv.cols(), out.cols());
                let dcols = im2col(g, c_out, l, kw, stride, t);
                let dc = MatRef::new(&dcols, c_out * kw, t);
                if needs(input) {
                    let mut dx = vec![0.0; c_in * t];
                    gemm(MatRef::new(kv.data(), c_in, c_out * kw), dc, &mut dx, 0.0);
                    acc(input, dx);
                }
                if needs(kernel) {
                    let mut dk = vec![0.0; c_in * c_out * kw];
                    gemm(MatRef::new(xv.data(), c_in, t), dc.t(), &mut dk, 0.0);
                    acc(kernel, dk);
                }
            }
            Op::DepthwiseConv1d { input, kernel, dilation } => {
                let (xv, kv) = (val(input), val(kernel));
                let (c, t, p) = (xv.rows(), xv.cols(), kv.cols());
                let half = (p / 2) as isize;
                let mut dx = vec![0.0; c * t];
                let mut dk = vec![0.0; c * p];
                for ch in 0..c {
                    let xr = &xv.data()[ch * t..(ch + 1) * t];
                    let gr = &g[ch * t..(ch + 1) * t];
                    for pi in 0..p {
                        let w = kv.data()[ch * p + pi];
                        let off = (pi as isize - half) * dilation as isize;
                        let (lo, hi) = valid_range(t, off);
                        let mut s = 0.0;
                        for j in lo..hi {
                            let src = (j as isize + off) as usize;
                            dx[ch * t + src] += gr[j] * w;
                            s += gr[j] * xr[src];
                        }
                        dk[ch * p + pi] = s;
                    }
                }
                acc(input, dx);
                acc(kernel, dk);
            }
            Op::MeanPool { x, m } => {
                let (n, t) = (val(x).rows(), val(x).cols());
                let tm = out.cols();
                let mut dx = vec![0.0; n * t];
                for r in 0..n {
                    for j in 0..t {
                        let grp = j / m;
                        let size = (t - grp * m).min(m) as f64;
                        dx[r * t + j] = g[r * tm + grp] / size;
                    }
                }
                acc(x, dx);
            }
            Op::Upsample { x, m } => {
                let (n, tm) = (val(x).rows(), val(x).cols());
                let t = out.cols();
                let mut dx = vec![0.0; n * tm];
                for r in 0..n {
                    for j in 0..t {
                        dx[r * tm + j / m] += g[r * t + j];
                    }
                }
                acc(x, dx);
            }
            Op::ConcatRows(a, b) => {
                let split = val(a).len();
                acc(a, g[..split].to_vec());
                acc(b, g[split..].to_vec());
            }
            Op::FitCols(a) => {
                let (r, c) = (val(a).rows(), val(a).cols());
                let cols = out.cols();
                let keep = c.min(cols);
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    da[i * c..i * c + keep].copy_from_slice(&g[i * cols..i * cols + keep]);
                }
                acc(a, da);
            }
            Op::NegSisdr { estimate, reference } => {
                let parts = SisdrParts::new(val(estimate).data(), val(reference).data())
                    .expect("validated in forward");
                acc(estimate, parts.neg_sisdr_grad(g[0]));
            }
            Op::CrossEntropy { logits, label } => {
                let z = val(logits).data();
                let m = z.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                let ex: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
                let s: f64 = ex.iter().sum();
                let mut dz: Vec<f64> = ex.iter().map(|e| g[0] * e / s).collect();
                dz[label] -= g[0];
                acc(logits, dz);
            }
        }
    }
}

/// Output positions `j` for which `j + off` lies in `[0, t)`.
fn valid_range(t: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (t as isize - off).clamp(0, t as isize) as usize;
    (lo.min(hi), hi)
}

/// `cols[(c,k), j] = x[c, j·stride + k]`.
fn im2col(x: &[f64], c_in: usize, l: usize, kw: usize, stride: usize, t: usize) -> Vec<f64> {
    let mut cols = vec![0.0; c_in * kw * t];
    for c in 0..c_in {
        let xr = &x[c * l..(c + 1) * l];
        for k in 0..kw {
            let row = &mut cols[(c * kw + k) * t..(c * kw + k + 1) * t];
            for (j, v) in row.iter_mut().enumerate() {
                *v = xr[j * stride + k];
            }
        }
    }
    cols
}

/// Overlap-add inverse of [`im2col`].
fn col2im(cols: &[f64], c: usize, l: usize, kw: usize, stride: usize, t: usize) -> Vec<f64> {
    let mut out = vec![0.0; c * l];
    for ch in 0..c {
        let orow = &mut out[ch * l..(ch + 1) * l];
        for k in 0..kw {
            let row = &cols[(ch * kw + k) * t..(ch * kw + k + 1) * t];
            for (j, v) in row.iter().enumerate() {
                orow[j * stride + k] += v;
            }
        }
    }
    out
}

/// Projection quantities shared by the SiSDR forward and backward passes.
pub(crate) struct SisdrParts {
    /// Mean-removed estimate.
    est: Vec<f64>,
    /// Scaled projection of the estimate onto the mean-removed reference.
    target: Vec<f64>,
    pub target_energy: f64,
    pub noise_energy: f64,
}

impl SisdrParts {
    pub fn new(estimate: &[f64], reference: &[f64]) -> Result<Self> {
        let center = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len().max(1) as f64;
            v.iter().map(|x| x - m).collect::<Vec<f64>>()
        };
        let est = center(estimate);
        let refc = center(reference);
        let ref_energy: f64 = refc.iter().map(|x| x * x).sum();
        if ref_energy <= 0.0 {
            return arg_err("SiSDR reference has zero energy");
        }
        let alpha = est.iter().zip(&refc).map(|(a, b)| a * b).sum::<f64>() / ref_energy;
        let target: Vec<f64> = refc.iter().map(|x| alpha * x).collect();
        let target_energy = target.iter().map(|x| x * x).sum();
        let noise_energy = est.iter().zip(&target).map(|(e, s)| (e - s) * (e - s)).sum();
        Ok(Self { est, target, target_energy, noise_energy })
    }

    /// `upstream · ∂(−SiSDR)/∂estimate`.
    fn neg_sisdr_grad(&self, upstream: f64) -> Vec<f64> {
        let k = -10.0 / std::f64::consts::LN_10 * upstream;
        let ns = self.noise_energy + SISDR_EPS;
        let g: Vec<f64> = self
            .est
            .iter()
            .zip(&self.target)
            .map(|(e, s)| k * (2.0 * s / self.target_energy - 2.0 * (e - s) / ns))
            .collect();
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        g.into_iter().map(|x| x - mean).collect()
    }
}
