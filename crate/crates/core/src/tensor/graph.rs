use rand::Rng;

use super::{shape_err, split_axis, Tensor, TensorError};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch-norm statistics tracked across training steps.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNormSettings {
    pub eps: f64,
    /// Weight of the current batch in the running-stat moving average.
    pub momentum: f64,
}

impl Default for BatchNormSettings {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

pub enum BatchNormMode<'a> {
    Train(&'a mut RunningStats),
    Eval(&'a RunningStats),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d {
        input: Var,
        kernels: Var,
        bias: Var,
        stride: usize,
        lead: usize,
        rows: usize,
        len: usize,
        out_len: usize,
    },
    AvgPool {
        input: Var,
        window: usize,
        stride: usize,
        len: usize,
        out_len: usize,
    },
    Activation {
        input: Var,
        slope: f64,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        axis: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        a_batched: bool,
        b_batched: bool,
        m: usize,
        k: usize,
        n: usize,
    },
    Binary {
        a: Var,
        b: Var,
        kind: BinaryKind,
        a_map: Option<Vec<usize>>,
        b_map: Option<Vec<usize>>,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
        sizes: Vec<usize>,
    },
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Dropout {
        input: Var,
        mask: Vec<f64>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Reshape {
        input: Var,
    },
    AxisWeightedSum {
        input: Var,
        weights: Var,
        axis: usize,
    },
    GroupMean {
        input: Var,
        axis: usize,
        groups: Vec<Vec<usize>>,
    },
    SymmetricFromTriu {
        input: Var,
        n: usize,
    },
    Sum {
        input: Var,
    },
    Element {
        input: Var,
        index: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of recorded operations. Nodes are appended in evaluation order, so
/// every operation's inputs precede it.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `var`; all zeros when the loss does not depend on it.
    pub fn wrt(&self, var: Var) -> Tensor {
        let shape = self.shapes[var.0].clone();
        match &self.grads[var.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn is_reached(&self, var: Var) -> bool {
        self.grads[var.0].is_some()
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn data(&self, var: Var) -> &[f64] {
        self.nodes[var.0].value.data()
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|&v| self.needs(v));
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Registers a leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> Result<Var, TensorError> {
        self.leaf(value, true)
    }

    /// Registers a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var, TensorError> {
        self.leaf(value, false)
    }

    /// Valid (unpadded) 1-D convolution along the last axis.
    ///
    /// `input` is `[..., rows, len]`, `kernels` is `[t, kw]`, `bias` is `[t]`;
    /// the result is `[..., t, rows, out_len]` with
    /// `out_len = (len - kw) / stride + 1`.
    pub fn conv1d_valid(
        &mut self,
        input: Var,
        kernels: Var,
        bias: Var,
        stride: usize,
    ) -> Result<Var, TensorError> {
        const OP: &str = "conv1d_valid";
        let ishape = self.shape(input).to_vec();
        let kshape = self.shape(kernels).to_vec();
        if ishape.len() < 2 {
            return Err(shape_err(OP, format!("input must be [..., rows, len], got {ishape:?}")));
        }
        if kshape.len() != 2 {
            return Err(shape_err(OP, format!("kernels must be [t, kw], got {kshape:?}")));
        }
        let (t, kw) = (kshape[0], kshape[1]);
        if self.shape(bias) != [t] {
            return Err(shape_err(OP, format!("bias must be [{t}], got {:?}", self.shape(bias))));
        }
        if stride == 0 {
            return Err(TensorError::InvalidArgument {
                op: OP,
                detail: "stride must be >= 1".into(),
            });
        }
        let rank = ishape.len();
        let (rows, len) = (ishape[rank - 2], ishape[rank - 1]);
        if kw > len {
            return Err(shape_err(OP, format!("kernel width {kw} exceeds input length {len}")));
        }
        if !self.value(input).is_finite() {
            return Err(TensorError::NonFinite { op: OP });
        }
        let lead: usize = ishape[..rank - 2].iter().product();
        let out_len = (len - kw) / stride + 1;
        let x = self.data(input);
        let k = self.data(kernels);
        let b = self.data(bias);
        let mut out = vec![0.0; lead * t * rows * out_len];
        for l in 0..lead {
            for j in 0..t {
                let kj = &k[j * kw..(j + 1) * kw];
                for r in 0..rows {
                    let xr = &x[(l * rows + r) * len..(l * rows + r + 1) * len];
                    let base = ((l * t + j) * rows + r) * out_len;
                    for (o, slot) in out[base..base + out_len].iter_mut().enumerate() {
                        let window = &xr[o * stride..o * stride + kw];
                        let mut acc = b[j];
                        for (xv, kv) in window.iter().zip(kj) {
                            acc += xv * kv;
                        }
                        *slot = acc;
                    }
                }
            }
        }
        let mut oshape = ishape[..rank - 2].to_vec();
        oshape.extend_from_slice(&[t, rows, out_len]);
        let value = Tensor::new(oshape, out)?;
        Ok(self.push(
            value,
            Op::Conv1d {
                input,
                kernels,
                bias,
                stride,
                lead,
                rows,
                len,
                out_len,
            },
            &[input, kernels, bias],
        ))
    }

    /// Average pooling along the last axis.
    pub fn avg_pool1d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var, TensorError> {
        const OP: &str = "avg_pool1d";
        if window == 0 || stride == 0 {
            return Err(TensorError::InvalidArgument {
                op: OP,
                detail: "window and stride must be >= 1".into(),
            });
        }
        let shape = self.shape(input).to_vec();
        let len = *shape.last().expect("rank >= 1");
        if window > len {
            return Err(shape_err(OP, format!("window {window} exceeds length {len}")));
        }
        let out_len = (len - window) / stride + 1;
        let rows = self.value(input).len() / len;
        let x = self.data(input);
        let inv = 1.0 / window as f64;
        let mut out = Vec::with_capacity(rows * out_len);
        for r in 0..rows {
            let xr = &x[r * len..(r + 1) * len];
            for o in 0..out_len {
                let s: f64 = xr[o * stride..o * stride + window].iter().sum();
                out.push(s * inv);
            }
        }
        let mut oshape = shape;
        *oshape.last_mut().unwrap() = out_len;
        let value = Tensor::new(oshape, out)?;
        Ok(self.push(
            value,
            Op::AvgPool {
                input,
                window,
                stride,
                len,
                out_len,
            },
            &[input],
        ))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var, TensorError> {
        self.activation(input, 0.0)
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&slope) {
            return Err(TensorError::InvalidArgument {
                op: "leaky_relu",
                detail: format!("slope must lie in [0, 1), got {slope}"),
            });
        }
        self.activation(input, slope)
    }

    fn activation(&mut self, input: Var, slope: f64) -> Result<Var, TensorError> {
        let x = self.value(input);
        let data = x
            .data()
            .iter()
            .map(|&v| if v >= 0.0 { v } else { slope * v })
            .collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Activation { input, slope }, &[input]))
    }

    /// Batch normalization with one statistic per index of `axis`, reduced over
    /// every other axis. Axis 0 is treated as the batch axis.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        axis: usize,
        mode: BatchNormMode<'_>,
        settings: BatchNormSettings,
    ) -> Result<Var, TensorError> {
        const OP: &str = "batch_norm";
        let shape = self.shape(input).to_vec();
        if axis >= shape.len() {
            return Err(shape_err(OP, format!("axis {axis} out of range for {shape:?}")));
        }
        let (outer, chans, inner) = split_axis(&shape, axis);
        if self.shape(gamma) != [chans] || self.shape(beta) != [chans] {
            return Err(shape_err(
                OP,
                format!(
                    "gamma/beta must be [{chans}], got {:?}/{:?}",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        let count = outer * inner;
        let x = self.data(input);
        let (mean, var, train) = match mode {
            BatchNormMode::Train(running) => {
                let batch = if axis == 0 { inner } else { shape[0] };
                if batch < 2 || count < 2 {
                    return Err(TensorError::Contract {
                        op: OP,
                        detail: format!("train mode needs a batch of at least 2, got {batch}"),
                    });
                }
                if running.len() != chans {
                    return Err(shape_err(OP, "running stats length mismatch"));
                }
                let mut mean = vec![0.0; chans];
                let mut var = vec![0.0; chans];
                for (c, (m, v)) in mean.iter_mut().zip(var.iter_mut()).enumerate() {
                    let mut s = 0.0;
                    for o in 0..outer {
                        let base = (o * chans + c) * inner;
                        s += x[base..base + inner].iter().sum::<f64>();
                    }
                    *m = s / count as f64;
                    let mut ss = 0.0;
                    for o in 0..outer {
                        let base = (o * chans + c) * inner;
                        ss += x[base..base + inner].iter().map(|v| (v - *m) * (v - *m)).sum::<f64>();
                    }
                    *v = ss / count as f64;
                }
                let unbias = count as f64 / (count as f64 - 1.0);
                let mom = settings.momentum;
                for c in 0..chans {
                    running.mean[c] = (1.0 - mom) * running.mean[c] + mom * mean[c];
                    running.var[c] = (1.0 - mom) * running.var[c] + mom * var[c] * unbias;
                }
                (mean, var, true)
            }
            BatchNormMode::Eval(running) => {
                if running.len() != chans {
                    return Err(shape_err(OP, "running stats length mismatch"));
                }
                (running.mean.clone(), running.var.clone(), false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + settings.eps).sqrt()).collect();
        let g = self.data(gamma);
        let bt = self.data(beta);
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for c in 0..chans {
                let base = (o * chans + c) * inner;
                for i in base..base + inner {
                    let h = (x[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    out[i] = g[c] * h + bt[c];
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                axis,
                xhat,
                inv_std,
                train,
            },
            &[input, gamma, beta],
        ))
    }

    /// Matrix product of rank-2 or rank-3 operands. A rank-2 operand is shared
    /// across the batch of a rank-3 partner.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        const OP: &str = "matmul";
        let ashape = self.shape(a).to_vec();
        let bshape = self.shape(b).to_vec();
        let split = |s: &[usize]| -> Option<(Option<usize>, usize, usize)> {
            match s.len() {
                2 => Some((None, s[0], s[1])),
                3 => Some((Some(s[0]), s[1], s[2])),
                _ => None,
            }
        };
        let (Some((ab, m, k)), Some((bb, k2, n))) = (split(&ashape), split(&bshape)) else {
            return Err(shape_err(OP, format!("operands must be rank 2 or 3: {ashape:?} x {bshape:?}")));
        };
        if k != k2 {
            return Err(shape_err(OP, format!("inner extents differ: {ashape:?} x {bshape:?}")));
        }
        let batch = match (ab, bb) {
            (Some(x), Some(y)) if x != y => {
                return Err(shape_err(OP, format!("batch extents differ: {x} vs {y}")));
            }
            (Some(x), _) | (None, Some(x)) => Some(x),
            (None, None) => None,
        };
        let nb = batch.unwrap_or(1);
        let ad = self.data(a);
        let bd = self.data(b);
        let mut out = vec![0.0; nb * m * n];
        for bi in 0..nb {
            let aoff = if ab.is_some() { bi * m * k } else { 0 };
            let boff = if bb.is_some() { bi * k * n } else { 0 };
            let c = &mut out[bi * m * n..(bi + 1) * m * n];
            gemm_acc(&ad[aoff..aoff + m * k], &bd[boff..boff + k * n], c, m, k, n);
        }
        let oshape = match batch {
            Some(x) => vec![x, m, n],
            None => vec![m, n],
        };
        let value = Tensor::new(oshape, out)?;
        Ok(self.push(
            value,
            Op::MatMul {
                a,
                b,
                batch: nb,
                a_batched: ab.is_some(),
                b_batched: bb.is_some(),
                m,
                k,
                n,
            },
            &[a, b],
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, BinaryKind::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, BinaryKind::Sub)
    }

    /// Elementwise (Hadamard) product.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, BinaryKind::Mul)
    }

    fn binary(&mut self, a: Var, b: Var, kind: BinaryKind) -> Result<Var, TensorError> {
        let ashape = self.shape(a).to_vec();
        let bshape = self.shape(b).to_vec();
        let oshape = broadcast_shape(&ashape, &bshape).ok_or_else(|| {
            shape_err("elementwise", format!("cannot broadcast {ashape:?} with {bshape:?}"))
        })?;
        let a_map = (ashape != oshape).then(|| broadcast_map(&oshape, &ashape));
        let b_map = (bshape != oshape).then(|| broadcast_map(&oshape, &bshape));
        let ad = self.data(a);
        let bd = self.data(b);
        let numel: usize = oshape.iter().product();
        let f = |x: f64, y: f64| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
        };
        let out: Vec<f64> = (0..numel)
            .map(|i| {
                let x = ad[a_map.as_ref().map_or(i, |m| m[i])];
                let y = bd[b_map.as_ref().map_or(i, |m| m[i])];
                f(x, y)
            })
            .collect();
        let value = Tensor::new(oshape, out)?;
        Ok(self.push(
            value,
            Op::Binary {
                a,
                b,
                kind,
                a_map,
                b_map,
            },
            &[a, b],
        ))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        const OP: &str = "concat";
        let first = parts.first().ok_or_else(|| shape_err(OP, "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(shape_err(OP, format!("axis {axis} out of range for {base:?}")));
        }
        let mut sizes = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(shape_err(OP, format!("{s:?} incompatible with {base:?} on axis {axis}")));
            }
            sizes.push(s[axis]);
        }
        let total: usize = sizes.iter().sum();
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &sz) in parts.iter().zip(&sizes) {
                let d = self.data(p);
                out.extend_from_slice(&d[o * sz * inner..(o + 1) * sz * inner]);
            }
        }
        let mut oshape = base;
        oshape[axis] = total;
        let value = Tensor::new(oshape, out)?;
        Ok(self.push(
            value,
            Op::Concat {
                inputs: parts.to_vec(),
                axis,
                sizes,
            },
            parts,
        ))
    }

    pub fn slice(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var, TensorError> {
        let value = self.value(input).slice_axis(axis, start, len)?;
        Ok(self.push(value, Op::Slice { input, axis, start }, &[input]))
    }

    /// Inverted dropout. Eval mode and `rate == 0` return `input` itself.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        input: Var,
        rate: f64,
        train: bool,
        rng: &mut R,
    ) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::InvalidArgument {
                op: "dropout",
                detail: format!("rate must lie in [0, 1), got {rate}"),
            });
        }
        if !train || rate == 0.0 {
            return Ok(input);
        }
        let scale = 1.0 / (1.0 - rate);
        let x = self.value(input);
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { scale })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Dropout { input, mask }, &[input]))
    }

    /// Mean cross-entropy of row-wise softmax over `logits: [batch, classes]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, TensorError> {
        const OP: &str = "softmax_cross_entropy";
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(shape_err(
                OP,
                format!("logits {shape:?} do not match {} labels", labels.len()),
            ));
        }
        let classes = shape[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(TensorError::InvalidArgument {
                op: OP,
                detail: format!("label {bad} out of range for {classes} classes"),
            });
        }
        let probs = softmax_rows(self.value(logits))?.into_data();
        let z = self.data(logits);
        let mut loss = 0.0;
        for (r, &l) in labels.iter().enumerate() {
            let row = &z[r * classes..(r + 1) * classes];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss -= row[l] - max - lse;
        }
        loss /= labels.len() as f64;
        let value = Tensor::scalar(loss);
        Ok(self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(input).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { input }, &[input]))
    }

    /// Contracts `axis` against `weights`, removing it:
    /// `out[.., ..] = sum_j weights[j] * input[.., j, ..]`.
    pub fn axis_weighted_sum(&mut self, input: Var, weights: Var, axis: usize) -> Result<Var, TensorError> {
        const OP: &str = "axis_weighted_sum";
        let shape = self.shape(input).to_vec();
        if axis >= shape.len() || shape.len() < 2 {
            return Err(shape_err(OP, format!("axis {axis} invalid for {shape:?}")));
        }
        let (outer, ext, inner) = split_axis(&shape, axis);
        if self.shape(weights) != [ext] {
            return Err(shape_err(
                OP,
                format!("weights must be [{ext}], got {:?}", self.shape(weights)),
            ));
        }
        let x = self.data(input);
        let w = self.data(weights);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for (j, &wj) in w.iter().enumerate() {
                let src = &x[(o * ext + j) * inner..(o * ext + j + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += wj * s;
                }
            }
        }
        let mut oshape = shape;
        oshape.remove(axis);
        let value = Tensor::new(oshape, out)?;
        Ok(self.push(value, Op::AxisWeightedSum { input, weights, axis }, &[input, weights]))
    }

    /// Replaces `axis` by one mean per group of indices along it.
    pub fn group_mean(&mut self, input: Var, axis: usize, groups: &[Vec<usize>]) -> Result<Var, TensorError> {
        const OP: &str = "group_mean";
        let shape = self.shape(input).to_vec();
        if axis >= shape.len() {
            return Err(shape_err(OP, format!("axis {axis} invalid for {shape:?}")));
        }
        let (outer, ext, inner) = split_axis(&shape, axis);
        if groups.is_empty() || groups.iter().any(|g| g.is_empty()) {
            return Err(shape_err(OP, "groups must be non-empty"));
        }
        if let Some(bad) = groups.iter().flatten().find(|&&i| i >= ext) {
            return Err(shape_err(OP, format!("index {bad} out of range for extent {ext}")));
        }
        let x = self.data(input);
        let p = groups.len();
        let mut out = vec![0.0; outer * p * inner];
        for o in 0..outer {
            for (gi, group) in groups.iter().enumerate() {
                let dst = &mut out[(o * p + gi) * inner..(o * p + gi + 1) * inner];
                for &r in group {
                    let src = &x[(o * ext + r) * inner..(o * ext + r + 1) * inner];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
                let inv = 1.0 / group.len() as f64;
                dst.iter_mut().for_each(|d| *d *= inv);
            }
        }
        let mut oshape = shape;
        oshape[axis] = p;
        let value = Tensor::new(oshape, out)?;
        Ok(self.push(
            value,
            Op::GroupMean {
                input,
                axis,
                groups: groups.to_vec(),
            },
            &[input],
        ))
    }

    /// Builds an `n x n` symmetric matrix from its row-major upper triangle
    /// (diagonal included). Both mirrored entries read the same stored value.
    pub fn symmetric_from_triu(&mut self, input: Var, n: usize) -> Result<Var, TensorError> {
        let expected = n * (n + 1) / 2;
        if n == 0 || self.shape(input) != [expected] {
            return Err(shape_err(
                "symmetric_from_triu",
                format!("{n}x{n} needs {expected} parameters, got {:?}", self.shape(input)),
            ));
        }
        let p = self.data(input);
        let mut out = vec![0.0; n * n];
        let mut idx = 0;
        for i in 0..n {
            for j in i..n {
                out[i * n + j] = p[idx];
                out[j * n + i] = p[idx];
                idx += 1;
            }
        }
        let value = Tensor::new(vec![n, n], out)?;
        Ok(self.push(value, Op::SymmetricFromTriu { input, n }, &[input]))
    }

    pub fn sum(&mut self, input: Var) -> Result<Var, TensorError> {
        let s = self.data(input).iter().sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum { input }, &[input]))
    }

    /// Scalar node holding `input`'s element at a multi-index.
    pub fn element(&mut self, input: Var, index: &[usize]) -> Result<Var, TensorError> {
        let shape = self.shape(input);
        if index.len() != shape.len() || index.iter().zip(shape).any(|(i, e)| i >= e) {
            return Err(shape_err("element", format!("index {index:?} invalid for {shape:?}")));
        }
        let flat = index.iter().zip(shape).fold(0, |acc, (i, e)| acc * e + i);
        let v = self.data(input)[flat];
        Ok(self.push(Tensor::scalar(v), Op::Element { input, index: flat }, &[input]))
    }

    /// Reverse sweep from a scalar `loss`. The graph can be swept once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, TensorError> {
        if self.consumed {
            return Err(TensorError::GraphConsumed);
        }
        let lshape = self.shape(loss);
        if lshape != [1] {
            return Err(TensorError::NotScalar(lshape.to_vec()));
        }
        self.consumed = true;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(slot);
        };
        match &nodes[i].op {
            Op::Leaf => {}
            &Op::Conv1d {
                input,
                kernels,
                bias,
                stride,
                lead,
                rows,
                len,
                out_len,
            } => {
                let x = self.data(input);
                let k = self.data(kernels);
                let kw = self.shape(kernels)[1];
                let t = self.shape(kernels)[0];
                acc(input, &mut |dx| {
                    for l in 0..lead {
                        for j in 0..t {
                            let kj = &k[j * kw..(j + 1) * kw];
                            for r in 0..rows {
                                let gbase = ((l * t + j) * rows + r) * out_len;
                                let xbase = (l * rows + r) * len;
                                for o in 0..out_len {
                                    let go = g[gbase + o];
                                    if go == 0.0 {
                                        continue;
                                    }
                                    let dst = &mut dx[xbase + o * stride..xbase + o * stride + kw];
                                    for (d, kv) in dst.iter_mut().zip(kj) {
                                        *d += go * kv;
                                    }
                                }
                            }
                        }
                    }
                });
                acc(kernels, &mut |dk| {
                    for l in 0..lead {
                        for j in 0..t {
                            let dkj = &mut dk[j * kw..(j + 1) * kw];
                            for r in 0..rows {
                                let gbase = ((l * t + j) * rows + r) * out_len;
                                let xbase = (l * rows + r) * len;
                                for o in 0..out_len {
                                    let go = g[gbase + o];
                                    if go == 0.0 {
                                        continue;
                                    }
                                    let src = &x[xbase + o * stride..xbase + o * stride + kw];
                                    for (d, xv) in dkj.iter_mut().zip(src) {
                                        *d += go * xv;
                                    }
                                }
                            }
                        }
                    }
                });
                acc(bias, &mut |db| {
                    for l in 0..lead {
                        for (j, dbj) in db.iter_mut().enumerate() {
                            let base = (l * t + j) * rows * out_len;
                            *dbj += g[base..base + rows * out_len].iter().sum::<f64>();
                        }
                    }
                });
            }
            &Op::AvgPool {
                input,
                window,
                stride,
                len,
                out_len,
            } => {
                let inv = 1.0 / window as f64;
                acc(input, &mut |dx| {
                    let rows = dx.len() / len;
                    for r in 0..rows {
                        for o in 0..out_len {
                            let go = g[r * out_len + o] * inv;
                            let base = r * len + o * stride;
                            dx[base..base + window].iter_mut().for_each(|d| *d += go);
                        }
                    }
                });
            }
            &Op::Activation { input, slope } => {
                let x = self.data(input);
                acc(input, &mut |dx| {
                    for ((d, &xv), &gv) in dx.iter_mut().zip(x).zip(g) {
                        *d += if xv >= 0.0 { gv } else { slope * gv };
                    }
                });
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                axis,
                xhat,
                inv_std,
                train,
            } => {
                let (outer, chans, inner) = split_axis(self.shape(*input), *axis);
                let count = (outer * inner) as f64;
                let gm = self.data(*gamma);
                let mut sum_g = vec![0.0; chans];
                let mut sum_gx = vec![0.0; chans];
                for o in 0..outer {
                    for c in 0..chans {
                        let base = (o * chans + c) * inner;
                        for idx in base..base + inner {
                            sum_g[c] += g[idx];
                            sum_gx[c] += g[idx] * xhat[idx];
                        }
                    }
                }
                acc(*gamma, &mut |dg| {
                    dg.iter_mut().zip(&sum_gx).for_each(|(d, s)| *d += s);
                });
                acc(*beta, &mut |db| {
                    db.iter_mut().zip(&sum_g).for_each(|(d, s)| *d += s);
                });
                acc(*input, &mut |dx| {
                    for o in 0..outer {
                        for c in 0..chans {
                            let base = (o * chans + c) * inner;
                            let scale = gm[c] * inv_std[c];
                            for idx in base..base + inner {
                                dx[idx] += if *train {
                                    scale * (g[idx] - sum_g[c] / count - xhat[idx] * sum_gx[c] / count)
                                } else {
                                    scale * g[idx]
                                };
                            }
                        }
                    }
                });
            }
            &Op::MatMul {
                a,
                b,
                batch,
                a_batched,
                b_batched,
                m,
                k,
                n,
            } => {
                let ad = self.data(a);
                let bd = self.data(b);
                acc(a, &mut |da| {
                    for bi in 0..batch {
                        let boff = if b_batched { bi * k * n } else { 0 };
                        let aoff = if a_batched { bi * m * k } else { 0 };
                        let gc = &g[bi * m * n..(bi + 1) * m * n];
                        let bm = &bd[boff..boff + k * n];
                        let dst = &mut da[aoff..aoff + m * k];
                        for i in 0..m {
                            for p in 0..k {
                                let mut s = 0.0;
                                for j in 0..n {
                                    s += gc[i * n + j] * bm[p * n + j];
                                }
                                dst[i * k + p] += s;
                            }
                        }
                    }
                });
                acc(b, &mut |db| {
                    for bi in 0..batch {
                        let aoff = if a_batched { bi * m * k } else { 0 };
                        let boff = if b_batched { bi * k * n } else { 0 };
                        let gc = &g[bi * m * n..(bi + 1) * m * n];
                        let am = &ad[aoff..aoff + m * k];
                        let dst = &mut db[boff..boff + k * n];
                        for i in 0..m {
                            for p in 0..k {
                                let av = am[i * k + p];
                                if av == 0.0 {
                                    continue;
                                }
                                let row = &mut dst[p * n..(p + 1) * n];
                                for (d, gv) in row.iter_mut().zip(&gc[i * n..(i + 1) * n]) {
                                    *d += av * gv;
                                }
                            }
                        }
                    }
                });
            }
            Op::Binary {
                a,
                b,
                kind,
                a_map,
                b_map,
            } => {
                let ad = self.data(*a);
                let bd = self.data(*b);
                let ai = |i: usize| a_map.as_ref().map_or(i, |m| m[i]);
                let bi = |i: usize| b_map.as_ref().map_or(i, |m| m[i]);
                acc(*a, &mut |da| {
                    for (i, &gv) in g.iter().enumerate() {
                        da[ai(i)] += match kind {
                            BinaryKind::Add | BinaryKind::Sub => gv,
                            BinaryKind::Mul => gv * bd[bi(i)],
                        };
                    }
                });
                acc(*b, &mut |db| {
                    for (i, &gv) in g.iter().enumerate() {
                        db[bi(i)] += match kind {
                            BinaryKind::Add => gv,
                            BinaryKind::Sub => -gv,
                            BinaryKind::Mul => gv * ad[ai(i)],
                        };
                    }
                });
            }
            Op::Concat { inputs, axis, sizes } => {
                let oshape = nodes[i].value.shape();
                let (outer, total, inner) = split_axis(oshape, *axis);
                let mut offset = 0;
                for (&p, &sz) in inputs.iter().zip(sizes) {
                    acc(p, &mut |dp| {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + sz) * inner];
                            let dst = &mut dp[o * sz * inner..(o + 1) * sz * inner];
                            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                        }
                    });
                    offset += sz;
                }
            }
            &Op::Slice { input, axis, start } => {
                let (outer, ext, inner) = split_axis(self.shape(input), axis);
                let len = nodes[i].value.shape()[axis];
                acc(input, &mut |dx| {
                    for o in 0..outer {
                        let dst = &mut dx[(o * ext + start) * inner..(o * ext + start + len) * inner];
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                    }
                });
            }
            Op::Dropout { input, mask } => {
                acc(*input, &mut |dx| {
                    for ((d, m), gv) in dx.iter_mut().zip(mask).zip(g) {
                        *d += m * gv;
                    }
                });
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let classes = self.shape(*logits)[1];
                let scale = g[0] / labels.len() as f64;
                acc(*logits, &mut |dz| {
                    for (r, &l) in labels.iter().enumerate() {
                        for c in 0..classes {
                            let onehot = if c == l { 1.0 } else { 0.0 };
                            dz[r * classes + c] += scale * (probs[r * classes + c] - onehot);
                        }
                    }
                });
            }
            &Op::Reshape { input } => {
                acc(input, &mut |dx| dx.iter_mut().zip(g).for_each(|(d, s)| *d += s));
            }
            &Op::AxisWeightedSum { input, weights, axis } => {
                let (outer, ext, inner) = split_axis(self.shape(input), axis);
                let x = self.data(input);
                let w = self.data(weights);
                acc(input, &mut |dx| {
                    for o in 0..outer {
                        let go = &g[o * inner..(o + 1) * inner];
                        for (j, &wj) in w.iter().enumerate() {
                            let dst = &mut dx[(o * ext + j) * inner..(o * ext + j + 1) * inner];
                            dst.iter_mut().zip(go).for_each(|(d, s)| *d += wj * s);
                        }
                    }
                });
                acc(weights, &mut |dw| {
                    for o in 0..outer {
                        let go = &g[o * inner..(o + 1) * inner];
                        for (j, dwj) in dw.iter_mut().enumerate() {
                            let src = &x[(o * ext + j) * inner..(o * ext + j + 1) * inner];
                            *dwj += src.iter().zip(go).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                });
            }
            Op::GroupMean { input, axis, groups } => {
                let (outer, ext, inner) = split_axis(self.shape(*input), *axis);
                let p = groups.len();
                acc(*input, &mut |dx| {
                    for o in 0..outer {
                        for (gi, group) in groups.iter().enumerate() {
                            let inv = 1.0 / group.len() as f64;
                            let src = &g[(o * p + gi) * inner..(o * p + gi + 1) * inner];
                            for &r in group {
                                let dst = &mut dx[(o * ext + r) * inner..(o * ext + r + 1) * inner];
                                dst.iter_mut().zip(src).for_each(|(d, s)| *d += s * inv);
                            }
                        }
                    }
                });
            }
            &Op::SymmetricFromTriu { input, n } => {
                acc(input, &mut |dp| {
                    let mut idx = 0;
                    for r in 0..n {
                        for c in r..n {
                            dp[idx] += if r == c {
                                g[r * n + c]
                            } else {
                                g[r * n + c] + g[c * n + r]
                            };
                            idx += 1;
                        }
                    }
                });
            }
            &Op::Sum { input } => {
                acc(input, &mut |dx| dx.iter_mut().for_each(|d| *d += g[0]));
            }
            &Op::Element { input, index } => {
                acc(input, &mut |dx| dx[index] += g[0]);
            }
        }
    }
}

/// `c += a * b` for row-major `a: [m, k]`, `b: [k, n]`.
fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (cv, bv) in crow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *cv += av * bv;
            }
        }
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let ext = |s: &[usize], d: usize| {
        let off = rank - s.len();
        if d < off {
            1
        } else {
            s[d - off]
        }
    };
    (0..rank)
        .map(|d| {
            let (x, y) = (ext(a, d), ext(b, d));
            match (x, y) {
                _ if x == y => Some(x),
                (1, _) => Some(y),
                (_, 1) => Some(x),
                _ => None,
            }
        })
        .collect()
}

/// For each flat index of `out`, the flat index of the broadcast operand.
fn broadcast_map(out: &[usize], operand: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let off = rank - operand.len();
    let mut strides = vec![0usize; rank];
    let mut s = 1;
    for d in (0..rank).rev() {
        if d >= off && operand[d - off] != 1 {
            strides[d] = s;
        }
        if d >= off {
            s *= operand[d - off];
        }
    }
    let numel: usize = out.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; rank];
    let mut flat = 0usize;
    for _ in 0..numel {
        map.push(flat);
        for d in (0..rank).rev() {
            idx[d] += 1;
            flat += strides[d];
            if idx[d] < out[d] {
                break;
            }
            flat -= strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

/// Row-wise softmax of a `[rows, classes]` tensor, stabilized by max subtraction.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor, TensorError> {
    if logits.rank() != 2 {
        return Err(shape_err("softmax", format!("expected [rows, classes], got {:?}", logits.shape())));
    }
    let classes = logits.shape()[1];
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks(classes) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / total));
    }
    Tensor::new(logits.shape().to_vec(), out)
}
