use std::hash::{DefaultHasher, Hash, Hasher};

use super::kernels::{self, ConvGeometry};
use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvConfig {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for ConvConfig {
    fn default() -> Self {
        ConvConfig {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NormMode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormConfig {
    pub epsilon: f32,
    pub momentum: f32,
    pub mode: NormMode,
}

impl NormConfig {
    pub fn new(mode: NormMode) -> Self {
        NormConfig {
            epsilon: 1e-5,
            momentum: 0.1,
            mode,
        }
    }
}

/// Running mean/variance buffers of one batch-norm layer.
pub struct RunningStats<'a> {
    pub mean: &'a mut [f32],
    pub var: &'a mut [f32],
}

enum Op {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeometry,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f32>,
        inv_std: Vec<f32>,
        batch_stats: bool,
    },
    Relu(Var),
    AvgPool {
        x: Var,
        factor: usize,
    },
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    Bilinear(Var),
    Nearest(Var),
    GlobalAvgPool(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Vec<f32>,
        labels: Vec<usize>,
    },
    AddN(Vec<Var>),
    Concat(Vec<Var>),
    Sum(Var),
    Scale {
        x: Var,
        factor: f32,
    },
}

struct Node {
    tensor: Tensor,
    op: Op,
}

/// Append-only tape. Nodes are pushed in evaluation order, so a reverse sweep
/// over indices visits every node after all of its consumers.
pub struct Graph {
    nodes: Vec<Node>,
    macs: u64,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            macs: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-accumulates executed by convolutions and linear layers so far.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    /// Fingerprint of every piecewise-linear branch decision taken so far
    /// (ReLU signs and max-pool winners). Two evaluations of the same graph
    /// with equal fingerprints lie on the same linear piece of those ops.
    pub fn activation_pattern(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for chunk in self.value(*x).data().chunks(64) {
                        let bits = chunk
                            .iter()
                            .enumerate()
                            .fold(0u64, |acc, (i, &v)| acc | (u64::from(v > 0.0) << i));
                        h.write_u64(bits);
                    }
                }
                Op::MaxPool { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Records a leaf; its `requires_grad` flag decides whether it receives a gradient.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        self.push(tensor, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].tensor
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].tensor.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].tensor.grad()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f32>> {
        self.nodes[v.0].tensor.take_grad()
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].tensor.requires_grad()
    }

    fn push(&mut self, tensor: Tensor, op: Op) -> Var {
        self.nodes.push(Node { tensor, op });
        Var(self.nodes.len() - 1)
    }

    fn push_derived(&mut self, shape: Shape, data: Vec<f32>, inputs: &[Var], op: Op) -> Var {
        let requires = inputs.iter().any(|&v| self.requires(v));
        let tensor = Tensor::from_vec(shape, data)
            .expect("kernel produced a buffer matching its declared shape")
            .with_requires_grad(requires);
        self.push(tensor, op)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, cfg: ConvConfig) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        let (cout, cin_g, kh, kw) = (ws.n, ws.c, ws.h, ws.w);
        if cfg.groups == 0 || cfg.stride == 0 {
            return Err(Error::Config("conv2d stride and groups must be positive".into()));
        }
        if xs.c % cfg.groups != 0 || cout % cfg.groups != 0 {
            return Err(Error::Config(format!(
                "conv2d groups={} must divide in_channels={} and out_channels={}",
                cfg.groups, xs.c, cout
            )));
        }
        if cin_g * cfg.groups != xs.c {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "input channels {} != weight in_channels {} x groups {}",
                    xs.c, cin_g, cfg.groups
                ),
            ));
        }
        if kh != kw {
            return Err(Error::shape("conv2d", format!("kernel must be square, got {kh}x{kw}")));
        }
        let (Some(out_h), Some(out_w)) = (
            kernels::conv_out_dim(xs.h, kh, cfg.stride, cfg.padding),
            kernels::conv_out_dim(xs.w, kw, cfg.stride, cfg.padding),
        ) else {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "height/width {}x{} too small for kernel {kh} with padding {}",
                    xs.h, xs.w, cfg.padding
                ),
            ));
        };
        if let Some(b) = b {
            if self.shape(b).numel() != cout {
                return Err(Error::shape("conv2d", format!("bias length != out_channels {cout}")));
            }
        }
        let geom = ConvGeometry {
            input: xs,
            out_channels: cout,
            kernel: kh,
            stride: cfg.stride,
            padding: cfg.padding,
            groups: cfg.groups,
            out_h,
            out_w,
        };
        let y = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        self.macs += geom.macs();
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push_derived(geom.output(), y, &inputs, Op::Conv { x, w, b, geom }))
    }

    /// Train mode normalizes with batch statistics and updates `stats`;
    /// eval mode reads `stats` only.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: RunningStats<'_>,
        cfg: NormConfig,
    ) -> Result<Var> {
        let s = self.shape(x);
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v).numel() != s.c {
                return Err(Error::shape(
                    "batch_norm",
                    format!("{name} length {} != channels {}", self.shape(v).numel(), s.c),
                ));
            }
        }
        if stats.mean.len() != s.c || stats.var.len() != s.c {
            return Err(Error::shape("batch_norm", "running statistics length != channels"));
        }
        let count = s.n * s.plane();
        let (mean, inv_std, batch_stats) = match cfg.mode {
            NormMode::Train => {
                if count < 2 {
                    return Err(Error::DegenerateInput {
                        op: "batch_norm",
                        detail: format!("{count} value(s) per channel in train mode"),
                    });
                }
                let (mean, var) = kernels::channel_stats(self.value(x).data(), s);
                let unbias = count as f64 / (count - 1) as f64;
                let m = cfg.momentum as f64;
                for c in 0..s.c {
                    stats.mean[c] = ((1.0 - m) * stats.mean[c] as f64 + m * mean[c]) as f32;
                    stats.var[c] = ((1.0 - m) * stats.var[c] as f64 + m * var[c] * unbias) as f32;
                }
                let inv_std: Vec<f64> = var
                    .iter()
                    .map(|&v| 1.0 / (v + cfg.epsilon as f64).sqrt())
                    .collect();
                (mean, inv_std, true)
            }
            NormMode::Eval => {
                let inv_std = stats
                    .var
                    .iter()
                    .map(|&v| 1.0 / (v as f64 + cfg.epsilon as f64).sqrt())
                    .collect();
                (stats.mean.iter().map(|&v| v as f64).collect(), inv_std, false)
            }
        };
        let ones = vec![1.0f32; s.c];
        let zeros = vec![0.0f32; s.c];
        let xhat = kernels::affine_normalize(self.value(x).data(), s, &mean, &inv_std, &ones, &zeros);
        let y = kernels::affine_normalize(
            self.value(x).data(),
            s,
            &mean,
            &inv_std,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        Ok(self.push_derived(
            s,
            y,
            &[x, gamma, beta],
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std: inv_std.iter().map(|&v| v as f32).collect(),
                batch_stats,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = kernels::relu_forward(self.value(x).data());
        self.push_derived(self.shape(x), y, &[x], Op::Relu(x))
    }

    /// 2×2 stride-2 average pool.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        self.avg_pool(x, 2)
    }

    /// Non-overlapping `factor×factor` average pool (ceil mode, renormalized edges).
    pub fn avg_pool(&mut self, x: Var, factor: usize) -> Result<Var> {
        let s = self.shape(x);
        if factor == 0 {
            return Err(Error::Config("pool factor must be positive".into()));
        }
        if s.h < factor || s.w < factor {
            return Err(Error::DegenerateInput {
                op: "avg_pool",
                detail: format!("{}x{} input smaller than {factor}x{factor} window", s.h, s.w),
            });
        }
        let (out, y) = kernels::avg_pool_forward(self.value(x).data(), s, factor);
        Ok(self.push_derived(out, y, &[x], Op::AvgPool { x, factor }))
    }

    pub fn max_pool(&mut self, x: Var, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
        let s = self.shape(x);
        let (out, y, argmax) = kernels::max_pool_forward(self.value(x).data(), s, kernel, stride, padding)
            .ok_or_else(|| Error::DegenerateInput {
                op: "max_pool",
                detail: format!("{}x{} input with kernel {kernel} padding {padding}", s.h, s.w),
            })?;
        Ok(self.push_derived(out, y, &[x], Op::MaxPool { x, argmax }))
    }

    /// Half-pixel bilinear resampling to `out_h × out_w`.
    pub fn bilinear_resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let s = self.shape(x);
        if out_h == 0 || out_w == 0 {
            return Err(Error::shape("bilinear_resize", "output size must be at least 1x1"));
        }
        let y = kernels::bilinear_forward(self.value(x).data(), s, out_h, out_w);
        Ok(self.push_derived(Shape::new(s.n, s.c, out_h, out_w), y, &[x], Op::Bilinear(x)))
    }

    pub fn nearest_resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let s = self.shape(x);
        if out_h == 0 || out_w == 0 {
            return Err(Error::shape("nearest_resize", "output size must be at least 1x1"));
        }
        let y = kernels::nearest_forward(self.value(x).data(), s, out_h, out_w);
        Ok(self.push_derived(Shape::new(s.n, s.c, out_h, out_w), y, &[x], Op::Nearest(x)))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let y = kernels::global_avg_pool_forward(self.value(x).data(), s);
        self.push_derived(Shape::new(s.n, s.c, 1, 1), y, &[x], Op::GlobalAvgPool(x))
    }

    /// Fully connected layer over the flattened `C·H·W` features.
    /// `w` has shape `(classes, features, 1, 1)`; output is `(N, classes, 1, 1)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        let features = xs.c * xs.plane();
        if ws.c * ws.plane() != features {
            return Err(Error::shape(
                "linear",
                format!("input features {features} != weight features {}", ws.c * ws.plane()),
            ));
        }
        if let Some(b) = b {
            if self.shape(b).numel() != ws.n {
                return Err(Error::shape("linear", "bias length != output features"));
            }
        }
        let y = kernels::linear_forward(
            self.value(x).data(),
            xs.n,
            features,
            self.value(w).data(),
            ws.n,
            b.map(|b| self.value(b).data()),
        );
        self.macs += (xs.n * features * ws.n) as u64;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push_derived(Shape::new(xs.n, ws.n, 1, 1), y, &inputs, Op::Linear { x, w, b }))
    }

    /// Mean cross-entropy of `logits` `(N, K, 1, 1)` against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        let classes = s.c * s.plane();
        if labels.len() != s.n {
            return Err(Error::Input(format!("{} labels for batch of {}", labels.len(), s.n)));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Input(format!("label {bad} out of range [0, {classes})")));
        }
        let data = self.value(logits).data();
        let loss = kernels::cross_entropy(data, classes, labels);
        let probs = kernels::softmax_rows(data, classes);
        Ok(self.push_derived(
            Shape::scalar(),
            vec![loss],
            &[logits],
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.add_n(&[a, b])
    }

    /// Elementwise sum, accumulated left to right.
    pub fn add_n(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::Usage("add_n of nothing".into()))?;
        let s = self.shape(first);
        let mut acc = self.value(first).data().to_vec();
        for &v in &xs[1..] {
            if self.shape(v) != s {
                return Err(Error::shape("add", format!("{} vs {}", s, self.shape(v))));
            }
            acc.iter_mut().zip(self.value(v).data()).for_each(|(a, b)| *a += b);
        }
        Ok(self.push_derived(s, acc, xs, Op::AddN(xs.to_vec())))
    }

    /// Channel concatenation.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::Usage("concat of nothing".into()))?;
        let s0 = self.shape(first);
        let mut channels = 0;
        for &v in xs {
            let s = self.shape(v);
            if (s.n, s.h, s.w) != (s0.n, s0.h, s0.w) {
                return Err(Error::shape("concat", format!("{s} vs {s0}")));
            }
            channels += s.c;
        }
        let out = Shape::new(s0.n, channels, s0.h, s0.w);
        let mut y = Vec::with_capacity(out.numel());
        for n in 0..s0.n {
            for &v in xs {
                let s = self.shape(v);
                let len = s.c * s.plane();
                y.extend_from_slice(&self.value(v).data()[n * len..(n + 1) * len]);
            }
        }
        Ok(self.push_derived(out, y, xs, Op::Concat(xs.to_vec())))
    }

    /// Sum of every element, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().map(|&v| v as f64).sum::<f64>() as f32;
        self.push_derived(Shape::scalar(), vec![total], &[x], Op::Sum(x))
    }

    pub fn scale(&mut self, x: Var, factor: f32) -> Var {
        let y = self.value(x).data().iter().map(|v| v * factor).collect();
        self.push_derived(self.shape(x), y, &[x], Op::Scale { x, factor })
    }

    /// Reverse sweep from a scalar `loss`, accumulating gradients by addition
    /// into every node that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != Shape::scalar() {
            return Err(Error::Usage(format!(
                "backward requires a scalar loss, got {}",
                self.shape(loss)
            )));
        }
        self.backward_from(loss, &[1.0])
    }

    /// Vector-Jacobian product: propagates `seed` as the gradient of `output`.
    pub fn backward_from(&mut self, output: Var, seed: &[f32]) -> Result<()> {
        if seed.len() != self.shape(output).numel() {
            return Err(Error::shape(
                "backward",
                format!("seed has {} values for output {}", seed.len(), self.shape(output)),
            ));
        }
        if !self.requires(output) {
            return Ok(());
        }
        self.nodes[output.0].tensor.accumulate_grad(seed);
        for i in (0..=output.0).rev() {
            let contributions = {
                let node = &self.nodes[i];
                let Some(dy) = node.tensor.grad() else {
                    continue;
                };
                self.local_grads(node, dy)
            };
            for (v, g) in contributions {
                if self.requires(v) {
                    self.nodes[v.0].tensor.accumulate_grad(&g);
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, node: &Node, dy: &[f32]) -> Vec<(Var, Vec<f32>)> {
        let val = |v: Var| self.value(v).data();
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom } => {
                let (dx, dw, db) = kernels::conv2d_backward(
                    val(*x),
                    val(*w),
                    dy,
                    geom,
                    self.requires(*x),
                    self.requires(*w),
                    b.is_some_and(|b| self.requires(b)),
                );
                out.extend(dx.map(|g| (*x, g)));
                out.extend(dw.map(|g| (*w, g)));
                if let (Some(b), Some(db)) = (b, db) {
                    out.push((*b, db));
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let s = self.shape(*x);
                let g = val(*gamma);
                if *batch_stats {
                    let (dx, dgamma, dbeta) = kernels::batch_norm_train_backward(dy, xhat, s, inv_std, g);
                    out.extend([(*x, dx), (*gamma, dgamma), (*beta, dbeta)]);
                } else {
                    let mut dx = vec![0.0f32; dy.len()];
                    let mut dgamma = vec![0.0f32; s.c];
                    let mut dbeta = vec![0.0f32; s.c];
                    for n in 0..s.n {
                        for c in 0..s.c {
                            let off = (n * s.c + c) * s.plane();
                            let k = g[c] * inv_std[c];
                            for i in off..off + s.plane() {
                                dx[i] = dy[i] * k;
                                dgamma[c] += dy[i] * xhat[i];
                                dbeta[c] += dy[i];
                            }
                        }
                    }
                    out.extend([(*x, dx), (*gamma, dgamma), (*beta, dbeta)]);
                }
            }
            Op::Relu(x) => out.push((*x, kernels::relu_backward(val(*x), dy))),
            Op::AvgPool { x, factor } => {
                out.push((*x, kernels::avg_pool_backward(dy, self.shape(*x), *factor)));
            }
            Op::MaxPool { x, argmax } => {
                out.push((
                    *x,
                    kernels::max_pool_backward(dy, argmax, self.shape(*x), node.tensor.shape()),
                ));
            }
            Op::Bilinear(x) => {
                let o = node.tensor.shape();
                out.push((*x, kernels::bilinear_backward(dy, self.shape(*x), o.h, o.w)));
            }
            Op::Nearest(x) => {
                let o = node.tensor.shape();
                out.push((*x, kernels::nearest_backward(dy, self.shape(*x), o.h, o.w)));
            }
            Op::GlobalAvgPool(x) => {
                out.push((*x, kernels::global_avg_pool_backward(dy, self.shape(*x))));
            }
            Op::Linear { x, w, b } => {
                let xs = self.shape(*x);
                let ws = self.shape(*w);
                let (dx, dw, db) =
                    kernels::linear_backward(val(*x), xs.n, xs.c * xs.plane(), val(*w), ws.n, dy);
                out.extend([(*x, dx), (*w, dw)]);
                if let Some(b) = b {
                    out.push((*b, db));
                }
            }
            Op::SoftmaxCrossEntropy { logits, probs, labels } => {
                let classes = probs.len() / labels.len();
                let scale = dy[0] / labels.len() as f32;
                let mut g = probs.clone();
                for (row, &l) in g.chunks_exact_mut(classes).zip(labels) {
                    row[l] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                out.push((*logits, g));
            }
            Op::AddN(xs) => out.extend(xs.iter().map(|&v| (v, dy.to_vec()))),
            Op::Concat(xs) => {
                let n = node.tensor.shape().n;
                let total = dy.len() / n;
                let mut offset = 0;
                for &v in xs {
                    let len = self.shape(v).numel() / n;
                    let mut g = Vec::with_capacity(len * n);
                    for b in 0..n {
                        g.extend_from_slice(&dy[b * total + offset..b * total + offset + len]);
                    }
                    offset += len;
                    out.push((v, g));
                }
            }
            Op::Sum(x) => out.push((*x, vec![dy[0]; self.shape(*x).numel()])),
            Op::Scale { x, factor } => out.push((*x, dy.iter().map(|g| g * factor).collect())),
        }
        out
    }
}
