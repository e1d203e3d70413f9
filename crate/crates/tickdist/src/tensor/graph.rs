//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] is an append-only arena of op records in topological order.
//! Forward values are computed eagerly when an op is recorded; `backward`
//! walks the tape in reverse and accumulates gradients additively at
//! fan-out points. Every forward op validates its output for NaN/Inf and
//! fails with the producing op's name instead of propagating silently.

use rand::Rng;

use super::kernels::{
    axpy, col2im_add, conv_gemm_backward_input, conv_gemm_backward_weight, conv_gemm_forward, dot,
    im2col, sum, WindowGeom,
};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Elementwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    /// Negative-side slope.
    LeakyRelu(f64),
    Sigmoid,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu(_) => "leaky_relu",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

/// Per-channel batch statistics produced by a train-mode batchnorm.
#[derive(Debug, Clone)]
pub struct BatchStats<E> {
    pub mean: Vec<E>,
    /// Biased (population) variance over N, H, W.
    pub var: Vec<E>,
}

#[derive(Debug, Clone)]
enum Op<E: Scalar> {
    Leaf,
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
    },
    AvgPool2d {
        input: NodeId,
        size: usize,
        stride: usize,
    },
    BatchNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        /// Statistics the normalization used: batch stats in train mode,
        /// running stats in eval mode.
        mean: Vec<E>,
        inv_std: Vec<E>,
    },
    Activation {
        input: NodeId,
        kind: Activation,
    },
    Dense {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    Dropout {
        input: NodeId,
        mask: Vec<bool>,
        scale: E,
    },
    Flatten {
        input: NodeId,
    },
    ChannelAbsSum {
        input: NodeId,
    },
    AttentionLoss {
        student: NodeId,
        teacher: Tensor<E>,
        eps: E,
        mean_over_batch: bool,
    },
    BceWithLogits {
        logits: NodeId,
        targets: Vec<E>,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        input: NodeId,
        factor: E,
    },
    Sum {
        input: NodeId,
    },
}

impl<E: Scalar> Op<E> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::AvgPool2d { .. } => "avgpool2d",
            Op::BatchNorm { .. } => "batchnorm",
            Op::Activation { kind, .. } => kind.name(),
            Op::Dense { .. } => "dense",
            Op::Dropout { .. } => "dropout",
            Op::Flatten { .. } => "flatten",
            Op::ChannelAbsSum { .. } => "attention_map",
            Op::AttentionLoss { .. } => "at_loss",
            Op::BceWithLogits { .. } => "bce_with_logits",
            Op::Add { .. } => "add",
            Op::Scale { .. } => "scale",
            Op::Sum { .. } => "sum",
        }
    }
}

struct Node<E: Scalar> {
    value: Tensor<E>,
    grad: Option<Tensor<E>>,
    /// Gradient must flow to or through this node.
    needs_grad: bool,
    op: Op<E>,
}

/// Reverse-mode tape confined to one worker for the duration of a
/// forward/backward pass.
pub struct Graph<E: Scalar> {
    nodes: Vec<Node<E>>,
}

impl<E: Scalar> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> Graph<E> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<E> {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor<E>> {
        self.nodes[id.0].grad.as_ref()
    }

    /// Move a gradient buffer out of the graph (used by optimizers).
    pub fn take_grad(&mut self, id: NodeId) -> Option<Tensor<E>> {
        self.nodes[id.0].grad.take()
    }

    /// Clear all accumulated gradients.
    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<E>, needs_grad: bool, op: Op<E>) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                op: op.name(),
                phase: "forward",
            });
        }
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad,
            op,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Insert a leaf tensor. `requires_grad` marks it as a gradient target.
    pub fn leaf(&mut self, value: Tensor<E>, requires_grad: bool) -> Result<NodeId> {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor<E>) -> Result<NodeId> {
        self.leaf(value, false)
    }

    /// Valid (unpadded) 2D convolution.
    ///
    /// input N x C x H x W, weight F x C x k x k, bias F; output
    /// N x F x H' x W' with H' = (H - k) / stride + 1.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
    ) -> Result<NodeId> {
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        if x.ndim() != 4 || w.ndim() != 4 || b.ndim() != 1 {
            return Err(Error::Shape {
                op: "conv2d",
                detail: format!(
                    "expected input 4D, weight 4D, bias 1D; got {:?}, {:?}, {:?}",
                    x.shape(),
                    w.shape(),
                    b.shape()
                ),
            });
        }
        let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (f, wc, k, k2) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        if wc != c {
            return Err(Error::Shape {
                op: "conv2d",
                detail: format!("input has {c} channels, weight expects {wc}"),
            });
        }
        if k != k2 {
            return Err(Error::Shape {
                op: "conv2d",
                detail: format!("non-square kernel {k}x{k2}"),
            });
        }
        if b.len() != f {
            return Err(Error::Shape {
                op: "conv2d",
                detail: format!("bias length {} != {} filters", b.len(), f),
            });
        }
        let geom = WindowGeom::valid(h, wd, k, stride).ok_or_else(|| Error::Shape {
            op: "conv2d",
            detail: format!("kernel {k}/stride {stride} does not fit input {h}x{wd}"),
        })?;
        let (ho, wo) = (geom.out_h, geom.out_w);
        let p_n = ho * wo;
        let k_n = c * k * k;

        let mut out = Tensor::zeros(&[n, f, ho, wo]);
        let mut col = vec![E::zero(); k_n * p_n];
        let in_stride = c * h * wd;
        let out_stride = f * p_n;
        for i in 0..n {
            im2col(&x.data()[i * in_stride..(i + 1) * in_stride], c, geom, &mut col);
            conv_gemm_forward(
                w.data(),
                b.data(),
                &col,
                f,
                k_n,
                p_n,
                &mut out.data_mut()[i * out_stride..(i + 1) * out_stride],
            );
        }
        let needs = self.needs(input) || self.needs(weight) || self.needs(bias);
        self.push(
            out,
            needs,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
            },
        )
    }

    /// Average pooling over non-overlapping-or-strided square windows.
    pub fn avgpool2d(&mut self, input: NodeId, size: usize, stride: usize) -> Result<NodeId> {
        let x = self.value(input);
        if x.ndim() != 4 {
            return Err(Error::Shape {
                op: "avgpool2d",
                detail: format!("expected 4D input, got {:?}", x.shape()),
            });
        }
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let geom = WindowGeom::valid(h, w, size, stride).ok_or_else(|| Error::Shape {
            op: "avgpool2d",
            detail: format!("window {size}/stride {stride} does not fit input {h}x{w}"),
        })?;
        let (ho, wo) = (geom.out_h, geom.out_w);
        let inv = E::one() / E::from_usize(size * size);
        let mut out = Tensor::zeros(&[n, c, ho, wo]);
        {
            let od = out.data_mut();
            let xd = x.data();
            for nc in 0..n * c {
                let plane = &xd[nc * h * w..(nc + 1) * h * w];
                let dst = &mut od[nc * ho * wo..(nc + 1) * ho * wo];
                for i in 0..ho {
                    for j in 0..wo {
                        let mut acc = E::zero();
                        for u in 0..size {
                            let row = &plane[(i * stride + u) * w + j * stride..];
                            acc = acc + sum(&row[..size]);
                        }
                        dst[i * wo + j] = acc * inv;
                    }
                }
            }
        }
        let needs = self.needs(input);
        self.push(
            out,
            needs,
            Op::AvgPool2d {
                input,
                size,
                stride,
            },
        )
    }

    /// Train-mode batch normalization over N x H x W per channel.
    ///
    /// Returns the output node plus the batch statistics so the caller can
    /// update its running buffers.
    pub fn batchnorm_train(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: E,
    ) -> Result<(NodeId, BatchStats<E>)> {
        let (mean, var) = {
            let x = self.value(input);
            Self::check_bn_shapes(x, self.value(gamma), self.value(beta))?;
            let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
            let m = E::from_usize(n * h * w);
            let plane = h * w;
            let mut mean = vec![E::zero(); c];
            let mut var = vec![E::zero(); c];
            for ch in 0..c {
                let mut acc = E::zero();
                for i in 0..n {
                    let base = (i * c + ch) * plane;
                    acc = acc + sum(&x.data()[base..base + plane]);
                }
                let mu = acc / m;
                let mut acc2 = E::zero();
                for i in 0..n {
                    let base = (i * c + ch) * plane;
                    for &v in &x.data()[base..base + plane] {
                        let d = v - mu;
                        acc2 = acc2 + d * d;
                    }
                }
                mean[ch] = mu;
                var[ch] = acc2 / m;
            }
            (mean, var)
        };
        let inv_std: Vec<E> = var.iter().map(|&v| E::one() / (v + eps).sqrt()).collect();
        let id = self.batchnorm_apply(input, gamma, beta, mean.clone(), inv_std)?;
        Ok((id, BatchStats { mean, var }))
    }

    /// Eval-mode batch normalization with externally supplied running stats.
    pub fn batchnorm_eval(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &[E],
        running_var: &[E],
        eps: E,
    ) -> Result<NodeId> {
        {
            let x = self.value(input);
            Self::check_bn_shapes(x, self.value(gamma), self.value(beta))?;
            if running_mean.len() != x.shape()[1] || running_var.len() != x.shape()[1] {
                return Err(Error::Shape {
                    op: "batchnorm",
                    detail: format!(
                        "running stats length {} / {} vs {} channels",
                        running_mean.len(),
                        running_var.len(),
                        x.shape()[1]
                    ),
                });
            }
        }
        let inv_std: Vec<E> = running_var
            .iter()
            .map(|&v| E::one() / (v + eps).sqrt())
            .collect();
        self.batchnorm_apply(input, gamma, beta, running_mean.to_vec(), inv_std)
    }

    fn check_bn_shapes(x: &Tensor<E>, g: &Tensor<E>, b: &Tensor<E>) -> Result<()> {
        if x.ndim() != 4 {
            return Err(Error::Shape {
                op: "batchnorm",
                detail: format!("expected 4D input, got {:?}", x.shape()),
            });
        }
        let c = x.shape()[1];
        if g.len() != c || b.len() != c {
            return Err(Error::Shape {
                op: "batchnorm",
                detail: format!("gamma/beta lengths {}/{} vs {} channels", g.len(), b.len(), c),
            });
        }
        Ok(())
    }

    fn batchnorm_apply(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<E>,
        inv_std: Vec<E>,
    ) -> Result<NodeId> {
        let x = self.value(input);
        let g = self.value(gamma);
        let b = self.value(beta);
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let plane = h * w;
        let mut out = Tensor::zeros(x.shape());
        {
            let od = out.data_mut();
            for i in 0..n {
                for ch in 0..c {
                    let base = (i * c + ch) * plane;
                    let (mu, istd) = (mean[ch], inv_std[ch]);
                    let (ga, be) = (g.data()[ch], b.data()[ch]);
                    for (o, &v) in od[base..base + plane]
                        .iter_mut()
                        .zip(&x.data()[base..base + plane])
                    {
                        *o = ga * (v - mu) * istd + be;
                    }
                }
            }
        }
        let needs = self.needs(input) || self.needs(gamma) || self.needs(beta);
        self.push(
            out,
            needs,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean,
                inv_std,
            },
        )
    }

    /// Elementwise activation.
    pub fn activation(&mut self, input: NodeId, kind: Activation) -> Result<NodeId> {
        let x = self.value(input);
        let out = match kind {
            Activation::Relu => x.map(|v| if v > E::zero() { v } else { E::zero() }),
            Activation::LeakyRelu(slope) => {
                let s = E::from_f64(slope);
                x.map(|v| if v > E::zero() { v } else { s * v })
            }
            Activation::Sigmoid => x.map(stable_sigmoid),
        };
        let needs = self.needs(input);
        self.push(out, needs, Op::Activation { input, kind })
    }

    /// Affine map: input N x D, weight D x M, bias M -> N x M.
    pub fn dense(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        if x.ndim() != 2 || w.ndim() != 2 || b.ndim() != 1 {
            return Err(Error::Shape {
                op: "dense",
                detail: format!(
                    "expected input 2D, weight 2D, bias 1D; got {:?}, {:?}, {:?}",
                    x.shape(),
                    w.shape(),
                    b.shape()
                ),
            });
        }
        let (n, d) = (x.shape()[0], x.shape()[1]);
        let (wd, m) = (w.shape()[0], w.shape()[1]);
        if d != wd || b.len() != m {
            return Err(Error::Shape {
                op: "dense",
                detail: format!("input {n}x{d} vs weight {wd}x{m} (bias {})", b.len()),
            });
        }
        let mut out = Tensor::zeros(&[n, m]);
        {
            let od = out.data_mut();
            for i in 0..n {
                let row = &mut od[i * m..(i + 1) * m];
                row.copy_from_slice(b.data());
                let xrow = &x.data()[i * d..(i + 1) * d];
                for (dd, &xv) in xrow.iter().enumerate() {
                    axpy(row, xv, &w.data()[dd * m..(dd + 1) * m]);
                }
            }
        }
        let needs = self.needs(input) || self.needs(weight) || self.needs(bias);
        self.push(out, needs, Op::Dense { input, weight, bias })
    }

    /// Inverted dropout: zero with probability `rate`, scale survivors by
    /// 1/(1-rate). Eval mode is simply not recording this op.
    pub fn dropout_train<R: Rng>(
        &mut self,
        input: NodeId,
        rate: f64,
        rng: &mut R,
    ) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        let x = self.value(input);
        let mask: Vec<bool> = (0..x.len()).map(|_| rng.random::<f64>() >= rate).collect();
        let scale = E::from_f64(1.0 / (1.0 - rate));
        let mut out = x.clone();
        for (v, &keep) in out.data_mut().iter_mut().zip(&mask) {
            *v = if keep { *v * scale } else { E::zero() };
        }
        let needs = self.needs(input);
        self.push(out, needs, Op::Dropout { input, mask, scale })
    }

    /// N x C x H x W -> N x (C*H*W).
    pub fn flatten(&mut self, input: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        if x.ndim() < 2 {
            return Err(Error::Shape {
                op: "flatten",
                detail: format!("expected at least 2D, got {:?}", x.shape()),
            });
        }
        let n = x.shape()[0];
        let rest: usize = x.shape()[1..].iter().product();
        let out = x.clone().reshape(vec![n, rest])?;
        let needs = self.needs(input);
        self.push(out, needs, Op::Flatten { input })
    }

    /// Spatial attention map: sum of absolute values across the channel
    /// dimension. N x C x H x W -> N x H x W.
    pub fn channel_abs_sum(&mut self, input: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        if x.ndim() != 4 {
            return Err(Error::Shape {
                op: "attention_map",
                detail: format!("expected 4D input, got {:?}", x.shape()),
            });
        }
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let plane = h * w;
        let mut out = Tensor::zeros(&[n, h, w]);
        {
            let od = out.data_mut();
            for i in 0..n {
                let dst = &mut od[i * plane..(i + 1) * plane];
                for ch in 0..c {
                    let base = (i * c + ch) * plane;
                    for (o, &v) in dst.iter_mut().zip(&x.data()[base..base + plane]) {
                        *o = *o + v.abs();
                    }
                }
            }
        }
        let needs = self.needs(input);
        self.push(out, needs, Op::ChannelAbsSum { input })
    }

    /// Attention-transfer loss between per-sample student maps (node,
    /// N x H x W) and fixed teacher maps (constant tensor of the same
    /// shape): the l2 distance between l2-normalized vectorized maps,
    /// reduced over the batch.
    ///
    /// A map whose norm falls below `eps` normalizes to the zero vector.
    pub fn attention_loss(
        &mut self,
        student: NodeId,
        teacher: &Tensor<E>,
        eps: E,
        mean_over_batch: bool,
    ) -> Result<NodeId> {
        let s = self.value(student);
        if s.ndim() != 3 || teacher.ndim() != 3 {
            return Err(Error::Shape {
                op: "at_loss",
                detail: format!(
                    "expected N x H x W maps, got {:?} and {:?}",
                    s.shape(),
                    teacher.shape()
                ),
            });
        }
        if s.shape() != teacher.shape() {
            return Err(Error::Contract(format!(
                "attention map resolution mismatch: student {:?} vs teacher {:?}",
                s.shape(),
                teacher.shape()
            )));
        }
        let n = s.shape()[0];
        let hw = s.shape()[1] * s.shape()[2];
        let mut total = E::zero();
        for i in 0..n {
            let sv = &s.data()[i * hw..(i + 1) * hw];
            let tv = &teacher.data()[i * hw..(i + 1) * hw];
            total = total + normalized_l2_distance(sv, tv, eps);
        }
        let value = if mean_over_batch {
            total / E::from_usize(n)
        } else {
            total
        };
        let needs = self.needs(student);
        self.push(
            Tensor::scalar(value),
            needs,
            Op::AttentionLoss {
                student,
                teacher: teacher.clone(),
                eps,
                mean_over_batch,
            },
        )
    }

    /// Mean binary cross-entropy between sigmoid(logits) and soft targets
    /// p1 in [0, 1]. Logits may be N or N x 1.
    ///
    /// The forward value uses the softplus form, which is the exact
    /// clamp-free cross-entropy and never evaluates log(0).
    pub fn bce_with_logits(&mut self, logits: NodeId, targets: &[E]) -> Result<NodeId> {
        let x = self.value(logits);
        let n = x.shape().first().copied().unwrap_or(0);
        let per_sample_ok = x.len() == n && (x.ndim() == 1 || (x.ndim() == 2 && x.shape()[1] == 1));
        if !per_sample_ok {
            return Err(Error::Shape {
                op: "bce_with_logits",
                detail: format!("expected N or N x 1 logits, got {:?}", x.shape()),
            });
        }
        if targets.len() != n || n == 0 {
            return Err(Error::Shape {
                op: "bce_with_logits",
                detail: format!("{} targets for {} logits", targets.len(), n),
            });
        }
        if targets
            .iter()
            .any(|&p| !(E::zero()..=E::one()).contains(&p))
        {
            return Err(Error::Contract(
                "bce targets must be probabilities in [0, 1]".into(),
            ));
        }
        let mut total = E::zero();
        for (&theta, &p) in x.data().iter().zip(targets) {
            total = total + softplus(theta) - p * theta;
        }
        let value = total / E::from_usize(n);
        let needs = self.needs(logits);
        self.push(
            Tensor::scalar(value),
            needs,
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
        )
    }

    /// Elementwise sum of two same-shape nodes.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape {
                op: "add",
                detail: format!(
                    "{:?} vs {:?}",
                    self.value(a).shape(),
                    self.value(b).shape()
                ),
            });
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        self.push(out, needs, Op::Add { a, b })
    }

    /// Multiply by a constant factor.
    pub fn scale(&mut self, input: NodeId, factor: E) -> Result<NodeId> {
        let out = self.value(input).map(|v| v * factor);
        let needs = self.needs(input);
        self.push(out, needs, Op::Scale { input, factor })
    }

    /// Reduce all elements to a scalar sum.
    pub fn sum_all(&mut self, input: NodeId) -> Result<NodeId> {
        let value = self.value(input).sum();
        let needs = self.needs(input);
        self.push(Tensor::scalar(value), needs, Op::Sum { input })
    }

    /// Populate gradients for every node reachable from `loss` that needs
    /// them. `loss` must be scalar. A second call without `reset_grads`
    /// accumulates on top of existing buffers.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        // Pass-local adjoints: the persistent grad buffers only receive the
        // final deltas, so repeated backward calls accumulate exactly one
        // pass each.
        let mut delta: Vec<Option<Tensor<E>>> = (0..=loss.0).map(|_| None).collect();
        delta[loss.0] = Some(Tensor::scalar(E::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = delta[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut delta)?;
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    op: self.nodes[i].op.name(),
                    phase: "backward",
                });
            }
            match &mut self.nodes[i].grad {
                Some(buf) => buf.add_assign(&g)?,
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Add `g . d(node_i)/d(input)` into each input's delta buffer.
    fn propagate(
        &self,
        i: usize,
        g: &Tensor<E>,
        delta: &mut [Option<Tensor<E>>],
    ) -> Result<()> {
        let stage = |id: NodeId, contrib: Tensor<E>, delta: &mut [Option<Tensor<E>>]| {
            if !self.needs(id) {
                return Ok(());
            }
            match &mut delta[id.0] {
                Some(buf) => buf.add_assign(&contrib),
                slot => {
                    *slot = Some(contrib);
                    Ok(())
                }
            }
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
            } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
                let (f, _, k, _) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
                let geom = WindowGeom::valid(h, wd, k, *stride).expect("validated at forward");
                let p_n = geom.out_h * geom.out_w;
                let k_n = c * k * k;
                let in_stride = c * h * wd;
                let out_stride = f * p_n;

                let need_x = self.needs(*input);
                let need_w = self.needs(*weight);
                let need_b = self.needs(*bias);
                let mut dx = need_x.then(|| Tensor::zeros(x.shape()));
                let mut dw = need_w.then(|| Tensor::zeros(w.shape()));
                let mut db = need_b.then(|| Tensor::zeros(&[f]));
                let mut col = vec![E::zero(); k_n * p_n];
                let mut dcol = need_x.then(|| vec![E::zero(); k_n * p_n]);
                for s in 0..n {
                    let gout = &g.data()[s * out_stride..(s + 1) * out_stride];
                    if need_w {
                        im2col(&x.data()[s * in_stride..(s + 1) * in_stride], c, geom, &mut col);
                        conv_gemm_backward_weight(
                            gout,
                            &col,
                            f,
                            k_n,
                            p_n,
                            dw.as_mut().unwrap().data_mut(),
                        );
                    }
                    if let Some(dcol) = dcol.as_mut() {
                        conv_gemm_backward_input(w.data(), gout, f, k_n, p_n, dcol);
                        col2im_add(
                            dcol,
                            c,
                            geom,
                            &mut dx.as_mut().unwrap().data_mut()
                                [s * in_stride..(s + 1) * in_stride],
                        );
                    }
                    if let Some(db) = db.as_mut() {
                        for fi in 0..f {
                            db.data_mut()[fi] =
                                db.data_mut()[fi] + sum(&gout[fi * p_n..(fi + 1) * p_n]);
                        }
                    }
                }
                if let Some(dx) = dx {
                    stage(*input, dx, delta)?;
                }
                if let Some(dw) = dw {
                    stage(*weight, dw, delta)?;
                }
                if let Some(db) = db {
                    stage(*bias, db, delta)?;
                }
            }
            Op::AvgPool2d {
                input,
                size,
                stride,
            } => {
                let x = self.value(*input);
                let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
                let geom = WindowGeom::valid(h, w, *size, *stride).expect("validated at forward");
                let (ho, wo) = (geom.out_h, geom.out_w);
                let inv = E::one() / E::from_usize(size * size);
                let mut dx = Tensor::zeros(x.shape());
                {
                    let dxd = dx.data_mut();
                    for nc in 0..n * c {
                        let gsrc = &g.data()[nc * ho * wo..(nc + 1) * ho * wo];
                        let plane = &mut dxd[nc * h * w..(nc + 1) * h * w];
                        for i in 0..ho {
                            for j in 0..wo {
                                let gv = gsrc[i * wo + j] * inv;
                                for u in 0..*size {
                                    let base = (i * stride + u) * w + j * stride;
                                    for v in 0..*size {
                                        plane[base + v] = plane[base + v] + gv;
                                    }
                                }
                            }
                        }
                    }
                }
                stage(*input, dx, delta)?;
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let x = self.value(*input);
                let ga = self.value(*gamma);
                let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
                let plane = h * w;
                let m = E::from_usize(n * plane);

                let need_x = self.needs(*input);
                let need_g = self.needs(*gamma);
                let need_b = self.needs(*beta);
                let mut dgamma = vec![E::zero(); c];
                let mut dbeta = vec![E::zero(); c];
                let mut dx = need_x.then(|| Tensor::zeros(x.shape()));
                for ch in 0..c {
                    let (mu, istd) = (mean[ch], inv_std[ch]);
                    // s1 = sum(dy), s2 = sum(dy * xhat)
                    let mut s1 = E::zero();
                    let mut s2 = E::zero();
                    for i in 0..n {
                        let base = (i * c + ch) * plane;
                        for (&gv, &xv) in g.data()[base..base + plane]
                            .iter()
                            .zip(&x.data()[base..base + plane])
                        {
                            s1 = s1 + gv;
                            s2 = s2 + gv * (xv - mu) * istd;
                        }
                    }
                    dbeta[ch] = s1;
                    dgamma[ch] = s2;
                    if let Some(dx) = dx.as_mut() {
                        let gch = ga.data()[ch];
                        let c1 = s1 / m;
                        let c2 = s2 / m;
                        for i in 0..n {
                            let base = (i * c + ch) * plane;
                            let (gs, xs) = (&g.data()[base..base + plane], &x.data()[base..base + plane]);
                            for ((o, &gv), &xv) in dx.data_mut()[base..base + plane]
                                .iter_mut()
                                .zip(gs)
                                .zip(xs)
                            {
                                let xhat = (xv - mu) * istd;
                                *o = gch * istd * (gv - c1 - xhat * c2);
                            }
                        }
                    }
                }
                if let Some(dx) = dx {
                    stage(*input, dx, delta)?;
                }
                if need_g {
                    stage(*gamma, Tensor::from_vec(vec![c], dgamma)?, delta)?;
                }
                if need_b {
                    stage(*beta, Tensor::from_vec(vec![c], dbeta)?, delta)?;
                }
            }
            Op::Activation { input, kind } => {
                let x = self.value(*input);
                let y = &self.nodes[i].value;
                let mut dx = Tensor::zeros(x.shape());
                match kind {
                    Activation::Relu => {
                        for ((o, &gv), &xv) in
                            dx.data_mut().iter_mut().zip(g.data()).zip(x.data())
                        {
                            *o = if xv > E::zero() { gv } else { E::zero() };
                        }
                    }
                    Activation::LeakyRelu(slope) => {
                        let s = E::from_f64(*slope);
                        for ((o, &gv), &xv) in
                            dx.data_mut().iter_mut().zip(g.data()).zip(x.data())
                        {
                            *o = if xv > E::zero() { gv } else { gv * s };
                        }
                    }
                    Activation::Sigmoid => {
                        for ((o, &gv), &yv) in
                            dx.data_mut().iter_mut().zip(g.data()).zip(y.data())
                        {
                            *o = gv * yv * (E::one() - yv);
                        }
                    }
                }
                stage(*input, dx, delta)?;
            }
            Op::Dense {
                input,
                weight,
                bias,
            } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let (n, d) = (x.shape()[0], x.shape()[1]);
                let m = w.shape()[1];
                let need_x = self.needs(*input);
                let need_w = self.needs(*weight);
                let need_b = self.needs(*bias);
                let mut dx = need_x.then(|| Tensor::zeros(x.shape()));
                let mut dw = need_w.then(|| Tensor::zeros(w.shape()));
                let mut db = need_b.then(|| Tensor::zeros(&[m]));
                for s in 0..n {
                    let grow = &g.data()[s * m..(s + 1) * m];
                    if let Some(dx) = dx.as_mut() {
                        for dd in 0..d {
                            dx.data_mut()[s * d + dd] = dot(grow, &w.data()[dd * m..(dd + 1) * m]);
                        }
                    }
                    if let Some(dw) = dw.as_mut() {
                        let xrow = &x.data()[s * d..(s + 1) * d];
                        for (dd, &xv) in xrow.iter().enumerate() {
                            axpy(&mut dw.data_mut()[dd * m..(dd + 1) * m], xv, grow);
                        }
                    }
                    if let Some(db) = db.as_mut() {
                        for (o, &gv) in db.data_mut().iter_mut().zip(grow) {
                            *o = *o + gv;
                        }
                    }
                }
                if let Some(dx) = dx {
                    stage(*input, dx, delta)?;
                }
                if let Some(dw) = dw {
                    stage(*weight, dw, delta)?;
                }
                if let Some(db) = db {
                    stage(*bias, db, delta)?;
                }
            }
            Op::Dropout { input, mask, scale } => {
                let mut dx = Tensor::zeros(self.value(*input).shape());
                for ((o, &gv), &keep) in dx.data_mut().iter_mut().zip(g.data()).zip(mask) {
                    *o = if keep { gv * *scale } else { E::zero() };
                }
                stage(*input, dx, delta)?;
            }
            Op::Flatten { input } => {
                let shape = self.value(*input).shape().to_vec();
                stage(*input, g.clone().reshape(shape)?, delta)?;
            }
            Op::ChannelAbsSum { input } => {
                let x = self.value(*input);
                let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
                let plane = h * w;
                let mut dx = Tensor::zeros(x.shape());
                {
                    let dxd = dx.data_mut();
                    for s in 0..n {
                        let gsrc = &g.data()[s * plane..(s + 1) * plane];
                        for ch in 0..c {
                            let base = (s * c + ch) * plane;
                            for ((o, &gv), &xv) in dxd[base..base + plane]
                                .iter_mut()
                                .zip(gsrc)
                                .zip(&x.data()[base..base + plane])
                            {
                                // subgradient 0 at 0
                                *o = if xv > E::zero() {
                                    gv
                                } else if xv < E::zero() {
                                    -gv
                                } else {
                                    E::zero()
                                };
                            }
                        }
                    }
                }
                stage(*input, dx, delta)?;
            }
            Op::AttentionLoss {
                student,
                teacher,
                eps,
                mean_over_batch,
            } => {
                let s = self.value(*student);
                let n = s.shape()[0];
                let hw = s.shape()[1] * s.shape()[2];
                let gv = g.data()[0];
                let factor = if *mean_over_batch {
                    gv / E::from_usize(n)
                } else {
                    gv
                };
                let mut dx = Tensor::zeros(s.shape());
                for i2 in 0..n {
                    let sv = &s.data()[i2 * hw..(i2 + 1) * hw];
                    let tv = &teacher.data()[i2 * hw..(i2 + 1) * hw];
                    attention_loss_grad(
                        sv,
                        tv,
                        *eps,
                        factor,
                        &mut dx.data_mut()[i2 * hw..(i2 + 1) * hw],
                    );
                }
                stage(*student, dx, delta)?;
            }
            Op::BceWithLogits { logits, targets } => {
                let x = self.value(*logits);
                let n = targets.len();
                let factor = g.data()[0] / E::from_usize(n);
                let mut dx = Tensor::zeros(x.shape());
                for ((o, &theta), &p) in dx.data_mut().iter_mut().zip(x.data()).zip(targets) {
                    *o = factor * (stable_sigmoid(theta) - p);
                }
                stage(*logits, dx, delta)?;
            }
            Op::Add { a, b } => {
                stage(*a, g.clone(), delta)?;
                stage(*b, g.clone(), delta)?;
            }
            Op::Scale { input, factor } => {
                stage(*input, g.map(|v| v * *factor), delta)?;
            }
            Op::Sum { input } => {
                let gv = g.data()[0];
                stage(*input, Tensor::full(self.value(*input).shape(), gv), delta)?;
            }
        }
        Ok(())
    }
}

/// Numerically stable logistic function.
pub(crate) fn stable_sigmoid<E: Scalar>(x: E) -> E {
    if x >= E::zero() {
        E::one() / (E::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (E::one() + e)
    }
}

/// ln(1 + e^x) without overflow.
fn softplus<E: Scalar>(x: E) -> E {
    if x > E::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// ||s/||s|| - t/||t||||_2 with zero-vector guards.
pub(crate) fn normalized_l2_distance<E: Scalar>(s: &[E], t: &[E], eps: E) -> E {
    let ns = dot(s, s).sqrt();
    let nt = dot(t, t).sqrt();
    let is = if ns > eps { E::one() / ns } else { E::zero() };
    let it = if nt > eps { E::one() / nt } else { E::zero() };
    let mut acc = E::zero();
    for (&sv, &tv) in s.iter().zip(t) {
        let d = sv * is - tv * it;
        acc = acc + d * d;
    }
    acc.sqrt()
}

/// d(normalized_l2_distance)/d(s) scaled by `factor`, added into `out`.
fn attention_loss_grad<E: Scalar>(s: &[E], t: &[E], eps: E, factor: E, out: &mut [E]) {
    let ns = dot(s, s).sqrt();
    if ns <= eps {
        // the normalized student map is pinned to the zero vector; treat
        // it as locally constant
        return;
    }
    let nt = dot(t, t).sqrt();
    let it = if nt > eps { E::one() / nt } else { E::zero() };
    let is = E::one() / ns;
    let mut dist2 = E::zero();
    let mut c1 = E::zero(); // <v, u>
    for (&sv, &tv) in s.iter().zip(t) {
        let v = sv * is;
        let u = tv * it;
        let d = v - u;
        dist2 = dist2 + d * d;
        c1 = c1 + v * u;
    }
    let l = dist2.sqrt();
    if l <= eps {
        return;
    }
    // dL/ds = (v * <v,u> - u) / (||s|| * L)
    let scale = factor / (ns * l);
    for ((o, &sv), &tv) in out.iter_mut().zip(s).zip(t) {
        let v = sv * is;
        let u = tv * it;
        *o = *o + scale * (v * c1 - u);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn t<E: Scalar>(shape: &[usize], data: &[f64]) -> Tensor<E> {
        Tensor::from_vec(shape.to_vec(), data.iter().map(|&v| E::from_f64(v)).collect()).unwrap()
    }

    #[test]
    fn conv2d_identity_kernel_passes_input_through() {
        let mut g = Graph::<f64>::new();
        let x = g
            .leaf(t(&[1, 1, 3, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]), false)
            .unwrap();
        let w = g.constant(t(&[1, 1, 1, 1], &[1.0])).unwrap();
        let b = g.constant(t(&[1], &[0.0])).unwrap();
        let y = g.conv2d(x, w, b, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 3, 3]);
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn conv2d_window_sum_oracle() {
        // 4x4 ones, 2x2 ones kernel, stride 2 -> 2x2 of 4.0
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::full(&[1, 1, 4, 4], 1.0), false).unwrap();
        let w = g.constant(Tensor::full(&[1, 1, 2, 2], 1.0)).unwrap();
        let b = g.constant(Tensor::zeros(&[1])).unwrap();
        let y = g.conv2d(x, w, b, 2).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 2, 2]);
        assert_eq!(g.value(y).data(), &[4.0, 4.0, 4.0, 4.0]);
    }

    #[test]
    fn conv2d_channel_mismatch_is_a_shape_error() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::zeros(&[1, 3, 8, 8]), false).unwrap();
        let w = g.constant(Tensor::zeros(&[4, 2, 3, 3])).unwrap();
        let b = g.constant(Tensor::zeros(&[4])).unwrap();
        assert!(matches!(
            g.conv2d(x, w, b, 1),
            Err(Error::Shape { op: "conv2d", .. })
        ));
    }

    #[test]
    fn avgpool_window_mean_oracle() {
        // 1..16 row-major, 2x2 window, stride 2 -> [[3.5, 5.5], [11.5, 13.5]]
        let data: Vec<f64> = (1..=16).map(|v| v as f64).collect();
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[1, 1, 4, 4], &data), false).unwrap();
        let y = g.avgpool2d(x, 2, 2).unwrap();
        assert_eq!(g.value(y).data(), &[3.5, 5.5, 11.5, 13.5]);
    }

    #[test]
    fn avgpool_constant_input_stays_constant() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::full(&[2, 3, 5, 5], 2.25), false).unwrap();
        let y = g.avgpool2d(x, 2, 1).unwrap();
        assert!(g.value(y).data().iter().all(|&v| (v - 2.25).abs() < 1e-12));
    }

    #[test]
    fn avgpool_window_larger_than_input_errors() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::zeros(&[1, 1, 3, 3]), false).unwrap();
        assert!(g.avgpool2d(x, 4, 1).is_err());
    }

    #[test]
    fn batchnorm_standardizes_each_channel() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let data: Vec<f64> = (0..2 * 3 * 4 * 4).map(|_| rng.random::<f64>() * 5.0 - 1.0).collect();
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[2, 3, 4, 4], &data), false).unwrap();
        let ga = g.constant(Tensor::full(&[3], 1.0)).unwrap();
        let be = g.constant(Tensor::zeros(&[3])).unwrap();
        let (y, stats) = g.batchnorm_train(x, ga, be, 1e-5).unwrap();
        // per-channel mean ~ 0, var ~ 1
        let out = g.value(y);
        for ch in 0..3 {
            let mut vals = Vec::new();
            for n in 0..2 {
                for p in 0..16 {
                    vals.push(out.data()[(n * 3 + ch) * 16 + p]);
                }
            }
            let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-5, "channel {ch} mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "channel {ch} var {var}");
        }
        assert_eq!(stats.mean.len(), 3);
    }

    #[test]
    fn batchnorm_affine_oracle() {
        // symmetric input {-1, +1} standardizes to itself; gamma 2, beta 3 -> {1, 5}
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[2, 1, 1, 1], &[-1.0, 1.0]), false).unwrap();
        let ga = g.constant(Tensor::full(&[1], 2.0)).unwrap();
        let be = g.constant(Tensor::full(&[1], 3.0)).unwrap();
        let (y, _) = g.batchnorm_train(x, ga, be, 1e-12).unwrap();
        let out = g.value(y).data();
        assert!((out[0] - 1.0).abs() < 1e-5);
        assert!((out[1] - 5.0).abs() < 1e-5);
    }

    #[test]
    fn activation_scalar_oracles() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[4], &[-2.0, 3.0, 0.0, -10.0]), false).unwrap();
        let relu = g.activation(x, Activation::Relu).unwrap();
        assert_eq!(g.value(relu).data(), &[0.0, 3.0, 0.0, 0.0]);
        let leaky = g.activation(x, Activation::LeakyRelu(0.01)).unwrap();
        assert!((g.value(leaky).data()[3] - (-0.1)).abs() < 1e-12);
        let zero = g.leaf(t(&[1], &[0.0]), false).unwrap();
        let sig = g.activation(zero, Activation::Sigmoid).unwrap();
        assert_eq!(g.value(sig).data(), &[0.5]);
    }

    #[test]
    fn dense_matrix_multiply_oracle() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[1, 2], &[1.0, 2.0]), false).unwrap();
        let w = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0])).unwrap();
        let b = g.constant(t(&[2], &[10.0, 20.0])).unwrap();
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[11.0, 22.0]);
    }

    #[test]
    fn dense_dimension_mismatch_errors() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::zeros(&[1, 3]), false).unwrap();
        let w = g.constant(Tensor::zeros(&[2, 2])).unwrap();
        let b = g.constant(Tensor::zeros(&[2])).unwrap();
        assert!(g.dense(x, w, b).is_err());
    }

    #[test]
    fn dropout_rate_zero_is_exact_identity() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let data: Vec<f64> = (0..64).map(|v| v as f64 * 0.37).collect();
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[64], &data), false).unwrap();
        let y = g.dropout_train(x, 0.0, &mut rng).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn dropout_rate_one_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::zeros(&[4]), false).unwrap();
        assert!(matches!(
            g.dropout_train(x, 1.0, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dropout_survivor_statistics() {
        let n = 40_000;
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::full(&[n], 1.0), false).unwrap();
        let y = g.dropout_train(x, 0.5, &mut rng).unwrap();
        let survivors = g.value(y).data().iter().filter(|&&v| v != 0.0).count();
        let frac = survivors as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.02, "survivor fraction {frac}");
        assert!(g
            .value(y)
            .data()
            .iter()
            .all(|&v| v == 0.0 || (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn backward_square_gives_double() {
        // loss = sum(x * 3) at x = 3 via scale; d/dx = 3. Then x^2 via
        // add(x, x)-free route: use scale + sum to keep it simple, and a
        // dedicated square through bce is overkill. Use sum(scale(x, x0))?
        // Instead check d(sum(sigmoid))/dx against the closed form.
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[1], &[3.0]), true).unwrap();
        // emulate x^2 with scale by constant 3 twice: d(9x)/dx = 9 — not a
        // square. The real x^2 case lives in the gradcheck tests; here we
        // verify plumbing with a linear chain.
        let y = g.scale(x, 3.0).unwrap();
        let z = g.scale(y, 3.0).unwrap();
        let loss = g.sum_all(z).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[9.0]);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::zeros(&[3]), true).unwrap();
        let y = g.scale(x, 2.0).unwrap();
        assert!(matches!(g.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn backward_accumulates_and_reset_clears() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]), true).unwrap();
        let loss = g.sum_all(x).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0]);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 2.0]);
        g.reset_grads();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn disconnected_parameter_gets_no_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]), true).unwrap();
        let unused = g.leaf(t(&[2], &[5.0, 5.0]), true).unwrap();
        let loss = g.sum_all(x).unwrap();
        g.backward(loss).unwrap();
        assert!(g.grad(unused).is_none());
        assert!(g.grad(x).is_some());
    }

    #[test]
    fn nonfinite_forward_is_rejected_with_op_name() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[1], &[1e308]), false).unwrap();
        let y = g.scale(x, 10.0); // overflows to inf
        match y {
            Err(Error::NonFinite { op, phase }) => {
                assert_eq!(op, "scale");
                assert_eq!(phase, "forward");
            }
            other => panic!("expected NonFinite, got {other:?}"),
        }
        // leaves containing non-finite values are rejected at insertion
        assert!(g.leaf(t(&[1], &[f64::NAN]), false).is_err());
    }

    #[test]
    fn attention_loss_identical_maps_is_zero() {
        let mut g = Graph::<f64>::new();
        let m = t::<f64>(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let s = g.leaf(m.clone(), false).unwrap();
        let l = g.attention_loss(s, &m, 1e-12, true).unwrap();
        assert!(g.value(l).item().unwrap() < 1e-12);
    }

    #[test]
    fn attention_loss_orthogonal_unit_maps_is_sqrt2() {
        let mut g = Graph::<f64>::new();
        let s = g
            .leaf(t(&[1, 2, 2], &[0.0, 1.0, 0.0, 0.0]), false)
            .unwrap();
        let teacher = t::<f64>(&[1, 2, 2], &[1.0, 0.0, 0.0, 0.0]);
        let l = g.attention_loss(s, &teacher, 1e-12, true).unwrap();
        assert!((g.value(l).item().unwrap() - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn attention_loss_resolution_mismatch_is_contract_error() {
        let mut g = Graph::<f64>::new();
        let s = g.leaf(Tensor::full(&[1, 2, 2], 1.0), false).unwrap();
        let teacher = Tensor::full(&[1, 3, 3], 1.0);
        assert!(matches!(
            g.attention_loss(s, &teacher, 1e-12, true),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn bce_matches_ln2_at_even_odds() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[2, 1], &[0.0, 0.0]), false).unwrap();
        let l = g.bce_with_logits(x, &[0.5, 0.5]).unwrap();
        assert!((g.value(l).item().unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_gradient_is_sigmoid_minus_target() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[2, 1], &[0.7, -1.2]), true).unwrap();
        let l = g.bce_with_logits(x, &[1.0, 0.0]).unwrap();
        g.backward(l).unwrap();
        let grad = g.grad(x).unwrap().data();
        let expect0 = (stable_sigmoid(0.7) - 1.0) / 2.0;
        let expect1 = (stable_sigmoid(-1.2) - 0.0) / 2.0;
        assert!((grad[0] - expect0).abs() < 1e-12);
        assert!((grad[1] - expect1).abs() < 1e-12);
    }

    #[test]
    fn fan_out_gradients_accumulate() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]), true).unwrap();
        let y = g.add(x, x).unwrap();
        let loss = g.sum_all(y).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn channel_abs_sum_elementwise_oracle() {
        // channels [[1,-2],[3,0]] and [[-1,1],[0,2]] -> [[2,3],[3,2]]
        let mut g = Graph::<f64>::new();
        let x = g
            .leaf(
                t(&[1, 2, 2, 2], &[1.0, -2.0, 3.0, 0.0, -1.0, 1.0, 0.0, 2.0]),
                false,
            )
            .unwrap();
        let q = g.channel_abs_sum(x).unwrap();
        assert_eq!(g.value(q).shape(), &[1, 2, 2]);
        assert_eq!(g.value(q).data(), &[2.0, 3.0, 3.0, 2.0]);
    }

    #[test]
    fn conv2d_is_linear_in_its_input() {
        // conv(a*x + b*y) = a*conv(x) + b*conv(y) with fixed weights, zero bias
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let mut rand_t = |shape: &[usize]| {
            Tensor::<f64>::from_fn(shape, |_| rng.random::<f64>() * 2.0 - 1.0)
        };
        let x = rand_t(&[2, 3, 7, 7]);
        let y = rand_t(&[2, 3, 7, 7]);
        let w = rand_t(&[4, 3, 3, 3]);
        let (a, b) = (1.7, -0.6);

        let conv = |input: Tensor<f64>, w: &Tensor<f64>| -> Vec<f64> {
            let mut g = Graph::<f64>::new();
            let x = g.leaf(input, false).unwrap();
            let wn = g.constant(w.clone()).unwrap();
            let bn = g.constant(Tensor::zeros(&[4])).unwrap();
            let out = g.conv2d(x, wn, bn, 2).unwrap();
            g.value(out).data().to_vec()
        };
        let mut combined = x.clone();
        for (c, (&xv, &yv)) in combined.data_mut().iter_mut().zip(x.data().iter().zip(y.data())) {
            *c = a * xv + b * yv;
        }
        let lhs = conv(combined, &w);
        let cx = conv(x, &w);
        let cy = conv(y, &w);
        for (l, (cx, cy)) in lhs.iter().zip(cx.iter().zip(cy.iter())) {
            assert!((l - (a * cx + b * cy)).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_deterministic_for_equal_seeds() {
        let run = |seed: u64| -> Vec<f64> {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..2 * 3 * 6 * 6).map(|_| rng.random::<f64>()).collect();
            let wdat: Vec<f64> = (0..4 * 3 * 3 * 3).map(|_| rng.random::<f64>() - 0.5).collect();
            let mut g = Graph::<f64>::new();
            let x = g.leaf(t(&[2, 3, 6, 6], &data), true).unwrap();
            let w = g.leaf(t(&[4, 3, 3, 3], &wdat), true).unwrap();
            let b = g.leaf(Tensor::zeros(&[4]), true).unwrap();
            let c = g.conv2d(x, w, b, 1).unwrap();
            let a = g.activation(c, Activation::LeakyRelu(0.01)).unwrap();
            let loss = g.sum_all(a).unwrap();
            g.backward(loss).unwrap();
            let mut out = g.value(loss).data().to_vec();
            out.extend_from_slice(g.grad(w).unwrap().data());
            out
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
    }
}
