//! Declarative model construction: layer specs, shape algebra, parameter
//! accounting, attention hooks, and the instantiated network.
//!
//! A [`ModelSpec`] is an ordered layer list with declared per-sample output
//! shapes; building a [`Model`] verifies every declared shape against the
//! engine's shape algebra. The forward pass returns the pre-sigmoid logit
//! together with the activation of the attention-hook layer in one pass.

mod build;
mod serialize;

pub use build::{
    build_lighter_cnn, build_surrogate_teacher, lighter_cnn_spec, surrogate_teacher_spec, Profile,
};
pub use serialize::{deserialize, load_model, save_model, serialize, FORMAT_MAJOR, FORMAT_MINOR};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{Activation, BatchStats, Graph, NodeId, Scalar, Tensor};

/// One row of an architecture table.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
    },
    BatchNorm {
        activation: Activation,
    },
    AvgPool {
        size: usize,
        stride: usize,
    },
    Dropout,
    Flatten,
    Dense {
        units: usize,
        activation: Activation,
    },
    /// Final affine head; its logit feeds a sigmoid at prediction time.
    Output {
        units: usize,
    },
}

/// Layer plus the output shape the architecture table declares for it.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Per-sample dims, e.g. `[64, 147, 147]` or `[512]`.
    pub declared_output: Vec<usize>,
}

/// Complete declarative description of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    /// Per-sample input dims `[channels, height, width]`.
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
    /// Index of the layer whose activation feeds the spatial attention map.
    pub attention_hook: usize,
    pub leaky_slope: f64,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl ModelSpec {
    /// Walk the layer list and compute each per-sample output shape.
    pub fn computed_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape: Vec<usize> = self.input_shape.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match &layer.kind {
                LayerKind::Conv {
                    filters,
                    kernel,
                    stride,
                } => {
                    let [c, h, w] = as_3d(&shape, i, "conv")?;
                    let _ = c;
                    let (ho, wo) = conv_out(h, w, *kernel, *stride, i)?;
                    vec![*filters, ho, wo]
                }
                LayerKind::BatchNorm { .. } => {
                    as_3d(&shape, i, "batchnorm")?;
                    shape
                }
                LayerKind::AvgPool { size, stride } => {
                    let [c, h, w] = as_3d(&shape, i, "avgpool")?;
                    let (ho, wo) = conv_out(h, w, *size, *stride, i)?;
                    vec![c, ho, wo]
                }
                LayerKind::Dropout => shape,
                LayerKind::Flatten => vec![shape.iter().product()],
                LayerKind::Dense { units, .. } | LayerKind::Output { units } => {
                    if shape.len() != 1 {
                        return Err(Error::Shape {
                            op: "dense",
                            detail: format!("layer {i} expects flattened input, got {shape:?}"),
                        });
                    }
                    vec![*units]
                }
            };
            out.push(shape.clone());
        }
        Ok(out)
    }

    /// Check declared shapes, hook placement and head structure.
    pub fn validate(&self) -> Result<()> {
        let computed = self.computed_shapes()?;
        for (i, (layer, got)) in self.layers.iter().zip(&computed).enumerate() {
            if &layer.declared_output != got {
                return Err(Error::Shape {
                    op: "model_spec",
                    detail: format!(
                        "layer {i} declares output {:?} but shape algebra gives {:?}",
                        layer.declared_output, got
                    ),
                });
            }
        }
        let heads = self
            .layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Output { .. }))
            .count();
        if heads != 1 || !matches!(self.layers.last().map(|l| &l.kind), Some(LayerKind::Output { .. })) {
            return Err(Error::Contract(format!(
                "model must end in exactly one output head, found {heads}"
            )));
        }
        match computed.get(self.attention_hook) {
            Some(s) if s.len() == 3 => Ok(()),
            Some(s) => Err(Error::Contract(format!(
                "attention hook {} has non-3D activation {s:?}",
                self.attention_hook
            ))),
            None => Err(Error::Contract(format!(
                "attention hook {} out of range",
                self.attention_hook
            ))),
        }
    }

    /// Per-sample spatial dims of the attention source (its H x W).
    pub fn attention_resolution(&self) -> Result<(usize, usize)> {
        let shapes = self.computed_shapes()?;
        let s = &shapes[self.attention_hook];
        Ok((s[1], s[2]))
    }
}

fn as_3d(shape: &[usize], layer: usize, kind: &'static str) -> Result<[usize; 3]> {
    match shape {
        [c, h, w] => Ok([*c, *h, *w]),
        other => Err(Error::Shape {
            op: "model_spec",
            detail: format!("layer {layer} ({kind}) expects 3D input, got {other:?}"),
        }),
    }
}

fn conv_out(h: usize, w: usize, k: usize, stride: usize, layer: usize) -> Result<(usize, usize)> {
    if k == 0 || stride == 0 || h < k || w < k {
        return Err(Error::Shape {
            op: "model_spec",
            detail: format!("layer {layer}: window {k}/{stride} does not fit {h}x{w}"),
        });
    }
    Ok(((h - k) / stride + 1, (w - k) / stride + 1))
}

/// Named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor<E> {
    pub name: String,
    pub value: Tensor<E>,
    pub trainable: bool,
}

/// Non-trainable running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<E> {
    pub running_mean: Vec<E>,
    pub running_var: Vec<E>,
    pub initialized: bool,
}

/// Forward-pass mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Result of one forward pass.
pub struct ForwardPass {
    /// Pre-sigmoid logits, shape N x 1.
    pub logits: NodeId,
    /// Activation of the attention-hook layer, shape N x C x H x W.
    pub attention: NodeId,
    /// Graph nodes of the model parameters, parallel to `Model::params`.
    pub param_nodes: Vec<NodeId>,
}

/// Instantiated network: spec, parameters, batch-norm state and the seed
/// the weights were drawn from.
#[derive(Debug, Clone)]
pub struct Model<E: Scalar> {
    spec: ModelSpec,
    params: Vec<ParamTensor<E>>,
    bn_states: Vec<BatchNormState<E>>,
    seed: u64,
}

impl<E: Scalar> Model<E> {
    /// Build a model from a validated spec with He-normal initialization.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut bn_states = Vec::new();
        let mut shape: Vec<usize> = spec.input_shape.to_vec();
        for (i, layer) in spec.layers.iter().enumerate() {
            match &layer.kind {
                LayerKind::Conv {
                    filters,
                    kernel,
                    stride: _,
                } => {
                    let c = shape[0];
                    let fan_in = c * kernel * kernel;
                    params.push(ParamTensor {
                        name: format!("layer{i}.weight"),
                        value: he_normal(&mut rng, &[*filters, c, *kernel, *kernel], fan_in),
                        trainable: true,
                    });
                    params.push(ParamTensor {
                        name: format!("layer{i}.bias"),
                        value: Tensor::zeros(&[*filters]),
                        trainable: true,
                    });
                }
                LayerKind::BatchNorm { .. } => {
                    let c = shape[0];
                    params.push(ParamTensor {
                        name: format!("layer{i}.gamma"),
                        value: Tensor::full(&[c], E::one()),
                        trainable: true,
                    });
                    params.push(ParamTensor {
                        name: format!("layer{i}.beta"),
                        value: Tensor::zeros(&[c]),
                        trainable: true,
                    });
                    bn_states.push(BatchNormState {
                        running_mean: vec![E::zero(); c],
                        running_var: vec![E::one(); c],
                        initialized: false,
                    });
                }
                LayerKind::Dense { units, .. } | LayerKind::Output { units } => {
                    let d = shape[0];
                    params.push(ParamTensor {
                        name: format!("layer{i}.weight"),
                        value: he_normal(&mut rng, &[d, *units], d),
                        trainable: true,
                    });
                    params.push(ParamTensor {
                        name: format!("layer{i}.bias"),
                        value: Tensor::zeros(&[*units]),
                        trainable: true,
                    });
                }
                LayerKind::AvgPool { .. } | LayerKind::Dropout | LayerKind::Flatten => {}
            }
            shape = layer.declared_output.clone();
        }
        Ok(Self {
            spec,
            params,
            bn_states,
            seed,
        })
    }

    pub(crate) fn from_parts(
        spec: ModelSpec,
        params: Vec<ParamTensor<E>>,
        bn_states: Vec<BatchNormState<E>>,
        seed: u64,
    ) -> Self {
        Self {
            spec,
            params,
            bn_states,
            seed,
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[ParamTensor<E>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ParamTensor<E>] {
        &mut self.params
    }

    pub fn bn_states(&self) -> &[BatchNormState<E>] {
        &self.bn_states
    }

    /// Mark every parameter non-trainable.
    pub fn freeze_all(&mut self) {
        for p in &mut self.params {
            p.trainable = false;
        }
    }

    /// Replace parameters and batch-norm state (checkpoint restoration).
    pub fn restore(
        &mut self,
        params: Vec<ParamTensor<E>>,
        bn_states: Vec<BatchNormState<E>>,
    ) -> Result<()> {
        if params.len() != self.params.len() || bn_states.len() != self.bn_states.len() {
            return Err(Error::Contract(format!(
                "checkpoint holds {} params / {} bn states, model has {} / {}",
                params.len(),
                bn_states.len(),
                self.params.len(),
                self.bn_states.len()
            )));
        }
        for (new, old) in params.iter().zip(&self.params) {
            if new.name != old.name || new.value.shape() != old.value.shape() {
                return Err(Error::Contract(format!(
                    "checkpoint parameter `{}` does not match model parameter `{}`",
                    new.name, old.name
                )));
            }
        }
        self.params = params;
        self.bn_states = bn_states;
        Ok(())
    }

    /// (trainable, total) parameter counts. Running statistics count as
    /// non-trainable parameters.
    pub fn count_parameters(&self) -> (usize, usize) {
        let trainable: usize = self
            .params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum();
        let weights: usize = self.params.iter().map(|p| p.value.len()).sum();
        let running: usize = self
            .bn_states
            .iter()
            .map(|s| s.running_mean.len() + s.running_var.len())
            .sum();
        (trainable, weights + running)
    }

    /// Train-mode forward: batch statistics are used and folded into the
    /// running buffers, dropout is active when `dropout_rate > 0`.
    pub fn forward_train<R: Rng>(
        &mut self,
        graph: &mut Graph<E>,
        batch: &Tensor<E>,
        dropout_rate: f64,
        rng: &mut R,
    ) -> Result<ForwardPass> {
        let (pass, stats) = self.forward_inner(graph, batch, Mode::Train, dropout_rate, Some(rng))?;
        let keep = E::from_f64(self.spec.bn_momentum);
        let new = E::one() - keep;
        for (state, batch_stats) in self.bn_states.iter_mut().zip(stats) {
            if state.initialized {
                for ((rm, rv), (bm, bv)) in state
                    .running_mean
                    .iter_mut()
                    .zip(state.running_var.iter_mut())
                    .zip(batch_stats.mean.iter().zip(batch_stats.var.iter()))
                {
                    *rm = keep * *rm + new * *bm;
                    *rv = keep * *rv + new * *bv;
                }
            } else {
                // warm start: the first batch's statistics seed the running
                // buffers instead of the (0, 1) placeholders
                state.running_mean.copy_from_slice(&batch_stats.mean);
                state.running_var.copy_from_slice(&batch_stats.var);
                state.initialized = true;
            }
        }
        Ok(pass)
    }

    /// Eval-mode forward: running statistics, dropout is identity. The
    /// model is not mutated and may be shared read-only.
    pub fn forward_eval(&self, graph: &mut Graph<E>, batch: &Tensor<E>) -> Result<ForwardPass> {
        self.forward_inner::<ChaCha20Rng>(graph, batch, Mode::Eval, 0.0, None)
            .map(|(pass, _)| pass)
    }

    fn forward_inner<R: Rng>(
        &self,
        graph: &mut Graph<E>,
        batch: &Tensor<E>,
        mode: Mode,
        dropout_rate: f64,
        mut rng: Option<&mut R>,
    ) -> Result<(ForwardPass, Vec<BatchStats<E>>)> {
        let [c, h, w] = self.spec.input_shape;
        if batch.ndim() != 4 || batch.shape()[1..] != [c, h, w] {
            return Err(Error::Shape {
                op: "forward",
                detail: format!(
                    "batch shape {:?} does not match model input {:?}",
                    batch.shape(),
                    self.spec.input_shape
                ),
            });
        }
        let train = mode == Mode::Train;
        let eps = E::from_f64(self.spec.bn_epsilon);

        let mut param_nodes = Vec::with_capacity(self.params.len());
        for p in &self.params {
            let requires = train && p.trainable;
            param_nodes.push(graph.leaf(p.value.clone(), requires)?);
        }

        let mut x = graph.constant(batch.clone())?;
        let mut attention = None;
        let mut batch_stats = Vec::new();
        let mut pi = 0usize; // next param index
        let mut bi = 0usize; // next batch-norm state index
        for (i, layer) in self.spec.layers.iter().enumerate() {
            x = match &layer.kind {
                LayerKind::Conv { stride, .. } => {
                    let (wgt, bias) = (param_nodes[pi], param_nodes[pi + 1]);
                    pi += 2;
                    graph.conv2d(x, wgt, bias, *stride)?
                }
                LayerKind::BatchNorm { activation } => {
                    let (gamma, beta) = (param_nodes[pi], param_nodes[pi + 1]);
                    pi += 2;
                    let state = &self.bn_states[bi];
                    bi += 1;
                    let normed = if train {
                        let (node, stats) = graph.batchnorm_train(x, gamma, beta, eps)?;
                        batch_stats.push(stats);
                        node
                    } else {
                        if !state.initialized {
                            return Err(Error::State(format!(
                                "layer {i}: eval-mode batchnorm before any train-mode statistics"
                            )));
                        }
                        graph.batchnorm_eval(
                            x,
                            gamma,
                            beta,
                            &state.running_mean,
                            &state.running_var,
                            eps,
                        )?
                    };
                    self.apply_activation(graph, normed, *activation)?
                }
                LayerKind::AvgPool { size, stride } => graph.avgpool2d(x, *size, *stride)?,
                LayerKind::Dropout => {
                    if train && dropout_rate > 0.0 {
                        let rng = rng.as_deref_mut().ok_or_else(|| {
                            Error::Contract("train-mode dropout requires an rng".into())
                        })?;
                        graph.dropout_train(x, dropout_rate, rng)?
                    } else {
                        x
                    }
                }
                LayerKind::Flatten => graph.flatten(x)?,
                LayerKind::Dense { activation, .. } => {
                    let (wgt, bias) = (param_nodes[pi], param_nodes[pi + 1]);
                    pi += 2;
                    let y = graph.dense(x, wgt, bias)?;
                    self.apply_activation(graph, y, *activation)?
                }
                LayerKind::Output { .. } => {
                    let (wgt, bias) = (param_nodes[pi], param_nodes[pi + 1]);
                    pi += 2;
                    // the head stops at the logit; sigmoid is applied by consumers
                    graph.dense(x, wgt, bias)?
                }
            };
            if i == self.spec.attention_hook {
                attention = Some(x);
            }
        }
        Ok((
            ForwardPass {
                logits: x,
                attention: attention.expect("validated hook index"),
                param_nodes,
            },
            batch_stats,
        ))
    }

    fn apply_activation(
        &self,
        graph: &mut Graph<E>,
        x: NodeId,
        kind: Activation,
    ) -> Result<NodeId> {
        let kind = match kind {
            Activation::LeakyRelu(_) => Activation::LeakyRelu(self.spec.leaky_slope),
            other => other,
        };
        graph.activation(x, kind)
    }

    /// Eval-mode scores: sigmoid(logit) per sample, as f64.
    pub fn predict_proba(&self, batch: &Tensor<E>) -> Result<Vec<f64>> {
        Ok(self
            .eval_batch(batch)?
            .logits
            .iter()
            .map(|&t| stable_sigmoid_f64(t))
            .collect())
    }

    /// Eval-mode logits plus the attention-source activation.
    pub fn eval_batch(&self, batch: &Tensor<E>) -> Result<EvalOutput<E>> {
        let mut graph = Graph::new();
        let pass = self.forward_eval(&mut graph, batch)?;
        let logits = graph
            .value(pass.logits)
            .data()
            .iter()
            .map(|v| v.as_f64())
            .collect();
        let attention = graph.value(pass.attention).clone();
        Ok(EvalOutput { logits, attention })
    }
}

/// Eval-mode outputs of one batch.
pub struct EvalOutput<E> {
    /// Pre-sigmoid logits as f64, one per sample.
    pub logits: Vec<f64>,
    /// Attention-source activations, N x C x H x W.
    pub attention: Tensor<E>,
}

fn he_normal<E: Scalar, R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor<E> {
    let std = (2.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(rng);
        E::from_f64(z * std)
    })
}

pub(crate) fn stable_sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
