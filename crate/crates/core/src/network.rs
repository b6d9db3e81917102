//! Declarative architecture description and the weight-shared parameter
//! store both branches read from.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bn::{fold_weights, BnConfig, BnState};
use crate::error::{Error, Result};
use crate::mapping::MappingKind;
use crate::tensor::{conv2d_backward, conv2d_forward, conv_output_dim, fc_backward, fc_forward, GradPair, Tensor};

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        kernel: usize,
        channels: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    /// Max-pooling on the output of the preceding convolution, applied at
    /// every time step before the IF neurons.
    #[serde(rename = "maxpool")]
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    Fc {
        out: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Per-sample input shape: `[C, H, W]` or `[F]`.
    pub input: Vec<usize>,
    pub time_steps: usize,
    pub mapping: MappingKind,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AffineOp {
    Conv { stride: usize, padding: usize },
    Fc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub kernel: usize,
    pub stride: usize,
}

/// Geometry of one weight layer (a convolution or fully connected map, plus
/// its attached pooling).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagePlan {
    pub op: AffineOp,
    pub kernel: usize,
    pub in_shape: Vec<usize>,
    /// Output of the affine map, before pooling.
    pub affine_shape: Vec<usize>,
    pub pool: Option<PoolSpec>,
    /// Shape seen by the neurons (after pooling).
    pub out_shape: Vec<usize>,
}

impl StagePlan {
    pub fn out_channels(&self) -> usize {
        self.affine_shape[0]
    }

    pub fn in_features(&self) -> usize {
        self.in_shape.iter().product()
    }

    pub fn neurons(&self) -> usize {
        self.out_shape.iter().product()
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        match self.op {
            AffineOp::Conv { .. } => vec![self.affine_shape[0], self.in_shape[0], self.kernel, self.kernel],
            AffineOp::Fc => vec![self.affine_shape[0], self.in_features()],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight_shape()[1..].iter().product()
    }

    /// Multiply-accumulate count of a dense (ANN) evaluation of this layer.
    pub fn ann_ops(&self) -> u64 {
        match self.op {
            AffineOp::Conv { .. } => {
                let [c_out, h_out, w_out] = self.affine_shape[..] else {
                    unreachable!()
                };
                (self.kernel * self.kernel * self.in_shape[0] * h_out * w_out * c_out) as u64
            }
            AffineOp::Fc => (self.in_features() * self.affine_shape[0]) as u64,
        }
    }
}

impl NetworkSpec {
    /// Resolves layer geometry without requiring a classifier at the end.
    pub fn plan(&self) -> Result<Vec<StagePlan>> {
        let mut shape = self.input.clone();
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Config(format!(
                "input shape {shape:?} must be non-empty and positive"
            )));
        }
        let mut stages: Vec<StagePlan> = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv {
                    kernel,
                    channels,
                    stride,
                    padding,
                } => {
                    let &[c, h, w] = &shape[..] else {
                        return Err(Error::Config(format!(
                            "layer {i}: convolution needs a [C, H, W] input, got {shape:?}"
                        )));
                    };
                    if channels == 0 {
                        return Err(Error::Config(format!("layer {i}: zero output channels")));
                    }
                    let (Some(ho), Some(wo)) = (
                        conv_output_dim(h, kernel, stride, padding),
                        conv_output_dim(w, kernel, stride, padding),
                    ) else {
                        return Err(Error::Config(format!(
                            "layer {i}: kernel {kernel} (stride {stride}, padding {padding}) does not fit {h}x{w}"
                        )));
                    };
                    let out = vec![channels, ho, wo];
                    stages.push(StagePlan {
                        op: AffineOp::Conv { stride, padding },
                        kernel,
                        in_shape: vec![c, h, w],
                        affine_shape: out.clone(),
                        pool: None,
                        out_shape: out.clone(),
                    });
                    shape = out;
                }
                LayerSpec::MaxPool { kernel, stride } => {
                    let Some(stage) = stages
                        .last_mut()
                        .filter(|s| matches!(s.op, AffineOp::Conv { .. }) && s.pool.is_none())
                    else {
                        return Err(Error::Config(format!(
                            "layer {i}: max-pool must directly follow a convolution"
                        )));
                    };
                    let &[c, h, w] = &stage.out_shape[..] else {
                        unreachable!()
                    };
                    if kernel == 0 || stride == 0 || kernel > h || kernel > w {
                        return Err(Error::Config(format!(
                            "layer {i}: pool window {kernel} does not fit {h}x{w}"
                        )));
                    }
                    stage.pool = Some(PoolSpec { kernel, stride });
                    stage.out_shape = vec![c, (h - kernel) / stride + 1, (w - kernel) / stride + 1];
                    shape = stage.out_shape.clone();
                }
                LayerSpec::Fc { out } => {
                    if out == 0 {
                        return Err(Error::Config(format!("layer {i}: zero outputs")));
                    }
                    let f_in: usize = shape.iter().product();
                    stages.push(StagePlan {
                        op: AffineOp::Fc,
                        kernel: 0,
                        in_shape: vec![f_in],
                        affine_shape: vec![out],
                        pool: None,
                        out_shape: vec![out],
                    });
                    shape = vec![out];
                }
            }
        }
        Ok(stages)
    }

    /// Full validation: geometry, a window of at least one step, and a fully
    /// connected classifier as the last layer.
    pub fn validate(&self) -> Result<Vec<StagePlan>> {
        if self.time_steps == 0 {
            return Err(Error::Config("time_steps must be at least 1".into()));
        }
        if !matches!(self.layers.last(), Some(LayerSpec::Fc { .. })) {
            return Err(Error::Config(
                "the last layer must be a fully connected classifier".into(),
            ));
        }
        if !matches!(self.input.len(), 1 | 3) {
            return Err(Error::Config(format!(
                "input must be [F] or [C, H, W], got {:?}",
                self.input
            )));
        }
        self.plan()
    }

    pub fn classes(&self) -> Option<usize> {
        match self.layers.last() {
            Some(LayerSpec::Fc { out }) => Some(*out),
            _ => None,
        }
    }
}

/// One weight-shared hidden layer: a single parameter store read by both the
/// spiking and the ANN branch.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedLayer {
    pub plan: StagePlan,
    pub weight: GradPair,
    pub bias: GradPair,
    pub bn: BnState,
    /// Firing threshold of this layer's IF neurons.
    pub threshold: f32,
}

impl SharedLayer {
    /// Per-step weights and bias for the spiking branch.
    pub fn folded(&self, time_steps: usize) -> Result<(Tensor, Tensor)> {
        fold_weights(&self.weight.value, &self.bias.value, &self.bn, time_steps)
    }

    /// Applies the layer's affine map with the given parameters to a
    /// `[N, ...in_shape]` batch.
    pub fn affine(&self, input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
        affine_forward(self.plan.op, input, weight, bias)
    }

    pub fn affine_backward(&self, grad_out: &Tensor, input: &Tensor, weight: &Tensor) -> Result<AffineGrads> {
        affine_backward(self.plan.op, grad_out, input, weight)
    }
}

#[derive(Debug, Clone)]
pub struct AffineGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub(crate) fn affine_forward(op: AffineOp, input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    match op {
        AffineOp::Conv { stride, padding } => conv2d_forward(input, weight, bias, stride, padding),
        AffineOp::Fc => {
            let flat = if input.ndim() == 2 {
                input.clone()
            } else {
                input.clone().flatten_batch()?
            };
            fc_forward(&flat, weight, bias)
        }
    }
}

pub(crate) fn affine_backward(op: AffineOp, grad_out: &Tensor, input: &Tensor, weight: &Tensor) -> Result<AffineGrads> {
    match op {
        AffineOp::Conv { stride, padding } => {
            let g = conv2d_backward(grad_out, input, weight, stride, padding)?;
            Ok(AffineGrads {
                input: g.input,
                weight: g.weight,
                bias: g.bias,
            })
        }
        AffineOp::Fc => {
            let flat = if input.ndim() == 2 {
                input.clone()
            } else {
                input.clone().flatten_batch()?
            };
            let g = fc_backward(grad_out, &flat, weight)?;
            Ok(AffineGrads {
                input: g.input.reshape(input.shape())?,
                weight: g.weight,
                bias: g.bias,
            })
        }
    }
}

/// Fully connected output layer; consumes accumulated spikes of the last
/// hidden layer and has no neurons of its own.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub plan: StagePlan,
    pub weight: GradPair,
    pub bias: GradPair,
}

impl Classifier {
    pub fn forward(&self, features: &Tensor) -> Result<Tensor> {
        affine_forward(AffineOp::Fc, features, &self.weight.value, &self.bias.value)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    pub layers: Vec<SharedLayer>,
    pub classifier: Classifier,
}

fn uniform_tensor(shape: &[usize], bound: f32, rng: &mut impl Rng) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

impl Network {
    /// Builds a freshly initialized network. Weights and biases are drawn from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, thresholds from `U(0, 1)`.
    pub fn new(spec: NetworkSpec, bn: &BnConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut plans = spec.validate()?;
        bn.validate()?;
        let classifier_plan = plans.pop().expect("validated spec has a classifier");
        let layers = plans
            .into_iter()
            .map(|plan| {
                let bound = 1.0 / (plan.fan_in() as f32).sqrt();
                let weight = GradPair::new(uniform_tensor(&plan.weight_shape(), bound, rng));
                let bias = GradPair::new(uniform_tensor(&[plan.out_channels()], bound, rng));
                let mut threshold = 0.0f32;
                while threshold <= 0.0 {
                    threshold = rng.gen_range(0.0..1.0);
                }
                SharedLayer {
                    bn: BnState::new(plan.out_channels(), bn),
                    plan,
                    weight,
                    bias,
                    threshold,
                }
            })
            .collect();
        let bound = 1.0 / (classifier_plan.fan_in() as f32).sqrt();
        let classifier = Classifier {
            weight: GradPair::new(uniform_tensor(&classifier_plan.weight_shape(), bound, rng)),
            bias: GradPair::new(uniform_tensor(&[classifier_plan.out_channels()], bound, rng)),
            plan: classifier_plan,
        };
        Ok(Self {
            spec,
            layers,
            classifier,
        })
    }

    pub(crate) fn from_parts(spec: NetworkSpec, layers: Vec<SharedLayer>, classifier: Classifier) -> Self {
        Self {
            spec,
            layers,
            classifier,
        }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn time_steps(&self) -> usize {
        self.spec.time_steps
    }

    pub fn mapping(&self) -> MappingKind {
        self.spec.mapping
    }

    /// Switches the mapping unit; parameters are untouched.
    pub fn set_mapping(&mut self, mapping: MappingKind) {
        self.spec.mapping = mapping;
    }

    pub fn thresholds(&self) -> Vec<f32> {
        self.layers.iter().map(|l| l.threshold).collect()
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.spec.input
    }

    /// Every trainable parameter in a fixed order: per hidden layer weight,
    /// bias, gamma, beta; then classifier weight and bias.
    pub fn params_mut(&mut self) -> Vec<&mut GradPair> {
        let mut out = Vec::with_capacity(self.layers.len() * 4 + 2);
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
            out.push(&mut l.bn.gamma);
            out.push(&mut l.bn.beta);
        }
        out.push(&mut self.classifier.weight);
        out.push(&mut self.classifier.bias);
        out
    }

    pub fn param_count(&self) -> usize {
        let hidden: usize = self
            .layers
            .iter()
            .map(|l| l.weight.value.len() + l.bias.value.len() + 2 * l.bn.channels())
            .sum();
        hidden + self.classifier.weight.value.len() + self.classifier.bias.value.len()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Checks that a batch tensor is `[N, ...input]`.
    pub fn check_input(&self, x: &Tensor) -> Result<usize> {
        if x.ndim() != self.spec.input.len() + 1 || x.shape()[1..] != self.spec.input[..] {
            return Err(Error::shape(
                "network input",
                format!("expected [N, {:?}], got {:?}", self.spec.input, x.shape()),
            ));
        }
        Ok(x.shape()[0])
    }
}
