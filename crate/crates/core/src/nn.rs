//! Sequential networks mixing full-precision, binarized and DPGC layers.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::dpgc::{dpgc_backward, dpgc_forward, DpgcBinding, DpgcGradients, DpgcLayer, DpgcTrace};
use crate::error::{Error, Result};
use crate::quant::{binary_forward, BinarizedBinding, BinarizedLayer, Operator};
use crate::tape::{Gradients, NodeId, Tape};
use crate::tensor::Tensor;

/// Full-precision linear or convolutional layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub operator: Operator,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Dense {
    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.operator.eval(x, &self.weight)?;
        match &self.bias {
            None => Ok(y),
            Some(b) => {
                let cols = b.len();
                let mut y = y;
                for row in y.data_mut().chunks_mut(cols) {
                    for (o, bv) in row.iter_mut().zip(b.data()) {
                        *o += bv;
                    }
                }
                Ok(y)
            }
        }
    }
}

/// Gaussian noise injected into the input gradient of a binarized layer.
///
/// Per step, `σ = η‖g‖₂ / sqrt(d)` where `g` is the surrogate input gradient
/// and `d` its element count, matching the compensator's norm budget.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientNoise {
    pub eta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Binarized {
        layer: BinarizedLayer,
        noise: Option<GradientNoise>,
    },
    Dpgc(DpgcLayer),
}

impl Layer {
    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense(d) => {
                let mut p = vec![&d.weight];
                p.extend(d.bias.as_ref());
                p
            }
            Layer::Binarized { layer, .. } => layer.params(),
            Layer::Dpgc(l) => l.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense(d) => {
                let mut p = vec![&mut d.weight];
                p.extend(d.bias.as_mut());
                p
            }
            Layer::Binarized { layer, .. } => layer.params_mut(),
            Layer::Dpgc(l) => l.params_mut(),
        }
    }

    /// The binarized main branch, if any.
    pub fn binarized(&self) -> Option<&BinarizedLayer> {
        match self {
            Layer::Dense(_) => None,
            Layer::Binarized { layer, .. } => Some(layer),
            Layer::Dpgc(l) => Some(&l.main),
        }
    }

    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Dense(d) => d.eval(x),
            Layer::Binarized { layer, .. } => layer.eval(x),
            Layer::Dpgc(l) => l.main.eval(x),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Stage {
    Layer(Layer),
    Relu,
    /// `[N, ...] -> [N, prod(...)]`.
    Flatten,
}

/// Tape leaves for every parameter of a [`Network`], in [`Network::params`] order.
#[derive(Clone, Debug)]
pub struct NetworkBinding {
    pub params: Vec<NodeId>,
    offsets: Vec<usize>,
}

/// What one layer recorded during [`Network::forward`].
#[derive(Clone, Debug)]
pub enum LayerTrace {
    Dense { input: NodeId, output: NodeId },
    Binarized { input: NodeId, output: NodeId },
    Dpgc(DpgcTrace),
}

impl LayerTrace {
    pub fn input(&self) -> NodeId {
        match self {
            LayerTrace::Dense { input, .. } | LayerTrace::Binarized { input, .. } => *input,
            LayerTrace::Dpgc(t) => t.input,
        }
    }

    pub fn output(&self) -> NodeId {
        match self {
            LayerTrace::Dense { output, .. } | LayerTrace::Binarized { output, .. } => *output,
            LayerTrace::Dpgc(t) => t.output,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub output: NodeId,
    /// One entry per layer stage, in order.
    pub layers: Vec<LayerTrace>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Network {
    pub stages: Vec<Stage>,
}

impl Network {
    pub fn new(stages: Vec<Stage>) -> Self {
        Self { stages }
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.stages.iter().filter_map(|s| match s {
            Stage::Layer(l) => Some(l),
            _ => None,
        })
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.stages.iter_mut().filter_map(|s| match s {
            Stage::Layer(l) => Some(l),
            _ => None,
        })
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers_mut().flat_map(Layer::params_mut).collect()
    }

    /// Number of learnable scalars.
    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Learnable scalars held in weight tensors (scales and biases excluded).
    pub fn weight_count(&self) -> usize {
        self.layers()
            .map(|l| match l {
                Layer::Dense(d) => d.weight.len(),
                Layer::Binarized { layer, .. } => layer.weight.len(),
                Layer::Dpgc(d) => d.main.weight.len() + d.aux_weight.len(),
            })
            .sum()
    }

    pub fn dpgc_layers(&self) -> impl Iterator<Item = &DpgcLayer> {
        self.layers().filter_map(|l| match l {
            Layer::Dpgc(d) => Some(d),
            _ => None,
        })
    }

    pub fn dpgc_layers_mut(&mut self) -> impl Iterator<Item = &mut DpgcLayer> {
        self.layers_mut().filter_map(|l| match l {
            Layer::Dpgc(d) => Some(d),
            _ => None,
        })
    }

    pub fn has_auxiliary(&self) -> bool {
        self.dpgc_layers().next().is_some()
    }

    /// Floor every binarized layer's scales; call after each optimizer step.
    pub fn clamp_scales(&mut self) {
        for l in self.layers_mut() {
            match l {
                Layer::Binarized { layer, .. } => layer.clamp_scales(),
                Layer::Dpgc(d) => d.main.clamp_scales(),
                Layer::Dense(_) => {}
            }
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> NetworkBinding {
        let mut params = Vec::new();
        let mut offsets = Vec::new();
        for layer in self.layers() {
            offsets.push(params.len());
            for p in layer.params() {
                params.push(tape.leaf(p.clone()));
            }
        }
        NetworkBinding { params, offsets }
    }

    /// Record the forward pass. `noise_rng` is required when any layer injects gradient noise.
    pub fn forward(
        &self,
        tape: &mut Tape,
        input: NodeId,
        binding: &NetworkBinding,
        mut noise_rng: Option<&mut dyn rand::RngCore>,
    ) -> Result<ForwardTrace> {
        let mut x = input;
        let mut traces = Vec::new();
        let mut layer_idx = 0;
        for stage in &self.stages {
            match stage {
                Stage::Relu => x = tape.relu(x)?,
                Stage::Flatten => {
                    let shape = tape.value(x).shape().to_vec();
                    let rows = *shape.first().ok_or_else(|| Error::invalid("flatten of a scalar"))?;
                    let cols = shape[1..].iter().product::<usize>();
                    x = tape.reshape(x, &[rows, cols])?;
                }
                Stage::Layer(layer) => {
                    let ids = &binding.params[binding.offsets[layer_idx]..];
                    layer_idx += 1;
                    let trace = match layer {
                        Layer::Dense(d) => {
                            let mut y = d.operator.apply(tape, x, ids[0])?;
                            if d.bias.is_some() {
                                y = tape.add_bias(y, ids[1])?;
                            }
                            LayerTrace::Dense { input: x, output: y }
                        }
                        Layer::Binarized { layer, noise } => {
                            let b = BinarizedBinding {
                                weight: ids[0],
                                alpha_w: ids[1],
                                alpha_x: ids[2],
                            };
                            let gated = match noise {
                                None => x,
                                Some(n) => {
                                    let rng = noise_rng
                                        .as_deref_mut()
                                        .ok_or_else(|| Error::invalid("gradient noise needs an rng"))?;
                                    noise_gate(tape, x, n.eta, rng)?
                                }
                            };
                            let y = binary_forward(tape, gated, layer, &b)?;
                            LayerTrace::Binarized { input: x, output: y }
                        }
                        Layer::Dpgc(d) => {
                            let b = DpgcBinding {
                                main: BinarizedBinding {
                                    weight: ids[0],
                                    alpha_w: ids[1],
                                    alpha_x: ids[2],
                                },
                                aux_weight: ids[3],
                            };
                            let (_, t) = dpgc_forward(tape, x, d, &b)?;
                            LayerTrace::Dpgc(t)
                        }
                    };
                    x = trace.output();
                    traces.push(trace);
                }
            }
        }
        Ok(ForwardTrace {
            output: x,
            layers: traces,
        })
    }

    /// Off-tape inference.
    pub fn eval(&self, input: &Tensor) -> Result<Tensor> {
        let mut x = input.clone();
        for stage in &self.stages {
            x = match stage {
                Stage::Relu => x.map(|v| v.max(0.0)),
                Stage::Flatten => {
                    let rows = x.shape()[0];
                    let cols = x.len() / rows.max(1);
                    x.reshape(&[rows, cols])?
                }
                Stage::Layer(l) => l.eval(&x)?,
            };
        }
        Ok(x)
    }

    /// Split every DPGC layer's gradients, in layer order.
    pub fn dpgc_gradients(&self, tape: &Tape, grads: &Gradients, trace: &ForwardTrace) -> Result<Vec<DpgcGradients>> {
        self.layers()
            .zip(&trace.layers)
            .filter_map(|(l, t)| match (l, t) {
                (Layer::Dpgc(d), LayerTrace::Dpgc(tr)) => Some(dpgc_backward(tape, grads, tr, d)),
                _ => None,
            })
            .collect()
    }

    /// Remove all auxiliary branches and AGS state.
    pub fn strip(self) -> Network {
        Network {
            stages: self
                .stages
                .into_iter()
                .map(|s| match s {
                    Stage::Layer(Layer::Dpgc(d)) => Stage::Layer(Layer::Binarized {
                        layer: d.strip(),
                        noise: None,
                    }),
                    other => other,
                })
                .collect(),
        }
    }
}

/// Identity forward; backward adds `σ·z` with `σ = η‖u‖/sqrt(d)` to the upstream `u`.
/// `z` is drawn here so that the noise is determined by the forward-time rng.
fn noise_gate(tape: &mut Tape, x: NodeId, eta: f64, rng: &mut dyn rand::RngCore) -> Result<NodeId> {
    let value = tape.value(x).clone();
    let z: Vec<f64> = (0..value.len()).map(|_| rng.sample(StandardNormal)).collect();
    tape.custom(
        "noise_gate",
        &[x],
        value,
        Box::new(move |up, _, _| {
            let sigma = eta * up.norm_l2() / (up.len() as f64).sqrt();
            let mut g = up.clone();
            for (gv, zv) in g.data_mut().iter_mut().zip(&z) {
                *gv += sigma * zv;
            }
            vec![g]
        }),
    )
}
