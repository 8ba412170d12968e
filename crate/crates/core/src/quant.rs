//! Sign binarization with learnable scales and surrogate gradients.
//!
//! A binarized layer computes `alpha_w * alpha_x * (sign(W) op sign(x))`,
//! where `op` is a matrix product or a convolution. `sign` has zero
//! derivative almost everywhere, so its backward pass is replaced by a
//! surrogate: identity for weights, and a clipped identity (STE) or the
//! Bi-Real piecewise-polynomial derivative for activations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Lower bound applied to the learnable scales after every update.
pub const SCALE_FLOOR: f64 = 1e-6;

/// Elementwise sign with `sign(0) = +1`, so every output is exactly `±1`.
pub fn sign(t: &Tensor) -> Tensor {
    t.map(sign_value)
}

#[inline]
pub fn sign_value(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// `upstream * 1{|x| <= clip_bound}`.
pub fn ste_activation_backward(upstream: &Tensor, x: &Tensor, clip_bound: f64) -> Result<Tensor> {
    upstream.zip_map(x, "ste_activation_backward", |u, v| {
        if v.abs() <= clip_bound {
            u
        } else {
            0.0
        }
    })
}

/// Identity pass-through used for `dB_W / dW`.
pub fn ste_weight_backward(upstream: &Tensor) -> Tensor {
    upstream.clone()
}

/// Derivative of the Bi-Real polynomial approximation of `sign`:
/// `2 + 2x` on `[-1, 0)`, `2 - 2x` on `[0, 1]`, zero elsewhere.
#[inline]
pub fn bireal_derivative(x: f64) -> f64 {
    if (-1.0..0.0).contains(&x) {
        2.0 + 2.0 * x
    } else if (0.0..=1.0).contains(&x) {
        2.0 - 2.0 * x
    } else {
        0.0
    }
}

pub fn bireal_activation_backward(upstream: &Tensor, x: &Tensor) -> Result<Tensor> {
    upstream.zip_map(x, "bireal_activation_backward", |u, v| u * bireal_derivative(v))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SurrogateKind {
    Ste,
    BiReal,
}

/// Backward rule for activation binarization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateRule {
    pub kind: SurrogateKind,
    clip_bound: f64,
}

impl SurrogateRule {
    pub fn new(kind: SurrogateKind, clip_bound: f64) -> Result<Self> {
        if !(clip_bound > 0.0 && clip_bound.is_finite()) {
            return Err(Error::invalid(format!("clip_bound must be > 0, got {clip_bound}")));
        }
        Ok(Self { kind, clip_bound })
    }

    pub fn ste() -> Self {
        Self {
            kind: SurrogateKind::Ste,
            clip_bound: 1.0,
        }
    }

    pub fn bireal() -> Self {
        Self {
            kind: SurrogateKind::BiReal,
            clip_bound: 1.0,
        }
    }

    pub fn clip_bound(&self) -> f64 {
        self.clip_bound
    }

    pub fn activation_backward(&self, upstream: &Tensor, x: &Tensor) -> Result<Tensor> {
        match self.kind {
            SurrogateKind::Ste => ste_activation_backward(upstream, x, self.clip_bound),
            SurrogateKind::BiReal => bireal_activation_backward(upstream, x),
        }
    }
}

impl fmt::Display for SurrogateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SurrogateKind::Ste => "STE",
            SurrogateKind::BiReal => "BiReal",
        })
    }
}

impl FromStr for SurrogateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ste" => Ok(SurrogateKind::Ste),
            "bireal" | "bi-real" => Ok(SurrogateKind::BiReal),
            _ => Err(Error::UnknownTag {
                kind: "surrogate",
                tag: s.to_string(),
            }),
        }
    }
}

/// Record `sign(x)` with the activation surrogate of `rule`.
pub fn sign_activation(tape: &mut Tape, x: NodeId, rule: SurrogateRule) -> Result<NodeId> {
    let value = sign(tape.value(x));
    tape.custom(
        "sign_activation",
        &[x],
        value,
        Box::new(move |up, inputs, _| {
            vec![rule
                .activation_backward(up, inputs[0])
                .expect("surrogate shapes match by construction")]
        }),
    )
}

/// Record `sign(w)` with the identity (straight-through) weight surrogate.
pub fn sign_weight(tape: &mut Tape, w: NodeId) -> Result<NodeId> {
    let value = sign(tape.value(w));
    tape.custom(
        "sign_weight",
        &[w],
        value,
        Box::new(|up, _, _| vec![ste_weight_backward(up)]),
    )
}

/// How a layer combines its input with its weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Operator {
    /// `x: [N, in]`, `W: [out, in]`, output `x Wᵀ: [N, out]`.
    Linear,
    /// `x: [N, C_in, H, W]`, `W: [C_out, C_in, k, k]`, same-size stride-1 convolution.
    Conv2d,
}

impl Operator {
    /// Record the full-precision operator on the tape.
    pub fn apply(self, tape: &mut Tape, x: NodeId, w: NodeId) -> Result<NodeId> {
        match self {
            Operator::Linear => {
                let wt = tape.transpose(w)?;
                tape.matmul(x, wt)
            }
            Operator::Conv2d => tape.conv2d(x, w),
        }
    }

    /// Plain evaluation, off tape.
    pub fn eval(self, x: &Tensor, w: &Tensor) -> Result<Tensor> {
        match self {
            Operator::Linear => crate::tensor::matmul(x, &crate::tensor::transpose(w)?),
            Operator::Conv2d => crate::tensor::conv2d(x, w),
        }
    }

    /// Input adjoint of the operator for output adjoint `up`.
    pub fn input_vjp(self, up: &Tensor, x: &Tensor, w: &Tensor) -> Result<Tensor> {
        match self {
            Operator::Linear => crate::tensor::matmul(up, w),
            Operator::Conv2d => Ok(crate::tensor::conv2d_vjp(up, x, w)?.0),
        }
    }
}

/// Initial scales: `alpha_w = mean(|W|)` floored at [`SCALE_FLOOR`], `alpha_x = 1`.
pub fn init_alphas(w: &Tensor) -> Result<(f64, f64)> {
    if w.is_empty() {
        return Err(Error::invalid("init_alphas on an empty weight"));
    }
    let mean_abs = w.data().iter().map(|v| v.abs()).sum::<f64>() / w.len() as f64;
    Ok((mean_abs.max(SCALE_FLOOR), 1.0))
}

/// Binarized linear or convolutional layer with learnable scalar scales.
#[derive(Clone, Debug, PartialEq)]
pub struct BinarizedLayer {
    pub operator: Operator,
    /// Latent real-valued weights; only their signs reach the forward pass.
    pub weight: Tensor,
    pub alpha_w: Tensor,
    pub alpha_x: Tensor,
    pub rule: SurrogateRule,
}

/// Tape leaves of a [`BinarizedLayer`]'s parameters.
#[derive(Clone, Copy, Debug)]
pub struct BinarizedBinding {
    pub weight: NodeId,
    pub alpha_w: NodeId,
    pub alpha_x: NodeId,
}

impl BinarizedLayer {
    pub fn new(operator: Operator, weight: Tensor, rule: SurrogateRule) -> Result<Self> {
        match (operator, weight.rank()) {
            (Operator::Linear, 2) | (Operator::Conv2d, 4) => {}
            _ => {
                return Err(Error::invalid(format!(
                    "{operator:?} weight of shape {:?}",
                    weight.shape()
                )))
            }
        }
        let (aw, ax) = init_alphas(&weight)?;
        Ok(Self {
            operator,
            weight,
            alpha_w: Tensor::scalar(aw),
            alpha_x: Tensor::scalar(ax),
            rule,
        })
    }

    pub fn bind(&self, tape: &mut Tape) -> BinarizedBinding {
        BinarizedBinding {
            weight: tape.leaf(self.weight.clone()),
            alpha_w: tape.leaf(self.alpha_w.clone()),
            alpha_x: tape.leaf(self.alpha_x.clone()),
        }
    }

    /// Scales floored at [`SCALE_FLOOR`]; call after every parameter update.
    pub fn clamp_scales(&mut self) {
        for a in [&mut self.alpha_w, &mut self.alpha_x] {
            let v = &mut a.data_mut()[0];
            *v = v.max(SCALE_FLOOR);
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.alpha_w, &self.alpha_x]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.alpha_w, &mut self.alpha_x]
    }

    /// Off-tape forward value.
    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        let core = self.operator.eval(&sign(x), &sign(&self.weight))?;
        let aw = self.alpha_w.item()?;
        let ax = self.alpha_x.item()?;
        Ok(core.map(|v| v * aw * ax))
    }
}

/// `alpha_w * alpha_x * (sign(W) op sign(x))` on the tape.
///
/// The activation sign carries the layer's surrogate, the weight sign the
/// identity surrogate; the scales get exact gradients.
pub fn binary_forward(
    tape: &mut Tape,
    x: NodeId,
    layer: &BinarizedLayer,
    binding: &BinarizedBinding,
) -> Result<NodeId> {
    let bx = sign_activation(tape, x, layer.rule)?;
    let bw = sign_weight(tape, binding.weight)?;
    let core = layer.operator.apply(tape, bx, bw)?;
    let scaled = tape.mul_scalar(core, binding.alpha_w)?;
    tape.mul_scalar(scaled, binding.alpha_x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::vector(v.to_vec())
    }

    #[test]
    fn sign_convention() {
        assert_eq!(sign(&t(&[0.5, -2.0, 0.0])).data(), &[1.0, -1.0, 1.0]);
        assert_eq!(sign(&t(&[-1e-12])).data(), &[-1.0]);
        assert_eq!(sign(&t(&[-0.0])).data(), &[1.0]);
    }

    #[test]
    fn ste_activation_examples() {
        let g = |u: f64, x: f64| ste_activation_backward(&t(&[u]), &t(&[x]), 1.0).unwrap().data()[0];
        assert_eq!(g(2.0, 0.5), 2.0);
        assert_eq!(g(2.0, 1.5), 0.0);
        assert_eq!(g(3.0, -1.0), 3.0);
        assert_eq!(g(3.0, 1.0), 3.0);
    }

    #[test]
    fn ste_weight_is_identity() {
        assert_eq!(ste_weight_backward(&t(&[1.0, -2.0])).data(), &[1.0, -2.0]);
        assert_eq!(ste_weight_backward(&t(&[0.0])).data(), &[0.0]);
    }

    #[test]
    fn bireal_examples() {
        let g = |x: f64| bireal_activation_backward(&t(&[1.0]), &t(&[x])).unwrap().data()[0];
        assert_eq!(g(-0.5), 1.0);
        assert_eq!(g(0.5), 1.0);
        assert_eq!(g(1.5), 0.0);
        assert_eq!(g(0.0), 2.0);
        assert_eq!(g(-1.0), 0.0);
        assert_eq!(g(1.0), 0.0);
    }

    #[test]
    fn clip_bound_must_be_positive() {
        assert!(SurrogateRule::new(SurrogateKind::Ste, 0.0).is_err());
        assert!(SurrogateRule::new(SurrogateKind::Ste, -1.0).is_err());
        assert!(SurrogateRule::new(SurrogateKind::Ste, 0.5).is_ok());
    }

    #[test]
    fn surrogate_tags() {
        assert_eq!("STE".parse::<SurrogateKind>().unwrap(), SurrogateKind::Ste);
        assert_eq!("Bi-Real".parse::<SurrogateKind>().unwrap(), SurrogateKind::BiReal);
        assert!("tanh".parse::<SurrogateKind>().is_err());
    }

    #[test]
    fn init_alphas_examples() {
        let (aw, ax) = init_alphas(&t(&[1.0, -1.0, 2.0])).unwrap();
        assert!((aw - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(ax, 1.0);
        assert_eq!(init_alphas(&t(&[0.0, 0.0])).unwrap().0, SCALE_FLOOR);
        assert!(init_alphas(&Tensor::vector(vec![])).is_err());
    }

    fn layer_1x2(w: &[f64], aw: f64, ax: f64) -> BinarizedLayer {
        let mut l = BinarizedLayer::new(
            Operator::Linear,
            Tensor::new(vec![1, w.len()], w.to_vec()).unwrap(),
            SurrogateRule::ste(),
        )
        .unwrap();
        l.alpha_w = Tensor::scalar(aw);
        l.alpha_x = Tensor::scalar(ax);
        l
    }

    #[test]
    fn binary_forward_hand_example() {
        let layer = layer_1x2(&[0.5, -0.2], 0.35, 2.25);
        let mut tape = Tape::new();
        let b = layer.bind(&mut tape);
        let x = tape.leaf(Tensor::new(vec![1, 2], vec![-1.5, 3.0]).unwrap());
        let y = binary_forward(&mut tape, x, &layer, &b).unwrap();
        assert!((tape.value(y).item().unwrap() - -1.575).abs() < 1e-12);
        assert!(tape.value(y).bit_eq(&layer.eval(tape.value(x)).unwrap()));
    }

    #[test]
    fn binary_forward_all_positive_and_matching_signs() {
        let d = 7;
        let w: Vec<f64> = (0..d).map(|i| 0.1 + i as f64).collect();
        let layer = layer_1x2(&w, 1.0, 1.0);
        let x = Tensor::new(vec![1, d], w.clone()).unwrap();
        assert_eq!(layer.eval(&x).unwrap().item().unwrap(), d as f64);

        let mixed: Vec<f64> = (0..d).map(|i| if i % 2 == 0 { -0.3 } else { 0.8 }).collect();
        let layer = layer_1x2(&mixed, 1.0, 1.0);
        let x = Tensor::new(vec![1, d], mixed).unwrap();
        assert_eq!(layer.eval(&x).unwrap().item().unwrap(), d as f64);
    }

    #[test]
    fn sign_weight_gradient_is_ones() {
        let mut tape = Tape::new();
        let w = tape.leaf(t(&[0.3, -0.7, 2.0]));
        let s = sign_weight(&mut tape, w).unwrap();
        let l = tape.sum(s).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(w).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn scales_are_clamped() {
        let mut l = layer_1x2(&[1.0, 1.0], -3.0, 0.0);
        l.clamp_scales();
        assert_eq!(l.alpha_w.item().unwrap(), SCALE_FLOOR);
        assert_eq!(l.alpha_x.item().unwrap(), SCALE_FLOOR);
    }

    #[test]
    fn weight_rank_is_checked() {
        let w = Tensor::zeros(&[2, 2]);
        assert!(BinarizedLayer::new(Operator::Conv2d, w.clone(), SurrogateRule::ste()).is_err());
        assert!(BinarizedLayer::new(Operator::Linear, w, SurrogateRule::ste()).is_ok());
    }
}
