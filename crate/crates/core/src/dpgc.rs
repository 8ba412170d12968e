//! Dual-path gradient compensation with adaptive gradient scaling.
//!
//! A [`DpgcLayer`] wraps a binarized layer (main branch) with a
//! full-precision operator of matching shape (auxiliary branch). The output
//!
//! ```text
//! out = f_b + (λ·f_a − stop_gradient(λ·f_a))
//! ```
//!
//! is bit-identical to `f_b`, while the input adjoint becomes
//! `g_b + λ·g_a`: the surrogate gradient of the main branch plus the exact
//! gradient of the auxiliary branch. After each backward pass
//! [`AgsState::update`] sets `λ = η‖g_b‖₂ / (‖g_a‖₂ + ε)`, and that value is
//! consumed by the *next* forward pass.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::{binary_forward, BinarizedBinding, BinarizedLayer, Operator};
use crate::tape::{Gradients, NodeId, Tape};
use crate::tensor::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const DEFAULT_ETA: f64 = 0.01;

/// Initial scale `1 / sqrt(|W_a|)`.
pub fn lambda_init(aux_param_count: usize) -> Result<f64> {
    if aux_param_count == 0 {
        return Err(Error::invalid("lambda_init needs at least one auxiliary parameter"));
    }
    Ok(1.0 / (aux_param_count as f64).sqrt())
}

/// Which activations receive the auxiliary input gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    #[default]
    All,
    /// Only where the STE clips (`|x| > clip_bound`).
    ClippedOnly,
    /// Only where the STE passes (`|x| <= clip_bound`).
    InRangeOnly,
}

impl Scope {
    #[inline]
    pub fn passes(self, x: f64, clip_bound: f64) -> bool {
        match self {
            Scope::All => true,
            Scope::ClippedOnly => x.abs() > clip_bound,
            Scope::InRangeOnly => x.abs() <= clip_bound,
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::All => "all",
            Scope::ClippedOnly => "clipped_only",
            Scope::InRangeOnly => "in_range_only",
        })
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Scope::All),
            "clipped_only" => Ok(Scope::ClippedOnly),
            "in_range_only" => Ok(Scope::InRangeOnly),
            _ => Err(Error::UnknownTag {
                kind: "scope",
                tag: s.to_string(),
            }),
        }
    }
}

/// Zero the entries of `g_a` outside `scope`.
pub fn scope_mask(g_a: &Tensor, x: &Tensor, scope: Scope, clip_bound: f64) -> Result<Tensor> {
    g_a.zip_map(
        x,
        "scope_mask",
        |g, v| if scope.passes(v, clip_bound) { g } else { 0.0 },
    )
}

/// How λ evolves between steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LambdaPolicy {
    /// `λ ← η‖g_b‖ / (‖g_a‖ + ε)` after every backward pass.
    Adaptive,
    /// Constant λ; norms are still recorded.
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgsState {
    pub eta: f64,
    pub epsilon: f64,
    /// Scale consumed by the next forward pass.
    pub lambda: f64,
    /// `(‖g_b‖₂, ‖g_a‖₂)` from the most recent update.
    pub last_norms: Option<(f64, f64)>,
    pub policy: LambdaPolicy,
}

impl AgsState {
    pub fn new(eta: f64, epsilon: f64, initial_lambda: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::invalid(format!("eta must be > 0, got {eta}")));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be > 0, got {epsilon}")));
        }
        if !(initial_lambda >= 0.0 && initial_lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be >= 0, got {initial_lambda}")));
        }
        Ok(Self {
            eta,
            epsilon,
            lambda: initial_lambda,
            last_norms: None,
            policy: LambdaPolicy::Adaptive,
        })
    }

    pub fn fixed(lambda: f64) -> Result<Self> {
        let mut s = Self::new(DEFAULT_ETA, DEFAULT_EPSILON, lambda)?;
        s.policy = LambdaPolicy::Fixed(lambda);
        Ok(s)
    }

    /// Apply the norm-ratio rule to this step's input gradients and return the new λ.
    pub fn update(&mut self, g_b: &Tensor, g_a: &Tensor) -> f64 {
        let nb = g_b.norm_l2();
        let na = g_a.norm_l2();
        self.last_norms = Some((nb, na));
        self.lambda = match self.policy {
            LambdaPolicy::Adaptive => self.eta * nb / (na + self.epsilon),
            LambdaPolicy::Fixed(v) => v,
        };
        self.lambda
    }
}

/// Functional form of [`AgsState::update`].
pub fn ags_update(state: &mut AgsState, g_b: &Tensor, g_a: &Tensor) -> f64 {
    state.update(g_b, g_a)
}

/// A binarized layer plus its full-precision compensator.
#[derive(Clone, Debug, PartialEq)]
pub struct DpgcLayer {
    pub main: BinarizedLayer,
    pub aux_operator: Operator,
    pub aux_weight: Tensor,
    pub ags: AgsState,
    pub scope: Scope,
}

#[derive(Clone, Copy, Debug)]
pub struct DpgcBinding {
    pub main: BinarizedBinding,
    pub aux_weight: NodeId,
}

/// Nodes recorded by [`dpgc_forward`], needed to split the gradient afterwards.
#[derive(Clone, Copy, Debug)]
pub struct DpgcTrace {
    pub input: NodeId,
    /// Identity tap feeding the main branch; its adjoint is `g_b`.
    pub main_tap: NodeId,
    /// Scope gate feeding the auxiliary branch; its adjoint is `λ·g_a`.
    pub aux_tap: NodeId,
    pub output: NodeId,
    pub aux_weight: NodeId,
    pub main_weight: NodeId,
    /// λ used by this forward pass.
    pub lambda: f64,
}

/// Per-step quantities of one DPGC layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DpgcGradients {
    /// Surrogate-path input gradient.
    pub g_b: Tensor,
    /// Auxiliary-path input gradient before λ scaling (scope mask applied).
    pub g_a: Tensor,
    /// Total input adjoint `g_b + λ·g_a`, read from the tape.
    pub total: Tensor,
    /// Main weight gradient (straight-through).
    pub g_wb: Tensor,
    /// Auxiliary weight gradient, `λ · ∂L/∂f_ao ∂f_a/∂W_a`.
    pub g_wa: Tensor,
}

impl DpgcLayer {
    /// Wrap `main` with an auxiliary copy of its latent weights.
    ///
    /// With `one_by_one` (convolutions only) the auxiliary kernel is 1×1,
    /// initialised from the centre tap of the main kernel.
    pub fn new(main: BinarizedLayer, eta: f64, epsilon: f64, scope: Scope, one_by_one: bool) -> Result<Self> {
        let aux_weight = match (main.operator, one_by_one) {
            (_, false) => main.weight.clone(),
            (Operator::Conv2d, true) => center_tap(&main.weight)?,
            (Operator::Linear, true) => return Err(Error::invalid("1x1 auxiliary kernels apply to convolutions only")),
        };
        let ags = AgsState::new(eta, epsilon, lambda_init(aux_weight.len())?)?;
        Ok(Self {
            aux_operator: main.operator,
            main,
            aux_weight,
            ags,
            scope,
        })
    }

    pub fn bind(&self, tape: &mut Tape) -> DpgcBinding {
        DpgcBinding {
            main: self.main.bind(tape),
            aux_weight: tape.leaf(self.aux_weight.clone()),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.main.params();
        p.push(&self.aux_weight);
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.main.params_mut();
        p.push(&mut self.aux_weight);
        p
    }

    /// Drop the auxiliary branch and AGS state.
    pub fn strip(self) -> BinarizedLayer {
        self.main
    }
}

fn center_tap(kernel: &Tensor) -> Result<Tensor> {
    let (co, ci, k) = match kernel.shape() {
        [co, ci, k, _] => (*co, *ci, *k),
        s => return Err(Error::invalid(format!("expected a conv kernel, got shape {s:?}"))),
    };
    let c = k / 2;
    let data = (0..co * ci)
        .map(|plane| kernel.data()[plane * k * k + c * k + c])
        .collect();
    Tensor::new(vec![co, ci, 1, 1], data)
}

/// Record the compensated forward pass. The output value equals the main
/// branch's bit for bit; λ is the layer's current (previous-step) value.
pub fn dpgc_forward(
    tape: &mut Tape,
    x: NodeId,
    layer: &DpgcLayer,
    binding: &DpgcBinding,
) -> Result<(NodeId, DpgcTrace)> {
    let main_tap = tape.identity(x)?;
    let f_b = binary_forward(tape, main_tap, &layer.main, &binding.main)?;

    let scope = layer.scope;
    let clip = layer.main.rule.clip_bound();
    let gate_value = tape.value(x).clone();
    let aux_tap = tape.custom(
        "scope_gate",
        &[x],
        gate_value,
        Box::new(move |up, inputs, _| {
            vec![scope_mask(up, inputs[0], scope, clip).expect("gate shapes match by construction")]
        }),
    )?;
    let f_a = layer.aux_operator.apply(tape, aux_tap, binding.aux_weight)?;
    if tape.value(f_a).shape() != tape.value(f_b).shape() {
        return Err(Error::ShapeMismatch {
            op: "dpgc_forward",
            lhs: tape.value(f_b).shape().to_vec(),
            rhs: tape.value(f_a).shape().to_vec(),
        });
    }
    let lambda = layer.ags.lambda;
    let f_ao = tape.scale(f_a, lambda)?;
    let detached = tape.stop_gradient(f_ao)?;
    // f_ao - detached is exactly zero, so adding it leaves f_b untouched
    let compensator = tape.sub(f_ao, detached)?;
    let output = tape.add(f_b, compensator)?;
    Ok((
        output,
        DpgcTrace {
            input: x,
            main_tap,
            aux_tap,
            output,
            aux_weight: binding.aux_weight,
            main_weight: binding.main.weight,
            lambda,
        },
    ))
}

/// Split the adjoints of one DPGC layer after `tape.backward`.
pub fn dpgc_backward(tape: &Tape, grads: &Gradients, trace: &DpgcTrace, layer: &DpgcLayer) -> Result<DpgcGradients> {
    for id in [
        trace.input,
        trace.main_tap,
        trace.aux_tap,
        trace.output,
        trace.aux_weight,
    ] {
        if id.index() >= grads.len() || id.index() >= tape.len() {
            return Err(Error::invalid(
                "dpgc_backward: layer was not recorded by dpgc_forward on this tape",
            ));
        }
    }
    let upstream = grads.get(trace.output)?;
    let x = tape.value(trace.input);
    let unmasked = layer
        .aux_operator
        .input_vjp(upstream, x, tape.value(trace.aux_weight))?;
    let g_a = scope_mask(&unmasked, x, layer.scope, layer.main.rule.clip_bound())?;
    Ok(DpgcGradients {
        g_b: grads.get(trace.main_tap)?.clone(),
        g_a,
        total: grads.get(trace.input)?.clone(),
        g_wb: grads.get(trace.main_weight)?.clone(),
        g_wa: grads.get(trace.aux_weight)?.clone(),
    })
}
