//! Binarized neural layers trained with a dual-path gradient compensator and
//! an adaptive gradient scaler, on top of a small reverse-mode autodiff tape.
//!
//! - [`tensor`] and [`tape`]: dense f64 arrays and the define-by-run tape.
//! - [`quant`]: sign binarization, surrogate gradients, scaled binary layers.
//! - [`dpgc`]: the compensated layer, its backward decomposition and the
//!   adaptive scale update.
//! - [`nn`] and [`models`]: small networks, optimizers and the toy tasks.
//! - [`theory`]: Monte-Carlo checks of the optimal compensator scale.

pub mod dpgc;
pub mod error;
pub mod models;
pub mod nn;
pub mod quant;
pub mod tape;
pub mod tensor;
pub mod theory;

pub use dpgc::{
    ags_update, dpgc_backward, dpgc_forward, lambda_init, scope_mask, AgsState, DpgcGradients, DpgcLayer, LambdaPolicy,
    Scope,
};
pub use error::{Error, Result};
pub use models::{Mode, SurgeOptions};
pub use nn::{Layer, Network};
pub use quant::{binary_forward, init_alphas, sign, BinarizedLayer, Operator, SurrogateKind, SurrogateRule};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;

/// Drop every auxiliary branch, leaving the plain binarized network.
pub fn strip_auxiliary(network: Network) -> Network {
    network.strip()
}
