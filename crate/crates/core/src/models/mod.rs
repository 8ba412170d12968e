//! Toy models, optimizers and the Beale objective.

pub mod beale;
pub mod classifier;
pub mod data;
pub mod optim;
pub mod toy;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dpgc::{DpgcLayer, LambdaPolicy, Scope, DEFAULT_EPSILON, DEFAULT_ETA};
use crate::error::{Error, Result};
use crate::nn::{Dense, GradientNoise, Layer};
use crate::quant::{BinarizedLayer, Operator, SurrogateRule};
use crate::tensor::Tensor;

/// Training method applied to a binarizable layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Mode {
    Fp,
    Ste,
    SteSurge,
    BiReal,
    BiRealSurge,
    SteNoise,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Fp,
        Mode::Ste,
        Mode::SteSurge,
        Mode::BiReal,
        Mode::BiRealSurge,
        Mode::SteNoise,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Fp => "FP",
            Mode::Ste => "STE",
            Mode::SteSurge => "STE+SURGE",
            Mode::BiReal => "BiReal",
            Mode::BiRealSurge => "BiReal+SURGE",
            Mode::SteNoise => "STE+Noise",
        }
    }

    /// Filesystem-friendly name.
    pub fn slug(self) -> &'static str {
        match self {
            Mode::Fp => "fp",
            Mode::Ste => "ste",
            Mode::SteSurge => "ste_surge",
            Mode::BiReal => "bireal",
            Mode::BiRealSurge => "bireal_surge",
            Mode::SteNoise => "ste_noise",
        }
    }

    pub fn is_binarized(self) -> bool {
        self != Mode::Fp
    }

    pub fn uses_surge(self) -> bool {
        matches!(self, Mode::SteSurge | Mode::BiRealSurge)
    }

    fn rule(self) -> SurrogateRule {
        match self {
            Mode::BiReal | Mode::BiRealSurge => SurrogateRule::bireal(),
            _ => SurrogateRule::ste(),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace("bi-real", "bireal");
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str().to_ascii_lowercase() == norm || m.slug() == norm)
            .ok_or_else(|| Error::UnknownTag {
                kind: "mode",
                tag: s.to_string(),
            })
    }
}

impl TryFrom<String> for Mode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Mode> for String {
    fn from(m: Mode) -> String {
        m.as_str().to_string()
    }
}

/// Compensator settings shared by every DPGC (and noise) layer of a model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurgeOptions {
    pub eta: f64,
    pub epsilon: f64,
    pub scope: Scope,
    /// 1×1 auxiliary kernels for convolutions.
    pub one_by_one: bool,
    /// Constant λ instead of the adaptive rule.
    pub fixed_lambda: Option<f64>,
}

impl Default for SurgeOptions {
    fn default() -> Self {
        Self {
            eta: DEFAULT_ETA,
            epsilon: DEFAULT_EPSILON,
            scope: Scope::All,
            one_by_one: false,
            fixed_lambda: None,
        }
    }
}

/// Build one layer of the requested mode around an initial weight.
pub fn make_layer(
    operator: Operator,
    weight: Tensor,
    bias: Option<Tensor>,
    mode: Mode,
    opts: &SurgeOptions,
) -> Result<Layer> {
    if mode == Mode::Fp {
        return Ok(Layer::Dense(Dense { operator, weight, bias }));
    }
    let main = BinarizedLayer::new(operator, weight, mode.rule())?;
    Ok(match mode {
        Mode::SteSurge | Mode::BiRealSurge => {
            let mut d = DpgcLayer::new(
                main,
                opts.eta,
                opts.epsilon,
                opts.scope,
                opts.one_by_one && operator == Operator::Conv2d,
            )?;
            if let Some(v) = opts.fixed_lambda {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::invalid(format!("fixed lambda must be >= 0, got {v}")));
                }
                d.ags.policy = LambdaPolicy::Fixed(v);
                d.ags.lambda = v;
            }
            Layer::Dpgc(d)
        }
        Mode::SteNoise => Layer::Binarized {
            layer: main,
            noise: Some(GradientNoise { eta: opts.eta }),
        },
        _ => Layer::Binarized {
            layer: main,
            noise: None,
        },
    })
}

/// Gaussian weights with standard deviation `1 / sqrt(fan_in)`.
pub fn init_weight(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let std = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}
