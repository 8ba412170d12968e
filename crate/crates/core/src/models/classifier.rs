//! Small classifiers with full-precision first and last layers and
//! binarizable middle layers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{init_weight, make_layer, Mode, SurgeOptions};
use crate::error::{Error, Result};
use crate::nn::{Dense, Layer, Network, Stage};
use crate::quant::Operator;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    /// Layer widths `[input, hidden..., classes]`.
    Mlp { sizes: Vec<usize> },
    /// 3×3 convolutions with the given output channels, then a linear head.
    Cnn {
        in_channels: usize,
        height: usize,
        width: usize,
        channels: Vec<usize>,
        classes: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub network: Network,
    pub architecture: Architecture,
}

/// The ReLU goes before full-precision layers only; for a binarized layer the
/// input `sign` already acts as the nonlinearity and must see negative values.
fn push_layer(stages: &mut Vec<Stage>, layer: Layer) {
    if !stages.is_empty() && matches!(layer, Layer::Dense(_)) {
        stages.push(Stage::Relu);
    }
    stages.push(Stage::Layer(layer));
}

pub fn build_classifier(arch: &Architecture, mode: Mode, opts: &SurgeOptions, seed: u64) -> Result<Classifier> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stages = Vec::new();
    match arch {
        Architecture::Mlp { sizes } => {
            if sizes.len() < 3 || sizes.contains(&0) {
                return Err(Error::invalid(format!("invalid MLP sizes {sizes:?}")));
            }
            let n_layers = sizes.len() - 1;
            for (i, pair) in sizes.windows(2).enumerate() {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let w = init_weight(&mut rng, &[fan_out, fan_in], fan_in);
                let outer = i == 0 || i == n_layers - 1;
                let layer_mode = if outer { Mode::Fp } else { mode };
                let bias = (layer_mode == Mode::Fp).then(|| Tensor::zeros(&[fan_out]));
                push_layer(&mut stages, make_layer(Operator::Linear, w, bias, layer_mode, opts)?);
            }
        }
        Architecture::Cnn {
            in_channels,
            height,
            width,
            channels,
            classes,
        } => {
            if channels.is_empty() || channels.contains(&0) || [*in_channels, *height, *width, *classes].contains(&0) {
                return Err(Error::invalid(format!("invalid CNN config {arch:?}")));
            }
            let mut c_in = *in_channels;
            for (i, &c_out) in channels.iter().enumerate() {
                let w = init_weight(&mut rng, &[c_out, c_in, 3, 3], c_in * 9);
                let layer_mode = if i == 0 { Mode::Fp } else { mode };
                push_layer(&mut stages, make_layer(Operator::Conv2d, w, None, layer_mode, opts)?);
                c_in = c_out;
            }
            let flat = c_in * height * width;
            stages.push(Stage::Flatten);
            let w = init_weight(&mut rng, &[*classes, flat], flat);
            push_layer(
                &mut stages,
                Layer::Dense(Dense {
                    operator: Operator::Linear,
                    weight: w,
                    bias: Some(Tensor::zeros(&[*classes])),
                }),
            );
        }
    }
    Ok(Classifier {
        network: Network::new(stages),
        architecture: arch.clone(),
    })
}

impl Classifier {
    /// Fraction of rows whose arg-max logit equals the label.
    pub fn accuracy(&self, features: &Tensor, labels: &[usize]) -> Result<f64> {
        let logits = self.network.eval(features)?;
        let (rows, classes) = (logits.shape()[0], logits.shape()[1]);
        if labels.len() != rows || rows == 0 {
            return Err(Error::invalid(format!("{} labels for {rows} rows", labels.len())));
        }
        let correct = logits
            .data()
            .chunks(classes)
            .zip(labels)
            .filter(|(row, &l)| {
                let best = row
                    .iter()
                    .enumerate()
                    .fold(0, |b, (i, &v)| if v > row[b] { i } else { b });
                best == l
            })
            .count();
        Ok(correct as f64 / rows as f64)
    }

    pub fn strip(self) -> Self {
        Self {
            network: self.network.strip(),
            architecture: self.architecture,
        }
    }
}
