//! Network that parameterizes a point in the plane for the Beale study.
//!
//! A constant all-ones input passes through two binarizable linear layers,
//! `input -> hidden -> 2`, whose output is the `(x, y)` coordinate pair.
//! The ReLU between them is kept only when the second layer is full
//! precision: in front of a binarized layer `sign` is the nonlinearity, and
//! `sign(relu(h))` would be identically `+1`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{init_weight, make_layer, Mode, SurgeOptions};
use crate::error::{Error, Result};
use crate::nn::{Network, Stage};
use crate::quant::Operator;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    /// Length of the constant all-ones input.
    pub input_dim: usize,
    pub hidden: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            input_dim: 8,
            hidden: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyBealeModel {
    pub network: Network,
    /// `[1, input_dim]` of ones.
    pub input: Tensor,
}

pub const OUTPUT_DIM: usize = 2;

/// Build with one mode per layer. Weights depend only on `seed` and the
/// sizes, never on the modes.
pub fn build_toy_model(cfg: &ToyConfig, modes: [Mode; 2], opts: &SurgeOptions, seed: u64) -> Result<ToyBealeModel> {
    if cfg.hidden == 0 || cfg.input_dim == 0 {
        return Err(Error::invalid("toy model sizes must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w1 = init_weight(&mut rng, &[cfg.hidden, cfg.input_dim], cfg.input_dim);
    let w2 = init_weight(&mut rng, &[OUTPUT_DIM, cfg.hidden], cfg.hidden);
    let mut stages = vec![Stage::Layer(make_layer(Operator::Linear, w1, None, modes[0], opts)?)];
    if modes[1] == Mode::Fp {
        stages.push(Stage::Relu);
    }
    stages.push(Stage::Layer(make_layer(Operator::Linear, w2, None, modes[1], opts)?));
    Ok(ToyBealeModel {
        network: Network::new(stages),
        input: Tensor::ones(&[1, cfg.input_dim]),
    })
}

impl ToyBealeModel {
    /// Current `(x, y)`.
    pub fn point(&self) -> Result<(f64, f64)> {
        let out = self.network.eval(&self.input)?;
        Ok((out.data()[0], out.data()[1]))
    }

    pub fn strip(self) -> Self {
        Self {
            network: self.network.strip(),
            input: self.input,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpgc::lambda_init;
    use crate::tape::Tape;

    fn build(mode: Mode, seed: u64) -> ToyBealeModel {
        build_toy_model(&ToyConfig::default(), [mode, mode], &SurgeOptions::default(), seed).unwrap()
    }

    #[test]
    fn shared_initialization_across_modes() {
        let fp = build(Mode::Fp, 7);
        for m in Mode::ALL {
            let other = build(m, 7);
            for (a, b) in fp.network.layers().zip(other.network.layers()) {
                let wa = a.params()[0];
                let wb = b.params()[0];
                assert!(wa.bit_eq(wb), "{m} differs");
            }
        }
        let different = build(Mode::Fp, 8);
        assert_ne!(fp.network, different.network);
    }

    #[test]
    fn fp_mode_records_no_sign_nodes() {
        let m = build(Mode::Fp, 1);
        let mut tape = Tape::new();
        let b = m.network.bind(&mut tape);
        let x = tape.leaf(m.input.clone());
        let tr = m.network.forward(&mut tape, x, &b, None).unwrap();
        assert_eq!(tape.value(tr.output).shape(), &[1, OUTPUT_DIM]);
        assert!(tape.op_names().all(|n| !n.starts_with("sign")));

        let m = build(Mode::Ste, 1);
        let mut tape = Tape::new();
        let b = m.network.bind(&mut tape);
        let x = tape.leaf(m.input.clone());
        m.network.forward(&mut tape, x, &b, None).unwrap();
        assert_eq!(tape.op_names().filter(|n| n.starts_with("sign")).count(), 4);
    }

    #[test]
    fn surge_mode_wraps_both_layers() {
        let m = build(Mode::SteSurge, 2);
        let d: Vec<_> = m.network.dpgc_layers().collect();
        assert_eq!(d.len(), 2);
        for l in d {
            assert_eq!(l.ags.lambda, lambda_init(l.aux_weight.len()).unwrap());
        }
    }

    #[test]
    fn relu_only_before_full_precision() {
        let relus = |m: Mode| {
            build(m, 0)
                .network
                .stages
                .iter()
                .filter(|s| matches!(s, Stage::Relu))
                .count()
        };
        assert_eq!(relus(Mode::Fp), 1);
        assert_eq!(relus(Mode::Ste), 0);
    }

    #[test]
    fn zero_hidden_is_rejected() {
        let cfg = ToyConfig {
            input_dim: 4,
            hidden: 0,
        };
        assert!(build_toy_model(&cfg, [Mode::Fp; 2], &SurgeOptions::default(), 0).is_err());
    }
}
