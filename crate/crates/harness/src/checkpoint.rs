//! Binary model container.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic "SRGE" | u32 version | u8 stripped | u32 stage count | stages...
//! tensor  := u32 rank | u32 dims[rank] | f64 data[prod(dims)]
//! stage   := u8 tag, then
//!   0 relu | 1 flatten
//!   2 dense      u8 operator | tensor W | u8 has_bias | [tensor b]
//!   3 binarized  main | u8 has_noise | [f64 eta]
//!   4 dpgc       main | tensor W_a | f64 lambda | f64 eta | f64 epsilon
//!                u8 scope | u8 fixed | [f64 fixed lambda]
//!                u8 has_norms | [f64 norm_b | f64 norm_a]
//! main    := u8 operator | u8 surrogate | f64 clip | tensor W | f64 alpha_w | f64 alpha_x
//! ```
//!
//! A stripped file stores compensated layers as plain binarized records.

use std::fs;
use std::path::Path;

use surge_core::dpgc::{AgsState, DpgcLayer, LambdaPolicy, Scope};
use surge_core::nn::{Dense, GradientNoise, Layer, Network, Stage};
use surge_core::quant::{BinarizedLayer, Operator, SurrogateKind, SurrogateRule};
use surge_core::Tensor;

use crate::error::{HarnessError, Result};

pub const MAGIC: &[u8; 4] = b"SRGE";
pub const VERSION: u32 = 1;

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn tensor(&mut self, t: &Tensor) {
        self.u32(t.rank() as u32);
        for &d in t.shape() {
            self.u32(d as u32);
        }
        for &v in t.data() {
            self.f64(v);
        }
    }
    fn main(&mut self, l: &BinarizedLayer) {
        self.u8(operator_tag(l.operator));
        self.u8(match l.rule.kind {
            SurrogateKind::Ste => 0,
            SurrogateKind::BiReal => 1,
        });
        self.f64(l.rule.clip_bound());
        self.tensor(&l.weight);
        self.f64(l.alpha_w.data()[0]);
        self.f64(l.alpha_x.data()[0]);
    }
}

fn operator_tag(op: Operator) -> u8 {
    match op {
        Operator::Linear => 0,
        Operator::Conv2d => 1,
    }
}

/// Encode `network`; with `strip` the auxiliary branches are left out.
pub fn encode(network: &Network, strip: bool) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u8(u8::from(strip || !network.has_auxiliary()));
    w.u32(network.stages.len() as u32);
    for stage in &network.stages {
        match stage {
            Stage::Relu => w.u8(0),
            Stage::Flatten => w.u8(1),
            Stage::Layer(Layer::Dense(d)) => {
                w.u8(2);
                w.u8(operator_tag(d.operator));
                w.tensor(&d.weight);
                w.u8(u8::from(d.bias.is_some()));
                if let Some(b) = &d.bias {
                    w.tensor(b);
                }
            }
            Stage::Layer(Layer::Binarized { layer, noise }) => {
                w.u8(3);
                w.main(layer);
                w.u8(u8::from(noise.is_some()));
                if let Some(n) = noise {
                    w.f64(n.eta);
                }
            }
            Stage::Layer(Layer::Dpgc(d)) if strip => {
                w.u8(3);
                w.main(&d.main);
                w.u8(0);
            }
            Stage::Layer(Layer::Dpgc(d)) => {
                w.u8(4);
                w.main(&d.main);
                w.tensor(&d.aux_weight);
                w.f64(d.ags.lambda);
                w.f64(d.ags.eta);
                w.f64(d.ags.epsilon);
                w.u8(match d.scope {
                    Scope::All => 0,
                    Scope::ClippedOnly => 1,
                    Scope::InRangeOnly => 2,
                });
                match d.ags.policy {
                    LambdaPolicy::Adaptive => w.u8(0),
                    LambdaPolicy::Fixed(v) => {
                        w.u8(1);
                        w.f64(v);
                    }
                }
                match d.ags.last_norms {
                    None => w.u8(0),
                    Some((b, a)) => {
                        w.u8(1);
                        w.f64(b);
                        w.f64(a);
                    }
                }
            }
        }
    }
    w.0
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

type Decode<T> = std::result::Result<T, String>;

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Decode<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Decode<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Decode<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn f64(&mut self) -> Decode<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn flag(&mut self) -> Decode<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(format!("invalid flag byte {v}")),
        }
    }
    fn tensor(&mut self) -> Decode<Tensor> {
        let rank = self.u32()? as usize;
        let shape = (0..rank)
            .map(|_| self.u32().map(|d| d as usize))
            .collect::<Decode<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or("tensor size overflow")?;
        if n.saturating_mul(8) > self.buf.len() - self.pos {
            return Err(format!("truncated tensor of shape {shape:?}"));
        }
        let data = (0..n).map(|_| self.f64()).collect::<Decode<Vec<_>>>()?;
        Tensor::new(shape, data).map_err(|e| e.to_string())
    }
    fn operator(&mut self) -> Decode<Operator> {
        match self.u8()? {
            0 => Ok(Operator::Linear),
            1 => Ok(Operator::Conv2d),
            v => Err(format!("unknown operator tag {v}")),
        }
    }
    fn main(&mut self) -> Decode<BinarizedLayer> {
        let operator = self.operator()?;
        let kind = match self.u8()? {
            0 => SurrogateKind::Ste,
            1 => SurrogateKind::BiReal,
            v => return Err(format!("unknown surrogate tag {v}")),
        };
        let rule = SurrogateRule::new(kind, self.f64()?).map_err(|e| e.to_string())?;
        let weight = self.tensor()?;
        let mut layer = BinarizedLayer::new(operator, weight, rule).map_err(|e| e.to_string())?;
        layer.alpha_w = Tensor::scalar(self.f64()?);
        layer.alpha_x = Tensor::scalar(self.f64()?);
        Ok(layer)
    }
}

fn decode_stages(r: &mut Reader) -> Decode<(bool, Network)> {
    if r.take(4)? != MAGIC {
        return Err("bad magic; not a checkpoint".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported checkpoint version {version}, expected {VERSION}"));
    }
    let stripped = r.flag()?;
    let count = r.u32()? as usize;
    let mut stages = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        stages.push(match r.u8()? {
            0 => Stage::Relu,
            1 => Stage::Flatten,
            2 => {
                let operator = r.operator()?;
                let weight = r.tensor()?;
                let bias = if r.flag()? { Some(r.tensor()?) } else { None };
                Stage::Layer(Layer::Dense(Dense { operator, weight, bias }))
            }
            3 => {
                let layer = r.main()?;
                let noise = if r.flag()? {
                    Some(GradientNoise { eta: r.f64()? })
                } else {
                    None
                };
                Stage::Layer(Layer::Binarized { layer, noise })
            }
            4 if stripped => return Err("compensated layer in a stripped checkpoint".into()),
            4 => {
                let main = r.main()?;
                let aux_weight = r.tensor()?;
                let (lambda, eta, epsilon) = (r.f64()?, r.f64()?, r.f64()?);
                let scope = match r.u8()? {
                    0 => Scope::All,
                    1 => Scope::ClippedOnly,
                    2 => Scope::InRangeOnly,
                    v => return Err(format!("unknown scope tag {v}")),
                };
                let policy = if r.flag()? {
                    LambdaPolicy::Fixed(r.f64()?)
                } else {
                    LambdaPolicy::Adaptive
                };
                let last_norms = if r.flag()? { Some((r.f64()?, r.f64()?)) } else { None };
                let mut ags = AgsState::new(eta, epsilon, lambda).map_err(|e| e.to_string())?;
                ags.policy = policy;
                ags.last_norms = last_norms;
                Stage::Layer(Layer::Dpgc(DpgcLayer {
                    aux_operator: main.operator,
                    main,
                    aux_weight,
                    ags,
                    scope,
                }))
            }
            v => return Err(format!("unknown stage tag {v}")),
        });
    }
    if r.pos != r.buf.len() {
        return Err(format!("{} trailing bytes", r.buf.len() - r.pos));
    }
    Ok((stripped, Network::new(stages)))
}

/// Decode a checkpoint; returns the stripped flag and the network.
pub fn decode(bytes: &[u8]) -> std::result::Result<(bool, Network), String> {
    decode_stages(&mut Reader { buf: bytes, pos: 0 })
}

pub fn save(path: &Path, network: &Network, strip: bool) -> Result<()> {
    fs::write(path, encode(network, strip)).map_err(HarnessError::io(path))
}

pub fn load(path: &Path) -> Result<(bool, Network)> {
    let bytes = fs::read(path).map_err(HarnessError::io(path))?;
    decode(&bytes).map_err(|msg| HarnessError::Format {
        path: path.to_path_buf(),
        msg,
    })
}

/// Rewrite the checkpoint at `input` without auxiliary parameters.
pub fn strip_file(input: &Path, output: &Path) -> Result<Network> {
    let (_, network) = load(input)?;
    let stripped = network.strip();
    save(output, &stripped, true)?;
    Ok(stripped)
}
