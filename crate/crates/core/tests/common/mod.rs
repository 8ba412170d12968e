#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surge_core::{NodeId, Tape, Tensor};

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// `|a - b| / max(|a|, |b|)` over whole vectors.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Evaluate a scalar function built on a fresh tape from `inputs`.
pub fn eval_scalar(build: &dyn Fn(&mut Tape, &[NodeId]) -> NodeId, inputs: &[Tensor]) -> f64 {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &ids);
    tape.value(out).item().unwrap()
}

/// Central differences of a scalar tape function with respect to input `which`.
pub fn fd_gradient(build: &dyn Fn(&mut Tape, &[NodeId]) -> NodeId, inputs: &[Tensor], which: usize) -> Vec<f64> {
    (0..inputs[which].len())
        .map(|i| {
            let mut plus = inputs.to_vec();
            plus[which].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[which].data_mut()[i] -= FD_STEP;
            (eval_scalar(build, &plus) - eval_scalar(build, &minus)) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Reverse-mode gradients of a scalar tape function with respect to every input.
pub fn tape_gradients(build: &dyn Fn(&mut Tape, &[NodeId]) -> NodeId, inputs: &[Tensor]) -> Vec<Vec<f64>> {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &ids);
    let g = tape.backward(out).unwrap();
    ids.iter().map(|&id| g.wrt(id).data().to_vec()).collect()
}

/// Largest relative error between reverse-mode and finite-difference gradients over all inputs.
pub fn max_gradcheck_error(build: &dyn Fn(&mut Tape, &[NodeId]) -> NodeId, inputs: &[Tensor]) -> f64 {
    let analytic = tape_gradients(build, inputs);
    (0..inputs.len())
        .map(|k| rel_err(&analytic[k], &fd_gradient(build, inputs, k)))
        .fold(0.0, f64::max)
}
