//! The Beale test function. Global minimum `f(3, 0.5) = 0`.

use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

pub const BEALE_OPTIMUM: (f64, f64) = (3.0, 0.5);

const C1: f64 = 1.5;
const C2: f64 = 2.25;
const C3: f64 = 2.625;

pub fn beale(x: f64, y: f64) -> f64 {
    (C1 - x + x * y).powi(2) + (C2 - x + x * y * y).powi(2) + (C3 - x + x * y * y * y).powi(2)
}

/// Euclidean distance to the global minimum.
pub fn distance_to_optimum(x: f64, y: f64) -> f64 {
    ((x - BEALE_OPTIMUM.0).powi(2) + (y - BEALE_OPTIMUM.1).powi(2)).sqrt()
}

/// Record `beale(p[0], p[1])` for a two-element node `p`.
pub fn beale_on_tape(tape: &mut Tape, point: NodeId) -> Result<NodeId> {
    if tape.value(point).len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "beale",
            lhs: tape.value(point).shape().to_vec(),
            rhs: vec![2],
        });
    }
    let x = tape.index(point, 0)?;
    let y = tape.index(point, 1)?;
    let mut total = None;
    let mut y_pow = y;
    for (i, c) in [C1, C2, C3].into_iter().enumerate() {
        if i > 0 {
            y_pow = tape.mul(y_pow, y)?;
        }
        let c = tape.leaf(Tensor::scalar(c));
        let xy = tape.mul(x, y_pow)?;
        let t = tape.sub(c, x)?;
        let t = tape.add(t, xy)?;
        let sq = tape.square(t)?;
        total = Some(match total {
            None => sq,
            Some(acc) => tape.add(acc, sq)?,
        });
    }
    Ok(total.expect("three terms"))
}
