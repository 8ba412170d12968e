//! Dense row-major `f64` tensors.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::invalid(format!(
                "shape {:?} holds {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Rank-0 tensor.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Rank-1 tensor owning `data`.
    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Rank-2 tensor from rows. All rows must have the same length.
    pub fn matrix(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged matrix rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        match self.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::invalid(format!("item() on tensor of shape {:?}", self.shape))),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.expect_same_shape(other, op)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.expect_same_shape(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm_l2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality of shape and every value.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub(crate) fn expect_same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(())
    }
}

/// `[m, k] x [k, n] -> [m, n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mismatch = || Error::ShapeMismatch {
        op: "matmul",
        lhs: a.shape.clone(),
        rhs: b.shape.clone(),
    };
    let (m, k) = match a.shape() {
        [m, k] => (*m, *k),
        _ => return Err(mismatch()),
    };
    let n = match b.shape() {
        [k2, n] if *k2 == k => *n,
        _ => return Err(mismatch()),
    };
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &a.data[i * k..(i + 1) * k];
        let dst = &mut out[i * n..(i + 1) * n];
        for (p, &av) in row.iter().enumerate() {
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in dst.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (m, n) = match a.shape() {
        [m, n] => (*m, *n),
        s => return Err(Error::invalid(format!("transpose expects a matrix, got shape {s:?}"))),
    };
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data[i * n + j];
        }
    }
    Tensor::new(vec![n, m], out)
}

/// Geometry of a stride-1 "same" convolution.
#[derive(Clone, Copy, Debug)]
struct ConvDims {
    batch: usize,
    c_in: usize,
    c_out: usize,
    height: usize,
    width: usize,
    k: usize,
}

fn conv_dims(input: &Tensor, kernel: &Tensor) -> Result<ConvDims> {
    let mismatch = || Error::ShapeMismatch {
        op: "conv2d",
        lhs: input.shape.clone(),
        rhs: kernel.shape.clone(),
    };
    let (batch, c_in, height, width) = match input.shape() {
        [n, c, h, w] => (*n, *c, *h, *w),
        _ => return Err(mismatch()),
    };
    let (c_out, k) = match kernel.shape() {
        [co, ci, kh, kw] if *ci == c_in && kh == kw => (*co, *kh),
        _ => return Err(mismatch()),
    };
    if k % 2 == 0 {
        return Err(Error::invalid(format!(
            "conv2d supports odd square kernels only, got {k}x{k}"
        )));
    }
    Ok(ConvDims {
        batch,
        c_in,
        c_out,
        height,
        width,
        k,
    })
}

/// Stride-1 convolution with zero padding `k / 2` (spatial size preserved).
///
/// `input: [N, C_in, H, W]`, `kernel: [C_out, C_in, k, k]` with odd `k`.
pub fn conv2d(input: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let d = conv_dims(input, kernel)?;
    let pad = d.k / 2;
    let (h, w) = (d.height, d.width);
    let mut out = vec![0.0; d.batch * d.c_out * h * w];
    for n in 0..d.batch {
        for co in 0..d.c_out {
            let dst = &mut out[(n * d.c_out + co) * h * w..][..h * w];
            for ci in 0..d.c_in {
                let src = &input.data[(n * d.c_in + ci) * h * w..][..h * w];
                let ker = &kernel.data[(co * d.c_in + ci) * d.k * d.k..][..d.k * d.k];
                for ky in 0..d.k {
                    for kx in 0..d.k {
                        let kv = ker[ky * d.k + kx];
                        for y in 0..h {
                            let sy = y + ky;
                            if sy < pad || sy - pad >= h {
                                continue;
                            }
                            let sy = sy - pad;
                            for x in 0..w {
                                let sx = x + kx;
                                if sx < pad || sx - pad >= w {
                                    continue;
                                }
                                dst[y * w + x] += kv * src[sy * w + sx - pad];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![d.batch, d.c_out, h, w], out)
}

/// Vector-Jacobian products of [`conv2d`]: `(d input, d kernel)` for output adjoint `upstream`.
pub fn conv2d_vjp(upstream: &Tensor, input: &Tensor, kernel: &Tensor) -> Result<(Tensor, Tensor)> {
    let d = conv_dims(input, kernel)?;
    let pad = d.k / 2;
    let (h, w) = (d.height, d.width);
    if upstream.shape() != [d.batch, d.c_out, h, w] {
        return Err(Error::ShapeMismatch {
            op: "conv2d backward",
            lhs: upstream.shape.clone(),
            rhs: vec![d.batch, d.c_out, h, w],
        });
    }
    let mut g_in = vec![0.0; input.len()];
    let mut g_k = vec![0.0; kernel.len()];
    for n in 0..d.batch {
        for co in 0..d.c_out {
            let up = &upstream.data[(n * d.c_out + co) * h * w..][..h * w];
            for ci in 0..d.c_in {
                let in_off = (n * d.c_in + ci) * h * w;
                let k_off = (co * d.c_in + ci) * d.k * d.k;
                for ky in 0..d.k {
                    for kx in 0..d.k {
                        let kv = kernel.data[k_off + ky * d.k + kx];
                        let mut acc = 0.0;
                        for y in 0..h {
                            let sy = y + ky;
                            if sy < pad || sy - pad >= h {
                                continue;
                            }
                            let sy = sy - pad;
                            for x in 0..w {
                                let sx = x + kx;
                                if sx < pad || sx - pad >= w {
                                    continue;
                                }
                                let idx = in_off + sy * w + sx - pad;
                                let u = up[y * w + x];
                                g_in[idx] += u * kv;
                                acc += u * input.data[idx];
                            }
                        }
                        g_k[k_off + ky * d.k + kx] += acc;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(input.shape.clone(), g_in)?,
        Tensor::new(kernel.shape.clone(), g_k)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert_eq!(Tensor::scalar(3.0).len(), 1);
        assert_eq!(Tensor::scalar(3.0).rank(), 0);
    }

    #[test]
    fn matmul_small() {
        let a = Tensor::matrix(&[vec![1.0, 2.0]]).unwrap();
        let b = Tensor::matrix(&[vec![3.0], vec![4.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[1, 1]);
        assert_eq!(c.data(), &[11.0]);
        assert!(matches!(matmul(&a, &a), Err(Error::ShapeMismatch { op: "matmul", .. })));
    }

    #[test]
    fn transpose_roundtrip() {
        let a = Tensor::matrix(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let t = transpose(&a).unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(transpose(&t).unwrap(), a);
    }

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::new(vec![1, 1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        k.data_mut()[4] = 1.0;
        assert_eq!(conv2d(&x, &k).unwrap(), x);

        let ones = Tensor::ones(&[1, 1, 3, 3]);
        let y = conv2d(&x, &ones).unwrap();
        // corner sums over the 2x2 neighbourhood inside the image
        assert_eq!(y.data()[0], 1.0 + 2.0 + 4.0 + 5.0);
        assert_eq!(y.data()[1], 1.0 + 2.0 + 3.0 + 4.0 + 5.0 + 6.0);
    }

    #[test]
    fn conv_rejects_even_kernels() {
        let x = Tensor::zeros(&[1, 1, 4, 4]);
        let k = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(conv2d(&x, &k).is_err());
        let k = Tensor::zeros(&[1, 2, 3, 3]);
        assert!(matches!(conv2d(&x, &k), Err(Error::ShapeMismatch { .. })));
    }
}
