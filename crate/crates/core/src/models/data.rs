//! Seeded synthetic classification datasets.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `[N, ...]` features.
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.shape().first() != Some(&labels.len()) {
            return Err(Error::invalid(format!(
                "{} labels for features of shape {:?}",
                labels.len(),
                features.shape()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!("label {l} outside {classes} classes")));
        }
        Ok(Self {
            features,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn row_len(&self) -> usize {
        self.features.len() / self.len().max(1)
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let row = self.row_len();
        let mut data = Vec::with_capacity(idx.len() * row);
        for &i in idx {
            data.extend_from_slice(&self.features.data()[i * row..(i + 1) * row]);
        }
        let mut shape = self.features.shape().to_vec();
        shape[0] = idx.len();
        Dataset {
            features: Tensor::new(shape, data).expect("row-sliced"),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// Shuffled `(train, test)` split.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::invalid(format!("test fraction {test_fraction} not in [0, 1)")));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test = (self.len() as f64 * test_fraction).round() as usize;
        let (test, train) = idx.split_at(n_test);
        Ok((self.subset(train), self.subset(test)))
    }
}

/// Two interleaving half circles with Gaussian jitter; labels alternate 0/1.
pub fn two_moons(n: usize, noise: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let t = std::f64::consts::PI * rng.gen::<f64>();
        let (x, y) = if label == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        data.push(x + noise * rng.sample::<f64, _>(StandardNormal));
        data.push(y + noise * rng.sample::<f64, _>(StandardNormal));
        labels.push(label);
    }
    Dataset::new(Tensor::new(vec![n, 2], data).expect("2 per row"), labels, 2).expect("labels < 2")
}

/// `size × size` single-channel images holding one horizontal (label 0) or
/// vertical (label 1) bar of value 1 at a random offset, plus Gaussian noise.
pub fn bars(n: usize, size: usize, noise: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * size * size);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let at = rng.gen_range(0..size);
        for r in 0..size {
            for c in 0..size {
                let on = if label == 0 { r == at } else { c == at };
                let base = if on { 1.0 } else { -1.0 };
                data.push(base + noise * rng.sample::<f64, _>(StandardNormal));
            }
        }
        labels.push(label);
    }
    Dataset::new(
        Tensor::new(vec![n, 1, size, size], data).expect("image rows"),
        labels,
        2,
    )
    .expect("labels < 2")
}
