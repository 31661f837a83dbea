//! The per-point classifier contract and the default linear model.

use rand::Rng;

use super::loss::cross_entropy;
use crate::error::{check_len, Error, Result};
use crate::scene::Label;
use crate::seed;

/// Row-major feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    dim: usize,
    data: Vec<f64>,
}

impl Features {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::invalid("features", "data length is not a multiple of dim"));
        }
        Ok(Self { dim, data })
    }

    pub fn with_capacity(dim: usize, rows: usize) -> Self {
        Self {
            dim,
            data: Vec::with_capacity(dim * rows),
        }
    }

    pub fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.dim);
        self.data.extend_from_slice(row);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// A per-point classifier that can be trained on masked labels.
pub trait Predictor: Send + Sync {
    fn class_count(&self) -> usize;

    fn feature_dim(&self) -> usize;

    /// Row-major `rows × class_count` class distributions.
    fn predict(&self, features: &Features) -> Vec<f64>;

    /// One gradient step on the rows selected by `mask`, with one-hot
    /// targets given as class ids. Returns the loss before the step. With
    /// no selected rows the parameters are left untouched.
    fn fit_step(&mut self, features: &Features, targets: &[Label], mask: &[bool]) -> Result<f64>;

    /// Most probable class of each row (lowest id on ties).
    fn predict_labels(&self, features: &Features) -> Vec<Label> {
        let m = self.class_count();
        self.predict(features)
            .chunks(m)
            .map(|row| {
                let mut best = 0;
                for (c, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = c;
                    }
                }
                best as Label
            })
            .collect()
    }
}

/// Multinomial logistic regression trained by constant-rate gradient steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSoftmax {
    class_count: usize,
    dim: usize,
    // class_count × (dim + 1); the last column is the bias
    weights: Vec<f64>,
    learning_rate: f64,
}

impl LinearSoftmax {
    pub fn new(feature_dim: usize, class_count: usize, learning_rate: f64, seed: u64) -> Result<Self> {
        if feature_dim == 0 || class_count < 2 {
            return Err(Error::invalid("dims", "need feature_dim >= 1 and class_count >= 2"));
        }
        if !(learning_rate >= 0.0) {
            return Err(Error::invalid("learning_rate", "must be non-negative"));
        }
        let mut rng = seed::rng(seed);
        let weights = (0..class_count * (feature_dim + 1))
            .map(|_| rng.gen_range(-0.01..0.01))
            .collect();
        Ok(Self {
            class_count,
            dim: feature_dim,
            weights,
            learning_rate,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn softmax_row(&self, x: &[f64], out: &mut [f64]) {
        let stride = self.dim + 1;
        for (c, o) in out.iter_mut().enumerate() {
            let w = &self.weights[c * stride..(c + 1) * stride];
            *o = w[self.dim] + w[..self.dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for o in out.iter_mut() {
            *o = (*o - max).exp();
            z += *o;
        }
        for o in out.iter_mut() {
            *o /= z;
        }
    }
}

/// The default predictor: a linear softmax classifier.
pub fn default_predictor(feature_dim: usize, class_count: usize, learning_rate: f64, seed: u64) -> Result<LinearSoftmax> {
    LinearSoftmax::new(feature_dim, class_count, learning_rate, seed)
}

impl Predictor for LinearSoftmax {
    fn class_count(&self) -> usize {
        self.class_count
    }

    fn feature_dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, features: &Features) -> Vec<f64> {
        let mut out = vec![0.0; features.rows() * self.class_count];
        for (i, row) in out.chunks_mut(self.class_count).enumerate() {
            self.softmax_row(features.row(i), row);
        }
        out
    }

    fn fit_step(&mut self, features: &Features, targets: &[Label], mask: &[bool]) -> Result<f64> {
        check_len(features.rows(), targets.len())?;
        check_len(features.rows(), mask.len())?;
        if features.dim() != self.dim {
            return Err(Error::LengthMismatch {
                expected: self.dim,
                actual: features.dim(),
            });
        }
        let m = self.class_count;
        let stride = self.dim + 1;
        let mut probs = vec![0.0; features.rows() * m];
        let mut grad = vec![0.0; self.weights.len()];
        let mut used = 0usize;
        for i in 0..features.rows() {
            if !mask[i] {
                continue;
            }
            let x = features.row(i);
            let p = &mut probs[i * m..(i + 1) * m];
            self.softmax_row(x, p);
            let t = targets[i] as usize;
            if t >= m {
                return Err(Error::LabelOutOfRange { label: targets[i], class_count: m });
            }
            for c in 0..m {
                let g = p[c] - if c == t { 1.0 } else { 0.0 };
                let gw = &mut grad[c * stride..(c + 1) * stride];
                for (gj, xj) in gw.iter_mut().zip(x) {
                    *gj += g * xj;
                }
                gw[self.dim] += g;
            }
            used += 1;
        }
        if used == 0 {
            return Ok(0.0);
        }
        let loss = cross_entropy(&probs, m, targets, mask)?;
        let step = self.learning_rate / used as f64;
        for (w, g) in self.weights.iter_mut().zip(&grad) {
            *w -= step * g;
        }
        Ok(loss)
    }
}
