//! Toy differentiable models: a linear feature extractor and a linear
//! softmax classifier.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{softmax_cross_entropy, ClassLoss};

/// A parametric map from raw inputs to feature vectors.
pub trait FeatureExtractor {
    fn input_dim(&self) -> usize;
    fn feature_dim(&self) -> usize;
    fn forward(&self, input: &[f64]) -> Vec<f64>;
    fn num_params(&self) -> usize;
    /// Adds d loss / d params to `acc` given d loss / d features for one input.
    fn accumulate_grad(&self, input: &[f64], grad_features: &[f64], acc: &mut [f64]);
    /// `params -= lr * grad`.
    fn apply_update(&mut self, grad: &[f64], lr: f64);
}

/// A classifier head whose loss also drives the feature gradient.
pub trait Classifier: ClassLoss {
    fn num_classes(&self) -> usize;
    fn num_params(&self) -> usize;
    fn predict(&self, feature: &[f64]) -> usize;
    /// Adds d loss / d params to `acc` for one sample.
    fn accumulate_grad(&self, feature: &[f64], label: usize, acc: &mut [f64]);
    fn apply_update(&mut self, grad: &[f64], lr: f64);
}

/// `f = W x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearExtractor {
    pub input_dim: usize,
    pub feature_dim: usize,
    /// Row-major `feature_dim x input_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearExtractor {
    pub fn identity(dim: usize) -> Self {
        let mut weights = vec![0.0; dim * dim];
        for i in 0..dim {
            weights[i * dim + i] = 1.0;
        }
        Self {
            input_dim: dim,
            feature_dim: dim,
            weights,
            bias: vec![0.0; dim],
        }
    }

    pub fn params(&self) -> Vec<f64> {
        self.weights.iter().chain(&self.bias).copied().collect()
    }
}

/// Linear extractor with weights drawn from `N(0, 1/input_dim)`, plus the
/// identity on the leading diagonal so the initial map keeps input geometry.
pub fn make_toy_extractor(input_dim: usize, feature_dim: usize, seed: u64) -> Result<LinearExtractor> {
    if input_dim == 0 || feature_dim == 0 {
        return Err(Error::param("dims", "input and feature dims must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.1 / (input_dim as f64).sqrt()).expect("valid std");
    let mut weights: Vec<f64> = (0..feature_dim * input_dim).map(|_| normal.sample(&mut rng)).collect();
    for i in 0..feature_dim.min(input_dim) {
        weights[i * input_dim + i] += 1.0;
    }
    Ok(LinearExtractor {
        input_dim,
        feature_dim,
        weights,
        bias: vec![0.0; feature_dim],
    })
}

impl FeatureExtractor for LinearExtractor {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.input_dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }

    fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn accumulate_grad(&self, input: &[f64], grad_features: &[f64], acc: &mut [f64]) {
        let (gw, gb) = acc.split_at_mut(self.weights.len());
        for (k, &g) in grad_features.iter().enumerate() {
            for (j, &x) in input.iter().enumerate() {
                gw[k * self.input_dim + j] += g * x;
            }
            gb[k] += g;
        }
    }

    fn apply_update(&mut self, grad: &[f64], lr: f64) {
        let (gw, gb) = grad.split_at(self.weights.len());
        for (w, g) in self.weights.iter_mut().zip(gw) {
            *w -= lr * g;
        }
        for (b, g) in self.bias.iter_mut().zip(gb) {
            *b -= lr * g;
        }
    }
}

/// Softmax cross-entropy over `logits = W f + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    pub feature_dim: usize,
    pub num_classes: usize,
    /// Row-major `num_classes x feature_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearClassifier {
    pub fn new(feature_dim: usize, num_classes: usize, seed: u64) -> Result<Self> {
        if feature_dim == 0 || num_classes < 2 {
            return Err(Error::param("classifier", "needs feature_dim >= 1 and >= 2 classes"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.01).expect("valid std");
        Ok(Self {
            feature_dim,
            num_classes,
            weights: (0..feature_dim * num_classes).map(|_| normal.sample(&mut rng)).collect(),
            bias: vec![0.0; num_classes],
        })
    }

    pub fn logits(&self, f: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.feature_dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(f).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }
}

impl ClassLoss for LinearClassifier {
    fn loss_and_grad(&self, feature: &[f64], label: usize) -> (f64, Vec<f64>) {
        let (loss, dlogits) = softmax_cross_entropy(&self.logits(feature), label);
        let mut grad = vec![0.0; self.feature_dim];
        for (row, &dz) in self.weights.chunks_exact(self.feature_dim).zip(&dlogits) {
            for (g, w) in grad.iter_mut().zip(row) {
                *g += dz * w;
            }
        }
        (loss, grad)
    }
}

impl Classifier for LinearClassifier {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn predict(&self, feature: &[f64]) -> usize {
        let logits = self.logits(feature);
        (0..logits.len())
            .max_by(|&a, &b| logits[a].total_cmp(&logits[b]).then(b.cmp(&a)))
            .unwrap_or(0)
    }

    fn accumulate_grad(&self, feature: &[f64], label: usize, acc: &mut [f64]) {
        let (_, dlogits) = softmax_cross_entropy(&self.logits(feature), label);
        let (gw, gb) = acc.split_at_mut(self.weights.len());
        for (k, &dz) in dlogits.iter().enumerate() {
            for (j, &x) in feature.iter().enumerate() {
                gw[k * self.feature_dim + j] += dz * x;
            }
            gb[k] += dz;
        }
    }

    fn apply_update(&mut self, grad: &[f64], lr: f64) {
        let (gw, gb) = grad.split_at(self.weights.len());
        for (w, g) in self.weights.iter_mut().zip(gw) {
            *w -= lr * g;
        }
        for (b, g) in self.bias.iter_mut().zip(gb) {
            *b -= lr * g;
        }
    }
}
