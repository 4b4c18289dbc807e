//! Multinomial logistic regression over sparse string features.
//!
//! Weights are stored feature-major (`weights[f * labels + y]`) with a
//! separate bias per label. Feature ids are assigned in first-seen order, so
//! training on the same data in the same order yields the same layout and a
//! byte-identical serialization.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{restricted_softmax_slice, TrainConfig, TrainSummary};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Feature id → value, duplicates already summed.
pub type SparseFeatures = Vec<(usize, f64)>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SoftmaxLinear {
    num_labels: usize,
    feature_names: Vec<String>,
    weights: Vec<f64>,
    bias: Vec<f64>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl PartialEq for SoftmaxLinear {
    fn eq(&self, other: &Self) -> bool {
        self.num_labels == other.num_labels
            && self.feature_names == other.feature_names
            && self.weights == other.weights
            && self.bias == other.bias
    }
}

/// Gradient of the loss restricted to the features of one example.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGradient {
    /// `(feature id, per-label gradient)` in the example's feature order.
    pub weights: Vec<(usize, Vec<f64>)>,
    pub bias: Vec<f64>,
}

impl SoftmaxLinear {
    pub fn new(num_labels: usize) -> Self {
        SoftmaxLinear {
            num_labels,
            feature_names: Vec::new(),
            weights: Vec::new(),
            bias: vec![0.0; num_labels],
            index: HashMap::new(),
        }
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn num_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_name(&self, id: usize) -> &str {
        &self.feature_names[id]
    }

    pub fn weight(&self, feature: usize, label: usize) -> f64 {
        self.weights[feature * self.num_labels + label]
    }

    pub fn set_weight(&mut self, feature: usize, label: usize, value: f64) {
        self.weights[feature * self.num_labels + label] = value;
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn set_bias(&mut self, label: usize, value: f64) {
        self.bias[label] = value;
    }

    /// Rebuilds the name index after deserialization.
    pub fn reindex(&mut self) -> Result<()> {
        if self.weights.len() != self.feature_names.len() * self.num_labels
            || self.bias.len() != self.num_labels
        {
            return Err(Error::Config("weight table has the wrong shape".into()));
        }
        if self.weights.iter().chain(&self.bias).any(|w| !w.is_finite()) {
            return Err(Error::Config("non-finite weight".into()));
        }
        self.index = self
            .feature_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Ok(())
    }

    /// Maps names to ids, adding unseen features with zero weights.
    pub fn intern(&mut self, names: &[String]) -> SparseFeatures {
        let mut out: SparseFeatures = Vec::with_capacity(names.len());
        for name in names {
            let id = match self.index.get(name) {
                Some(&id) => id,
                None => {
                    let id = self.feature_names.len();
                    self.feature_names.push(name.clone());
                    self.index.insert(name.clone(), id);
                    self.weights.extend(std::iter::repeat_n(0.0, self.num_labels));
                    id
                }
            };
            push_feature(&mut out, id);
        }
        out
    }

    /// Maps names to ids, dropping features the model has never seen.
    pub fn lookup(&self, names: &[String]) -> SparseFeatures {
        let mut out: SparseFeatures = Vec::with_capacity(names.len());
        for name in names {
            if let Some(&id) = self.index.get(name) {
                push_feature(&mut out, id);
            }
        }
        out
    }

    pub fn logits(&self, x: &[(usize, f64)]) -> Vec<f64> {
        let mut z = self.bias.clone();
        for &(f, v) in x {
            let row = &self.weights[f * self.num_labels..][..self.num_labels];
            for (zy, w) in z.iter_mut().zip(row) {
                *zy += v * w;
            }
        }
        z
    }

    /// Cross-entropy `-Σ t_y log p_y` of one example.
    pub fn example_loss(&self, x: &[(usize, f64)], target: &[f64]) -> f64 {
        let z = self.logits(x);
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_norm = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        target
            .iter()
            .zip(&z)
            .filter(|(t, _)| **t != 0.0)
            .map(|(t, zy)| -t * (zy - log_norm))
            .sum()
    }

    /// Analytic gradient of [`Self::example_loss`]: `(p - t) ⊗ x` for the
    /// weights and `p - t` for the bias.
    pub fn gradient(&self, x: &[(usize, f64)], target: &[f64]) -> SparseGradient {
        let p = restricted_softmax_slice(&self.logits(x));
        let delta: Vec<f64> = p.iter().zip(target).map(|(p, t)| p - t).collect();
        SparseGradient {
            weights: x
                .iter()
                .map(|&(f, v)| (f, delta.iter().map(|d| d * v).collect()))
                .collect(),
            bias: delta,
        }
    }

    /// Mean loss over a dataset, plus the L2 penalty.
    pub fn dataset_loss(&self, data: &[(SparseFeatures, Vec<f64>)], l2: f64) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let ce: f64 = data.iter().map(|(x, t)| self.example_loss(x, t)).sum::<f64>() / data.len() as f64;
        if l2 > 0.0 {
            ce + 0.5 * l2 * self.weights.iter().map(|w| w * w).sum::<f64>()
        } else {
            ce
        }
    }

    /// Gradient descent on the mean cross-entropy. `config.batch_size` of
    /// `None` is full-batch descent; otherwise examples are shuffled each
    /// epoch with a generator derived from `(config.seed, epoch)`.
    pub fn fit(&mut self, data: &[(SparseFeatures, Vec<f64>)], config: &TrainConfig) -> Result<TrainSummary> {
        if data.is_empty() {
            return Err(Error::EmptyTraining);
        }
        config.validate()?;
        let n = data.len();
        let batch = config.batch_size.unwrap_or(n).clamp(1, n);
        let labels = self.num_labels;
        let mut grad_w = vec![0.0; self.weights.len()];
        let mut touched = vec![false; self.feature_names.len()];
        let mut touched_list: Vec<usize> = Vec::new();
        let mut order: Vec<usize> = (0..n).collect();
        let mut epoch_losses = Vec::with_capacity(config.epochs);

        for epoch in 0..config.epochs {
            if batch < n {
                order = (0..n).collect();
                SplitMix64::derive(config.seed, epoch as u64).shuffle(&mut order);
            }
            for chunk in order.chunks(batch) {
                let mut grad_b = vec![0.0; labels];
                for &i in chunk {
                    let (x, t) = &data[i];
                    let p = restricted_softmax_slice(&self.logits(x));
                    for y in 0..labels {
                        let d = p[y] - t[y];
                        grad_b[y] += d;
                        for &(f, v) in x {
                            grad_w[f * labels + y] += d * v;
                        }
                    }
                    for &(f, _) in x {
                        if !touched[f] {
                            touched[f] = true;
                            touched_list.push(f);
                        }
                    }
                }
                let scale = config.learning_rate / chunk.len() as f64;
                for &f in &touched_list {
                    for y in 0..labels {
                        let k = f * labels + y;
                        let reg = config.l2 * self.weights[k];
                        self.weights[k] -= scale * grad_w[k] + config.learning_rate * reg;
                        grad_w[k] = 0.0;
                    }
                    touched[f] = false;
                }
                touched_list.clear();
                for (b, g) in self.bias.iter_mut().zip(&grad_b) {
                    *b -= scale * g;
                }
            }
            let loss = self.dataset_loss(data, config.l2);
            if !loss.is_finite() {
                return Err(Error::Config(format!(
                    "training diverged at epoch {epoch} (learning rate {})",
                    config.learning_rate
                )));
            }
            log::debug!("epoch {epoch}: loss {loss:.6}");
            epoch_losses.push(loss);
        }
        let final_loss = epoch_losses.last().copied().unwrap_or(f64::NAN);
        Ok(TrainSummary {
            epoch_losses,
            final_loss,
        })
    }

    /// Largest relative error between the analytic gradient and central
    /// finite differences with step `epsilon`, over every weight the example
    /// touches and every bias.
    pub fn gradient_check(&self, x: &[(usize, f64)], target: &[f64], epsilon: f64) -> f64 {
        assert!(epsilon > 0.0, "epsilon must be positive");
        let analytic = self.gradient(x, target);
        let mut probe = self.clone();
        let mut worst: f64 = 0.0;
        let mut compare = |a: f64, n: f64| {
            let denom = a.abs().max(n.abs()).max(1e-8);
            worst = worst.max((a - n).abs() / denom);
        };
        for (f, g) in &analytic.weights {
            for (y, &a) in g.iter().enumerate() {
                let w = self.weight(*f, y);
                probe.set_weight(*f, y, w + epsilon);
                let up = probe.example_loss(x, target);
                probe.set_weight(*f, y, w - epsilon);
                let down = probe.example_loss(x, target);
                probe.set_weight(*f, y, w);
                compare(a, (up - down) / (2.0 * epsilon));
            }
        }
        for (y, &a) in analytic.bias.iter().enumerate() {
            let b = self.bias[y];
            probe.set_bias(y, b + epsilon);
            let up = probe.example_loss(x, target);
            probe.set_bias(y, b - epsilon);
            let down = probe.example_loss(x, target);
            probe.set_bias(y, b);
            compare(a, (up - down) / (2.0 * epsilon));
        }
        worst
    }
}

fn push_feature(out: &mut SparseFeatures, id: usize) {
    match out.iter_mut().find(|(f, _)| *f == id) {
        Some((_, v)) => *v += 1.0,
        None => out.push((id, 1.0)),
    }
}

/// One-hot target vector.
pub fn one_hot(label: usize, num_labels: usize) -> Vec<f64> {
    let mut t = vec![0.0; num_labels];
    t[label] = 1.0;
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn duplicates_become_counts() {
        let mut m = SoftmaxLinear::new(3);
        let x = m.intern(&names(&["a", "b", "a"]));
        assert_eq!(x, vec![(0, 2.0), (1, 1.0)]);
        assert_eq!(m.lookup(&names(&["b", "zzz"])), vec![(1, 1.0)]);
    }

    #[test]
    fn zero_model_gradient_is_closed_form() {
        let mut m = SoftmaxLinear::new(3);
        let x = m.intern(&names(&["a", "b"]));
        let g = m.gradient(&x, &one_hot(1, 3));
        let third = 1.0 / 3.0;
        let expected = vec![third, third - 1.0, third];
        assert_eq!(g.bias, expected);
        for (_, row) in &g.weights {
            assert_eq!(row, &expected);
        }
    }

    #[test]
    fn doubled_feature_doubles_gradient() {
        let mut m = SoftmaxLinear::new(3);
        m.intern(&names(&["a", "b"]));
        m.set_weight(0, 0, 0.3);
        m.set_weight(1, 2, -0.7);
        let t = one_hot(2, 3);
        // Doubling feature 1 while halving its weight keeps the logits fixed.
        let g1 = m.gradient(&[(0, 1.0), (1, 1.0)], &t);
        let mut m2 = m.clone();
        m2.set_weight(1, 2, -0.35);
        let g2 = m2.gradient(&[(0, 1.0), (1, 2.0)], &t);
        for y in 0..3 {
            assert!((g2.weights[1].1[y] - 2.0 * g1.weights[1].1[y]).abs() < 1e-15);
            assert!((g2.weights[0].1[y] - g1.weights[0].1[y]).abs() < 1e-15);
        }
    }

    #[test]
    fn single_example_loss_decreases() {
        let mut m = SoftmaxLinear::new(3);
        let x = m.intern(&names(&["a", "b", "c"]));
        let data = vec![(x, one_hot(0, 3))];
        let summary = m
            .fit(
                &data,
                &TrainConfig {
                    epochs: 50,
                    learning_rate: 0.1,
                    ..TrainConfig::default()
                },
            )
            .unwrap();
        assert!(summary.epoch_losses.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn empty_data_is_an_error() {
        let mut m = SoftmaxLinear::new(2);
        assert!(matches!(m.fit(&[], &TrainConfig::default()), Err(Error::EmptyTraining)));
    }

    #[test]
    fn serialization_round_trip() {
        let mut m = SoftmaxLinear::new(2);
        let x = m.intern(&names(&["a", "b"]));
        m.fit(&[(x.clone(), one_hot(1, 2))], &TrainConfig::default()).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let mut back: SoftmaxLinear = serde_json::from_str(&json).unwrap();
        back.reindex().unwrap();
        assert_eq!(back, m);
        assert_eq!(back.lookup(&names(&["a", "b"])), x);
        assert_eq!(back.logits(&x), m.logits(&x));
    }
}
