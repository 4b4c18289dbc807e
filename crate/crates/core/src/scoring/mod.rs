//! The scorer boundary.
//!
//! A scorer assigns a raw score (logit) to each verbalizer token at the mask
//! position of a cloze example. Normalizing those scores over the candidate
//! tokens only, and not over a full vocabulary, gives the label distribution
//! the rest of the toolkit works with:
//!
//! ```text
//! q(y | x, t) = exp s(v(y)) / Σ_i exp s(v(i))
//! ```
//!
//! Two scorers ship with the crate: [`BaselineScorer`], a linear model over
//! sparse context features, and [`BridgeScorer`], a client for an external
//! process speaking the line-delimited JSON protocol in [`bridge`].

pub mod baseline;
pub mod bridge;
pub mod linear;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pvp::ClozeExample;

pub use baseline::{baseline_featurize, gradient_check, BaselineScorer};
pub use bridge::BridgeScorer;

/// Raw per-candidate scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Protocol("empty logit vector".into()));
        }
        if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::Protocol(format!("non-finite logit {bad}")));
        }
        Ok(LogitVector(scores))
    }

    pub fn scores(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

/// A probability distribution over the labels of a schema, in label order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelDistribution(Vec<f64>);

impl LabelDistribution {
    /// Wraps probabilities that are in `[0, 1]` and sum to 1 within `1e-9`.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.is_empty()
            || probs.iter().any(|p| !(0.0..=1.0).contains(p))
            || (sum - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(format!("not a probability distribution: {probs:?}")));
        }
        Ok(LabelDistribution(probs))
    }

    pub fn uniform(n: usize) -> Self {
        LabelDistribution(vec![1.0 / n as f64; n])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Softmax over the candidate scores, stabilized by subtracting the maximum.
pub fn restricted_softmax(logits: &LogitVector) -> LabelDistribution {
    LabelDistribution(restricted_softmax_slice(logits.scores()))
}

pub(crate) fn restricted_softmax_slice(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// A request to score the verbalizer tokens at the mask of one example.
#[derive(Debug, Clone, Copy)]
pub struct ScoreRequest<'a> {
    pub example: &'a ClozeExample,
    /// Verbalizer tokens in label order.
    pub candidates: &'a [String],
}

impl ScoreRequest<'_> {
    /// `(sentence id, token index)` of the token the question is about.
    pub fn target_position(&self) -> (&str, usize) {
        (&self.example.sentence_id, self.example.token_index)
    }
}

/// A cloze example paired with the index of its gold label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub example: ClozeExample,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// `None` trains on the full batch each step.
    pub batch_size: Option<usize>,
    pub l2: f64,
    /// Seeds the per-epoch shuffle when mini-batching.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            learning_rate: 0.5,
            batch_size: None,
            l2: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("bad learning rate {}", self.learning_rate)));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::Config(format!("bad l2 penalty {}", self.l2)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    /// Mean training loss after each epoch; empty when the scorer only
    /// reports a final value.
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
}

/// A masked-language-model scorer for one pattern-verbalizer pair.
pub trait Scorer: Send {
    /// Fixes the candidate tokens (in label order) and checks they are in
    /// the scorer's vocabulary.
    fn prepare(&mut self, candidates: &[String]) -> Result<()>;

    fn score(&mut self, request: ScoreRequest<'_>) -> Result<LogitVector>;

    fn score_batch(&mut self, examples: &[ClozeExample], candidates: &[String]) -> Result<Vec<LogitVector>> {
        examples
            .iter()
            .map(|example| self.score(ScoreRequest { example, candidates }))
            .collect()
    }

    /// Fine-tunes on the restricted-softmax cross-entropy.
    fn train(&mut self, examples: &[LabeledExample], candidates: &[String], config: &TrainConfig) -> Result<TrainSummary>;

    /// Serialized model state (or an opaque checkpoint handle).
    fn checkpoint(&mut self) -> Result<Vec<u8>>;
}
