//! The final token classifier trained on soft labels.

use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::pipeline::SoftSentence;
use crate::scoring::baseline::{describe, DEFAULT_WINDOW};
use crate::scoring::linear::{SoftmaxLinear, SparseFeatures};
use crate::scoring::{LogitVector, TrainConfig, TrainSummary};

/// A per-token classifier over the schema's labels.
pub trait TokenClassifier: Send {
    /// Trains on soft targets; `labels` names the distribution entries.
    fn train_soft(&mut self, data: &[SoftSentence], labels: &[String], config: &TrainConfig) -> Result<TrainSummary>;

    /// One logit vector per token, in label order.
    fn logits(&mut self, sentence: &Sentence) -> Result<Vec<LogitVector>>;

    fn checkpoint(&mut self) -> Result<Vec<u8>>;
}

/// Features of token `index`: the token, its lowercase form and 3-character
/// suffix at each offset in `-window..=window`, keyed `w{offset}`.
pub fn token_features(tokens: &[String], index: usize, window: usize) -> Vec<String> {
    let w = window as isize;
    let mut out = Vec::with_capacity(3 * (2 * window + 1));
    for off in -w..=w {
        let tok = usize::try_from(index as isize + off)
            .ok()
            .and_then(|p| tokens.get(p))
            .map_or("<pad>", String::as_str);
        describe(&mut out, 'w', off, tok);
    }
    out
}

/// Linear classifier over [`token_features`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuiltinClassifier {
    window: usize,
    model: SoftmaxLinear,
}

impl Default for BuiltinClassifier {
    fn default() -> Self {
        BuiltinClassifier::new(DEFAULT_WINDOW)
    }
}

impl BuiltinClassifier {
    pub fn new(window: usize) -> Self {
        BuiltinClassifier {
            window,
            model: SoftmaxLinear::new(0),
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn model(&self) -> &SoftmaxLinear {
        &self.model
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serializable model")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let mut c: BuiltinClassifier = serde_json::from_str(json)?;
        c.model.reindex()?;
        Ok(c)
    }

    /// Logits for token `index` of `tokens`.
    pub fn logits_at(&self, tokens: &[String], index: usize) -> Result<Vec<f64>> {
        if self.model.num_labels() == 0 {
            return Err(Error::Config("classifier has not been trained".into()));
        }
        if index >= tokens.len() {
            return Err(Error::TokenIndex {
                index,
                len: tokens.len(),
            });
        }
        let x = self.model.lookup(&token_features(tokens, index, self.window));
        Ok(self.model.logits(&x))
    }

    /// Mean cross-entropy against the soft targets.
    pub fn soft_loss(&self, data: &[SoftSentence]) -> f64 {
        let mut total = 0.0;
        let mut n = 0usize;
        for s in data {
            for (i, d) in s.distributions.iter().enumerate() {
                let x = self.model.lookup(&token_features(&s.tokens, i, self.window));
                total += self.model.example_loss(&x, d.probs());
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            total / n as f64
        }
    }

    /// Trains from scratch on `(sentence tokens, token index, target)` rows.
    pub fn fit_tokens<'a, I>(&mut self, rows: I, num_labels: usize, config: &TrainConfig) -> Result<TrainSummary>
    where
        I: IntoIterator<Item = (&'a [String], usize, &'a [f64])>,
    {
        self.model = SoftmaxLinear::new(num_labels);
        let mut data: Vec<(SparseFeatures, Vec<f64>)> = Vec::new();
        for (tokens, index, target) in rows {
            if target.len() != num_labels {
                return Err(Error::Config(format!(
                    "target over {} labels, expected {num_labels}",
                    target.len()
                )));
            }
            if index >= tokens.len() {
                return Err(Error::TokenIndex {
                    index,
                    len: tokens.len(),
                });
            }
            let x = self.model.intern(&token_features(tokens, index, self.window));
            data.push((x, target.to_vec()));
        }
        self.model.fit(&data, config)
    }
}

impl TokenClassifier for BuiltinClassifier {
    fn train_soft(&mut self, data: &[SoftSentence], labels: &[String], config: &TrainConfig) -> Result<TrainSummary> {
        let rows = data.iter().flat_map(|s| {
            s.distributions
                .iter()
                .enumerate()
                .map(move |(i, d)| (s.tokens.as_slice(), i, d.probs()))
        });
        self.fit_tokens(rows, labels.len(), config)
    }

    fn logits(&mut self, sentence: &Sentence) -> Result<Vec<LogitVector>> {
        (0..sentence.len())
            .map(|i| LogitVector::new(self.logits_at(&sentence.tokens, i)?))
            .collect()
    }

    fn checkpoint(&mut self) -> Result<Vec<u8>> {
        Ok(self.to_json().into_bytes())
    }
}
