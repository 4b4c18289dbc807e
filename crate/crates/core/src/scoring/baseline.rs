//! Built-in cloze scorer: a maximum-entropy model over the tokens around
//! the target word and around the mask.
//!
//! It stands in for a pre-trained masked language model at desk scale. It is
//! convex, deterministic and cheap, and it knows nothing beyond what it is
//! trained on.

use serde::{Deserialize, Serialize};

use super::linear::{one_hot, SoftmaxLinear, SparseFeatures};
use super::{LabeledExample, LogitVector, ScoreRequest, Scorer, TrainConfig, TrainSummary};
use crate::error::{Error, Result};
use crate::pvp::ClozeExample;

pub const DEFAULT_WINDOW: usize = 2;

const PAD: &str = "<pad>";
const CUT: &str = "<cut>";

/// Context features of a cloze example.
///
/// For every offset `o` in `-window..=window` around the target token, and
/// every non-zero offset around the mask, emits the token at that offset,
/// its lowercase form and its 3-character lowercase suffix, each keyed by
/// side (`t` or `m`) and offset. Positions outside the rendered sequence read
/// as `<pad>`; if the target's context was truncated away, only the target
/// itself is described and its neighbours read as `<cut>`.
pub fn baseline_featurize(example: &ClozeExample, window: usize) -> Vec<String> {
    let tokens = &example.rendered_tokens;
    let w = window as isize;
    let at = |pos: isize| -> &str {
        usize::try_from(pos)
            .ok()
            .and_then(|p| tokens.get(p))
            .map_or(PAD, String::as_str)
    };
    let mut out = Vec::with_capacity(3 * (4 * window + 1));
    match example.target_position() {
        Some(p) => {
            for off in -w..=w {
                describe(&mut out, 't', off, at(p as isize + off));
            }
        }
        None => {
            for off in -w..=w {
                let tok = if off == 0 { example.target_token.as_str() } else { CUT };
                describe(&mut out, 't', off, tok);
            }
        }
    }
    let m = example.mask_index as isize;
    for off in (-w..=w).filter(|&o| o != 0) {
        describe(&mut out, 'm', off, at(m + off));
    }
    out
}

pub(crate) fn describe(out: &mut Vec<String>, side: char, offset: isize, token: &str) {
    let lower = token.to_lowercase();
    let suffix: String = {
        let chars: Vec<char> = lower.chars().collect();
        chars[chars.len().saturating_sub(3)..].iter().collect()
    };
    out.push(format!("{side}{offset}={token}"));
    out.push(format!("{side}{offset}:lc={lower}"));
    out.push(format!("{side}{offset}:sfx={suffix}"));
}

/// Linear scorer over [`baseline_featurize`] features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineScorer {
    window: usize,
    candidates: Vec<String>,
    model: SoftmaxLinear,
    trained_with: Option<TrainConfig>,
}

impl Default for BaselineScorer {
    fn default() -> Self {
        BaselineScorer::new(DEFAULT_WINDOW)
    }
}

impl BaselineScorer {
    /// An untrained scorer with all weights zero.
    pub fn new(window: usize) -> Self {
        BaselineScorer {
            window,
            candidates: Vec::new(),
            model: SoftmaxLinear::new(0),
            trained_with: None,
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn candidates(&self) -> &[String] {
        &self.candidates
    }

    pub fn model(&self) -> &SoftmaxLinear {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut SoftmaxLinear {
        &mut self.model
    }

    pub fn trained_with(&self) -> Option<&TrainConfig> {
        self.trained_with.as_ref()
    }

    pub fn featurize(&self, example: &ClozeExample) -> Vec<String> {
        baseline_featurize(example, self.window)
    }

    /// Feature ids of `example`, registering unseen features.
    pub fn intern(&mut self, example: &ClozeExample) -> SparseFeatures {
        let names = baseline_featurize(example, self.window);
        self.model.intern(&names)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serializable model")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let mut scorer: BaselineScorer = serde_json::from_str(json)?;
        scorer.model.reindex()?;
        Ok(scorer)
    }

    fn candidate_map(&self, candidates: &[String]) -> Result<Vec<usize>> {
        candidates
            .iter()
            .map(|c| {
                self.candidates
                    .iter()
                    .position(|k| k == c)
                    .ok_or_else(|| Error::Vocabulary(c.clone()))
            })
            .collect()
    }
}

fn check_candidates(candidates: &[String]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::Vocabulary("no candidates".into()));
    }
    for (i, c) in candidates.iter().enumerate() {
        if c.is_empty() || c.chars().any(char::is_whitespace) {
            return Err(Error::Vocabulary(format!("{c:?} is not a single token")));
        }
        if candidates[..i].contains(c) {
            return Err(Error::Vocabulary(format!("{c:?} listed twice")));
        }
    }
    Ok(())
}

impl Scorer for BaselineScorer {
    fn prepare(&mut self, candidates: &[String]) -> Result<()> {
        check_candidates(candidates)?;
        if self.candidates.is_empty() {
            self.candidates = candidates.to_vec();
            self.model = SoftmaxLinear::new(candidates.len());
            return Ok(());
        }
        if self.candidates.as_slice() != candidates {
            let unknown = candidates
                .iter()
                .find(|c| !self.candidates.contains(c))
                .cloned()
                .unwrap_or_else(|| format!("candidate order {candidates:?}"));
            return Err(Error::Vocabulary(unknown));
        }
        Ok(())
    }

    fn score(&mut self, request: ScoreRequest<'_>) -> Result<LogitVector> {
        let map = self.candidate_map(request.candidates)?;
        let x = self.model.lookup(&self.featurize(request.example));
        let z = self.model.logits(&x);
        LogitVector::new(map.into_iter().map(|i| z[i]).collect())
    }

    fn train(&mut self, examples: &[LabeledExample], candidates: &[String], config: &TrainConfig) -> Result<TrainSummary> {
        if examples.is_empty() {
            return Err(Error::EmptyTraining);
        }
        self.prepare(candidates)?;
        let labels = candidates.len();
        let mut data = Vec::with_capacity(examples.len());
        for ex in examples {
            if ex.label >= labels {
                return Err(Error::Config(format!(
                    "label index {} out of range for {labels} candidates",
                    ex.label
                )));
            }
            let x = self.intern(&ex.example);
            data.push((x, one_hot(ex.label, labels)));
        }
        let summary = self.model.fit(&data, config)?;
        self.trained_with = Some(config.clone());
        Ok(summary)
    }

    fn checkpoint(&mut self) -> Result<Vec<u8>> {
        Ok(self.to_json().into_bytes())
    }
}

/// Maximum relative error between the analytic gradient of the cross-entropy
/// `-log q(gold | example)` and central finite differences with step
/// `epsilon`. Only features the model already knows take part.
pub fn gradient_check(model: &BaselineScorer, example: &ClozeExample, gold: usize, epsilon: f64) -> f64 {
    let x = model.model.lookup(&model.featurize(example));
    let target = one_hot(gold, model.model.num_labels());
    model.model.gradient_check(&x, &target, epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Sentence, TagSchema};
    use crate::pvp::{builtin_pvps, expand, render};
    use crate::scoring::restricted_softmax;

    fn candidates() -> Vec<String> {
        ["beginning", "inside", "outside"].map(String::from).to_vec()
    }

    fn example(tokens: &[&str], idx: usize) -> ClozeExample {
        let pvp = &builtin_pvps("disease", &TagSchema::iob2())[0];
        render(&pvp.pattern, &Sentence::from_strs("s", tokens, None), idx, "disease").unwrap()
    }

    #[test]
    fn window_zero_describes_target_only() {
        let ex = example(&["severe", "Asthma", "attack"], 1);
        let f = baseline_featurize(&ex, 0);
        assert_eq!(f, vec!["t0=Asthma", "t0:lc=asthma", "t0:sfx=hma"]);
    }

    #[test]
    fn locality() {
        let a = example(&["x", "y", "the", "cold", "virus", "z"], 3);
        let b = example(&["q", "r", "the", "cold", "virus", "z"], 3);
        assert_eq!(baseline_featurize(&a, 1), baseline_featurize(&b, 1));
        assert_ne!(baseline_featurize(&a, 2), baseline_featurize(&b, 2));
        assert_eq!(baseline_featurize(&a, 2), baseline_featurize(&a, 2));
    }

    #[test]
    fn zero_model_gives_uniform() {
        let mut s = BaselineScorer::default();
        let cands = candidates();
        s.prepare(&cands).unwrap();
        let ex = example(&["a", "b"], 0);
        let z = s.score(ScoreRequest { example: &ex, candidates: &cands }).unwrap();
        assert_eq!(z.scores(), &[0.0, 0.0, 0.0]);
        let p = restricted_softmax(&z);
        assert!(p.probs().iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn unknown_candidate_is_rejected() {
        let mut s = BaselineScorer::default();
        s.prepare(&candidates()).unwrap();
        let ex = example(&["a"], 0);
        let bad = vec!["beginning".to_string(), "elsewhere".to_string()];
        let err = s.score(ScoreRequest { example: &ex, candidates: &bad }).unwrap_err();
        assert!(matches!(err, Error::Vocabulary(ref c) if c == "elsewhere"));
        assert!(s.prepare(&bad).is_err());
        assert!(BaselineScorer::default().prepare(&["x".into(), "x".into()]).is_err());
    }

    #[test]
    fn reordered_candidates_permute_logits() {
        let mut s = BaselineScorer::default();
        let cands = candidates();
        let pvp = &builtin_pvps("disease", &TagSchema::iob2())[0];
        let sent = Sentence::from_strs("s", &["a", "b"], None);
        let exs: Vec<LabeledExample> = expand(&pvp.pattern, &sent, "disease")
            .into_iter()
            .zip([0, 1])
            .map(|(example, label)| LabeledExample { example, label })
            .collect();
        s.train(&exs, &cands, &TrainConfig::default()).unwrap();
        let rev: Vec<String> = cands.iter().rev().cloned().collect();
        let z = s.score(ScoreRequest { example: &exs[0].example, candidates: &cands }).unwrap();
        let zr = s.score(ScoreRequest { example: &exs[0].example, candidates: &rev }).unwrap();
        let mut back = zr.scores().to_vec();
        back.reverse();
        assert_eq!(back, z.scores());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut s = BaselineScorer::default();
        let cands = candidates();
        let exs = vec![LabeledExample { example: example(&["a", "b"], 0), label: 0 }];
        s.train(&exs, &cands, &TrainConfig::default()).unwrap();
        let json = s.to_json();
        let back = BaselineScorer::from_json(&json).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_json(), json);
    }
}
