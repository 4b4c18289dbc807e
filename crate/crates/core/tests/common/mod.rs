//! Reference implementations written independently of the library, plus
//! random generators for property tests.

#![allow(dead_code)]

use clozener::corpus::{Corpus, Sentence, Tag, TagSchema};
use clozener::rng::SplitMix64;
use clozener::scoring::linear::SoftmaxLinear;

pub const WORDS: &[&str] = &[
    "the", "patient", "had", "asthma", "and", "fever", "colorectal", "cancer", "in", "2019", ",", ".",
    "BRCA1", "mutation", "x-ray", "Crohn's", "disease", "\"quoted\"", "[MASK]", "?", "!", "über", "naïve",
];

pub fn random_tokens(rng: &mut SplitMix64, max_len: usize) -> Vec<String> {
    let len = 1 + rng.below(max_len as u64) as usize;
    (0..len)
        .map(|_| WORDS[rng.below(WORDS.len() as u64) as usize].to_string())
        .collect()
}

/// A random valid IOB2 sequence: each position is O, B, or (after B/I) I.
pub fn random_iob2(rng: &mut SplitMix64, len: usize) -> Vec<Tag> {
    let mut tags = Vec::with_capacity(len);
    for i in 0..len {
        let can_continue = i > 0 && tags[i - 1] != Tag::Outside;
        let r = rng.below(if can_continue { 3 } else { 2 });
        tags.push(match r {
            0 => Tag::Outside,
            1 => Tag::Begin,
            _ => Tag::Inside,
        });
    }
    tags
}

/// Any sequence over {B, I, O}, valid or not.
pub fn random_any_tags(rng: &mut SplitMix64, len: usize) -> Vec<Tag> {
    (0..len)
        .map(|_| [Tag::Begin, Tag::Inside, Tag::Outside][rng.below(3) as usize])
        .collect()
}

pub fn random_corpus(rng: &mut SplitMix64, max_sentences: usize, max_len: usize) -> Corpus {
    let n = 1 + rng.below(max_sentences as u64) as usize;
    let sentences = (0..n)
        .map(|i| {
            let tokens = random_tokens(rng, max_len);
            let tags = random_iob2(rng, tokens.len());
            Sentence::new(format!("s{i}"), tokens, Some(tags)).unwrap()
        })
        .collect();
    Corpus::new(sentences, TagSchema::iob2(), "disease").unwrap()
}

/// Spans by enumeration: `(i, j)` is a span when position `i` opens an
/// entity, every tag after it up to `j` is I, and `j + 1` does not continue
/// it. An I opens an entity when it follows O or the sentence start.
pub fn oracle_spans(tags: &[Tag]) -> Vec<(usize, usize)> {
    let opens = |i: usize| match tags[i] {
        Tag::Begin => true,
        Tag::Inside => i == 0 || tags[i - 1] == Tag::Outside,
        Tag::Outside => false,
    };
    let mut out = Vec::new();
    for i in 0..tags.len() {
        for j in i..tags.len() {
            let inner_ok = (i + 1..=j).all(|m| tags[m] == Tag::Inside);
            let closed = j + 1 == tags.len() || tags[j + 1] != Tag::Inside;
            if opens(i) && inner_ok && closed {
                out.push((i, j));
            }
        }
    }
    out
}

/// `(correct, predicted, gold)` counts over paired sentences.
pub fn oracle_counts(gold: &[Vec<Tag>], pred: &[Vec<Tag>]) -> (usize, usize, usize) {
    let mut correct = 0;
    let mut predicted = 0;
    let mut support = 0;
    for (g, p) in gold.iter().zip(pred) {
        let gs = oracle_spans(g);
        let ps = oracle_spans(p);
        support += gs.len();
        predicted += ps.len();
        for s in &ps {
            if gs.iter().any(|t| t == s) {
                correct += 1;
            }
        }
    }
    (correct, predicted, support)
}

pub fn oracle_prf(correct: usize, predicted: usize, support: usize) -> (f64, f64, f64) {
    let p = if predicted == 0 { 0.0 } else { correct as f64 / predicted as f64 };
    let r = if support == 0 { 0.0 } else { correct as f64 / support as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

/// `p_i = 1 / Σ_j exp(z_j - z_i)`, a different arrangement of the softmax.
pub fn oracle_softmax(z: &[f64]) -> Vec<f64> {
    z.iter()
        .map(|zi| 1.0 / z.iter().map(|zj| (zj - zi).exp()).sum::<f64>())
        .collect()
}

/// Cross-entropy of label `gold`, from the weight accessors.
pub fn oracle_loss(model: &SoftmaxLinear, x: &[(usize, f64)], gold: usize) -> f64 {
    let labels = model.num_labels();
    let z: Vec<f64> = (0..labels)
        .map(|y| model.bias()[y] + x.iter().map(|&(f, v)| model.weight(f, y) * v).sum::<f64>())
        .collect();
    -oracle_softmax(&z)[gold].ln()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn population_std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}
