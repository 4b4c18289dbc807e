//! Entity-level evaluation and the multi-seed k-shot protocol.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{first_iob2_violation, Corpus, SchemaKind, Sentence, Tag, TagSchema};
use crate::error::{Error, Result};
use crate::pipeline::{run_cell, write_atomic, Inputs, ModelFactory, PipelineConfig};

/// A maximal tagged region, with inclusive bounds.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntitySpan {
    pub sentence_id: String,
    pub start: usize,
    pub end: usize,
    pub entity_type: String,
}

/// Entity spans of a tagged sentence. Under IOB2 a span is a `B` followed by
/// any `I`s; under IO it is a maximal run of `I`.
pub fn extract_spans(sentence: &Sentence, schema: &TagSchema, entity_type: &str) -> Result<Vec<EntitySpan>> {
    let tags = sentence
        .tags
        .as_ref()
        .ok_or_else(|| Error::InvalidSentence(format!("sentence {} has no tags", sentence.id)))?;
    let invalid = |position: usize, message: &str| Error::InvalidTags {
        sentence_id: sentence.id.clone(),
        position,
        message: message.to_string(),
    };
    match schema.kind() {
        SchemaKind::Iob2 => {
            if let Some(p) = first_iob2_violation(tags) {
                return Err(invalid(p, "I does not continue an entity"));
            }
        }
        SchemaKind::Io => {
            if let Some(p) = tags.iter().position(|&t| t == Tag::Begin) {
                return Err(invalid(p, "B is not an IO tag"));
            }
        }
    }
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    let span = |start: usize, end: usize| EntitySpan {
        sentence_id: sentence.id.clone(),
        start,
        end,
        entity_type: entity_type.to_string(),
    };
    for (i, &tag) in tags.iter().enumerate() {
        match tag {
            Tag::Begin => {
                if let Some(s) = open.replace(i) {
                    spans.push(span(s, i - 1));
                }
            }
            Tag::Inside => {
                open.get_or_insert(i);
            }
            Tag::Outside => {
                if let Some(s) = open.take() {
                    spans.push(span(s, i - 1));
                }
            }
        }
    }
    if let Some(s) = open {
        spans.push(span(s, tags.len() - 1));
    }
    Ok(spans)
}

/// Tags of a sentence of `len` tokens holding exactly `spans`.
pub fn encode_spans(len: usize, spans: &[EntitySpan], schema: &TagSchema) -> Vec<Tag> {
    let mut tags = vec![Tag::Outside; len];
    for s in spans {
        for (i, t) in tags.iter_mut().enumerate().take(s.end + 1).skip(s.start) {
            *t = if i == s.start && schema.kind() == SchemaKind::Iob2 {
                Tag::Begin
            } else {
                Tag::Inside
            };
        }
    }
    tags
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of gold spans.
    pub support: usize,
    pub predicted: usize,
    pub correct: usize,
}

impl Prf {
    pub fn from_counts(correct: usize, predicted: usize, support: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(correct, predicted);
        let recall = ratio(correct, support);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f1,
            support,
            predicted,
            correct,
        }
    }
}

/// Micro-averaged exact-match span precision, recall and F1. Sentences are
/// paired by position and must agree on id and length.
pub fn span_prf(gold: &Corpus, pred: &Corpus) -> Result<Prf> {
    if gold.len() != pred.len() {
        let id = gold
            .sentences
            .get(pred.len())
            .or_else(|| pred.sentences.get(gold.len()))
            .map_or_else(String::new, |s| s.id.clone());
        return Err(Error::CorpusMismatch {
            sentence_id: id,
            message: format!("{} gold sentences but {} predicted", gold.len(), pred.len()),
        });
    }
    let mut correct = 0;
    let mut predicted = 0;
    let mut support = 0;
    for (g, p) in gold.sentences.iter().zip(&pred.sentences) {
        if g.id != p.id || g.len() != p.len() {
            return Err(Error::CorpusMismatch {
                sentence_id: g.id.clone(),
                message: if g.id != p.id {
                    format!("predicted sentence has id {}", p.id)
                } else {
                    format!("{} gold tokens but {} predicted", g.len(), p.len())
                },
            });
        }
        let gs: HashSet<EntitySpan> = extract_spans(g, &gold.schema, &gold.entity_type)?.into_iter().collect();
        let ps = extract_spans(p, &pred.schema, &pred.entity_type)?;
        support += gs.len();
        predicted += ps.len();
        correct += ps.iter().filter(|s| gs.contains(s)).count();
    }
    Ok(Prf::from_counts(correct, predicted, support))
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Tags every token `O`.
pub fn all_outside(corpus: &Corpus) -> Corpus {
    corpus.with_sentences(
        corpus
            .sentences
            .iter()
            .map(|s| Sentence {
                tags: Some(vec![Tag::Outside; s.len()]),
                ..s.clone()
            })
            .collect(),
    )
}

/// Tags each token with the tag it carried most often in `train`, falling
/// back to the most frequent tag overall for unseen tokens. Ties go to the
/// earlier label. The output is repaired to a valid sequence.
pub fn majority_tag(train: &Corpus, corpus: &Corpus) -> Result<Corpus> {
    let schema = &corpus.schema;
    let n = schema.num_labels();
    let mut per_token: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut overall = vec![0usize; n];
    for s in &train.sentences {
        let Some(tags) = &s.tags else { continue };
        for (tok, &tag) in s.tokens.iter().zip(tags) {
            let Some(y) = schema.index_of(tag) else { continue };
            per_token.entry(tok.as_str()).or_insert_with(|| vec![0; n])[y] += 1;
            overall[y] += 1;
        }
    }
    let best = |counts: &[usize]| {
        let mut b = 0;
        for (i, &c) in counts.iter().enumerate() {
            if c > counts[b] {
                b = i;
            }
        }
        schema.label(b)
    };
    let fallback = best(&overall);
    let sentences = corpus
        .sentences
        .iter()
        .map(|s| {
            let tags = s
                .tokens
                .iter()
                .map(|t| per_token.get(t.as_str()).map_or(fallback, |c| best(c)))
                .collect();
            crate::corpus::validate_tags(
                &Sentence {
                    tags: Some(tags),
                    ..s.clone()
                },
                schema,
                true,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(corpus.with_sentences(sentences))
}

/// Metrics of one `(shots, seed)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub shots: usize,
    pub seed: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub train_sentences: usize,
    pub train_mentions: usize,
    pub unlabeled_sentences: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub shots: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        MeanStd { mean, std }
    }
}

/// Summary over the seeds of one shot count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotSummary {
    pub shots: usize,
    pub completed: usize,
    pub failed: usize,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
    pub train_mentions: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// SHA-256 of the resolved configuration.
    pub fingerprint: String,
    pub entity_type: String,
    pub runs: Vec<SeedMetrics>,
    pub failures: Vec<CellFailure>,
    pub summary: Vec<ShotSummary>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn config_fingerprint(config: &PipelineConfig) -> String {
    sha256_hex(&serde_json::to_vec(config).expect("serializable config"))
}

impl EvalReport {
    /// Sorts cells by `(shots, seed)` and computes the per-shot summaries.
    pub fn new(
        fingerprint: String,
        entity_type: String,
        mut runs: Vec<SeedMetrics>,
        mut failures: Vec<CellFailure>,
    ) -> Self {
        runs.sort_by_key(|r| (r.shots, r.seed));
        failures.sort_by_key(|f| (f.shots, f.seed));
        let mut shots: Vec<usize> = runs.iter().map(|r| r.shots).chain(failures.iter().map(|f| f.shots)).collect();
        shots.dedup();
        shots.sort_unstable();
        shots.dedup();
        let summary = shots
            .into_iter()
            .map(|k| {
                let cells: Vec<&SeedMetrics> = runs.iter().filter(|r| r.shots == k).collect();
                let pick = |f: fn(&SeedMetrics) -> f64| MeanStd::of(&cells.iter().map(|c| f(c)).collect::<Vec<_>>());
                ShotSummary {
                    shots: k,
                    completed: cells.len(),
                    failed: failures.iter().filter(|f| f.shots == k).count(),
                    precision: pick(|c| c.precision),
                    recall: pick(|c| c.recall),
                    f1: pick(|c| c.f1),
                    train_mentions: mean_std(&cells.iter().map(|c| c.train_mentions as f64).collect::<Vec<_>>()).0,
                }
            })
            .collect();
        EvalReport {
            fingerprint,
            entity_type,
            runs,
            failures,
            summary,
        }
    }

    pub fn has_failures(&self) -> bool {
        !self.failures.is_empty()
    }

    pub fn summary_for(&self, shots: usize) -> Option<&ShotSummary> {
        self.summary.iter().find(|s| s.shots == shots)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable report");
        s.push('\n');
        s
    }

    /// Aligned text table with one row per shot count, `mean ± std` cells.
    pub fn table(&self) -> String {
        let cell = |m: &MeanStd| format!("{:.3} ± {:.3}", m.mean, m.std);
        let mut rows = vec![[
            "k".to_string(),
            "seeds".to_string(),
            "mentions".to_string(),
            "P".to_string(),
            "R".to_string(),
            "F1".to_string(),
        ]];
        for s in &self.summary {
            let seeds = if s.failed > 0 {
                format!("{} ({} failed)", s.completed, s.failed)
            } else {
                s.completed.to_string()
            };
            let metric = |m: &MeanStd| if s.completed == 0 { "failed".to_string() } else { cell(m) };
            rows.push([
                s.shots.to_string(),
                seeds,
                format!("{:.1}", s.train_mentions),
                metric(&s.precision),
                metric(&s.recall),
                metric(&s.f1),
            ]);
        }
        let widths: Vec<usize> = (0..6)
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        writeln!(out, "entity type: {}", self.entity_type).unwrap();
        for r in &rows {
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .map(|(v, w)| format!("{v}{}", " ".repeat(w - v.chars().count())))
                .collect();
            writeln!(out, "{}", line.join("  ").trim_end()).unwrap();
        }
        for f in &self.failures {
            writeln!(out, "failed: k={} seed={}: {}", f.shots, f.seed, f.error).unwrap();
        }
        out
    }

    /// One CSV row per completed cell: `k,seed,precision,recall,f1`.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("k,seed,precision,recall,f1\n");
        for r in &self.runs {
            writeln!(out, "{},{},{},{},{}", r.shots, r.seed, r.precision, r.recall, r.f1).unwrap();
        }
        out
    }
}

/// Runs the pipeline for every `(shots, seed)` pair of `config` on up to
/// `workers` threads and writes the run directory if one is given. Cells run
/// one at a time when the factory has a finite capacity.
pub fn run_protocol(
    inputs: Inputs<'_>,
    config: &PipelineConfig,
    factory: &dyn ModelFactory,
    run_dir: Option<&Path>,
    workers: usize,
) -> Result<EvalReport> {
    config.validate()?;
    inputs.check()?;
    if let Some(dir) = run_dir {
        let mut json = serde_json::to_string_pretty(config).expect("serializable config");
        json.push('\n');
        write_atomic(&dir.join("config"), json.as_bytes())?;
    }
    let cells: Vec<(usize, u64)> = config
        .shots
        .iter()
        .flat_map(|&k| config.seeds.iter().map(move |&s| (k, s)))
        .collect();
    // A bounded factory already spreads each cell over its capacity.
    let workers = if factory.parallelism() == usize::MAX { workers.max(1) } else { 1 };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<((usize, u64), Result<SeedMetrics>)> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(k, seed)| {
                let dir = run_dir.map(|d| d.join(format!("k-{k}")).join(format!("seed-{seed}")));
                let r = run_cell(inputs, config, k, seed, factory, dir.as_deref());
                if let Err(e) = &r {
                    log::error!("k={k} seed={seed}: {e}");
                }
                ((k, seed), r)
            })
            .collect()
    });
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for ((shots, seed), r) in results {
        match r {
            Ok(m) => runs.push(m),
            Err(e) => failures.push(CellFailure {
                shots,
                seed,
                error: error_chain(&e),
            }),
        }
    }
    let report = EvalReport::new(
        config_fingerprint(config),
        inputs.train.entity_type.clone(),
        runs,
        failures,
    );
    if let Some(dir) = run_dir {
        write_atomic(&dir.join("report"), report.to_json().as_bytes())?;
        write_atomic(&dir.join("report.txt"), report.table().as_bytes())?;
        write_atomic(&dir.join("curve.csv"), report.curve_csv().as_bytes())?;
    }
    Ok(report)
}

/// The error and all its sources, joined with `: `.
pub fn error_chain(e: &(dyn std::error::Error + 'static)) -> String {
    let mut out = e.to_string();
    let mut cur = e.source();
    while let Some(s) = cur {
        let msg = s.to_string();
        if !out.ends_with(&msg) {
            write!(out, ": {msg}").unwrap();
        }
        cur = s.source();
    }
    out
}
