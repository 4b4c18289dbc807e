//! Training one scorer per pattern, soft-labeling unlabeled text with the
//! ensemble, and distilling a final token classifier.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{BuiltinClassifier, TokenClassifier};
use crate::corpus::{sample_k_shot, validate_tags, Corpus, KShotSpec, SchemaKind, Sentence, TagSchema};
use crate::error::{Error, Result};
use crate::eval::{span_prf, SeedMetrics};
use crate::pvp::{expand_limited, Pvp};
use crate::rng::SplitMix64;
use crate::scoring::bridge::{BridgeClassifier, BridgeClient, Head};
use crate::scoring::{
    restricted_softmax, BaselineScorer, BridgeScorer, LabelDistribution, LabeledExample, Scorer, TrainConfig,
    TrainSummary,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Arithmetic mean of the per-pattern distributions.
    #[default]
    Uniform,
}

/// Optimizer settings shared by scorer training and distillation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Optim {
    pub learning_rate: f64,
    pub batch_size: Option<usize>,
    pub l2: f64,
}

impl Default for Optim {
    fn default() -> Self {
        Optim {
            learning_rate: 2.0,
            batch_size: Some(4),
            l2: 0.0,
        }
    }
}

impl Optim {
    pub fn train_config(&self, epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            l2: self.l2,
            seed,
        }
    }
}

pub fn default_epoch_schedule() -> BTreeMap<usize, usize> {
    [(10, 10), (25, 7), (50, 5), (100, 5)].into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub pvps: Vec<Pvp>,
    pub shots: Vec<usize>,
    pub seeds: Vec<u64>,
    pub epoch_schedule: BTreeMap<usize, usize>,
    /// Scorer epochs for every shot count, ignoring the schedule.
    pub epochs_override: Option<usize>,
    pub unlabeled_cap: usize,
    pub aggregation: Aggregation,
    pub distill_epochs: usize,
    pub temperature: f64,
    /// Longest rendered cloze question; `None` disables truncation.
    pub max_sequence_tokens: Option<usize>,
    pub scorer_optim: Optim,
    pub distill_optim: Optim,
    /// Context window of the built-in models.
    pub window: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            pvps: Vec::new(),
            shots: vec![10, 25, 50, 100],
            seeds: vec![1, 2, 3],
            epoch_schedule: default_epoch_schedule(),
            epochs_override: None,
            unlabeled_cap: 10_000,
            aggregation: Aggregation::Uniform,
            distill_epochs: 5,
            temperature: 1.0,
            max_sequence_tokens: Some(128),
            scorer_optim: Optim::default(),
            distill_optim: Optim {
                learning_rate: 0.5,
                batch_size: Some(32),
                l2: 0.0,
            },
            window: crate::scoring::baseline::DEFAULT_WINDOW,
        }
    }
}

impl PipelineConfig {
    pub fn epochs_for(&self, shots: usize) -> Result<usize> {
        if let Some(e) = self.epochs_override {
            return Ok(e);
        }
        self.epoch_schedule
            .get(&shots)
            .copied()
            .ok_or_else(|| Error::Config(format!("no epoch count for {shots} shots; add it to the schedule or override")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.pvps.is_empty() {
            return Err(Error::Config("at least one pattern is required".into()));
        }
        let mut ids: Vec<&str> = self.pvps.iter().map(Pvp::id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("pattern ids must be distinct".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.unlabeled_cap == 0 {
            return Err(Error::Config("unlabeled cap must be at least 1".into()));
        }
        if self.distill_epochs == 0 {
            return Err(Error::Config("distill epochs must be at least 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("bad temperature {}", self.temperature)));
        }
        for &k in &self.shots {
            if k == 0 {
                return Err(Error::Config("k = 0 leaves nothing to train on".into()));
            }
            self.epochs_for(k)?;
        }
        self.scorer_optim.train_config(1, 0).validate()?;
        self.distill_optim.train_config(1, 0).validate()?;
        Ok(())
    }
}

/// Builds fresh, untrained models.
pub trait ModelFactory: Sync {
    fn scorer(&self, pvp: &Pvp) -> Result<Box<dyn Scorer>>;
    fn classifier(&self) -> Result<Box<dyn TokenClassifier>>;
    /// How many models may train or score at the same time.
    fn parallelism(&self) -> usize {
        usize::MAX
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuiltinFactory {
    pub window: usize,
}

impl Default for BuiltinFactory {
    fn default() -> Self {
        BuiltinFactory {
            window: crate::scoring::baseline::DEFAULT_WINDOW,
        }
    }
}

impl ModelFactory for BuiltinFactory {
    fn scorer(&self, _pvp: &Pvp) -> Result<Box<dyn Scorer>> {
        Ok(Box::new(BaselineScorer::new(self.window)))
    }

    fn classifier(&self) -> Result<Box<dyn TokenClassifier>> {
        Ok(Box::new(BuiltinClassifier::new(self.window)))
    }
}

/// Opens one bridge connection per model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BridgeFactory {
    addr: String,
    capacity: usize,
}

impl BridgeFactory {
    /// Connects once to check the bridge is there and read its capacity.
    pub fn probe(addr: &str, candidates: &[String]) -> Result<Self> {
        let info = BridgeClient::connect(addr)?.handshake(Head::Mlm, candidates)?;
        Ok(BridgeFactory {
            addr: addr.to_string(),
            capacity: info.capacity.max(1),
        })
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }
}

impl ModelFactory for BridgeFactory {
    fn scorer(&self, _pvp: &Pvp) -> Result<Box<dyn Scorer>> {
        Ok(Box::new(BridgeScorer::connect(&self.addr)?))
    }

    fn classifier(&self) -> Result<Box<dyn TokenClassifier>> {
        Ok(Box::new(BridgeClassifier::connect(&self.addr)?))
    }

    fn parallelism(&self) -> usize {
        self.capacity
    }
}

/// A scorer fine-tuned for one pattern.
pub struct TrainedPvp {
    pub pvp: Pvp,
    pub scorer: Box<dyn Scorer>,
    pub summary: TrainSummary,
    pub examples: usize,
}

impl std::fmt::Debug for TrainedPvp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrainedPvp")
            .field("pvp", &self.pvp.id())
            .field("summary", &self.summary)
            .field("examples", &self.examples)
            .finish()
    }
}

fn with_pvp(pvp: &Pvp, e: Error) -> Error {
    Error::Pvp {
        pvp: pvp.id().to_string(),
        source: Box::new(e),
    }
}

/// Cloze training examples for `pvp` over every token of `train`.
pub fn labeled_examples(pvp: &Pvp, train: &Corpus, max_tokens: Option<usize>) -> Result<Vec<LabeledExample>> {
    let mut out = Vec::with_capacity(train.token_count());
    for s in &train.sentences {
        if s.tags.is_none() {
            return Err(Error::InvalidCorpus(format!("training sentence {} has no tags", s.id)));
        }
        for example in expand_limited(&pvp.pattern, s, &train.entity_type, max_tokens) {
            let tag = example.gold_label.expect("tagged sentence");
            let label = train.schema.index_of(tag).ok_or_else(|| Error::InvalidTags {
                sentence_id: s.id.clone(),
                position: example.token_index,
                message: format!("tag {tag} is not in the label set"),
            })?;
            out.push(LabeledExample { example, label });
        }
    }
    Ok(out)
}

fn in_groups<T: Send, R: Send>(items: Vec<T>, size: usize, f: impl Fn(T) -> R + Sync) -> Vec<R> {
    let size = size.max(1);
    let mut items = items.into_iter();
    let mut out = Vec::new();
    loop {
        let group: Vec<T> = items.by_ref().take(size).collect();
        if group.is_empty() {
            return out;
        }
        out.extend(group.into_par_iter().map(&f).collect::<Vec<_>>());
    }
}

/// Trains a fresh scorer per pattern, in parallel, and returns them in
/// pattern order.
pub fn train_pvp_models(
    train: &Corpus,
    config: &PipelineConfig,
    epochs: usize,
    seed: u64,
    factory: &dyn ModelFactory,
) -> Result<Vec<TrainedPvp>> {
    if config.pvps.is_empty() {
        return Err(Error::Config("at least one pattern is required".into()));
    }
    let jobs: Vec<(usize, &Pvp)> = config.pvps.iter().enumerate().collect();
    let results = in_groups(jobs, factory.parallelism(), |(i, pvp)| {
        let run = || -> Result<TrainedPvp> {
            let candidates = pvp.verbalizer.candidates(&train.schema);
            let examples = labeled_examples(pvp, train, config.max_sequence_tokens)?;
            let mut scorer = factory.scorer(pvp)?;
            scorer.prepare(&candidates)?;
            let tc = config
                .scorer_optim
                .train_config(epochs, SplitMix64::derive(seed, 100 + i as u64).next_u64());
            let summary = scorer.train(&examples, &candidates, &tc)?;
            log::info!("pattern {}: {} examples, final loss {:.4}", pvp.id(), examples.len(), summary.final_loss);
            Ok(TrainedPvp {
                pvp: pvp.clone(),
                scorer,
                summary,
                examples: examples.len(),
            })
        };
        run().map_err(|e| with_pvp(pvp, e))
    });
    results.into_iter().collect()
}

/// Per-token label distributions for one sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftSentence {
    pub id: String,
    pub tokens: Vec<String>,
    pub distributions: Vec<LabelDistribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLabeledDataset {
    /// Label names, in the order of every distribution.
    pub labels: Vec<String>,
    pub sentences: Vec<SoftSentence>,
}

impl SoftLabeledDataset {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(|s| s.tokens.len()).sum()
    }
}

/// The sentences soft labeling will use: all of them when under the cap,
/// otherwise a seeded sample of `cap` sentences kept in corpus order.
pub fn cap_unlabeled(unlabeled: &Corpus, cap: usize, seed: u64) -> Corpus {
    if unlabeled.len() <= cap {
        return unlabeled.clone();
    }
    let picked = SplitMix64::derive(seed, 1).sample_indices(unlabeled.len(), cap);
    unlabeled.with_sentences(picked.into_iter().map(|i| unlabeled.sentences[i].clone()).collect())
}

/// Averages distributions with equal weights.
pub fn aggregate_uniform(dists: &[&LabelDistribution]) -> Result<LabelDistribution> {
    let n = dists.first().map(|d| d.len()).ok_or(Error::EmptyTraining)?;
    if dists.iter().any(|d| d.len() != n) {
        return Err(Error::Config("distributions over different label sets".into()));
    }
    let m = dists.len() as f64;
    let mean = (0..n)
        .map(|y| dists.iter().map(|d| d.probs()[y]).sum::<f64>() / m)
        .collect();
    LabelDistribution::new(mean)
}

/// Sharpens or softens a distribution: `p^(1/T)`, renormalized.
pub fn apply_temperature(dist: LabelDistribution, temperature: f64) -> Result<LabelDistribution> {
    if temperature == 1.0 {
        return Ok(dist);
    }
    let powered: Vec<f64> = dist.probs().iter().map(|p| p.powf(1.0 / temperature)).collect();
    let sum: f64 = powered.iter().sum();
    LabelDistribution::new(powered.into_iter().map(|p| p / sum).collect())
}

/// Scores every token of the (capped) unlabeled corpus with every pattern
/// model and averages the resulting distributions.
pub fn soft_label(
    unlabeled: &Corpus,
    models: &mut [TrainedPvp],
    config: &PipelineConfig,
    seed: u64,
    parallelism: usize,
) -> Result<SoftLabeledDataset> {
    if models.is_empty() {
        return Err(Error::Config("soft labeling needs at least one model".into()));
    }
    let pool = cap_unlabeled(unlabeled, config.unlabeled_cap, seed);
    let schema = &unlabeled.schema;
    let entity_type = &unlabeled.entity_type;
    let max_tokens = config.max_sequence_tokens;
    let jobs: Vec<&mut TrainedPvp> = models.iter_mut().collect();
    let per_model = in_groups(jobs, parallelism, |model| {
        let candidates = model.pvp.verbalizer.candidates(schema);
        let mut out: Vec<Vec<LabelDistribution>> = Vec::with_capacity(pool.len());
        for (done, s) in pool.sentences.iter().enumerate() {
            let examples = expand_limited(&model.pvp.pattern, s, entity_type, max_tokens);
            let logits = model.scorer.score_batch(&examples, &candidates).map_err(|e| {
                log::error!("pattern {}: scoring stopped after {done} of {} sentences", model.pvp.id(), pool.len());
                with_pvp(&model.pvp, e)
            })?;
            out.push(logits.iter().map(restricted_softmax).collect());
        }
        Ok(out)
    });
    let per_model: Vec<Vec<Vec<LabelDistribution>>> = per_model.into_iter().collect::<Result<_>>()?;

    let mut sentences = Vec::with_capacity(pool.len());
    for (si, s) in pool.sentences.iter().enumerate() {
        let mut distributions = Vec::with_capacity(s.len());
        for ti in 0..s.len() {
            let parts: Vec<&LabelDistribution> = per_model.iter().map(|m| &m[si][ti]).collect();
            let agg = match config.aggregation {
                Aggregation::Uniform => aggregate_uniform(&parts)?,
            };
            distributions.push(apply_temperature(agg, config.temperature)?);
        }
        sentences.push(SoftSentence {
            id: s.id.clone(),
            tokens: s.tokens.clone(),
            distributions,
        });
    }
    Ok(SoftLabeledDataset {
        labels: schema.labels().iter().map(|t| t.to_string()).collect(),
        sentences,
    })
}

/// Trains a fresh final classifier on the soft labels.
pub fn distill(
    soft: &SoftLabeledDataset,
    config: &PipelineConfig,
    seed: u64,
    factory: &dyn ModelFactory,
) -> Result<(Box<dyn TokenClassifier>, TrainSummary)> {
    if soft.token_count() == 0 {
        return Err(Error::EmptyTraining);
    }
    let mut classifier = factory.classifier()?;
    let tc = config
        .distill_optim
        .train_config(config.distill_epochs, SplitMix64::derive(seed, 2).next_u64());
    let summary = classifier.train_soft(&soft.sentences, &soft.labels, &tc)?;
    log::info!("distilled on {} tokens, final loss {:.4}", soft.token_count(), summary.final_loss);
    Ok((classifier, summary))
}

/// Tags every sentence with the classifier's argmax labels and repairs the
/// result to a valid sequence.
pub fn predict(classifier: &mut dyn TokenClassifier, corpus: &Corpus) -> Result<Corpus> {
    let schema = &corpus.schema;
    let mut out = Vec::with_capacity(corpus.len());
    for s in &corpus.sentences {
        let logits = classifier.logits(s)?;
        if logits.len() != s.len() {
            return Err(Error::Protocol(format!(
                "{} predictions for {} tokens in sentence {}",
                logits.len(),
                s.len(),
                s.id
            )));
        }
        let tags = logits
            .iter()
            .map(|z| {
                if z.len() != schema.num_labels() {
                    return Err(Error::Protocol(format!("{} logits for {} labels", z.len(), schema.num_labels())));
                }
                Ok(schema.label(z.argmax()))
            })
            .collect::<Result<Vec<_>>>()?;
        let tagged = Sentence {
            tags: Some(tags),
            ..s.clone()
        };
        out.push(validate_tags(&tagged, schema, true)?);
    }
    Ok(corpus.with_sentences(out))
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        fs::remove_file(&tmp).ok();
        Error::file(path, e)
    })
}

const LABELS_PREFIX: &str = "# labels = ";
const ID_PREFIX: &str = "# id = ";

/// Column format: one token per line followed by its probabilities in label
/// order, tab-separated, with a `# labels = ` header and `# id = ` before
/// each sentence.
pub fn soft_labels_to_string(soft: &SoftLabeledDataset) -> String {
    let mut out = String::new();
    writeln!(out, "{LABELS_PREFIX}{}", soft.labels.join(" ")).unwrap();
    for s in &soft.sentences {
        writeln!(out, "\n{ID_PREFIX}{}", s.id).unwrap();
        for (tok, d) in s.tokens.iter().zip(&s.distributions) {
            out.push_str(tok);
            for p in d.probs() {
                write!(out, "\t{p}").unwrap();
            }
            out.push('\n');
        }
    }
    out
}

pub fn parse_soft_labels(text: &str, source_name: &str) -> Result<SoftLabeledDataset> {
    let err = |line: usize, message: String| Error::Parse {
        source_name: source_name.to_string(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let labels: Vec<String> = match lines.next() {
        Some((_, l)) if l.starts_with(LABELS_PREFIX) => {
            l[LABELS_PREFIX.len()..].split_whitespace().map(String::from).collect()
        }
        _ => return Err(err(1, format!("expected a {LABELS_PREFIX:?} header"))),
    };
    if labels.is_empty() {
        return Err(err(1, "no labels".into()));
    }
    let mut sentences: Vec<SoftSentence> = Vec::new();
    let mut current: Option<SoftSentence> = None;
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if let Some(id) = line.strip_prefix(ID_PREFIX) {
            sentences.extend(current.take());
            current = Some(SoftSentence {
                id: id.trim().to_string(),
                tokens: Vec::new(),
                distributions: Vec::new(),
            });
            continue;
        }
        let s = current
            .as_mut()
            .ok_or_else(|| err(lineno, format!("token before any {ID_PREFIX:?} line")))?;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != labels.len() + 1 {
            return Err(err(
                lineno,
                format!("expected {} columns, found {}", labels.len() + 1, cols.len()),
            ));
        }
        let probs = cols[1..]
            .iter()
            .map(|c| c.parse::<f64>().map_err(|e| err(lineno, format!("bad probability {c:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let d = LabelDistribution::new(probs).map_err(|e| err(lineno, e.to_string()))?;
        s.tokens.push(cols[0].to_string());
        s.distributions.push(d);
    }
    sentences.extend(current);
    if let Some(s) = sentences.iter().find(|s| s.tokens.is_empty()) {
        return Err(err(0, format!("sentence {} has no tokens", s.id)));
    }
    Ok(SoftLabeledDataset { labels, sentences })
}

pub fn read_soft_labels(path: impl AsRef<Path>) -> Result<SoftLabeledDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_soft_labels(&text, &path.display().to_string())
}

/// Inputs of one experiment.
#[derive(Debug, Clone, Copy)]
pub struct Inputs<'a> {
    /// The training split k-shot samples are drawn from.
    pub train: &'a Corpus,
    /// Untagged text for soft labeling; `None` uses the training sentences
    /// left over after sampling, with their tags removed.
    pub unlabeled: Option<&'a Corpus>,
    pub test: &'a Corpus,
}

impl Inputs<'_> {
    pub fn check(&self) -> Result<()> {
        let mut corpora = vec![("train", self.train), ("test", self.test)];
        corpora.extend(self.unlabeled.map(|u| ("unlabeled", u)));
        for (name, c) in &corpora {
            if c.schema != self.train.schema || c.entity_type != self.train.entity_type {
                return Err(Error::Config(format!(
                    "{name} corpus is {:?}/{} but train is {:?}/{}",
                    c.schema.kind(),
                    c.entity_type,
                    self.train.schema.kind(),
                    self.train.entity_type
                )));
            }
        }
        if !self.train.is_tagged() || !self.test.is_tagged() {
            return Err(Error::Config("train and test corpora must be tagged".into()));
        }
        Ok(())
    }
}

/// Runs the whole pipeline for one `(shots, seed)` cell. Artifacts go to
/// `cell_dir` as each stage finishes.
pub fn run_cell(
    inputs: Inputs<'_>,
    config: &PipelineConfig,
    shots: usize,
    seed: u64,
    factory: &dyn ModelFactory,
    cell_dir: Option<&Path>,
) -> Result<SeedMetrics> {
    if shots == 0 {
        return Err(Error::Config("k = 0 leaves nothing to train on".into()));
    }
    let epochs = config.epochs_for(shots)?;
    let persist = |name: &str, bytes: &[u8]| -> Result<()> {
        match cell_dir {
            Some(dir) => write_atomic(&dir.join(name), bytes),
            None => Ok(()),
        }
    };

    let sample = sample_k_shot(inputs.train, KShotSpec { k: shots, seed });
    let train = &sample.selected;
    let leftover;
    let unlabeled = match inputs.unlabeled {
        Some(u) => u,
        None => {
            leftover = sample.rest.without_tags();
            &leftover
        }
    };
    let train_mentions = crate::corpus::corpus_stats(train).entity_mentions;

    let mut models = train_pvp_models(train, config, epochs, seed, factory).map_err(|e| e.in_stage("train"))?;
    for m in &mut models {
        let bytes = m.scorer.checkpoint().map_err(|e| with_pvp(&m.pvp, e).in_stage("train"))?;
        persist(&format!("models/pvp-{}", m.pvp.id()), &bytes).map_err(|e| e.in_stage("train"))?;
    }

    let soft = soft_label(unlabeled, &mut models, config, seed, factory.parallelism())
        .map_err(|e| e.in_stage("soft_label"))?;
    persist("soft_labels", soft_labels_to_string(&soft).as_bytes()).map_err(|e| e.in_stage("soft_label"))?;
    drop(models);

    let (mut classifier, _) = distill(&soft, config, seed, factory).map_err(|e| e.in_stage("distill"))?;
    let bytes = classifier.checkpoint().map_err(|e| e.in_stage("distill"))?;
    persist("final_model", &bytes).map_err(|e| e.in_stage("distill"))?;

    let predicted = predict(classifier.as_mut(), &inputs.test.without_tags()).map_err(|e| e.in_stage("predict"))?;
    persist("predictions", crate::corpus::to_conll_string(&predicted).as_bytes())
        .map_err(|e| e.in_stage("predict"))?;

    let prf = span_prf(inputs.test, &predicted).map_err(|e| e.in_stage("eval"))?;
    let metrics = SeedMetrics {
        shots,
        seed,
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
        support: prf.support,
        train_sentences: train.len(),
        train_mentions,
        unlabeled_sentences: soft.len(),
    };
    let mut report = serde_json::to_string_pretty(&metrics).expect("serializable metrics");
    report.push('\n');
    persist("report", report.as_bytes()).map_err(|e| e.in_stage("eval"))?;
    Ok(metrics)
}

/// Runs every `(shots, seed)` cell of `config` and summarizes the results.
/// Failed cells are recorded in the report rather than aborting the run.
pub fn run_pipeline(
    inputs: Inputs<'_>,
    config: &PipelineConfig,
    factory: &dyn ModelFactory,
    run_dir: Option<&Path>,
    workers: usize,
) -> Result<crate::eval::EvalReport> {
    crate::eval::run_protocol(inputs, config, factory, run_dir, workers)
}

/// `SchemaKind` of the corpus the labels in a soft dataset belong to.
pub fn schema_for_labels(labels: &[String]) -> Option<TagSchema> {
    [SchemaKind::Iob2, SchemaKind::Io].into_iter().map(TagSchema::new).find(|s| {
        s.labels().len() == labels.len() && s.labels().iter().zip(labels).all(|(t, l)| t.as_str() == l)
    })
}
