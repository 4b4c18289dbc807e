//! Token-tagged corpora: tag schemas, CoNLL-style reading and writing,
//! tag-sequence validation, k-shot sampling and corpus statistics.
//!
//! A corpus holds sentences of a single entity type. Tags carry only the
//! entity state (`B`, `I`, `O`); the entity type lives on the [`Corpus`].
//!
//! The file format is one token per line with the token in the first column
//! and the tag in the last, separated by tabs or spaces. Blank lines separate
//! sentences. A line `# id = <id>` before a block names the sentence;
//! otherwise the sentence id is its 1-based block number.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

const ID_PREFIX: &str = "# id = ";

/// Entity-state label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tag {
    #[serde(rename = "B")]
    Begin,
    #[serde(rename = "I")]
    Inside,
    #[serde(rename = "O")]
    Outside,
}

impl Tag {
    pub fn as_str(self) -> &'static str {
        match self {
            Tag::Begin => "B",
            Tag::Inside => "I",
            Tag::Outside => "O",
        }
    }

    pub fn parse(s: &str) -> Option<Tag> {
        match s {
            "B" => Some(Tag::Begin),
            "I" => Some(Tag::Inside),
            "O" => Some(Tag::Outside),
            _ => None,
        }
    }

    pub fn is_outside(self) -> bool {
        self == Tag::Outside
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemaKind {
    Io,
    Iob2,
}

impl std::str::FromStr for SchemaKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "io" => Ok(SchemaKind::Io),
            "iob2" | "bio" => Ok(SchemaKind::Iob2),
            other => Err(Error::Config(format!(
                "unsupported tag schema {other:?} (expected io or iob2)"
            ))),
        }
    }
}

/// A tagging schema over a single entity type.
///
/// The label set is ordered; that order fixes label indices everywhere else
/// (verbalizer candidates, logit vectors, probability columns).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "SchemaKind", into = "SchemaKind")]
pub struct TagSchema {
    kind: SchemaKind,
    labels: Vec<Tag>,
}

impl From<SchemaKind> for TagSchema {
    fn from(kind: SchemaKind) -> Self {
        TagSchema::new(kind)
    }
}

impl From<TagSchema> for SchemaKind {
    fn from(schema: TagSchema) -> Self {
        schema.kind
    }
}

impl TagSchema {
    pub fn new(kind: SchemaKind) -> Self {
        let labels = match kind {
            SchemaKind::Io => vec![Tag::Inside, Tag::Outside],
            SchemaKind::Iob2 => vec![Tag::Begin, Tag::Inside, Tag::Outside],
        };
        TagSchema { kind, labels }
    }

    pub fn iob2() -> Self {
        TagSchema::new(SchemaKind::Iob2)
    }

    pub fn io() -> Self {
        TagSchema::new(SchemaKind::Io)
    }

    pub fn kind(&self) -> SchemaKind {
        self.kind
    }

    pub fn labels(&self) -> &[Tag] {
        &self.labels
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn index_of(&self, tag: Tag) -> Option<usize> {
        self.labels.iter().position(|&t| t == tag)
    }

    pub fn label(&self, index: usize) -> Tag {
        self.labels[index]
    }

    pub fn outside_index(&self) -> usize {
        self.labels.len() - 1
    }

    /// Parses a tag string, accepting only labels of this schema.
    pub fn parse_tag(&self, s: &str) -> Option<Tag> {
        Tag::parse(s).filter(|t| self.labels.contains(t))
    }
}

/// A pre-tokenized sentence with optional gold tags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub tokens: Vec<String>,
    pub tags: Option<Vec<Tag>>,
}

impl Sentence {
    /// Builds a sentence, checking the shape invariants. Tokens must be
    /// non-empty and free of whitespace so they fit in a column file.
    pub fn new(id: impl Into<String>, tokens: Vec<String>, tags: Option<Vec<Tag>>) -> Result<Self> {
        let id = id.into();
        if tokens.is_empty() {
            return Err(Error::InvalidSentence(format!("{id}: no tokens")));
        }
        if let Some(pos) = tokens
            .iter()
            .position(|t| t.is_empty() || t.chars().any(char::is_whitespace))
        {
            return Err(Error::InvalidSentence(format!(
                "{id}: token {pos} is empty or contains whitespace"
            )));
        }
        if let Some(tags) = &tags {
            if tags.len() != tokens.len() {
                return Err(Error::InvalidSentence(format!(
                    "{id}: {} tags for {} tokens",
                    tags.len(),
                    tokens.len()
                )));
            }
        }
        Ok(Sentence { id, tokens, tags })
    }

    /// Convenience constructor from string slices; panics on invalid input.
    pub fn from_strs(id: &str, tokens: &[&str], tags: Option<&[Tag]>) -> Self {
        Sentence::new(
            id,
            tokens.iter().map(|t| t.to_string()).collect(),
            tags.map(<[Tag]>::to_vec),
        )
        .expect("valid sentence")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn without_tags(&self) -> Sentence {
        Sentence {
            tags: None,
            ..self.clone()
        }
    }
}

/// Position of the first IOB2 violation (an `I` with no entity before it).
pub fn first_iob2_violation(tags: &[Tag]) -> Option<usize> {
    let mut prev = Tag::Outside;
    for (i, &tag) in tags.iter().enumerate() {
        if tag == Tag::Inside && prev == Tag::Outside {
            return Some(i);
        }
        prev = tag;
    }
    None
}

/// Rewrites every orphan `I` to `B`.
pub fn repair_iob2(tags: &mut [Tag]) {
    let mut prev = Tag::Outside;
    for tag in tags.iter_mut() {
        if *tag == Tag::Inside && prev == Tag::Outside {
            *tag = Tag::Begin;
        }
        prev = *tag;
    }
}

/// Checks a sentence's tags against `schema`, optionally repairing orphan
/// `I` tags. Returns the (possibly repaired) sentence.
pub fn validate_tags(sentence: &Sentence, schema: &TagSchema, repair: bool) -> Result<Sentence> {
    let tags = sentence.tags.as_ref().ok_or_else(|| Error::InvalidTags {
        sentence_id: sentence.id.clone(),
        position: 0,
        message: "sentence has no tags".into(),
    })?;
    if let Some(pos) = tags.iter().position(|&t| schema.index_of(t).is_none()) {
        return Err(Error::InvalidTags {
            sentence_id: sentence.id.clone(),
            position: pos,
            message: format!("tag {} is not in the {:?} label set", tags[pos], schema.kind()),
        });
    }
    if schema.kind() == SchemaKind::Io {
        return Ok(sentence.clone());
    }
    match first_iob2_violation(tags) {
        None => Ok(sentence.clone()),
        Some(pos) if !repair => Err(Error::InvalidTags {
            sentence_id: sentence.id.clone(),
            position: pos,
            message: "I does not continue an entity".into(),
        }),
        Some(_) => {
            let mut fixed = tags.clone();
            repair_iob2(&mut fixed);
            Ok(Sentence {
                tags: Some(fixed),
                ..sentence.clone()
            })
        }
    }
}

/// Sentences of one entity type under one schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
    pub schema: TagSchema,
    pub entity_type: String,
}

impl Corpus {
    /// Builds a corpus, rejecting duplicate ids and schema-invalid tags.
    pub fn new(sentences: Vec<Sentence>, schema: TagSchema, entity_type: impl Into<String>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(sentences.len());
        for s in &sentences {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::InvalidCorpus(format!("duplicate sentence id {}", s.id)));
            }
            if s.tags.is_some() {
                validate_tags(s, &schema, false)?;
            }
        }
        Ok(Corpus {
            sentences,
            schema,
            entity_type: entity_type.into(),
        })
    }

    pub fn empty(schema: TagSchema, entity_type: impl Into<String>) -> Self {
        Corpus {
            sentences: Vec::new(),
            schema,
            entity_type: entity_type.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn is_tagged(&self) -> bool {
        self.sentences.iter().all(|s| s.tags.is_some())
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    /// Same sentences with all tags removed.
    pub fn without_tags(&self) -> Corpus {
        self.with_sentences(self.sentences.iter().map(Sentence::without_tags).collect())
    }

    /// A corpus sharing this one's schema and entity type.
    pub fn with_sentences(&self, sentences: Vec<Sentence>) -> Corpus {
        Corpus {
            sentences,
            schema: self.schema.clone(),
            entity_type: self.entity_type.clone(),
        }
    }
}

/// Parses tagged CoNLL-style text. `source_name` is used in error messages.
pub fn parse_conll(text: &str, source_name: &str, schema: TagSchema, entity_type: &str) -> Result<Corpus> {
    parse_blocks(text, source_name, schema, entity_type, true)
}

/// Parses untagged token-per-line text; only the first column is read.
pub fn parse_tokens(text: &str, source_name: &str, schema: TagSchema, entity_type: &str) -> Result<Corpus> {
    parse_blocks(text, source_name, schema, entity_type, false)
}

pub fn read_conll(path: impl AsRef<Path>, schema: TagSchema, entity_type: &str) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_conll(&text, &path.display().to_string(), schema, entity_type)
}

pub fn read_tokens(path: impl AsRef<Path>, schema: TagSchema, entity_type: &str) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_tokens(&text, &path.display().to_string(), schema, entity_type)
}

struct Block {
    id: Option<String>,
    id_line: usize,
    first_line: usize,
    tokens: Vec<String>,
    tags: Vec<Tag>,
    tag_lines: Vec<usize>,
}

fn parse_blocks(
    text: &str,
    source_name: &str,
    schema: TagSchema,
    entity_type: &str,
    tagged: bool,
) -> Result<Corpus> {
    let parse_err = |line: usize, message: String| Error::Parse {
        source_name: source_name.to_string(),
        line,
        message,
    };

    let mut sentences: Vec<Sentence> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut block: Option<Block> = None;

    let mut finish = |block: Block, sentences: &mut Vec<Sentence>| -> Result<()> {
        if block.tokens.is_empty() {
            return Err(parse_err(block.id_line, "empty sentence block".into()));
        }
        let id = block
            .id
            .unwrap_or_else(|| (sentences.len() + 1).to_string());
        if !seen.insert(id.clone()) {
            return Err(parse_err(block.first_line, format!("duplicate sentence id {id}")));
        }
        let tags = tagged.then_some(block.tags);
        if let Some(tags) = &tags {
            if schema.kind() == SchemaKind::Iob2 {
                if let Some(pos) = first_iob2_violation(tags) {
                    return Err(parse_err(
                        block.tag_lines[pos],
                        "I does not continue an entity".into(),
                    ));
                }
            }
        }
        let sentence =
            Sentence::new(id, block.tokens, tags).map_err(|e| parse_err(block.first_line, e.to_string()))?;
        sentences.push(sentence);
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            if let Some(b) = block.take() {
                finish(b, &mut sentences)?;
            }
            continue;
        }
        if let Some(id) = line.strip_prefix(ID_PREFIX) {
            if let Some(b) = block.take() {
                if !b.tokens.is_empty() || b.id.is_some() {
                    finish(b, &mut sentences)?;
                }
            }
            let id = id.trim();
            if id.is_empty() {
                return Err(parse_err(lineno, "empty sentence id".into()));
            }
            block = Some(Block {
                id: Some(id.to_string()),
                id_line: lineno,
                first_line: lineno,
                tokens: Vec::new(),
                tags: Vec::new(),
                tag_lines: Vec::new(),
            });
            continue;
        }
        let columns: Vec<&str> = line.split_whitespace().collect();
        if tagged && columns.len() < 2 {
            return Err(parse_err(
                lineno,
                format!("expected at least 2 columns (token, tag), found {}", columns.len()),
            ));
        }
        let b = block.get_or_insert_with(|| Block {
            id: None,
            id_line: lineno,
            first_line: lineno,
            tokens: Vec::new(),
            tags: Vec::new(),
            tag_lines: Vec::new(),
        });
        b.tokens.push(columns[0].to_string());
        if tagged {
            let raw_tag = columns[columns.len() - 1];
            let tag = schema
                .parse_tag(raw_tag)
                .ok_or_else(|| parse_err(lineno, format!("unknown tag {raw_tag:?}")))?;
            b.tags.push(tag);
            b.tag_lines.push(lineno);
        }
    }
    if let Some(b) = block.take() {
        finish(b, &mut sentences)?;
    }
    Ok(Corpus {
        sentences,
        schema,
        entity_type: entity_type.to_string(),
    })
}

/// Writes a corpus in the column format read by [`read_conll`] (or
/// [`read_tokens`] for untagged sentences). Ids that differ from the default
/// block numbering are written as `# id = ` lines.
pub fn write_conll<W: Write>(corpus: &Corpus, mut out: W) -> Result<()> {
    for (i, s) in corpus.sentences.iter().enumerate() {
        if i > 0 {
            out.write_all(b"\n")?;
        }
        if s.id != (i + 1).to_string() {
            writeln!(out, "{ID_PREFIX}{}", s.id)?;
        }
        match &s.tags {
            Some(tags) => {
                for (tok, tag) in s.tokens.iter().zip(tags) {
                    writeln!(out, "{tok}\t{tag}")?;
                }
            }
            None => {
                for tok in &s.tokens {
                    writeln!(out, "{tok}")?;
                }
            }
        }
    }
    Ok(())
}

pub fn to_conll_string(corpus: &Corpus) -> String {
    let mut buf = Vec::new();
    write_conll(corpus, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("utf-8 tokens")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KShotSpec {
    pub k: usize,
    pub seed: u64,
}

/// Result of k-shot sampling.
#[derive(Debug, Clone)]
pub struct KShotSample {
    /// The sampled sentences, in corpus order.
    pub selected: Corpus,
    /// Everything not selected, in corpus order.
    pub rest: Corpus,
    /// True when `k` exceeded the corpus size and the whole corpus was taken.
    pub saturated: bool,
}

/// Selects `min(k, |corpus|)` sentences uniformly without replacement.
pub fn sample_k_shot(corpus: &Corpus, spec: KShotSpec) -> KShotSample {
    let n = corpus.len();
    let saturated = spec.k > n;
    if saturated {
        log::warn!("k = {} exceeds corpus size {n}; taking the whole corpus", spec.k);
    }
    let picked = SplitMix64::new(spec.seed).sample_indices(n, spec.k);
    let mut chosen = vec![false; n];
    for &i in &picked {
        chosen[i] = true;
    }
    let (selected, rest): (Vec<_>, Vec<_>) = corpus
        .sentences
        .iter()
        .cloned()
        .zip(chosen)
        .partition(|(_, c)| *c);
    KShotSample {
        selected: corpus.with_sentences(selected.into_iter().map(|(s, _)| s).collect()),
        rest: corpus.with_sentences(rest.into_iter().map(|(s, _)| s).collect()),
        saturated,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sentences: usize,
    pub tokens: usize,
    pub entity_mentions: usize,
    pub label_counts: BTreeMap<String, usize>,
}

/// Number of entity mentions in a tag sequence: a mention starts at every
/// `B`, and at every non-`O` tag that follows `O` or the sentence start.
pub fn count_mentions(tags: &[Tag]) -> usize {
    let mut prev = Tag::Outside;
    let mut n = 0;
    for &tag in tags {
        if tag == Tag::Begin || (tag == Tag::Inside && prev == Tag::Outside) {
            n += 1;
        }
        prev = tag;
    }
    n
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let mut label_counts: BTreeMap<String, usize> = corpus
        .schema
        .labels()
        .iter()
        .map(|t| (t.to_string(), 0))
        .collect();
    let mut entity_mentions = 0;
    for s in &corpus.sentences {
        if let Some(tags) = &s.tags {
            entity_mentions += count_mentions(tags);
            for t in tags {
                *label_counts.entry(t.to_string()).or_default() += 1;
            }
        }
    }
    CorpusStats {
        sentences: corpus.len(),
        tokens: corpus.token_count(),
        entity_mentions,
        label_counts,
    }
}
