//! Synthetic gazetteer corpora for benchmarks and tests.
//!
//! Entity names come from a fixed-size lexicon of disease-like terms built
//! from word stems and suffixes. They appear in sentences with context cues
//! ("diagnosed with", "history of") plus filler text; a share of sentences
//! mention no entity at all.

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Sentence, Tag, TagSchema};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

const STEMS: &[&str] = &[
    "nephr", "hepat", "arthr", "derm", "neur", "gastr", "cardi", "oste", "encephal", "carcin", "lymph",
    "aden", "fibr", "thromb", "scler", "angi", "mening", "bronch", "col", "pancreat", "cyst", "myel",
    "retin", "splen", "thyr", "sarc", "glom", "chondr", "mast", "ot", "rhin", "pharyng", "laryng",
    "tend", "vascul", "cerebr", "my", "hem", "lip", "gli",
];

const SUFFIXES: &[&str] = &["itis", "oma", "osis", "emia", "pathy", "algia"];

const MODIFIERS: &[&str] = &[
    "chronic", "acute", "familial", "juvenile", "primary", "diffuse", "malignant", "congenital",
];

const HEADS: &[&str] = &["syndrome", "disease", "disorder"];

const CUES: &[&[&str]] = &[
    &["The", "patient", "was", "diagnosed", "with", "{E}"],
    &["She", "has", "a", "long", "history", "of", "{E}"],
    &["Symptoms", "of", "{E}", "include"],
    &["{E}", "was", "confirmed", "by", "biopsy"],
    &["He", "was", "treated", "for", "{E}"],
    &["Mutations", "in", "this", "gene", "cause", "{E}"],
    &["Patients", "with", "{E}", "were", "enrolled"],
    &["The", "risk", "of", "{E}", "increased"],
    &["Both", "{E}", "and", "{E}", "were", "excluded"],
    &["A", "case", "of", "{E}", "is", "reported"],
];

const FILLER_SENTENCES: &[&[&str]] = &[
    &["The", "samples", "were", "stored", "at", "room", "temperature"],
    &["Written", "consent", "was", "obtained", "from", "all", "participants"],
    &["The", "study", "was", "approved", "by", "the", "ethics", "committee"],
    &["Data", "were", "analysed", "with", "standard", "software"],
    &["Follow-up", "visits", "were", "scheduled", "every", "month"],
    &["No", "adverse", "events", "were", "recorded"],
];

const FILLER: &[&str] = &[
    "in", "the", "cohort", "after", "treatment", "during", "follow-up", "at", "baseline", "with",
    "mild", "symptoms", "and", "fever", "in", "2019", "according", "to", "records", "of", "hospital",
    "patients", "were", "observed", "over", "six", "months", "by", "clinicians",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub sentences: usize,
    pub lexicon_size: usize,
    /// Sentences placed in the test split (taken from the end).
    pub test_sentences: usize,
    /// Percentage of sentences with no entity.
    pub empty_percent: u64,
    /// Percentage of lexicon terms with a leading modifier ("chronic").
    pub modifier_percent: u64,
    /// Percentage of lexicon terms with a trailing head noun ("syndrome").
    pub head_percent: u64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sentences: 5000,
            lexicon_size: 200,
            test_sentences: 1000,
            empty_percent: 20,
            modifier_percent: 25,
            head_percent: 10,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub lexicon: Vec<Vec<String>>,
    pub train: Corpus,
    pub test: Corpus,
}

fn pick<'a, T>(rng: &mut SplitMix64, items: &'a [T]) -> &'a T {
    &items[rng.below(items.len() as u64) as usize]
}

/// `size` distinct entity names of one to three tokens.
pub fn lexicon(config: &SynthConfig, rng: &mut SplitMix64) -> Result<Vec<Vec<String>>> {
    let size = config.lexicon_size;
    let capacity = STEMS.len() * SUFFIXES.len() * (1 + MODIFIERS.len()) * (1 + HEADS.len());
    if size > capacity {
        return Err(Error::Config(format!("lexicon of {size} terms exceeds the {capacity} possible")));
    }
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(size);
    while out.len() < size {
        let core = format!("{}{}", pick(rng, STEMS), pick(rng, SUFFIXES));
        let mut term = Vec::new();
        if rng.below(100) < config.modifier_percent {
            term.push(pick(rng, MODIFIERS).to_string());
        }
        term.push(core);
        if rng.below(100) < config.head_percent {
            term.push(pick(rng, HEADS).to_string());
        }
        if seen.insert(term.clone()) {
            out.push(term);
        }
    }
    Ok(out)
}

/// Generates a tagged IOB2 corpus of entity type `disease` and splits it.
pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    if config.test_sentences > config.sentences {
        return Err(Error::Config("test split larger than the corpus".into()));
    }
    if config.lexicon_size == 0 {
        return Err(Error::Config("empty lexicon".into()));
    }
    let mut rng = SplitMix64::new(config.seed);
    let lex = lexicon(config, &mut rng)?;
    let mut all = Vec::with_capacity(config.sentences);
    for _ in 0..config.sentences {
        let mut tokens: Vec<String> = Vec::new();
        let mut tags: Vec<Tag> = Vec::new();
        if rng.below(100) < config.empty_percent {
            for w in *pick(&mut rng, FILLER_SENTENCES) {
                tokens.push(w.to_string());
                tags.push(Tag::Outside);
            }
        } else {
            for w in *pick(&mut rng, CUES) {
                if *w == "{E}" {
                    for (i, t) in pick(&mut rng, &lex).iter().enumerate() {
                        tokens.push(t.clone());
                        tags.push(if i == 0 { Tag::Begin } else { Tag::Inside });
                    }
                } else {
                    tokens.push(w.to_string());
                    tags.push(Tag::Outside);
                }
            }
        }
        for _ in 0..rng.below(6) {
            tokens.push(pick(&mut rng, FILLER).to_string());
            tags.push(Tag::Outside);
        }
        tokens.push(".".into());
        tags.push(Tag::Outside);
        all.push((tokens, tags));
    }
    let split = config.sentences - config.test_sentences;
    let build = |part: &[(Vec<String>, Vec<Tag>)]| -> Result<Corpus> {
        let sentences = part
            .iter()
            .enumerate()
            .map(|(i, (tok, tag))| Sentence::new((i + 1).to_string(), tok.clone(), Some(tag.clone())))
            .collect::<Result<Vec<_>>>()?;
        Corpus::new(sentences, TagSchema::iob2(), "disease")
    };
    Ok(SynthCorpus {
        train: build(&all[..split])?,
        test: build(&all[split..])?,
        lexicon: lex,
    })
}
