//! Few-shot named entity recognition with cloze questions.
//!
//! Each token of a sentence becomes a cloze question ("the word "young"
//! refers to the [MASK] of a disease entity") and a masked-language-model
//! scorer picks the verbalized label at the mask. One scorer is trained per
//! pattern on a handful of tagged sentences; their averaged predictions label
//! unlabeled text, and a final token classifier is distilled from those soft
//! labels.
//!
//! ```
//! use clozener::corpus::{Sentence, TagSchema};
//! use clozener::pvp::{builtin_pvps, expand};
//!
//! let pvps = builtin_pvps("disease", &TagSchema::iob2());
//! let s = Sentence::from_strs("1", &["Asthma", "is", "common"], None);
//! let examples = expand(&pvps[0].pattern, &s, "disease");
//! assert_eq!(examples.len(), 3);
//! assert!(examples[0].text.starts_with("Asthma is common ."));
//! ```

pub mod classifier;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod pvp;
pub mod rng;
pub mod scoring;
pub mod synth;

pub use classifier::{BuiltinClassifier, TokenClassifier};
pub use corpus::{Corpus, KShotSpec, Sentence, Tag, TagSchema};
pub use error::{Error, Result};
pub use eval::{span_prf, EvalReport, Prf};
pub use pipeline::{BuiltinFactory, PipelineConfig};
pub use pvp::{ClozeExample, Pattern, Pvp, Verbalizer};
pub use scoring::{restricted_softmax, LabelDistribution, LogitVector, Scorer};

// The guide's code blocks run as doc tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/corpora.md")]
    mod corpora {}
    #[doc = include_str!("../../../book/src/patterns.md")]
    mod patterns {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    mod scoring {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/bridge.md")]
    mod bridge {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
