//! Pattern-verbalizer pairs and per-token cloze expansion.
//!
//! A [`Pattern`] is a template in a small placeholder language:
//!
//! | placeholder | renders as |
//! |-------------|------------|
//! | `{x}`       | the sentence tokens, closed with `.` unless the last token already ends it |
//! | `{t}`       | the target token wrapped in double quotes |
//! | `{etype}`   | the entity type |
//! | `{mask}`    | the mask token [`MASK_TOKEN`] |
//!
//! `{x}` must appear exactly once, `{t}` at least once and `{mask}` exactly
//! once. Literal text is split into words and single punctuation marks.
//!
//! A [`Verbalizer`] maps each label of the schema to one distinct token.
//! Expanding a sentence with a pattern produces one [`ClozeExample`] per
//! token.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Sentence, Tag, TagSchema};
use crate::error::{Error, Result};

pub const MASK_TOKEN: &str = "[MASK]";
/// Sentence tokens that collide with the mask token are rendered as this.
pub const MASK_ESCAPE: &str = "[UNK]";

const SENTENCE_END: [&str; 3] = [".", "!", "?"];

pub const P1_TEMPLATE: &str =
    "{x} In the sentence above, the word {t} refers to the {mask} of a {etype} entity.";
pub const P2_TEMPLATE: &str = "{x} Question: In the passage above, which part of a {etype} entity does the word {t} refers to? Answer: {mask}.";

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Sentence,
    Target,
    EntityType,
    Mask,
}

/// A cloze template with exactly one mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PatternRepr", into = "PatternRepr")]
pub struct Pattern {
    id: String,
    template: String,
    segments: Vec<Segment>,
}

#[derive(Serialize, Deserialize)]
struct PatternRepr {
    id: String,
    template: String,
}

impl TryFrom<PatternRepr> for Pattern {
    type Error = Error;

    fn try_from(r: PatternRepr) -> Result<Self> {
        Pattern::new(r.id, r.template)
    }
}

impl From<Pattern> for PatternRepr {
    fn from(p: Pattern) -> Self {
        PatternRepr {
            id: p.id,
            template: p.template,
        }
    }
}

impl Pattern {
    pub fn new(id: impl Into<String>, template: impl Into<String>) -> Result<Self> {
        let id = id.into();
        let template = template.into();
        if id.is_empty() || id.chars().any(|c| c.is_whitespace() || c == '/') {
            return Err(Error::Pattern(format!("bad pattern id {id:?}")));
        }
        let segments = parse_template(&template)?;
        let count = |want: &Segment| segments.iter().filter(|s| *s == want).count();
        let masks = count(&Segment::Mask);
        if masks != 1 {
            return Err(Error::Pattern(format!(
                "{id}: template needs exactly one {{mask}}, found {masks}"
            )));
        }
        if count(&Segment::Sentence) != 1 {
            return Err(Error::Pattern(format!("{id}: template needs exactly one {{x}}")));
        }
        if count(&Segment::Target) == 0 {
            return Err(Error::Pattern(format!("{id}: template needs {{t}}")));
        }
        Ok(Pattern {
            id,
            template,
            segments,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn template(&self) -> &str {
        &self.template
    }
}

fn parse_template(template: &str) -> Result<Vec<Segment>> {
    let mut segments = Vec::new();
    let mut literal = String::new();
    let mut rest = template;
    while let Some(open) = rest.find(['{', '}']) {
        if rest.as_bytes()[open] == b'}' {
            return Err(Error::Pattern(format!("unmatched '}}' in {template:?}")));
        }
        literal.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or_else(|| Error::Pattern(format!("unclosed '{{' in {template:?}")))?;
        let seg = match &after[..close] {
            "x" => Segment::Sentence,
            "t" => Segment::Target,
            "etype" => Segment::EntityType,
            "mask" => Segment::Mask,
            other => {
                return Err(Error::Pattern(format!("unknown placeholder {{{other}}}")));
            }
        };
        if !literal.is_empty() {
            segments.push(Segment::Literal(std::mem::take(&mut literal)));
        }
        segments.push(seg);
        rest = &after[close + 1..];
    }
    literal.push_str(rest);
    if !literal.is_empty() {
        segments.push(Segment::Literal(literal));
    }
    Ok(segments)
}

/// Splits template text into words and single punctuation marks.
fn split_literal(text: &str, out: &mut Vec<String>) {
    for word in text.split_whitespace() {
        let mut run = String::new();
        for c in word.chars() {
            if c.is_ascii_punctuation() {
                if !run.is_empty() {
                    out.push(std::mem::take(&mut run));
                }
                out.push(c.to_string());
            } else {
                run.push(c);
            }
        }
        if !run.is_empty() {
            out.push(run);
        }
    }
}

fn escape(token: &str) -> &str {
    if token == MASK_TOKEN {
        MASK_ESCAPE
    } else {
        token
    }
}

/// Label → token map, total over a schema and injective.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verbalizer {
    map: BTreeMap<Tag, String>,
}

impl Verbalizer {
    pub fn new(map: BTreeMap<Tag, String>, schema: &TagSchema) -> Result<Self> {
        for tag in schema.labels() {
            if !map.contains_key(tag) {
                return Err(Error::Verbalizer(format!("no token for label {tag}")));
            }
        }
        if let Some(extra) = map.keys().find(|t| schema.index_of(**t).is_none()) {
            return Err(Error::Verbalizer(format!("label {extra} is not in the schema")));
        }
        let mut seen = HashSet::new();
        for (tag, token) in &map {
            if token.is_empty() || token.chars().any(char::is_whitespace) {
                return Err(Error::Verbalizer(format!(
                    "token for {tag} must be a single non-empty word, got {token:?}"
                )));
            }
            if !seen.insert(token.as_str()) {
                return Err(Error::Verbalizer(format!("token {token:?} is used twice")));
            }
        }
        Ok(Verbalizer { map })
    }

    /// `B → beginning`, `I → inside`, `O → outside`, restricted to the schema.
    pub fn default_for(schema: &TagSchema) -> Self {
        let map = schema
            .labels()
            .iter()
            .map(|&t| {
                let word = match t {
                    Tag::Begin => "beginning",
                    Tag::Inside => "inside",
                    Tag::Outside => "outside",
                };
                (t, word.to_string())
            })
            .collect();
        Verbalizer { map }
    }

    pub fn token(&self, tag: Tag) -> Option<&str> {
        self.map.get(&tag).map(String::as_str)
    }

    /// Verbalizer tokens in the schema's label order.
    pub fn candidates(&self, schema: &TagSchema) -> Vec<String> {
        schema
            .labels()
            .iter()
            .map(|t| self.map[t].clone())
            .collect()
    }
}

/// A pattern together with its verbalizer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pvp {
    pub pattern: Pattern,
    pub verbalizer: Verbalizer,
}

impl Pvp {
    pub fn new(pattern: Pattern, verbalizer: Verbalizer) -> Self {
        Pvp { pattern, verbalizer }
    }

    pub fn id(&self) -> &str {
        self.pattern.id()
    }
}

/// The two built-in patterns with the default verbalizer. The entity type is
/// written into the templates.
pub fn builtin_pvps(entity_type: &str, schema: &TagSchema) -> Vec<Pvp> {
    [("p1", P1_TEMPLATE), ("p2", P2_TEMPLATE)]
        .into_iter()
        .map(|(id, t)| builtin(id, t, entity_type, schema))
        .collect()
}

fn builtin(id: &str, template: &str, entity_type: &str, schema: &TagSchema) -> Pvp {
    let template = if entity_type.contains(['{', '}']) {
        template.to_string()
    } else {
        template.replace("{etype}", entity_type)
    };
    Pvp::new(
        Pattern::new(id, template).expect("built-in template"),
        Verbalizer::default_for(schema),
    )
}

/// On-disk pattern definition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PvpFile {
    pub id: String,
    pub template: String,
    pub verbalizer: BTreeMap<Tag, String>,
}

pub fn load_pvp(path: impl AsRef<Path>, schema: &TagSchema) -> Result<Pvp> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_pvp(&text, schema)
}

pub fn parse_pvp(json: &str, schema: &TagSchema) -> Result<Pvp> {
    let file: PvpFile =
        serde_json::from_str(json).map_err(|e| Error::Pattern(format!("bad pattern file: {e}")))?;
    Ok(Pvp::new(
        Pattern::new(file.id, file.template)?,
        Verbalizer::new(file.verbalizer, schema)?,
    ))
}

/// Resolves `p1`, `p2` or a path to a pattern file.
pub fn resolve_pvp(spec: &str, entity_type: &str, schema: &TagSchema) -> Result<Pvp> {
    match spec {
        "p1" => Ok(builtin("p1", P1_TEMPLATE, entity_type, schema)),
        "p2" => Ok(builtin("p2", P2_TEMPLATE, entity_type, schema)),
        path => load_pvp(path, schema),
    }
}

/// A rendered cloze question about one token of one sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClozeExample {
    pub sentence_id: String,
    pub token_index: usize,
    /// The target token as rendered (after mask escaping).
    pub target_token: String,
    pub rendered_tokens: Vec<String>,
    pub mask_index: usize,
    pub text: String,
    /// Position of the target token inside `rendered_tokens`, if it survived
    /// truncation.
    pub target_index: Option<usize>,
    /// Number of sentence tokens dropped from the left to fit the length limit.
    pub context_start: usize,
    pub gold_label: Option<Tag>,
}

impl ClozeExample {
    pub fn target_position(&self) -> Option<usize> {
        self.target_index
    }
}

/// Renders the cloze question for `sentence.tokens[token_index]`.
pub fn render(pattern: &Pattern, sentence: &Sentence, token_index: usize, entity_type: &str) -> Result<ClozeExample> {
    render_limited(pattern, sentence, token_index, entity_type, None)
}

/// Like [`render`], but drops sentence tokens from the left until the
/// rendered sequence fits in `max_tokens`. The pattern text and the mask are
/// always kept.
pub fn render_limited(
    pattern: &Pattern,
    sentence: &Sentence,
    token_index: usize,
    entity_type: &str,
    max_tokens: Option<usize>,
) -> Result<ClozeExample> {
    if token_index >= sentence.len() {
        return Err(Error::TokenIndex {
            index: token_index,
            len: sentence.len(),
        });
    }
    let target = escape(&sentence.tokens[token_index]);
    let closes = sentence
        .tokens
        .last()
        .is_some_and(|t| SENTENCE_END.contains(&t.as_str()));

    // Count everything except the sentence tokens to find the drop budget.
    let mut fixed = Vec::new();
    for seg in &pattern.segments {
        match seg {
            Segment::Literal(text) => split_literal(text, &mut fixed),
            Segment::EntityType => split_literal(entity_type, &mut fixed),
            Segment::Target => fixed.extend(["\"", target, "\""].map(String::from)),
            Segment::Mask => fixed.push(MASK_TOKEN.to_string()),
            Segment::Sentence => {
                if !closes {
                    fixed.push(".".into());
                }
            }
        }
    }
    let total = fixed.len() + sentence.len();
    let dropped = match max_tokens {
        Some(limit) if total > limit => (total - limit).min(sentence.len()),
        _ => 0,
    };

    let mut tokens = Vec::with_capacity(total - dropped);
    let mut text = String::new();
    let mut mask_index = 0;
    let mut sentence_start = 0;
    for seg in &pattern.segments {
        match seg {
            Segment::Literal(lit) => {
                split_literal(lit, &mut tokens);
                text.push_str(lit);
            }
            Segment::EntityType => {
                split_literal(entity_type, &mut tokens);
                text.push_str(entity_type);
            }
            Segment::Target => {
                tokens.extend(["\"", target, "\""].map(String::from));
                text.push('"');
                text.push_str(target);
                text.push('"');
            }
            Segment::Mask => {
                mask_index = tokens.len();
                tokens.push(MASK_TOKEN.to_string());
                text.push_str(MASK_TOKEN);
            }
            Segment::Sentence => {
                sentence_start = tokens.len();
                let kept: Vec<&str> = sentence.tokens[dropped..].iter().map(|t| escape(t)).collect();
                tokens.extend(kept.iter().map(|t| t.to_string()));
                text.push_str(&kept.join(" "));
                if !closes {
                    tokens.push(".".into());
                    if !kept.is_empty() {
                        text.push(' ');
                    }
                    text.push('.');
                }
            }
        }
    }
    Ok(ClozeExample {
        sentence_id: sentence.id.clone(),
        token_index,
        target_token: target.to_string(),
        rendered_tokens: tokens,
        mask_index,
        text,
        target_index: (token_index >= dropped).then(|| sentence_start + token_index - dropped),
        context_start: dropped,
        gold_label: sentence.tags.as_ref().map(|tags| tags[token_index]),
    })
}

/// One cloze example per token, in token order.
pub fn expand(pattern: &Pattern, sentence: &Sentence, entity_type: &str) -> Vec<ClozeExample> {
    expand_limited(pattern, sentence, entity_type, None)
}

pub fn expand_limited(
    pattern: &Pattern,
    sentence: &Sentence,
    entity_type: &str,
    max_tokens: Option<usize>,
) -> Vec<ClozeExample> {
    (0..sentence.len())
        .map(|i| {
            render_limited(pattern, sentence, i, entity_type, max_tokens).expect("index in range")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Tag::{Begin as B, Inside as I, Outside as O};

    fn intro_sentence() -> Sentence {
        Sentence::from_strs(
            "1",
            &["A", "diagnosis", "of", "SARS-CoV-2", "was", "made", "in", "a", "young", "boy", "."],
            None,
        )
    }

    #[test]
    fn builtin_patterns_mention_entity_type() {
        let pvps = builtin_pvps("disease", &TagSchema::iob2());
        assert_eq!(pvps.len(), 2);
        assert!(pvps[0].pattern.template().ends_with("of a disease entity."));
        assert_eq!(pvps[0].verbalizer.token(B), Some("beginning"));
        assert_eq!(pvps[0].verbalizer.token(I), Some("inside"));
        assert_eq!(pvps[0].verbalizer.token(O), Some("outside"));

        for pvp in builtin_pvps("gene", &TagSchema::iob2()) {
            assert!(pvp.pattern.template().contains("gene"));
        }
        let io = builtin_pvps("gene", &TagSchema::io());
        assert_eq!(io[0].verbalizer.candidates(&TagSchema::io()), vec!["inside", "outside"]);
    }

    #[test]
    fn renders_p1() {
        let pvp = &builtin_pvps("disease", &TagSchema::iob2())[0];
        let s = intro_sentence();
        let ex = render(&pvp.pattern, &s, 8, "disease").unwrap();
        assert_eq!(
            ex.text,
            "A diagnosis of SARS-CoV-2 was made in a young boy . In the sentence above, \
             the word \"young\" refers to the [MASK] of a disease entity."
        );
        assert_eq!(ex.rendered_tokens[ex.mask_index], MASK_TOKEN);
        assert_eq!(ex.rendered_tokens.iter().filter(|t| *t == MASK_TOKEN).count(), 1);
        assert_eq!(ex.target_position(), Some(8));
        assert_eq!(ex.rendered_tokens[8], "young");
    }

    #[test]
    fn renders_p2() {
        let pvp = &builtin_pvps("gene", &TagSchema::iob2())[1];
        let s = Sentence::from_strs("1", &["BRCA1", "mutations"], None);
        let ex = render(&pvp.pattern, &s, 0, "gene").unwrap();
        assert_eq!(
            ex.text,
            "BRCA1 mutations . Question: In the passage above, which part of a gene entity \
             does the word \"BRCA1\" refers to? Answer: [MASK]."
        );
        assert_eq!(ex.mask_index, ex.rendered_tokens.len() - 2);
    }

    #[test]
    fn single_token_sentence() {
        let p = Pattern::new("p", P1_TEMPLATE).unwrap();
        let s = Sentence::from_strs("1", &["fever"], Some(&[B]));
        let ex = render(&p, &s, 0, "disease").unwrap();
        assert_eq!(ex.gold_label, Some(B));
        assert_eq!(ex.rendered_tokens[0], "fever");
        assert!(render(&p, &s, 1, "disease").is_err());
    }

    #[test]
    fn expand_counts_and_labels() {
        let p = Pattern::new("p", P1_TEMPLATE).unwrap();
        let s = Sentence::from_strs("1", &["a", "b", "c"], Some(&[B, I, O]));
        let exs = expand(&p, &s, "disease");
        assert_eq!(exs.len(), 3);
        assert_eq!(
            exs.iter().map(|e| e.gold_label.unwrap()).collect::<Vec<_>>(),
            vec![B, I, O]
        );
        let untagged = expand(&p, &s.without_tags(), "disease");
        assert!(untagged.iter().all(|e| e.gold_label.is_none()));

        let nine: Vec<String> = (0..9).map(|i| format!("w{i}")).collect();
        let s = Sentence::new("9", nine, None).unwrap();
        let exs = expand(&p, &s, "disease");
        assert_eq!(exs.len(), 9);
        assert!(exs.iter().enumerate().all(|(i, e)| e.token_index == i));
    }

    #[test]
    fn mask_collision_is_escaped() {
        let p = Pattern::new("p", P1_TEMPLATE).unwrap();
        let s = Sentence::from_strs("1", &["[MASK]", "x"], None);
        for ex in expand(&p, &s, "disease") {
            assert_eq!(ex.rendered_tokens.iter().filter(|t| *t == MASK_TOKEN).count(), 1);
        }
    }

    #[test]
    fn truncation_keeps_suffix_and_mask() {
        let p = Pattern::new("p", P1_TEMPLATE).unwrap();
        let words: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
        let s = Sentence::new("1", words, None).unwrap();
        let full = render(&p, &s, 39, "disease").unwrap();
        let cut = render_limited(&p, &s, 39, "disease", Some(30)).unwrap();
        assert_eq!(cut.rendered_tokens.len(), 30);
        assert_eq!(cut.context_start, full.rendered_tokens.len() - 30);
        assert_eq!(cut.rendered_tokens[cut.mask_index], MASK_TOKEN);
        assert_eq!(
            full.rendered_tokens[full.rendered_tokens.len() - 20..],
            cut.rendered_tokens[10..]
        );
        assert_eq!(cut.rendered_tokens[cut.target_position().unwrap()], "w39");

        // Target dropped entirely: still one example with the mask.
        let early = render_limited(&p, &s, 0, "disease", Some(30)).unwrap();
        assert_eq!(early.target_position(), None);
        assert!(early.text.contains("\"w0\""));

        // Limit smaller than the pattern itself: all context goes, suffix stays.
        let tiny = render_limited(&p, &s, 5, "disease", Some(3)).unwrap();
        assert_eq!(tiny.context_start, 40);
        assert_eq!(tiny.rendered_tokens[tiny.mask_index], MASK_TOKEN);
    }

    #[test]
    fn pattern_validation() {
        assert!(Pattern::new("p", "{x} {t} {mask} {mask}").is_err());
        assert!(Pattern::new("p", "{x} {t}").is_err());
        assert!(Pattern::new("p", "{t} {mask}").is_err());
        assert!(Pattern::new("p", "{x} {mask}").is_err());
        assert!(Pattern::new("p", "{x} {t} {mask} {oops}").is_err());
        assert!(Pattern::new("p", "{x} {t} {mask").is_err());
        assert!(Pattern::new("p", "{x} {t} mask}").is_err());
        assert!(Pattern::new("", "{x} {t} {mask}").is_err());
        assert!(Pattern::new("q", "Is {t} in {x} a {etype}? {mask}").is_ok());
    }

    #[test]
    fn verbalizer_validation() {
        let schema = TagSchema::iob2();
        let map = |pairs: &[(Tag, &str)]| pairs.iter().map(|(t, s)| (*t, s.to_string())).collect();
        assert!(Verbalizer::new(map(&[(B, "b"), (I, "i"), (O, "o")]), &schema).is_ok());
        assert!(Verbalizer::new(map(&[(B, "b"), (I, "i")]), &schema).is_err());
        assert!(Verbalizer::new(map(&[(B, "x"), (I, "x"), (O, "o")]), &schema).is_err());
        assert!(Verbalizer::new(map(&[(B, "b"), (I, "i"), (O, "o")]), &TagSchema::io()).is_err());
        assert!(Verbalizer::new(map(&[(B, "two words"), (I, "i"), (O, "o")]), &schema).is_err());
    }

    #[test]
    fn pattern_file() {
        let schema = TagSchema::iob2();
        let pvp = parse_pvp(
            r#"{"id": "q1", "template": "{x} Is {t} part of a {etype}? {mask}",
                "verbalizer": {"B": "start", "I": "middle", "O": "no"}}"#,
            &schema,
        )
        .unwrap();
        assert_eq!(pvp.id(), "q1");
        assert_eq!(pvp.verbalizer.candidates(&schema), vec!["start", "middle", "no"]);
        let bad = parse_pvp(
            r#"{"id": "q1", "template": "{x} {t} {mask} {mask}",
                "verbalizer": {"B": "start", "I": "middle", "O": "no"}}"#,
            &schema,
        );
        assert!(matches!(bad, Err(Error::Pattern(_))));
    }

    #[test]
    fn rendering_is_pure() {
        let p = Pattern::new("p", P2_TEMPLATE).unwrap();
        let s = intro_sentence();
        assert_eq!(render(&p, &s, 3, "disease").unwrap(), render(&p, &s, 3, "disease").unwrap());
    }
}
