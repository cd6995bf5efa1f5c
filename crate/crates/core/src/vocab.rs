//! Concept label space, caption templates and the hashing tokenizer.
//!
//! A concept is a `(crop, condition)` pair; the condition is either a disease
//! name or the literal `healthy`. Captions are rendered from concepts with a
//! prompt prefix in one of two modes: `long` includes the symptom
//! description, `short` is the bare class name.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Condition value that selects the healthy caption template.
pub const HEALTHY: &str = "healthy";

/// Default maximum token sequence length.
pub const DEFAULT_CONTEXT_LENGTH: usize = 77;

/// Lowercases and collapses runs of whitespace to a single space.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Concept {
    pub class_id: usize,
    pub crop: String,
    pub condition: String,
    pub description: String,
}

impl Concept {
    pub fn is_healthy(&self) -> bool {
        self.condition == HEALTHY
    }

    pub fn same_crop(&self, other: &Concept) -> bool {
        self.crop == other.crop
    }

    pub fn same_condition(&self, other: &Concept) -> bool {
        self.condition == other.condition
    }

    pub fn name(&self) -> String {
        format!("{} {}", self.crop, self.condition)
    }
}

/// Ordered concept list; `class_id` equals position.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConceptVocabulary {
    concepts: Vec<Concept>,
    index: HashMap<(String, String), usize>,
}

impl ConceptVocabulary {
    /// Builds a vocabulary from `(crop, condition, description)` records,
    /// assigning class ids in input order.
    pub fn build<I, S1, S2, S3>(records: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S1, S2, S3)>,
        S1: AsRef<str>,
        S2: AsRef<str>,
        S3: AsRef<str>,
    {
        let mut vocab = ConceptVocabulary::default();
        for (crop, condition, description) in records {
            vocab.push(crop.as_ref(), condition.as_ref(), description.as_ref())?;
        }
        if vocab.is_empty() {
            return Err(Error::EmptySpec("vocabulary has no records".into()));
        }
        Ok(vocab)
    }

    fn push(&mut self, crop: &str, condition: &str, description: &str) -> Result<usize> {
        let crop = normalize_text(crop);
        let condition = normalize_text(condition);
        if crop.is_empty() || condition.is_empty() {
            return Err(Error::InvalidConcept(format!(
                "empty crop or condition in record {}",
                self.concepts.len()
            )));
        }
        let key = (crop.clone(), condition.clone());
        if self.index.contains_key(&key) {
            return Err(Error::DuplicateConcept { crop, condition });
        }
        let class_id = self.concepts.len();
        self.index.insert(key, class_id);
        self.concepts.push(Concept {
            class_id,
            crop,
            condition,
            description: normalize_text(description),
        });
        Ok(class_id)
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn get(&self, class_id: usize) -> Option<&Concept> {
        self.concepts.get(class_id)
    }

    pub fn find(&self, crop: &str, condition: &str) -> Option<&Concept> {
        self.index
            .get(&(normalize_text(crop), normalize_text(condition)))
            .map(|&i| &self.concepts[i])
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Concept> {
        self.concepts.iter()
    }

    /// Parses the tab-separated vocabulary format: `crop<TAB>condition<TAB>description`.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn parse_tsv(text: &str, origin: &Path) -> Result<Self> {
        let mut vocab = ConceptVocabulary::default();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 2 || fields.len() > 3 {
                return Err(Error::ParseError {
                    path: origin.to_path_buf(),
                    line: lineno + 1,
                    message: format!("expected 2 or 3 tab-separated fields, got {}", fields.len()),
                });
            }
            let description = fields.get(2).copied().unwrap_or("");
            vocab.push(fields[0], fields[1], description)?;
        }
        if vocab.is_empty() {
            return Err(Error::EmptySpec(format!("{} has no records", origin.display())));
        }
        Ok(vocab)
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse_tsv(&text, path)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for c in &self.concepts {
            out.push_str(&format!("{}\t{}\t{}\n", c.crop, c.condition, c.description));
        }
        out
    }
}

impl<'a> IntoIterator for &'a ConceptVocabulary {
    type Item = &'a Concept;
    type IntoIter = std::slice::Iter<'a, Concept>;

    fn into_iter(self) -> Self::IntoIter {
        self.concepts.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ContextMode {
    #[default]
    Long,
    Short,
}

impl fmt::Display for ContextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContextMode::Long => "long",
            ContextMode::Short => "short",
        })
    }
}

impl FromStr for ContextMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "long" => Ok(ContextMode::Long),
            "short" => Ok(ContextMode::Short),
            other => Err(Error::Config(format!(
                "context mode must be `long` or `short`, got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Caption {
    pub text: String,
    pub concept_id: usize,
}

/// Renders the caption for `concept`.
///
/// Long mode, diseased: `{prompt} {crop} leaves diseased by {condition} with symptoms of {description}`.
/// Long mode, healthy: `{prompt} {crop} healthy leaves with leaves appearing normal and healthy`.
/// Short mode: `{prompt} {crop} {condition}`.
pub fn render_caption(concept: &Concept, mode: ContextMode, prompt: &str) -> Result<Caption> {
    let raw = match mode {
        ContextMode::Short => format!("{prompt} {} {}", concept.crop, concept.condition),
        ContextMode::Long if concept.is_healthy() => format!(
            "{prompt} {} healthy leaves with leaves appearing normal and healthy",
            concept.crop
        ),
        ContextMode::Long => {
            if concept.description.trim().is_empty() {
                return Err(Error::MissingDescription {
                    crop: concept.crop.clone(),
                    condition: concept.condition.clone(),
                });
            }
            format!(
                "{prompt} {} leaves diseased by {} with symptoms of {}",
                concept.crop, concept.condition, concept.description
            )
        }
    };
    Ok(Caption {
        text: normalize_text(&raw),
        concept_id: concept.class_id,
    })
}

/// Renders one caption per concept, in class-id order.
pub fn render_all(vocab: &ConceptVocabulary, mode: ContextMode, prompt: &str) -> Result<Vec<Caption>> {
    vocab.iter().map(|c| render_caption(c, mode, prompt)).collect()
}

/// Fixed-length token ids; id 0 is padding.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub pad_count: usize,
}

impl TokenSequence {
    /// Non-padding ids in order.
    pub fn tokens(&self) -> impl Iterator<Item = u32> + '_ {
        self.ids.iter().copied().filter(|&id| id != 0)
    }
}

/// 64-bit FNV-1a over the UTF-8 bytes of `word`.
pub fn fnv1a64(word: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    word.bytes()
        .fold(OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Deterministic hashing tokenizer.
///
/// Text is lowercased and split on every character that is not alphanumeric.
/// Each word maps to `fnv1a64(word) % (vocab_size - 1) + 1`, sequences are
/// truncated or zero-padded to `max_len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tokenizer {
    max_len: usize,
    vocab_size: usize,
}

impl Tokenizer {
    pub fn new(max_len: usize, vocab_size: usize) -> Result<Self> {
        if max_len < 1 {
            return Err(Error::InvalidConfig("context length must be >= 1".into()));
        }
        if vocab_size < 2 {
            return Err(Error::InvalidConfig("vocab size must be >= 2".into()));
        }
        Ok(Self { max_len, vocab_size })
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn word_id(&self, word: &str) -> u32 {
        (fnv1a64(word) % (self.vocab_size as u64 - 1) + 1) as u32
    }

    pub fn tokenize_text(&self, text: &str) -> TokenSequence {
        let lower = text.to_lowercase();
        let mut ids: Vec<u32> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .take(self.max_len)
            .map(|w| self.word_id(w))
            .collect();
        let pad_count = self.max_len - ids.len();
        ids.resize(self.max_len, 0);
        TokenSequence { ids, pad_count }
    }

    pub fn tokenize(&self, caption: &Caption) -> TokenSequence {
        self.tokenize_text(&caption.text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn apple_scab() -> Concept {
        Concept {
            class_id: 0,
            crop: "apple".into(),
            condition: "scab".into(),
            description: "olive-green spots".into(),
        }
    }

    #[test]
    fn single_record_vocabulary() {
        let v = ConceptVocabulary::build([("apple", "scab", "olive spots...")]).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v.get(0).unwrap().class_id, 0);
        assert_eq!(v.find("Apple", "SCAB").unwrap().class_id, 0);
    }

    #[test]
    fn plant_village_has_38_classes() {
        let records = crate::synth::plant_village_records();
        let v = ConceptVocabulary::build(records.iter().map(|(a, b, c)| (*a, *b, *c))).unwrap();
        assert_eq!(v.len(), 38);
        for (i, c) in v.iter().enumerate() {
            assert_eq!(c.class_id, i);
            assert_eq!(v.find(&c.crop, &c.condition).unwrap().class_id, i);
        }
    }

    #[test]
    fn duplicate_concept_rejected() {
        let err = ConceptVocabulary::build([("apple", "scab", "a"), ("apple", "scab", "b")]).unwrap_err();
        assert!(matches!(err, Error::DuplicateConcept { .. }));
        // case folding makes these duplicates too
        let err = ConceptVocabulary::build([("apple", "scab", ""), ("Apple", " scab ", "")]).unwrap_err();
        assert!(matches!(err, Error::DuplicateConcept { .. }));
    }

    #[test]
    fn empty_fields_rejected() {
        let err = ConceptVocabulary::build([("", "scab", "")]).unwrap_err();
        assert!(matches!(err, Error::InvalidConcept(_)));
        let err = ConceptVocabulary::build([("apple", "  ", "")]).unwrap_err();
        assert!(matches!(err, Error::InvalidConcept(_)));
    }

    #[test]
    fn long_caption_diseased() {
        let c = render_caption(&apple_scab(), ContextMode::Long, "a photo of").unwrap();
        assert_eq!(
            c.text,
            "a photo of apple leaves diseased by scab with symptoms of olive-green spots"
        );
        assert_eq!(c.concept_id, 0);
    }

    #[test]
    fn long_caption_healthy() {
        let c = Concept {
            class_id: 3,
            crop: "apple".into(),
            condition: "healthy".into(),
            description: String::new(),
        };
        let cap = render_caption(&c, ContextMode::Long, "a photo of").unwrap();
        assert_eq!(
            cap.text,
            "a photo of apple healthy leaves with leaves appearing normal and healthy"
        );
    }

    #[test]
    fn short_caption_with_empty_prompt() {
        let mut c = apple_scab();
        c.description = "x".into();
        let cap = render_caption(&c, ContextMode::Short, "").unwrap();
        assert_eq!(cap.text, "apple scab");
    }

    #[test]
    fn long_caption_needs_description() {
        let mut c = apple_scab();
        c.description.clear();
        assert!(matches!(
            render_caption(&c, ContextMode::Long, "a photo of"),
            Err(Error::MissingDescription { .. })
        ));
        // short mode does not need it
        assert!(render_caption(&c, ContextMode::Short, "a photo of").is_ok());
    }

    #[test]
    fn empty_caption_is_all_padding() {
        let t = Tokenizer::new(77, 1000).unwrap();
        let seq = t.tokenize_text("");
        assert_eq!(seq.ids, vec![0; 77]);
        assert_eq!(seq.pad_count, 77);
    }

    #[test]
    fn tokenizer_truncates() {
        let t = Tokenizer::new(77, 1000).unwrap();
        let text = (0..82).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let seq = t.tokenize_text(&text);
        assert_eq!(seq.ids.len(), 77);
        assert_eq!(seq.pad_count, 0);
        assert!(seq.ids.iter().all(|&id| id != 0));
    }

    #[test]
    fn tokenizer_splits_punctuation_and_is_stable() {
        let t = Tokenizer::new(8, 50_000).unwrap();
        let a = t.tokenize_text("Olive-green, spots!");
        let b = t.tokenize_text("olive green spots");
        assert_eq!(a, b);
        assert_eq!(a.pad_count, 5);
        // pinned FNV-1a values keep ids stable across platforms
        assert_eq!(fnv1a64(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64("a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn tokenizer_rejects_bad_config() {
        assert!(Tokenizer::new(0, 10).is_err());
        assert!(Tokenizer::new(4, 1).is_err());
    }

    #[test]
    fn tsv_round_trip() {
        let v = ConceptVocabulary::build([
            ("apple", "scab", "olive spots"),
            ("apple", "healthy", ""),
        ])
        .unwrap();
        let parsed = ConceptVocabulary::parse_tsv(&v.to_tsv(), Path::new("mem")).unwrap();
        assert_eq!(parsed, v);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn captions_are_injective(
                pairs in proptest::collection::hash_set(("[a-z]{1,6}", "[a-z]{1,6}"), 2..12),
                long in any::<bool>(),
            ) {
                let records: Vec<_> = pairs.iter().map(|(c, d)| (c.clone(), d.clone(), "spots".to_string())).collect();
                let vocab = ConceptVocabulary::build(records).unwrap();
                let mode = if long { ContextMode::Long } else { ContextMode::Short };
                let caps = render_all(&vocab, mode, "a photo of").unwrap();
                let distinct: std::collections::HashSet<_> = caps.iter().map(|c| c.text.clone()).collect();
                prop_assert_eq!(distinct.len(), caps.len());
            }

            #[test]
            fn tokenize_is_pure_and_in_range(text in ".{0,200}", len in 1usize..100, vocab in 2usize..5000) {
                let t = Tokenizer::new(len, vocab).unwrap();
                let a = t.tokenize_text(&text);
                let b = t.tokenize_text(&text);
                prop_assert_eq!(&a, &b);
                prop_assert_eq!(a.ids.len(), len);
                prop_assert!(a.ids.iter().all(|&id| (id as usize) < vocab));
                prop_assert_eq!(a.pad_count, a.ids.iter().filter(|&&id| id == 0).count());
            }
        }
    }
}
