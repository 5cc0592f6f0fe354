//! Dysfluency taxonomy, the inline marker grammar and the sidecar label schema.
//!
//! An utterance is stored as a token list with two inline markers, `<pause>`
//! and `<prolong>`; every other dysfluency is realised as literal tokens and
//! described by a [`DysfluencyLabel`]. Each label covers a *block*: a half-open
//! span of dysfluent tokens paired with a half-open span of clean tokens.
//! Outside of blocks the two token lists agree one to one.
//!
//! | category     | dysfluent block          | reference block |
//! |--------------|--------------------------|-----------------|
//! | Insertion    | inserted tokens          | empty           |
//! | Repetition   | n >= 2 copies of a unit  | the unit        |
//! | Pause        | `<pause>`                | empty           |
//! | Deletion     | empty                    | deleted tokens  |
//! | Substitution | new tokens               | replaced tokens |
//! | Prolongation | phone, `<prolong>`       | the phone       |

mod derive;
mod io;
mod validate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use derive::{apply_edits, derive_labels, Edit};
pub use io::{
    parse_annotated, read_annotated, serialize_annotated, write_annotated, LabelRecord,
};
pub use validate::{check_structure, validate, Finding, FindingKind, ValidationReport};

pub const PAUSE_MARKER: &str = "<pause>";
pub const PROLONG_MARKER: &str = "<prolong>";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnnotationError {
    #[error("({level}, {category}) is not a valid dysfluency kind")]
    InvalidKind { level: Level, category: Category },
    #[error("malformed marker {0:?}")]
    MalformedMarker(String),
    #[error("span {span} out of bounds for {side} tokens of length {len}")]
    SpanOutOfBounds { span: Span, side: &'static str, len: usize },
    #[error("{marker} markers: {markers} in text but {labels} labels")]
    MarkerLabelMismatch { marker: &'static str, markers: usize, labels: usize },
    #[error("invalid label: {0}")]
    InvalidLabel(String),
    #[error("cannot align input: {0}")]
    UnalignableInput(String),
    #[error("format error at line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for AnnotationError {
    fn from(e: std::io::Error) -> Self {
        AnnotationError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Word,
    Phoneme,
}

impl Level {
    pub fn as_str(&self) -> &'static str {
        match self {
            Level::Word => "word",
            Level::Phoneme => "phoneme",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "word" => Ok(Level::Word),
            "phoneme" | "phn" => Ok(Level::Phoneme),
            other => Err(format!("unknown level {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Insertion,
    Repetition,
    Pause,
    Deletion,
    Substitution,
    Prolongation,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Insertion,
        Category::Repetition,
        Category::Pause,
        Category::Deletion,
        Category::Substitution,
        Category::Prolongation,
    ];

    fn abbrev(&self) -> &'static str {
        match self {
            Category::Insertion => "ins",
            Category::Repetition => "rep",
            Category::Pause => "pau",
            Category::Deletion => "del",
            Category::Substitution => "sub",
            Category::Prolongation => "pro",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Category::Insertion => "insertion",
            Category::Repetition => "repetition",
            Category::Pause => "pause",
            Category::Deletion => "deletion",
            Category::Substitution => "substitution",
            Category::Prolongation => "prolongation",
        };
        f.write_str(s)
    }
}

/// A (level, category) pair. Prolongation exists only at phoneme level, which
/// leaves eleven legal kinds; the constructor rejects the twelfth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawKind", into = "RawKind")]
pub struct DysfluencyKind {
    level: Level,
    category: Category,
}

/// Serialized as `{level, category}`; a short name such as `"word_rep"` is also accepted.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawKind {
    Pair { level: Level, category: Category },
    Short(String),
}

impl TryFrom<RawKind> for DysfluencyKind {
    type Error = AnnotationError;

    fn try_from(raw: RawKind) -> Result<Self, Self::Error> {
        match raw {
            RawKind::Pair { level, category } => DysfluencyKind::new(level, category),
            RawKind::Short(name) => DysfluencyKind::from_short_name(&name)
                .ok_or_else(|| AnnotationError::InvalidLabel(format!("unknown kind {name:?}"))),
        }
    }
}

impl From<DysfluencyKind> for RawKind {
    fn from(k: DysfluencyKind) -> Self {
        RawKind::Pair { level: k.level, category: k.category }
    }
}

impl DysfluencyKind {
    pub const ALL: [DysfluencyKind; 11] = [
        DysfluencyKind { level: Level::Word, category: Category::Insertion },
        DysfluencyKind { level: Level::Word, category: Category::Repetition },
        DysfluencyKind { level: Level::Word, category: Category::Pause },
        DysfluencyKind { level: Level::Word, category: Category::Deletion },
        DysfluencyKind { level: Level::Word, category: Category::Substitution },
        DysfluencyKind { level: Level::Phoneme, category: Category::Insertion },
        DysfluencyKind { level: Level::Phoneme, category: Category::Repetition },
        DysfluencyKind { level: Level::Phoneme, category: Category::Pause },
        DysfluencyKind { level: Level::Phoneme, category: Category::Deletion },
        DysfluencyKind { level: Level::Phoneme, category: Category::Substitution },
        DysfluencyKind { level: Level::Phoneme, category: Category::Prolongation },
    ];

    pub fn new(level: Level, category: Category) -> Result<Self, AnnotationError> {
        if level == Level::Word && category == Category::Prolongation {
            return Err(AnnotationError::InvalidKind { level, category });
        }
        Ok(DysfluencyKind { level, category })
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn category(&self) -> Category {
        self.category
    }

    /// Subset-style name, e.g. `word_rep` or `phn_pro`.
    pub fn short_name(&self) -> String {
        let level = match self.level {
            Level::Word => "word",
            Level::Phoneme => "phn",
        };
        format!("{level}_{}", self.category.abbrev())
    }

    pub fn from_short_name(name: &str) -> Option<Self> {
        DysfluencyKind::ALL.into_iter().find(|k| k.short_name() == name)
    }

    /// Human-readable description used in prompts and reports.
    pub fn describe(&self) -> String {
        format!("{}-level {}", self.level, self.category)
    }
}

impl fmt::Display for DysfluencyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.short_name())
    }
}

impl FromStr for DysfluencyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DysfluencyKind::from_short_name(s).ok_or_else(|| format!("unknown dysfluency kind {s:?}"))
    }
}

/// Half-open token span `[start, end)`. Serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        assert!(start <= end, "span start {start} after end {end}");
        Span { start, end }
    }

    pub fn empty(at: usize) -> Self {
        Span { start: at, end: at }
    }

    /// The one-token span `[at, at+1)`.
    pub fn single(at: usize) -> Self {
        Span { start: at, end: at + 1 }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

impl TryFrom<[usize; 2]> for Span {
    type Error = String;

    fn try_from(v: [usize; 2]) -> Result<Self, Self::Error> {
        if v[0] > v[1] {
            return Err(format!("span start {} after end {}", v[0], v[1]));
        }
        Ok(Span { start: v[0], end: v[1] })
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DysfluencyLabel {
    pub kind: DysfluencyKind,
    pub dysfluent_span: Span,
    pub reference_span: Span,
    /// Inserted or substituted-in tokens, or the deleted tokens, joined by spaces.
    pub payload: Option<String>,
}

impl DysfluencyLabel {
    fn sort_key(&self) -> (usize, usize, usize, usize) {
        (
            self.dysfluent_span.start,
            self.dysfluent_span.end,
            self.reference_span.start,
            self.reference_span.end,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedUtterance {
    pub id: String,
    pub level: Level,
    pub clean_tokens: Vec<String>,
    pub dysfluent_tokens: Vec<String>,
    pub labels: Vec<DysfluencyLabel>,
    /// Requested pause length in seconds, shared by every pause label.
    pub pause_request_s: Option<f64>,
    /// Requested prolongation in seconds, shared by every prolongation label.
    pub prolong_request_s: Option<f64>,
}

impl AnnotatedUtterance {
    /// A fluent utterance: no labels, dysfluent tokens equal the clean ones.
    pub fn fluent(id: impl Into<String>, level: Level, tokens: Vec<String>) -> Self {
        AnnotatedUtterance {
            id: id.into(),
            level,
            dysfluent_tokens: tokens.clone(),
            clean_tokens: tokens,
            labels: Vec::new(),
            pause_request_s: None,
            prolong_request_s: None,
        }
    }

    pub fn clean_text(&self) -> String {
        self.clean_tokens.join(" ")
    }

    pub fn dysfluent_text(&self) -> String {
        self.dysfluent_tokens.join(" ")
    }

    /// Dysfluent tokens with the inline markers removed: what a synthesizer speaks.
    pub fn spoken_tokens(&self) -> Vec<String> {
        self.dysfluent_tokens.iter().filter(|t| !is_marker(t)).cloned().collect()
    }

    /// For every dysfluent token, the clean-token position it hangs off.
    ///
    /// Tokens outside label blocks map to their aligned clean token; tokens
    /// inside a block map to the start of the block's reference span (clamped
    /// to the last clean token). Used to carry word indices from the clean
    /// text onto dysfluent phone sequences.
    pub fn dysfluent_to_clean(&self) -> Vec<usize> {
        let mut labels: Vec<&DysfluencyLabel> = self.labels.iter().collect();
        labels.sort_by_key(|l| l.sort_key());
        let last = self.clean_tokens.len().saturating_sub(1);
        let mut out = Vec::with_capacity(self.dysfluent_tokens.len());
        let (mut d, mut c) = (0usize, 0usize);
        for label in labels {
            while d < label.dysfluent_span.start {
                out.push(c.min(last));
                d += 1;
                c += 1;
            }
            for _ in label.dysfluent_span.range() {
                out.push(label.reference_span.start.min(last));
            }
            d = label.dysfluent_span.end;
            c = label.reference_span.end;
        }
        while d < self.dysfluent_tokens.len() {
            out.push(c.min(last));
            d += 1;
            c += 1;
        }
        out
    }

    /// The dominant kind of the utterance, `None` when fluent.
    pub fn kind(&self) -> Option<DysfluencyKind> {
        self.labels.first().map(|l| l.kind)
    }
}

pub fn is_marker(token: &str) -> bool {
    token == PAUSE_MARKER || token == PROLONG_MARKER
}

/// Whether a token looks like an attempted marker (starts with `<` or ends with `>`).
pub(crate) fn looks_like_marker(token: &str) -> bool {
    token.starts_with('<') || token.ends_with('>')
}

/// Word tokenization: case-fold, strip punctuation (keeping in-word
/// apostrophes), split on whitespace. Inline markers pass through untouched.
pub fn tokenize_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        let lower = raw.to_lowercase();
        if is_marker(&lower) {
            out.push(lower);
            continue;
        }
        // markers glued to punctuation, e.g. "<pause>," or "cat<pause>"
        let mut rest = lower.as_str();
        while !rest.is_empty() {
            let next = [PAUSE_MARKER, PROLONG_MARKER]
                .iter()
                .filter_map(|m| rest.find(m).map(|i| (i, *m)))
                .min_by_key(|(i, _)| *i);
            let (head, marker, tail) = match next {
                Some((i, m)) => (&rest[..i], Some(m), &rest[i + m.len()..]),
                None => (rest, None, ""),
            };
            let cleaned = strip_punctuation(head);
            if !cleaned.is_empty() {
                out.push(cleaned);
            }
            if let Some(m) = marker {
                out.push(m.to_string());
            }
            rest = tail;
        }
    }
    out
}

fn strip_punctuation(word: &str) -> String {
    let kept: String = word.chars().filter(|c| c.is_alphanumeric() || *c == '\'').collect();
    kept.trim_matches('\'').to_string()
}
