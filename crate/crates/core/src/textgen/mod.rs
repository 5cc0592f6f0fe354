//! Dysfluent text generation: seeded rule generators per dysfluency kind,
//! an LLM backend with validation and retries, and deterministic batching.

mod batch;
pub mod llm;
mod pos;
mod rules;

use std::io::BufRead;

use thiserror::Error;

use crate::annotation::{tokenize_words, AnnotatedUtterance, AnnotationError, DysfluencyKind, Level};
use crate::lexicon::{Lexicon, LexiconError};

pub use batch::{batch_generate, generate_all, utterance_id, BatchOutput, Generator, RuleGenerator, Skipped};
pub use pos::{coarse_pos, WordClass};
pub use rules::{inject_rule, ClassWeights, GenSpec, PauseSite};

const BUNDLED_SENTENCES: &str = include_str!("../../data/sentences.txt");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TextGenError {
    #[error("invalid generation spec: {0}")]
    InvalidSpec(String),
    #[error("utterance has {len} tokens, at least 2 are needed")]
    TooShort { len: usize },
    #[error("no valid target: {0}")]
    NoValidTarget(String),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error("provider error: {0}")]
    Provider(String),
    #[error("could not parse model response: {0}")]
    ParseFailure(String),
    #[error("no valid response after {attempts} attempts: {last}")]
    ValidationExhausted { attempts: usize, last: String },
    #[error("corpus exhausted after {produced} of {requested} utterances")]
    CorpusExhausted { produced: usize, requested: usize },
}

impl TextGenError {
    /// Failures that concern one text only; batch generation skips them.
    pub fn is_per_utterance(&self) -> bool {
        matches!(
            self,
            TextGenError::TooShort { .. }
                | TextGenError::NoValidTarget(_)
                | TextGenError::Lexicon(LexiconError::OutOfVocabulary(_) | LexiconError::UnknownPhone(_))
                | TextGenError::ParseFailure(_)
                | TextGenError::ValidationExhausted { .. }
        )
    }
}

/// A clean line of source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextEntry {
    pub id: String,
    pub text: String,
}

/// Reads one text per line, either `id<TAB>text` or bare text (ids are then
/// `s` plus the 1-based line number). Blank lines and `#` comments are skipped.
pub fn read_text_corpus(reader: impl BufRead) -> std::io::Result<Vec<TextEntry>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let entry = match trimmed.split_once('\t') {
            Some((id, text)) => TextEntry { id: id.trim().to_string(), text: text.trim().to_string() },
            None => TextEntry { id: format!("s{:05}", n + 1), text: trimmed.to_string() },
        };
        out.push(entry);
    }
    Ok(out)
}

/// The bundled set of everyday English sentences.
pub fn bundled_corpus() -> Vec<TextEntry> {
    read_text_corpus(BUNDLED_SENTENCES.as_bytes()).expect("bundled corpus is valid UTF-8")
}

/// Clean tokens at the generation level, with the word each token belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanUtterance {
    pub id: String,
    pub level: Level,
    pub words: Vec<String>,
    pub tokens: Vec<String>,
    /// Word index of every token (identity at word level).
    pub word_of: Vec<usize>,
}

impl CleanUtterance {
    pub fn from_text(id: &str, text: &str, level: Level, lex: &Lexicon) -> Result<Self, TextGenError> {
        let words = tokenize_words(text);
        match level {
            Level::Word => Ok(CleanUtterance {
                id: id.to_string(),
                level,
                word_of: (0..words.len()).collect(),
                tokens: words.clone(),
                words,
            }),
            Level::Phoneme => {
                let phones = lex.phonemize(&words)?;
                Ok(CleanUtterance {
                    id: id.to_string(),
                    level,
                    tokens: phones.iter().map(|p| p.phone.clone()).collect(),
                    word_of: phones.iter().map(|p| p.word).collect(),
                    words,
                })
            }
        }
    }
}

/// Whether `u` carries exactly one label, of `kind`.
pub fn expected_single_kind(u: &AnnotatedUtterance, kind: DysfluencyKind) -> bool {
    u.labels.len() == 1 && u.labels[0].kind == kind
}
