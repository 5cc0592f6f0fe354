use rayon::prelude::*;
use serde::Serialize;

use super::{inject_rule, CleanUtterance, GenSpec, PauseSite, TextEntry, TextGenError};
use crate::annotation::{validate, AnnotatedUtterance, DysfluencyKind};
use crate::lexicon::Lexicon;
use crate::seed::derive_seed;

/// Anything that turns one clean text into one annotated utterance of `kind`.
pub trait Generator: Sync {
    fn generate(
        &self,
        id: &str,
        text: &str,
        kind: DysfluencyKind,
        seed: u64,
    ) -> Result<AnnotatedUtterance, TextGenError>;

    /// Like [`Generator::generate`], asking for a pause at `site`.
    /// Generators that cannot steer pause placement ignore the request.
    fn generate_at(
        &self,
        id: &str,
        text: &str,
        kind: DysfluencyKind,
        seed: u64,
        site: PauseSite,
    ) -> Result<AnnotatedUtterance, TextGenError> {
        let _ = site;
        self.generate(id, text, kind, seed)
    }
}

/// The seeded rule generators, with a base spec whose kind and seed are
/// overridden per call.
#[derive(Debug, Clone)]
pub struct RuleGenerator<'a> {
    pub base: GenSpec,
    pub lexicon: &'a Lexicon,
}

impl<'a> RuleGenerator<'a> {
    pub fn new(base: GenSpec, lexicon: &'a Lexicon) -> Self {
        RuleGenerator { base, lexicon }
    }
}

impl Generator for RuleGenerator<'_> {
    fn generate(
        &self,
        id: &str,
        text: &str,
        kind: DysfluencyKind,
        seed: u64,
    ) -> Result<AnnotatedUtterance, TextGenError> {
        self.generate_at(id, text, kind, seed, self.base.pause_site)
    }

    fn generate_at(
        &self,
        id: &str,
        text: &str,
        kind: DysfluencyKind,
        seed: u64,
        site: PauseSite,
    ) -> Result<AnnotatedUtterance, TextGenError> {
        let clean = CleanUtterance::from_text(id, text, kind.level(), self.lexicon)?;
        let spec = GenSpec { kind, rng_seed: seed, pause_site: site, ..self.base.clone() };
        let u = inject_rule(&clean, &spec, self.lexicon)?;
        let report = validate(&u, self.lexicon);
        if !report.is_valid() {
            return Err(TextGenError::NoValidTarget(format!("output failed validation: {report}")));
        }
        Ok(u)
    }
}

/// A text that produced no utterance, and why.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Skipped {
    pub text_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput {
    pub utterances: Vec<AnnotatedUtterance>,
    pub skipped: Vec<Skipped>,
    /// Number of corpus texts drawn, skipped ones included.
    pub consumed: usize,
}

/// Utterance id for `kind` generated from text `text_id`.
pub fn utterance_id(kind: DysfluencyKind, text_id: &str) -> String {
    format!("{}-{}", kind.short_name(), text_id)
}

/// Generates `count` utterances of `kind`, drawing texts from `corpus` in order.
///
/// Each utterance is seeded from `(master_seed, utterance id)`, and texts are
/// taken in fixed windows whose results are consumed in corpus order, so the
/// output does not depend on the size of the rayon pool it runs in. Texts
/// failing with a per-utterance error are skipped and replaced by the next
/// text; other errors abort the batch.
pub fn batch_generate<G: Generator + ?Sized>(
    corpus: &[TextEntry],
    generator: &G,
    kind: DysfluencyKind,
    master_seed: u64,
    count: usize,
) -> Result<BatchOutput, TextGenError> {
    let out = generate_upto(corpus, generator, kind, master_seed, count)?;
    if out.utterances.len() < count {
        return Err(TextGenError::CorpusExhausted { produced: out.utterances.len(), requested: count });
    }
    Ok(out)
}

/// Tries every text once; texts that fail are reported in `skipped`.
pub fn generate_all<G: Generator + ?Sized>(
    corpus: &[TextEntry],
    generator: &G,
    kind: DysfluencyKind,
    master_seed: u64,
) -> Result<BatchOutput, TextGenError> {
    generate_upto(corpus, generator, kind, master_seed, corpus.len())
}

fn generate_upto<G: Generator + ?Sized>(
    corpus: &[TextEntry],
    generator: &G,
    kind: DysfluencyKind,
    master_seed: u64,
    count: usize,
) -> Result<BatchOutput, TextGenError> {
    let mut out = BatchOutput { utterances: Vec::with_capacity(count), skipped: Vec::new(), consumed: 0 };
    let mut next = 0;
    while out.utterances.len() < count && next < corpus.len() {
        let missing = count - out.utterances.len();
        let window = &corpus[next..corpus.len().min(next + missing.max(16))];
        let results: Vec<_> = window
            .par_iter()
            .map(|entry| {
                let id = utterance_id(kind, &entry.id);
                let seed = derive_seed(master_seed, &id);
                generator.generate(&id, &entry.text, kind, seed)
            })
            .collect();
        for (entry, result) in window.iter().zip(results) {
            if out.utterances.len() == count {
                break;
            }
            out.consumed += 1;
            match result {
                Ok(u) => out.utterances.push(u),
                Err(e) if e.is_per_utterance() => {
                    log::warn!("skipping text {}: {e}", entry.id);
                    out.skipped.push(Skipped { text_id: entry.id.clone(), reason: e.to_string() });
                }
                Err(e) => return Err(e),
            }
        }
        next += window.len();
    }
    Ok(out)
}
