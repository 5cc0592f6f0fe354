use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{coarse_pos, CleanUtterance, TextGenError, WordClass};
use crate::annotation::{apply_edits, AnnotatedUtterance, Category, DysfluencyKind, Edit, Level, Span};
use crate::lexicon::{Lexicon, LexiconError};
use crate::seed::rng_from_seed;

/// Target-sampling weights: preferred word classes get `preferred`, the rest `other`.
///
/// Repetition prefers pronouns and prepositions, deletion auxiliaries and
/// conjunctions, substitution content words. At phoneme level, repetition
/// prefers word-initial phones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub preferred: f64,
    pub other: f64,
}

impl Default for ClassWeights {
    fn default() -> Self {
        ClassWeights { preferred: 4.0, other: 1.0 }
    }
}

impl ClassWeights {
    fn for_word(&self, category: Category, word: &str) -> f64 {
        let class = coarse_pos(word);
        let preferred = match category {
            Category::Repetition => matches!(class, WordClass::Pronoun | WordClass::Preposition),
            Category::Deletion => matches!(class, WordClass::Auxiliary | WordClass::Conjunction),
            Category::Substitution => class == WordClass::Content,
            _ => return self.other,
        };
        if preferred {
            self.preferred
        } else {
            self.other
        }
    }
}

/// Where a phoneme-level pause may go.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PauseSite {
    Any,
    /// Between two phones of the same word ("dys ... dysfluency").
    WithinWord,
    /// Between the last phone of one word and the first of the next.
    #[default]
    WordBoundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenSpec {
    pub kind: DysfluencyKind,
    pub rng_seed: u64,
    pub filler_list: Vec<String>,
    pub max_repeats: usize,
    pub substitution_max_distance: usize,
    pub class_weights: ClassWeights,
    pub pause_site: PauseSite,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            kind: DysfluencyKind::ALL[0],
            rng_seed: 0,
            filler_list: ["um", "uh", "like", "you know", "I mean"].map(String::from).to_vec(),
            max_repeats: 3,
            substitution_max_distance: 2,
            class_weights: ClassWeights::default(),
            pause_site: PauseSite::WordBoundary,
        }
    }
}

impl GenSpec {
    pub fn new(kind: DysfluencyKind, rng_seed: u64) -> Self {
        GenSpec { kind, rng_seed, ..GenSpec::default() }
    }

    pub fn check(&self) -> Result<(), TextGenError> {
        if self.max_repeats < 2 {
            return Err(TextGenError::InvalidSpec(format!("max_repeats {} < 2", self.max_repeats)));
        }
        let fillers_needed = self.kind.level() == Level::Word && self.kind.category() == Category::Insertion;
        if fillers_needed && self.filler_list.iter().all(|f| f.split_whitespace().next().is_none()) {
            return Err(TextGenError::InvalidSpec("filler list is empty".into()));
        }
        let w = self.class_weights;
        if !(w.preferred.is_finite() && w.other.is_finite() && w.preferred > 0.0 && w.other > 0.0) {
            return Err(TextGenError::InvalidSpec("class weights must be positive".into()));
        }
        Ok(())
    }
}

/// Injects exactly one dysfluency of `spec.kind` into `clean`.
///
/// Same spec (seed included) and input always give the same output.
pub fn inject_rule(
    clean: &CleanUtterance,
    spec: &GenSpec,
    lex: &Lexicon,
) -> Result<AnnotatedUtterance, TextGenError> {
    spec.check()?;
    let kind = spec.kind;
    if clean.level != kind.level() {
        return Err(TextGenError::InvalidSpec(format!("{kind} requested on {} tokens", clean.level)));
    }
    let tokens = &clean.tokens;
    if tokens.len() < 2 {
        return Err(TextGenError::TooShort { len: tokens.len() });
    }
    if kind.level() == Level::Phoneme {
        if let Some(p) = tokens.iter().find(|p| !lex.has_phone(p)) {
            return Err(LexiconError::UnknownPhone(p.clone()).into());
        }
    }

    let mut rng = rng_from_seed(spec.rng_seed);
    let edit = match kind.level() {
        Level::Word => word_edit(clean, spec, lex, &mut rng)?,
        Level::Phoneme => phone_edit(clean, spec, lex, &mut rng)?,
    };
    Ok(apply_edits(&clean.id, kind.level(), tokens, &[edit])?)
}

fn pick_weighted(rng: &mut ChaCha8Rng, candidates: &[(usize, f64)]) -> Option<usize> {
    if candidates.is_empty() {
        return None;
    }
    let dist = WeightedIndex::new(candidates.iter().map(|c| c.1)).ok()?;
    Some(candidates[dist.sample(rng)].0)
}

fn no_target(kind: DysfluencyKind, why: &str) -> TextGenError {
    TextGenError::NoValidTarget(format!("{kind}: {why}"))
}

fn word_edit(
    clean: &CleanUtterance,
    spec: &GenSpec,
    lex: &Lexicon,
    rng: &mut ChaCha8Rng,
) -> Result<Edit, TextGenError> {
    let tokens = &clean.tokens;
    let n = tokens.len();
    let category = spec.kind.category();
    let weighted: Vec<(usize, f64)> =
        (0..n).map(|i| (i, spec.class_weights.for_word(category, &tokens[i]))).collect();

    match category {
        Category::Repetition => {
            let i = pick_weighted(rng, &weighted).expect("n >= 2");
            let copies = rng.gen_range(2..=spec.max_repeats);
            Ok(Edit::Repeat { span: Span::single(i), copies })
        }
        Category::Deletion => {
            let i = pick_weighted(rng, &weighted).expect("n >= 2");
            Ok(Edit::Delete { span: Span::single(i) })
        }
        Category::Pause => Ok(Edit::Pause { at: rng.gen_range(1..n) }),
        Category::Insertion => {
            let fillers: Vec<Vec<String>> = spec
                .filler_list
                .iter()
                .map(|f| f.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>())
                .filter(|f| !f.is_empty())
                .collect();
            let mut options = Vec::new();
            for (f, filler) in fillers.iter().enumerate() {
                for at in 0..n {
                    if !repeats_neighbour(tokens, at, filler) {
                        options.push((at, f));
                    }
                }
            }
            let &(at, f) = options
                .choose(rng)
                .ok_or_else(|| no_target(spec.kind, "every filler would read as a repetition"))?;
            Ok(Edit::Insert { at, tokens: fillers[f].clone() })
        }
        Category::Substitution => {
            let mut positions = Vec::new();
            let mut options = Vec::new();
            for &(i, w) in &weighted {
                let near = match lex.similar_words(&tokens[i], spec.substitution_max_distance) {
                    Ok(near) => near,
                    Err(LexiconError::OutOfVocabulary(_)) => continue,
                    Err(e) => return Err(e.into()),
                };
                let Some(best) = near.first().map(|x| x.1) else { continue };
                let nearest: Vec<String> = near
                    .iter()
                    .take_while(|x| x.1 == best)
                    .map(|x| x.0.to_string())
                    .filter(|x| *x != tokens[i])
                    .collect();
                if !nearest.is_empty() {
                    positions.push((positions.len(), w));
                    options.push((i, nearest));
                }
            }
            let pick = pick_weighted(rng, &positions)
                .ok_or_else(|| no_target(spec.kind, "no word has a near neighbour in the lexicon"))?;
            let (i, nearest) = &options[pick];
            let word = nearest.choose(rng).expect("nonempty").clone();
            Ok(Edit::Substitute { span: Span::single(*i), tokens: vec![word] })
        }
        Category::Prolongation => Err(TextGenError::InvalidSpec("prolongation is phoneme-level only".into())),
    }
}

/// Whether inserting `filler` at `at` would just repeat the adjacent tokens.
fn repeats_neighbour(tokens: &[String], at: usize, filler: &[String]) -> bool {
    let k = filler.len();
    let after = at + k <= tokens.len() && tokens[at..at + k] == *filler;
    let before = at >= k && tokens[at - k..at] == *filler;
    after || before
}

fn phone_edit(
    clean: &CleanUtterance,
    spec: &GenSpec,
    lex: &Lexicon,
    rng: &mut ChaCha8Rng,
) -> Result<Edit, TextGenError> {
    let tokens = &clean.tokens;
    let n = tokens.len();
    let word_of = if clean.word_of.len() == n { Some(clean.word_of.as_slice()) } else { None };

    match spec.kind.category() {
        Category::Repetition => {
            let weighted: Vec<(usize, f64)> = (0..n)
                .map(|i| {
                    let initial = match word_of {
                        Some(w) => i == 0 || w[i] != w[i - 1],
                        None => false,
                    };
                    let weight = if initial { spec.class_weights.preferred } else { spec.class_weights.other };
                    (i, weight)
                })
                .collect();
            let i = pick_weighted(rng, &weighted).expect("n >= 2");
            let copies = rng.gen_range(2..=spec.max_repeats);
            Ok(Edit::Repeat { span: Span::single(i), copies })
        }
        Category::Deletion => Ok(Edit::Delete { span: Span::single(rng.gen_range(0..n)) }),
        Category::Pause => {
            let sites: Vec<usize> = (1..n)
                .filter(|&j| match (spec.pause_site, word_of) {
                    (PauseSite::Any, _) | (_, None) => true,
                    (PauseSite::WithinWord, Some(w)) => w[j - 1] == w[j],
                    (PauseSite::WordBoundary, Some(w)) => w[j - 1] != w[j],
                })
                .collect();
            let at = *sites.choose(rng).ok_or_else(|| no_target(spec.kind, "no boundary of the requested type"))?;
            Ok(Edit::Pause { at })
        }
        Category::Insertion => {
            let at = rng.gen_range(0..n);
            let options: Vec<&str> = lex
                .inventory()
                .filter(|p| (at == 0 || tokens[at - 1] != *p) && tokens[at] != *p)
                .collect();
            let phone = options.choose(rng).ok_or_else(|| no_target(spec.kind, "empty inventory"))?;
            Ok(Edit::Insert { at, tokens: vec![phone.to_string()] })
        }
        Category::Substitution => {
            let mut positions: Vec<usize> = (0..n).collect();
            positions.shuffle(rng);
            for i in positions {
                let original = &tokens[i];
                let mut scored = Vec::new();
                for q in lex.inventory() {
                    let d = lex.phone_distance(original, q)? as usize;
                    if d >= 1 && d <= spec.substitution_max_distance {
                        scored.push((q, d));
                    }
                }
                let Some(best) = scored.iter().map(|x| x.1).min() else { continue };
                let nearest: Vec<&str> = scored.iter().filter(|x| x.1 == best).map(|x| x.0).collect();
                let q = nearest.choose(rng).expect("nonempty");
                return Ok(Edit::Substitute { span: Span::single(i), tokens: vec![q.to_string()] });
            }
            Err(no_target(spec.kind, "no phone within the substitution distance"))
        }
        Category::Prolongation => {
            let mut candidates = Vec::new();
            for (i, p) in tokens.iter().enumerate() {
                if lex.is_prolongable(p)? {
                    candidates.push(i);
                }
            }
            let index = *candidates.choose(rng).ok_or_else(|| no_target(spec.kind, "no prolongable phone"))?;
            Ok(Edit::Prolong { index })
        }
    }
}
