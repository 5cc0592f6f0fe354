use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ManifestRecord;
use crate::annotation::{tokenize_words, Category, Level};
use crate::textgen::{coarse_pos, WordClass};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KindStats {
    pub records: usize,
    /// Distinct utterances (records differ only by speaker).
    pub utterances: usize,
    pub hours: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub records: usize,
    pub fluent: usize,
    pub total_hours: f64,
    /// Keyed by kind short name, plus `fluent`.
    pub per_kind: BTreeMap<String, KindStats>,
    pub speakers: BTreeSet<u32>,
    /// Word classes of the words targeted by word-level insertions,
    /// repetitions, deletions and substitutions, per kind, counted once per
    /// utterance.
    pub word_classes: BTreeMap<String, BTreeMap<WordClass, usize>>,
}

pub fn corpus_stats(records: &[ManifestRecord]) -> CorpusStats {
    let mut stats = CorpusStats::default();
    let mut seen: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for r in records {
        stats.records += 1;
        stats.fluent += usize::from(r.is_fluent());
        stats.total_hours += r.duration_s / 3600.0;
        stats.speakers.insert(r.speaker);
        let k = stats.per_kind.entry(r.kind.clone()).or_default();
        k.records += 1;
        k.hours += r.duration_s / 3600.0;
        if !seen.entry(&r.kind).or_default().insert(&r.utterance_id) {
            continue;
        }
        k.utterances += 1;
        if r.level != Level::Word {
            continue;
        }
        let clean = tokenize_words(&r.clean_text);
        for label in &r.labels {
            let words: Vec<String> = match label.kind.category() {
                Category::Repetition => clean.get(label.rspan.range()).map(<[String]>::to_vec).unwrap_or_default(),
                Category::Deletion | Category::Substitution => {
                    label.reference.as_deref().map(tokenize_words).unwrap_or_default()
                }
                Category::Insertion => label.payload.as_deref().map(tokenize_words).unwrap_or_default(),
                Category::Pause | Category::Prolongation => continue,
            };
            let hist = stats.word_classes.entry(label.kind.short_name()).or_default();
            for w in words {
                *hist.entry(coarse_pos(&w)).or_insert(0) += 1;
            }
        }
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_manifest_gives_zero_report() {
        let s = corpus_stats(&[]);
        assert_eq!(s, CorpusStats::default());
        assert_eq!(s.total_hours, 0.0);
    }
}
