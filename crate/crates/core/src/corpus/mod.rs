//! Manifest-driven corpus builds: text generation, synthesis, audio
//! injection and a JSONL manifest, plus statistics over a manifest.

mod build;
mod stats;

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{DysfluencyKind, LabelRecord, Level};
use crate::audio::{AudioError, DurationRanges};
use crate::lexicon::{Lexicon, LexiconError};
use crate::synth::SynthError;
use crate::textgen::llm::LlmBackendConfig;
use crate::textgen::{GenSpec, TextGenError};

pub use build::{build_corpus, build_corpus_with, BuildSummary};
pub use stats::{corpus_stats, CorpusStats, KindStats};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const REJECTS_FILE: &str = "rejects.jsonl";
pub const AUDIO_DIR: &str = "audio";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("invalid corpus config: {0}")]
    Config(String),
    #[error("source exhausted for {kind}: {produced} of {requested} utterances")]
    SourceExhausted { kind: String, produced: usize, requested: usize },
    #[error("adapter failure: {0}")]
    AdapterFailure(String),
    #[error(transparent)]
    TextGen(#[from] TextGenError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("malformed manifest line {line}: {reason}")]
    MalformedManifest { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CorpusError {
    fn from(e: std::io::Error) -> Self {
        CorpusError::Io(e.to_string())
    }
}

impl From<SynthError> for CorpusError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Io(m) => CorpusError::Io(m),
            other => CorpusError::AdapterFailure(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindCount {
    pub kind: DysfluencyKind,
    /// Number of generated utterances (each may yield several records).
    pub count: usize,
}

/// How speakers are assigned to utterances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeakerMode {
    /// Every utterance is rendered by every speaker.
    #[default]
    All,
    /// Utterance `k` of a kind is rendered by speaker `k mod n`.
    RoundRobin,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SynthesizerConfig {
    #[default]
    Mock,
    /// External adapter, run as `command... --input <jsonl> --outdir <dir>`.
    Adapter { command: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GeneratorConfig {
    #[default]
    Rule,
    Llm {
        #[serde(default)]
        config: LlmBackendConfig,
        /// Replay recorded responses from this directory instead of calling the endpoint.
        #[serde(default)]
        fixtures: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconPaths {
    pub dictionary: PathBuf,
    pub features: PathBuf,
    pub ipa: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub master_seed: u64,
    /// One text per line (`id<TAB>text` or bare); the bundled sentences when absent.
    pub clean_text_source: Option<PathBuf>,
    pub kinds: Vec<KindCount>,
    /// Fluent records per dysfluent record.
    pub fluent_ratio: f64,
    pub fluent_level: Level,
    /// Share of phoneme-level pause utterances whose pause is drawn from the
    /// phoneme-level range and placed inside a word; the rest use the
    /// word-level range at a word boundary.
    pub phoneme_word_pause_mix: f64,
    pub speakers: Vec<u32>,
    pub speaker_mode: SpeakerMode,
    pub synthesizer: SynthesizerConfig,
    pub generator: GeneratorConfig,
    /// Rule-generator parameters; `kind` and `rng_seed` are set per utterance.
    pub rule_spec: GenSpec,
    pub durations: DurationRanges,
    /// Share of utterances assigned to the test split by id hash.
    pub test_fraction: f64,
    /// Optional `{id, CE, CU, PQ}` JSONL joined onto records by id.
    pub score_file: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub lexicon: Option<LexiconPaths>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            master_seed: 0,
            clean_text_source: None,
            kinds: Vec::new(),
            fluent_ratio: 0.05,
            fluent_level: Level::Phoneme,
            phoneme_word_pause_mix: 0.3,
            speakers: vec![0],
            speaker_mode: SpeakerMode::All,
            synthesizer: SynthesizerConfig::Mock,
            generator: GeneratorConfig::Rule,
            rule_spec: GenSpec::default(),
            durations: DurationRanges::default(),
            test_fraction: 0.1,
            score_file: None,
            output_dir: PathBuf::from("corpus"),
            lexicon: None,
        }
    }
}

impl CorpusConfig {
    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        let cfg: CorpusConfig = serde_json::from_str(text).map_err(|e| CorpusError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::Config(m));
        for (name, v) in [
            ("fluent_ratio", self.fluent_ratio),
            ("phoneme_word_pause_mix", self.phoneme_word_pause_mix),
            ("test_fraction", self.test_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1]"));
            }
        }
        if self.speakers.is_empty() {
            return bad("no speakers".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for k in &self.kinds {
            if !seen.insert(k.kind) {
                return bad(format!("kind {} listed twice", k.kind.short_name()));
            }
        }
        let mut speakers = self.speakers.clone();
        speakers.sort_unstable();
        speakers.dedup();
        if speakers.len() != self.speakers.len() {
            return bad("duplicate speaker ids".into());
        }
        if let SynthesizerConfig::Adapter { command } = &self.synthesizer {
            if command.is_empty() {
                return bad("empty adapter command".into());
            }
        }
        self.durations.check()?;
        Ok(())
    }

    pub fn load_lexicon(&self) -> Result<Lexicon, CorpusError> {
        match &self.lexicon {
            Some(p) => Ok(Lexicon::from_paths(&p.dictionary, &p.features, &p.ipa)?),
            None => Ok(Lexicon::bundled().clone()),
        }
    }
}

/// Where a pause's duration range and position came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PauseSource {
    Phoneme,
    Word,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExternalScores {
    #[serde(rename = "CE")]
    pub ce: f64,
    #[serde(rename = "CU")]
    pub cu: f64,
    #[serde(rename = "PQ")]
    pub pq: f64,
}

/// One line of `manifest.jsonl`: one utterance rendered by one speaker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub utterance_id: String,
    pub text_id: String,
    pub speaker: u32,
    pub level: Level,
    /// Kind short name, or `fluent`.
    pub kind: String,
    pub clean_text: String,
    pub dysfluent_text: String,
    pub labels: Vec<LabelRecord>,
    /// Realized inserted silence, seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pause_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pause_source: Option<PauseSource>,
    /// Realized prolongation, seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prolong_s: Option<f64>,
    /// Duration of the synthesized audio before injection.
    pub base_duration_s: f64,
    pub duration_s: f64,
    /// Relative to the corpus directory.
    pub audio_path: String,
    pub alignment_path: String,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_scores: Option<ExternalScores>,
}

impl ManifestRecord {
    pub fn is_fluent(&self) -> bool {
        self.labels.is_empty()
    }
}

/// A text or record that failed a stage and was replaced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectRecord {
    pub utterance_id: String,
    pub text_id: String,
    pub kind: String,
    pub stage: String,
    pub reason: String,
}

pub fn read_manifest(reader: impl BufRead) -> Result<Vec<ManifestRecord>, CorpusError> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| CorpusError::MalformedManifest { line: n + 1, reason: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_manifest_file(path: &Path) -> Result<Vec<ManifestRecord>, CorpusError> {
    read_manifest(BufReader::new(fs::File::open(path)?))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CorpusError> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut f, item).map_err(|e| CorpusError::Io(e.to_string()))?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ScoreLine {
    id: String,
    #[serde(flatten)]
    scores: ExternalScores,
}

/// Attaches `{id, CE, CU, PQ}` scores to records with matching ids and
/// returns how many records were scored. Unknown ids are logged and ignored.
pub fn ingest_scores(records: &mut [ManifestRecord], reader: impl BufRead) -> Result<usize, CorpusError> {
    let mut scores = HashMap::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: ScoreLine = serde_json::from_str(&line)
            .map_err(|e| CorpusError::Config(format!("score file line {}: {e}", n + 1)))?;
        scores.insert(s.id, s.scores);
    }
    let mut hit = 0;
    for r in records.iter_mut() {
        if let Some(s) = scores.remove(&r.id) {
            r.external_scores = Some(s);
            hit += 1;
        }
    }
    for id in scores.keys() {
        log::warn!("score for unknown record {id}");
    }
    Ok(hit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_checks() {
        let cfg = CorpusConfig::from_json(r#"{"kinds": [{"kind": "word_rep", "count": 2}]}"#).unwrap();
        assert_eq!(cfg.fluent_ratio, 0.05);
        assert_eq!(cfg.phoneme_word_pause_mix, 0.3);
        assert!(CorpusConfig::from_json(r#"{"fluent_ratio": 1.5}"#).is_err());
        assert!(CorpusConfig::from_json(r#"{"speakers": []}"#).is_err());
        assert!(CorpusConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(CorpusConfig::from_json(r#"{"kinds": [{"kind": "word_pro", "count": 2}]}"#).is_err());
        let adapter = r#"{"synthesizer": {"type": "adapter", "command": ["tts", "-v"]}}"#;
        assert!(matches!(CorpusConfig::from_json(adapter).unwrap().synthesizer, SynthesizerConfig::Adapter { .. }));
    }

    #[test]
    fn scores_are_joined_by_id() {
        let rec = ManifestRecord {
            id: "a".into(),
            utterance_id: "a".into(),
            text_id: "t".into(),
            speaker: 0,
            level: Level::Word,
            kind: "fluent".into(),
            clean_text: "x".into(),
            dysfluent_text: "x".into(),
            labels: vec![],
            pause_s: None,
            pause_source: None,
            prolong_s: None,
            base_duration_s: 1.0,
            duration_s: 1.0,
            audio_path: "audio/a.wav".into(),
            alignment_path: "audio/a.align.json".into(),
            split: Split::Train,
            external_scores: None,
        };
        let mut records = vec![rec];
        let text = "{\"id\":\"a\",\"CE\":5.5,\"CU\":6.0,\"PQ\":7.25}\n{\"id\":\"zz\",\"CE\":1,\"CU\":1,\"PQ\":1}\n";
        assert_eq!(ingest_scores(&mut records, text.as_bytes()).unwrap(), 1);
        assert_eq!(records[0].external_scores, Some(ExternalScores { ce: 5.5, cu: 6.0, pq: 7.25 }));
        let line = serde_json::to_string(&records[0]).unwrap();
        assert!(line.contains("\"CE\":5.5"));
        assert_eq!(read_manifest(line.as_bytes()).unwrap(), records);
    }
}
