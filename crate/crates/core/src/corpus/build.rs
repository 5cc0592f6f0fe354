use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{
    ingest_scores, write_jsonl, CorpusConfig, CorpusError, GeneratorConfig, ManifestRecord, PauseSource,
    RejectRecord, SpeakerMode, Split, SynthesizerConfig, AUDIO_DIR, MANIFEST_FILE, REJECTS_FILE,
};
use crate::annotation::{
    is_marker, serialize_annotated, AnnotatedUtterance, Category, DysfluencyKind, Level, PAUSE_MARKER,
    PROLONG_MARKER,
};
use crate::audio::{insert_pause, prolong_phone, write_wav, Alignment, DurationContext, Waveform, DEFAULT_FADE_MS};
use crate::lexicon::Lexicon;
use crate::seed::{derive_seed, rng_from_seed, unit_hash};
use crate::synth::{ExternalAdapter, MockSynthesizer, SynthRequest, SynthResult, Synthesizer};
use crate::textgen::llm::{ChatTransport, FixtureTransport, HttpTransport, LlmClient};
use crate::textgen::{
    bundled_corpus, read_text_corpus, utterance_id, CleanUtterance, Generator, PauseSite, RuleGenerator, TextEntry,
};

/// Smallest number of texts processed per window.
const MIN_WINDOW: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct BuildSummary {
    pub records: usize,
    pub dysfluent_records: usize,
    pub fluent_records: usize,
    /// Records per kind short name (and `fluent`).
    pub per_kind: BTreeMap<String, usize>,
    pub rejects: usize,
    pub manifest_path: PathBuf,
    pub rejects_path: PathBuf,
}

/// Builds the corpus described by `cfg` with the configured generator and
/// synthesizer.
pub fn build_corpus(cfg: &CorpusConfig) -> Result<BuildSummary, CorpusError> {
    cfg.check()?;
    let lex = cfg.load_lexicon()?;
    let corpus = match &cfg.clean_text_source {
        Some(p) => read_text_corpus(std::io::BufReader::new(fs::File::open(p)?))?,
        None => bundled_corpus(),
    };
    let synth: Box<dyn Synthesizer + '_> = match &cfg.synthesizer {
        SynthesizerConfig::Mock => Box::new(MockSynthesizer::new(&lex)),
        SynthesizerConfig::Adapter { command } => {
            Box::new(ExternalAdapter::new(command.clone(), cfg.output_dir.join("work"))?)
        }
    };
    let generator: Box<dyn Generator + '_> = match &cfg.generator {
        GeneratorConfig::Rule => Box::new(RuleGenerator::new(cfg.rule_spec.clone(), &lex)),
        GeneratorConfig::Llm { config, fixtures } => {
            let mut config = config.clone();
            config.fill_default_templates();
            let transport: Box<dyn ChatTransport> = match fixtures {
                Some(dir) => Box::new(FixtureTransport::from_dir(dir)?),
                None => Box::new(HttpTransport::from_config(&config)),
            };
            Box::new(LlmClient::new(config, transport, &lex)?)
        }
    };
    build_corpus_with(cfg, &lex, &corpus, generator.as_ref(), synth.as_ref())
}

/// Builds a corpus from explicit parts; `cfg.generator`, `cfg.synthesizer`,
/// `cfg.lexicon` and `cfg.clean_text_source` are ignored.
///
/// Texts are drawn per kind in a seeded order and processed in windows:
/// generation, synthesis and injection run in parallel, then results are
/// consumed in draw order, so the output does not depend on the thread
/// count. Texts failing any stage are logged to the reject file and
/// replaced by the next one.
pub fn build_corpus_with(
    cfg: &CorpusConfig,
    lex: &Lexicon,
    corpus: &[TextEntry],
    generator: &dyn Generator,
    synth: &dyn Synthesizer,
) -> Result<BuildSummary, CorpusError> {
    cfg.check()?;
    let audio_dir = cfg.output_dir.join(AUDIO_DIR);
    fs::create_dir_all(&audio_dir)?;
    let ctx = Ctx { cfg, lex, corpus, generator, synth, audio_dir: &audio_dir };

    let mut records = Vec::new();
    let mut rejects = Vec::new();
    for kc in &cfg.kinds {
        let job = Job { kind: Some(kc.kind), count: kc.count, mode: cfg.speaker_mode };
        ctx.run(&job, &mut records, &mut rejects)?;
    }
    let dysfluent_records = records.len();
    let fluent_count = (cfg.fluent_ratio * dysfluent_records as f64).round() as usize;
    let job = Job { kind: None, count: fluent_count, mode: SpeakerMode::RoundRobin };
    ctx.run(&job, &mut records, &mut rejects)?;

    if let Some(path) = &cfg.score_file {
        let scored = ingest_scores(&mut records, std::io::BufReader::new(fs::File::open(path)?))?;
        log::info!("attached external scores to {scored} records");
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    let manifest_path = cfg.output_dir.join(MANIFEST_FILE);
    let rejects_path = cfg.output_dir.join(REJECTS_FILE);
    write_jsonl(&manifest_path, &records)?;
    write_jsonl(&rejects_path, &rejects)?;

    let mut per_kind = BTreeMap::new();
    for r in &records {
        *per_kind.entry(r.kind.clone()).or_insert(0) += 1;
    }
    Ok(BuildSummary {
        records: records.len(),
        dysfluent_records,
        fluent_records: records.len() - dysfluent_records,
        per_kind,
        rejects: rejects.len(),
        manifest_path,
        rejects_path,
    })
}

struct Ctx<'a> {
    cfg: &'a CorpusConfig,
    lex: &'a Lexicon,
    corpus: &'a [TextEntry],
    generator: &'a dyn Generator,
    synth: &'a dyn Synthesizer,
    audio_dir: &'a Path,
}

/// `count` utterances of one kind (`None` for fluent).
struct Job {
    kind: Option<DysfluencyKind>,
    count: usize,
    mode: SpeakerMode,
}

impl Job {
    fn label(&self) -> String {
        self.kind.map_or_else(|| "fluent".to_string(), |k| k.short_name())
    }

    fn level(&self, cfg: &CorpusConfig) -> Level {
        self.kind.map_or(cfg.fluent_level, |k| k.level())
    }

    fn is_phoneme_pause(&self) -> bool {
        self.kind.is_some_and(|k| k.level() == Level::Phoneme && k.category() == Category::Pause)
    }
}

/// What the synthesizer is asked to say, and where the markers sit in it.
struct SpeechPlan {
    request_text: String,
    /// Spoken units: words at word level, phones at phoneme level.
    units: usize,
    /// Unit index each pause precedes.
    pauses: Vec<usize>,
    /// Phone index of each prolonged phone.
    prolongs: Vec<usize>,
}

struct Candidate<'e> {
    entry: &'e TextEntry,
    utterance_id: String,
    source: Option<PauseSource>,
    /// The annotated utterance (requests filled) and its speech plan.
    prepared: Result<(AnnotatedUtterance, SpeechPlan), (String, String)>,
    speakers: Vec<u32>,
}

struct Rendered {
    record: ManifestRecord,
    wave: Waveform,
    alignment: Alignment,
}

impl Ctx<'_> {
    fn run(&self, job: &Job, records: &mut Vec<ManifestRecord>, rejects: &mut Vec<RejectRecord>) -> Result<(), CorpusError> {
        let label = job.label();
        let master = self.cfg.master_seed;
        let mut order: Vec<&TextEntry> = self.corpus.iter().collect();
        order.shuffle(&mut rng_from_seed(derive_seed(master, &format!("order/{label}"))));

        // Phoneme-level pauses are split between in-word pauses drawn from the
        // phoneme range and word-boundary pauses drawn from the word range.
        let phoneme_quota = if job.is_phoneme_pause() {
            (self.cfg.phoneme_word_pause_mix * job.count as f64).round() as usize
        } else {
            0
        };
        let mut accepted = 0;
        let mut accepted_phoneme = 0;
        let mut cursor = 0;
        while accepted < job.count {
            if cursor >= order.len() {
                return Err(CorpusError::SourceExhausted { kind: label, produced: accepted, requested: job.count });
            }
            let missing = job.count - accepted;
            let window = &order[cursor..order.len().min(cursor + missing.max(MIN_WINDOW))];
            cursor += window.len();

            let need_phoneme = phoneme_quota - accepted_phoneme;
            let need_word = missing - need_phoneme;
            let sources: Vec<Option<PauseSource>> = (0..window.len())
                .map(|i| match job.kind {
                    _ if job.is_phoneme_pause() => Some(if i < need_phoneme || need_word == 0 {
                        PauseSource::Phoneme
                    } else {
                        PauseSource::Word
                    }),
                    Some(k) if k.category() == Category::Pause => Some(PauseSource::Word),
                    _ => None,
                })
                .collect();

            let prepared: Vec<_> = window
                .par_iter()
                .zip(&sources)
                .map(|(entry, source)| self.prepare(job, entry, *source))
                .collect::<Result<_, _>>()?;

            let mut candidates: Vec<Candidate> = Vec::with_capacity(window.len());
            let mut next_speaker = accepted;
            for ((entry, source), prepared) in window.iter().zip(&sources).zip(prepared) {
                let speakers = match (&prepared, job.mode) {
                    (Err(_), _) => Vec::new(),
                    (Ok(_), SpeakerMode::All) => self.cfg.speakers.clone(),
                    (Ok(_), SpeakerMode::RoundRobin) => {
                        next_speaker += 1;
                        vec![self.cfg.speakers[(next_speaker - 1) % self.cfg.speakers.len()]]
                    }
                };
                let id = match job.kind {
                    Some(k) => utterance_id(k, &entry.id),
                    None => format!("fluent-{}", entry.id),
                };
                candidates.push(Candidate { entry, utterance_id: id, source: *source, prepared, speakers });
            }

            let mut requests = Vec::new();
            let mut owners = Vec::new();
            for (c, cand) in candidates.iter().enumerate() {
                if let Ok((u, plan)) = &cand.prepared {
                    for &speaker in &cand.speakers {
                        requests.push(SynthRequest {
                            id: record_id(&cand.utterance_id, speaker),
                            text_or_phones: plan.request_text.clone(),
                            level: u.level,
                            speaker,
                        });
                        owners.push(c);
                    }
                }
            }
            let synthesized = self.synth.synthesize_batch(&requests)?;
            let rendered: Vec<Result<Rendered, String>> = requests
                .par_iter()
                .zip(synthesized)
                .zip(&owners)
                .map(|((req, audio), &c)| self.render(job, &candidates[c], req.speaker, audio))
                .collect();
            let mut rendered = rendered.into_iter();

            for cand in candidates {
                let outputs: Vec<Result<Rendered, String>> = rendered.by_ref().take(cand.speakers.len()).collect();
                if accepted == job.count {
                    continue;
                }
                let reject = |stage: &str, reason: String| RejectRecord {
                    utterance_id: cand.utterance_id.clone(),
                    text_id: cand.entry.id.clone(),
                    kind: label.clone(),
                    stage: stage.to_string(),
                    reason,
                };
                if let Err((stage, reason)) = &cand.prepared {
                    log::warn!("rejecting {}: {reason}", cand.utterance_id);
                    rejects.push(reject(stage, reason.clone()));
                    continue;
                }
                if let Some(Err(reason)) = outputs.iter().find(|o| o.is_err()) {
                    log::warn!("rejecting {}: {reason}", cand.utterance_id);
                    rejects.push(reject("audio", reason.clone()));
                    continue;
                }
                if cand.source == Some(PauseSource::Phoneme) && job.is_phoneme_pause() && accepted_phoneme == phoneme_quota {
                    continue;
                }
                if cand.source == Some(PauseSource::Word)
                    && job.is_phoneme_pause()
                    && accepted - accepted_phoneme == job.count - phoneme_quota
                {
                    continue;
                }
                for out in outputs {
                    let r = out.expect("checked above");
                    write_wav(self.audio_dir.join(format!("{}.wav", r.record.id)), &r.wave)?;
                    r.alignment.write(self.audio_dir.join(format!("{}.align.json", r.record.id)))?;
                    records.push(r.record);
                }
                accepted += 1;
                if cand.source == Some(PauseSource::Phoneme) && job.is_phoneme_pause() {
                    accepted_phoneme += 1;
                }
            }
        }
        Ok(())
    }

    /// Generates the utterance text and the speech plan. Per-text failures
    /// come back as `Ok(Err((stage, reason)))`; anything else aborts.
    #[allow(clippy::type_complexity)]
    fn prepare(
        &self,
        job: &Job,
        entry: &TextEntry,
        source: Option<PauseSource>,
    ) -> Result<Result<(AnnotatedUtterance, SpeechPlan), (String, String)>, CorpusError> {
        let level = job.level(self.cfg);
        let clean = match CleanUtterance::from_text(&entry.id, &entry.text, level, self.lex) {
            Ok(c) => c,
            Err(e) => return Ok(Err(("generate".into(), e.to_string()))),
        };
        let mut u = match job.kind {
            None if clean.tokens.is_empty() => return Ok(Err(("generate".into(), "empty text".into()))),
            None => AnnotatedUtterance::fluent(format!("fluent-{}", entry.id), level, clean.tokens.clone()),
            Some(kind) => {
                let id = utterance_id(kind, &entry.id);
                let seed = derive_seed(self.cfg.master_seed, &id);
                let site = match source {
                    Some(PauseSource::Phoneme) => PauseSite::WithinWord,
                    Some(PauseSource::Word) => PauseSite::WordBoundary,
                    None => self.cfg.rule_spec.pause_site,
                };
                match self.generator.generate_at(&id, &entry.text, kind, seed, site) {
                    Ok(u) => u,
                    Err(e) if e.is_per_utterance() => return Ok(Err(("generate".into(), e.to_string()))),
                    Err(e) => return Err(e.into()),
                }
            }
        };

        let mut rng = rng_from_seed(derive_seed(self.cfg.master_seed, &format!("{}/durations", u.id)));
        if u.dysfluent_tokens.iter().any(|t| t == PAUSE_MARKER) {
            let ctx = match source {
                Some(PauseSource::Phoneme) => DurationContext::PausePhoneme,
                _ => DurationContext::PauseWord,
            };
            u.pause_request_s = Some(self.cfg.durations.sample(ctx, &mut rng));
        }
        if u.dysfluent_tokens.iter().any(|t| t == PROLONG_MARKER) {
            u.prolong_request_s = Some(self.cfg.durations.sample(DurationContext::Prolong, &mut rng));
        }
        let plan = speech_plan(&u, &clean.word_of);
        Ok(Ok((u, plan)))
    }

    fn render(&self, job: &Job, cand: &Candidate, speaker: u32, audio: SynthResult) -> Result<Rendered, String> {
        let (u, plan) = cand.prepared.as_ref().expect("only prepared candidates are synthesized");
        let (mut wave, mut alignment) = audio?;
        let base_duration_s = wave.duration_s();
        let starts = unit_starts(&alignment, u.level, plan.units)?;

        let mut pause_samples = 0;
        for &k in &plan.pauses {
            let boundary = match starts.get(k) {
                Some(&i) => alignment.intervals[i].start_s,
                None => alignment.intervals.last().map_or(0.0, |iv| iv.end_s),
            };
            let before = wave.len();
            let request = u.pause_request_s.expect("pause request set with the marker");
            (wave, alignment) = insert_pause(&wave, &alignment, boundary, request, DEFAULT_FADE_MS)
                .map_err(|e| e.to_string())?;
            pause_samples += wave.len() - before;
        }
        let mut prolong_samples = 0;
        for &j in &plan.prolongs {
            let before = wave.len();
            let request = u.prolong_request_s.expect("prolong request set with the marker");
            (wave, alignment) = prolong_phone(&wave, &alignment, starts[j], request).map_err(|e| e.to_string())?;
            prolong_samples += wave.len() - before;
        }

        let (dysfluent_text, labels) = serialize_annotated(u);
        let id = record_id(&cand.utterance_id, speaker);
        let record = ManifestRecord {
            audio_path: format!("{AUDIO_DIR}/{id}.wav"),
            alignment_path: format!("{AUDIO_DIR}/{id}.align.json"),
            id,
            utterance_id: cand.utterance_id.clone(),
            text_id: cand.entry.id.clone(),
            speaker,
            level: u.level,
            kind: job.label(),
            clean_text: u.clean_text(),
            dysfluent_text,
            labels,
            pause_s: if plan.pauses.is_empty() { None } else { Some(wave.to_seconds(pause_samples)) },
            pause_source: if plan.pauses.is_empty() { None } else { cand.source },
            prolong_s: if plan.prolongs.is_empty() { None } else { Some(wave.to_seconds(prolong_samples)) },
            base_duration_s,
            duration_s: wave.duration_s(),
            split: if unit_hash(&cand.utterance_id) < self.cfg.test_fraction { Split::Test } else { Split::Train },
            external_scores: None,
        };
        Ok(Rendered { record, wave, alignment })
    }
}

fn record_id(utterance_id: &str, speaker: u32) -> String {
    format!("{utterance_id}-spk{speaker}")
}

/// Marker positions in spoken-unit coordinates, and the synthesizer input.
fn speech_plan(u: &AnnotatedUtterance, clean_word_of: &[usize]) -> SpeechPlan {
    let to_clean = u.dysfluent_to_clean();
    let mut spoken = Vec::new();
    let mut words = Vec::new();
    let mut pauses = Vec::new();
    let mut prolongs = Vec::new();
    for (d, tok) in u.dysfluent_tokens.iter().enumerate() {
        if tok == PAUSE_MARKER {
            pauses.push(spoken.len());
        } else if tok == PROLONG_MARKER {
            prolongs.push(spoken.len().saturating_sub(1));
        } else if !is_marker(tok) {
            spoken.push(tok.as_str());
            words.push(clean_word_of.get(to_clean[d]).copied().unwrap_or(0));
        }
    }
    let request_text = match u.level {
        Level::Word => spoken.join(" "),
        Level::Phoneme => {
            let mut s = String::new();
            for (i, p) in spoken.iter().enumerate() {
                if i > 0 {
                    s.push_str(if words[i] != words[i - 1] { " | " } else { " " });
                }
                s.push_str(p);
            }
            s
        }
    };
    SpeechPlan { request_text, units: spoken.len(), pauses, prolongs }
}

/// Index of the first interval of every spoken unit.
fn unit_starts(a: &Alignment, level: Level, units: usize) -> Result<Vec<usize>, String> {
    match level {
        Level::Phoneme => {
            if a.intervals.len() != units {
                return Err(format!("alignment has {} intervals for {units} phones", a.intervals.len()));
            }
            Ok((0..units).collect())
        }
        Level::Word => {
            let mut starts = Vec::with_capacity(units);
            for (i, iv) in a.intervals.iter().enumerate() {
                if iv.word_index == starts.len() {
                    starts.push(i);
                } else if iv.word_index + 1 != starts.len() {
                    return Err(format!("alignment word index {} out of order at interval {i}", iv.word_index));
                }
            }
            if starts.len() != units {
                return Err(format!("alignment covers {} words, {units} spoken", starts.len()));
            }
            Ok(starts)
        }
    }
}
