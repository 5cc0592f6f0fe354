//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use serde_json::Value;

use dysfluent::annotation::{parse_annotated, serialize_annotated, tokenize_words, validate, DysfluencyKind};
use dysfluent::audio::{
    detect_silence, insert_pause, prolong_phone, DurationContext, DurationRanges, DEFAULT_FADE_MS, DEFAULT_FRAME_MS,
    DEFAULT_THRESHOLD_DB,
};
use dysfluent::corpus::{build_corpus, read_manifest_file, CorpusConfig, KindCount, PauseSource, MANIFEST_FILE};
use dysfluent::lexicon::Lexicon;
use dysfluent::metrics::{align_tokens, detection_scores, ter, token_distance};
use dysfluent::seed::{derive_seed, rng_from_seed};
use dysfluent::synth::{mock_synthesize, MockVoice};
use dysfluent::textgen::llm::{ChatTransport, FixtureTransport, LlmBackendConfig, LlmClient};
use dysfluent::textgen::{bundled_corpus, coarse_pos, GenSpec, Generator, RuleGenerator, TextGenError, WordClass};
use dysfluent::{Alignment, Waveform};

use common::*;

struct Verdict {
    ok: bool,
    detail: String,
}

fn verdict(ok: bool, detail: impl Into<String>) -> Verdict {
    Verdict { ok, detail: detail.into() }
}

/// Runs `check` and folds the time limit into its verdict.
fn criterion(name: &str, limit: Option<Duration>, check: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let v = check();
    let elapsed = start.elapsed();
    let in_time = limit.is_none_or(|l| elapsed < l);
    let ok = v.ok && in_time;
    let budget = limit.map_or(String::new(), |l| format!(" (limit {:.0?})", l));
    println!(
        "{} {name}: {}; {:.2?}{budget}",
        if ok { "PASS" } else { "FAIL" },
        v.detail,
        elapsed
    );
    ok
}

fn lex() -> &'static Lexicon {
    Lexicon::bundled()
}

/// A mock rendering of a random bundled sentence by a random speaker.
fn random_rendering(rng: &mut impl Rng) -> (Waveform, Alignment) {
    let corpus = bundled_corpus();
    let entry = &corpus[rng.gen_range(0..corpus.len())];
    let phones = lex().phonemize(&tokenize_words(&entry.text)).unwrap();
    mock_synthesize(&phones, &MockVoice::for_speaker(rng.gen_range(0..8)), lex()).unwrap()
}

fn p1_duration_ranges() -> Verdict {
    let ranges = DurationRanges::default();
    let mut rng = rng_from_seed(1);
    let mut violations = 0;
    let mut observed = Vec::new();
    for (ctx, lo, hi) in [
        (DurationContext::PauseWord, 0.8, 3.5),
        (DurationContext::PausePhoneme, 0.3, 1.5),
        (DurationContext::Prolong, 0.17, 0.8),
    ] {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for _ in 0..10_000 {
            let d = ranges.sample(ctx, &mut rng);
            violations += usize::from(!(lo..=hi).contains(&d));
            min = min.min(d);
            max = max.max(d);
        }
        observed.push(format!("[{min:.3}, {max:.3}]"));
    }
    verdict(violations == 0, format!("{violations} violations in 30000 draws, observed {}", observed.join(" ")))
}

fn p2_pause_oracle() -> Verdict {
    let mut rng = rng_from_seed(2);
    let ranges = DurationRanges::default();
    let (mut worst_b, mut worst_d, mut bad_len, mut missed) = (0.0f64, 0.0f64, 0, 0);
    for _ in 0..100 {
        let (w, a) = random_rendering(&mut rng);
        let boundary = a.intervals[rng.gen_range(1..a.intervals.len())].start_s;
        let d = ranges.sample(DurationContext::PauseWord, &mut rng);
        let (w2, _) = insert_pause(&w, &a, boundary, d, DEFAULT_FADE_MS).unwrap();
        let added = w2.len() - w.len();
        bad_len += usize::from(added != (d * w.sample_rate as f64).round() as usize);
        let realized = w.to_seconds(added);
        let found = detect_silence(&w2, DEFAULT_FRAME_MS, DEFAULT_THRESHOLD_DB)
            .into_iter()
            .max_by(|x, y| overlap(*x, boundary, realized).total_cmp(&overlap(*y, boundary, realized)))
            .filter(|r| overlap(*r, boundary, realized) > 0.0);
        match found {
            Some((s, e)) => {
                worst_b = worst_b.max((s - boundary).abs());
                worst_d = worst_d.max(((e - s) - realized).abs());
            }
            None => missed += 1,
        }
    }
    let ok = missed == 0 && bad_len == 0 && worst_b <= 0.020 && worst_d <= 0.020;
    verdict(
        ok,
        format!(
            "100 pauses, {missed} missed, {bad_len} length mismatches, worst boundary error {:.1} ms, worst duration error {:.1} ms",
            worst_b * 1e3,
            worst_d * 1e3
        ),
    )
}

fn overlap((s, e): (f64, f64), start: f64, len: f64) -> f64 {
    (e.min(start + len) - s.max(start)).max(0.0)
}

fn p3_prolong_oracle() -> Verdict {
    let mut rng = rng_from_seed(3);
    let ranges = DurationRanges::default();
    let (mut worst, mut bad_len) = (0.0f64, 0);
    for _ in 0..100 {
        let (w, a) = random_rendering(&mut rng);
        let index = rng.gen_range(0..a.intervals.len());
        let d = ranges.sample(DurationContext::Prolong, &mut rng);
        let (w2, a2) = prolong_phone(&w, &a, index, d).unwrap();
        let extension = a2.intervals[index].duration_s() - a.intervals[index].duration_s();
        worst = worst.max((extension - d).abs());
        bad_len += usize::from(w2.len() - w.len() != w.to_samples(extension));
    }
    verdict(
        worst <= 0.010 && bad_len == 0,
        format!("100 prolongations, worst extension error {:.3} ms, {bad_len} length mismatches", worst * 1e3),
    )
}

fn p4_round_trip() -> Verdict {
    let mut rng = rng_from_seed(4);
    let mut broken = 0;
    for i in 0..1000 {
        let (u, _) = random_utterance(&mut rng, &format!("u{i:04}"), lex());
        let (text, labels) = serialize_annotated(&u);
        if parse_annotated(&u.id, u.level, &text, &labels).ok().as_ref() != Some(&u) {
            broken += 1;
        }
    }
    let gen = RuleGenerator::new(GenSpec::default(), lex());
    let (mut generated, mut invalid) = (0, 0);
    for (t, entry) in bundled_corpus().iter().enumerate() {
        for kind in DysfluencyKind::ALL {
            if let Ok(u) = gen.generate("u", &entry.text, kind, t as u64) {
                generated += 1;
                invalid += usize::from(!validate(&u, lex()).is_valid());
            }
        }
    }
    verdict(
        broken == 0 && invalid == 0 && generated > 0,
        format!("{broken}/1000 round-trip failures; {invalid}/{generated} rule outputs invalid"),
    )
}

fn p5_metrics_oracle() -> Verdict {
    let mut rng = rng_from_seed(5);
    let mut cost_mismatch = 0;
    let mut pairs = Vec::new();
    for _ in 0..500 {
        let r = random_tokens(&mut rng, 10);
        let h = random_tokens(&mut rng, 10);
        cost_mismatch += usize::from(align_tokens(&r, &h).1 != oracle_distance(&r, &h));
        if !r.is_empty() {
            pairs.push((r, h));
        }
    }
    let mut count_mismatch = 0;
    for batch in pairs.chunks(10) {
        let rep = detection_scores(batch, None).unwrap();
        let rc = recount(batch);
        let same_counts = rep.per_kind.len() == rc.counts.len()
            && rc.counts.iter().all(|(k, c)| {
                let s = &rep.per_kind[&k.short_name()];
                (s.tp, s.fp, s.fn_) == *c
            });
        let same_rates = rep.ter == rc.edits as f64 / rc.ref_tokens as f64
            && rep.accuracy == rc.correct as f64 / batch.len() as f64;
        count_mismatch += usize::from(!(same_counts && same_rates));
    }
    let mut identity_fail = 0;
    for batch in pairs.chunks(10) {
        let own: Vec<_> = batch.iter().map(|(r, _)| (r.clone(), r.clone())).collect();
        let rep = detection_scores(&own, None).unwrap();
        let ok = rep.ter == 0.0
            && rep.td == 0.0
            && rep.accuracy == 1.0
            && rep.weighted_f1 == 1.0
            && rep.per_kind.values().all(|s| s.f1 == 1.0)
            && own.iter().all(|(r, h)| ter(r, h) == Ok(0.0) && token_distance(r, h) == 0.0);
        identity_fail += usize::from(!ok);
    }
    verdict(
        cost_mismatch == 0 && count_mismatch == 0 && identity_fail == 0,
        format!(
            "{cost_mismatch}/500 cost mismatches, {count_mismatch} recount mismatches, {identity_fail} identity failures"
        ),
    )
}

fn p6_corpus_contract() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let config = |out: &Path| CorpusConfig {
        master_seed: 6,
        kinds: ["word_rep", "phn_pau", "phn_pro"]
            .iter()
            .map(|k| KindCount { kind: DysfluencyKind::from_short_name(k).unwrap(), count: 10 })
            .collect(),
        speakers: vec![0, 1, 2],
        fluent_ratio: 0.05,
        phoneme_word_pause_mix: 0.3,
        output_dir: out.to_path_buf(),
        ..Default::default()
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let summary = match build_corpus(&config(&a)).and_then(|s| build_corpus(&config(&b)).map(|_| s)) {
        Ok(s) => s,
        Err(e) => return verdict(false, format!("build failed: {e}")),
    };
    let records = read_manifest_file(&a.join(MANIFEST_FILE)).unwrap();
    let per_kind: Vec<usize> = ["word_rep", "phn_pau", "phn_pro"].iter().map(|k| summary.per_kind[*k]).collect();
    let dysfluent = records.iter().filter(|r| !r.is_fluent()).count();
    let fluent = records.iter().filter(|r| r.is_fluent()).count();
    let expected_fluent = (0.05 * dysfluent as f64).round() as usize;
    let pauses = |src| records.iter().filter(|r| r.kind == "phn_pau" && r.pause_source == Some(src)).count();
    let (phn, word) = (pauses(PauseSource::Phoneme), pauses(PauseSource::Word));
    let identical = std::fs::read(a.join(MANIFEST_FILE)).unwrap() == std::fs::read(b.join(MANIFEST_FILE)).unwrap();
    let ok = dysfluent == 90
        && per_kind == [30, 30, 30]
        && fluent == expected_fluent
        && phn * 7 == word * 3
        && identical;
    verdict(
        ok,
        format!(
            "{dysfluent} dysfluent records split {per_kind:?}, {fluent} fluent (expected {expected_fluent}), pause split {phn}:{word}, manifests {}",
            if identical { "identical" } else { "differ" }
        ),
    )
}

fn p7_repetition_targets() -> Verdict {
    let corpus = bundled_corpus();
    let kind = DysfluencyKind::from_short_name("word_rep").unwrap();
    let gen = RuleGenerator::new(GenSpec::default(), lex());
    let favoured = |w: &str| matches!(coarse_pos(w), WordClass::Pronoun | WordClass::Preposition);
    let (mut n, mut hits, mut baseline) = (0u64, 0u64, 0.0f64);
    for i in 0..500u64 {
        let entry = &corpus[i as usize % corpus.len()];
        let Ok(u) = gen.generate("p7", &entry.text, kind, derive_seed(7, &format!("p7/{i}"))) else {
            continue;
        };
        let target = &u.clean_tokens[u.labels[0].reference_span.range()];
        n += 1;
        hits += u64::from(target.iter().any(|w| favoured(w)));
        baseline += u.clean_tokens.iter().filter(|w| favoured(w)).count() as f64 / u.clean_tokens.len() as f64;
    }
    let p0 = baseline / n as f64;
    let p = binomial_upper_tail(n, hits, p0);
    verdict(
        n == 500 && p < 0.01,
        format!(
            "pronoun+preposition share {:.3} over {n} repetitions vs uniform baseline {p0:.3}, one-sided p = {p:.2e}",
            hits as f64 / n as f64
        ),
    )
}

/// Lets two clients replay one recorded fixture sequence.
struct Shared(Arc<FixtureTransport>);

impl ChatTransport for Shared {
    fn send(&self, request: &Value) -> Result<(u16, String), TextGenError> {
        self.0.send(request)
    }
}

fn p8_llm_fixtures() -> Verdict {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/llm");
    let transport = Arc::new(FixtureTransport::from_dir(&dir).unwrap());
    let kind = DysfluencyKind::from_short_name("word_rep").unwrap();
    let client = |max_retries| {
        let cfg = LlmBackendConfig { max_retries, ..Default::default() };
        LlmClient::new(cfg, Box::new(Shared(transport.clone())), lex()).unwrap()
    };

    // Malformed reply, then the valid one on the retry.
    let first = client(1).generate("llm-1", "the cat sat", kind, None);
    let first_ok = match &first {
        Ok(out) => {
            out.utterance.dysfluent_text() == "the the cat sat"
                && out.failed_attempts.len() == 1
                && out.failed_attempts[0].parse_failure
        }
        Err(_) => false,
    };
    // Semantically invalid reply with no retries left.
    let second = client(0).generate("llm-2", "the cat sat", kind, None);
    let second_ok = matches!(second, Err(TextGenError::ValidationExhausted { attempts: 1, .. }));
    let all_used = transport.remaining() == 0 && transport.requests().len() == 3;
    verdict(
        first_ok && second_ok && all_used,
        format!(
            "valid after parse-failure retry: {first_ok}; validation exhausted: {second_ok}; {} fixtures replayed",
            transport.requests().len()
        ),
    )
}

fn main() {
    let secs = Duration::from_secs;
    let results = [
        criterion("P1 duration ranges", Some(secs(1)), p1_duration_ranges),
        criterion("P2 pause injection oracle", Some(secs(30)), p2_pause_oracle),
        criterion("P3 prolongation oracle", Some(secs(30)), p3_prolong_oracle),
        criterion("P4 annotation round trip", Some(secs(10)), p4_round_trip),
        criterion("P5 metrics oracle equivalence", Some(secs(30)), p5_metrics_oracle),
        criterion("P6 corpus contract", Some(secs(120)), p6_corpus_contract),
        criterion("P7 repetition target classes", None, p7_repetition_targets),
        criterion("P8 LLM fixture robustness", None, p8_llm_fixtures),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
