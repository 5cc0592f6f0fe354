//! A deterministic tone synthesizer with exact alignments, and the file
//! contract shared with external TTS adapters.

mod adapter;

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{tokenize_words, Level};
use crate::audio::{seconds_to_samples, Alignment, AudioError, PhoneInterval, Waveform};
use crate::lexicon::{Lexicon, LexiconError, PhoneToken};

pub use adapter::{
    read_requests, run_adapter, run_mock_adapter, AdapterFailure, AdapterReport, ExternalAdapter, ERROR_REPORT_FILE,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("unknown phone {0:?}")]
    UnknownPhone(String),
    #[error("invalid voice: {0}")]
    InvalidVoice(String),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("adapter failure: {0}")]
    AdapterFailure(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for SynthError {
    fn from(e: std::io::Error) -> Self {
        SynthError::Io(e.to_string())
    }
}

const EDGE_FADE_S: f64 = 0.005;

/// Parameters of the tone voice for one speaker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MockVoice {
    pub speaker_id: u32,
    pub base_freq_hz: f64,
    pub vowel_ms: f64,
    pub consonant_ms: f64,
    pub sample_rate: u32,
    /// Peak amplitude as a fraction of full scale.
    pub amplitude: f64,
}

impl MockVoice {
    pub fn for_speaker(speaker_id: u32) -> Self {
        MockVoice {
            speaker_id,
            base_freq_hz: 110.0 + 7.0 * speaker_id as f64,
            vowel_ms: 120.0,
            consonant_ms: 80.0,
            sample_rate: 16000,
            amplitude: 0.5,
        }
    }

    pub fn check(&self, inventory_len: usize) -> Result<(), SynthError> {
        let top = self.frequency(inventory_len.saturating_sub(1));
        let nyquist = self.sample_rate as f64 / 2.0;
        if self.sample_rate == 0 || !(self.base_freq_hz > 0.0 && top < nyquist) {
            return Err(SynthError::InvalidVoice(format!(
                "tones up to {top:.1} Hz do not fit below the Nyquist frequency {nyquist} Hz"
            )));
        }
        if !(self.vowel_ms > 0.0 && self.consonant_ms > 0.0) {
            return Err(SynthError::InvalidVoice("phone durations must be positive".into()));
        }
        if !(self.amplitude > 0.0 && self.amplitude <= 1.0) {
            return Err(SynthError::InvalidVoice(format!("amplitude {} outside (0, 1]", self.amplitude)));
        }
        Ok(())
    }

    /// Tone frequency of the phone at `inventory_index`.
    pub fn frequency(&self, inventory_index: usize) -> f64 {
        self.base_freq_hz * (1.0 + inventory_index as f64 / 64.0)
    }
}

/// Renders each phone as a fixed-frequency tone with 5 ms edge fades.
///
/// Vowels last `vowel_ms`, every other phone `consonant_ms`; intervals sit
/// exactly on the rendered segment boundaries.
pub fn mock_synthesize(
    phones: &[PhoneToken],
    voice: &MockVoice,
    lex: &Lexicon,
) -> Result<(Waveform, Alignment), SynthError> {
    voice.check(lex.inventory_len())?;
    let sr = voice.sample_rate;
    let fade = seconds_to_samples(EDGE_FADE_S, sr);
    let amp = voice.amplitude * i16::MAX as f64;
    let mut samples = Vec::new();
    let mut intervals = Vec::with_capacity(phones.len());
    for p in phones {
        let index = lex.inventory_index(&p.phone).map_err(|_| SynthError::UnknownPhone(p.phone.clone()))?;
        let ms = if lex.features(&p.phone)?.is_vowel { voice.vowel_ms } else { voice.consonant_ms };
        let n = seconds_to_samples(ms / 1000.0, sr);
        let omega = 2.0 * PI * voice.frequency(index) / sr as f64;
        let f = fade.min(n / 2);
        let start = samples.len();
        samples.extend((0..n).map(|i| {
            let edge = i.min(n - 1 - i);
            let g = if edge < f { 0.5 * (1.0 - (PI * (edge as f64 + 0.5) / f as f64).cos()) } else { 1.0 };
            (amp * g * (omega * i as f64).sin()).round() as i16
        }));
        intervals.push(PhoneInterval {
            phone: p.phone.clone(),
            word_index: p.word,
            start_s: start as f64 / sr as f64,
            end_s: samples.len() as f64 / sr as f64,
        });
    }
    Ok((Waveform::new(samples, sr)?, Alignment::new(intervals)))
}

/// One line of adapter input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRequest {
    pub id: String,
    /// Words for word level; space-separated phones for phoneme level, with
    /// optional `|` tokens between words.
    pub text_or_phones: String,
    pub level: Level,
    pub speaker: u32,
}

impl SynthRequest {
    /// The phones to speak, tagged with word indices.
    pub fn phones(&self, lex: &Lexicon) -> Result<Vec<PhoneToken>, SynthError> {
        match self.level {
            Level::Word => Ok(lex.phonemize(&tokenize_words(&self.text_or_phones))?),
            Level::Phoneme => parse_phone_text(&self.text_or_phones, lex),
        }
    }
}

/// Parses `DH AH | K AE T`; stress digits are stripped.
pub fn parse_phone_text(text: &str, lex: &Lexicon) -> Result<Vec<PhoneToken>, SynthError> {
    let mut out = Vec::new();
    let mut word = 0;
    for tok in text.split_whitespace() {
        if tok == "|" {
            if !out.is_empty() {
                word += 1;
            }
            continue;
        }
        let phone = tok.trim_end_matches(['0', '1', '2']);
        if !lex.has_phone(phone) {
            return Err(SynthError::UnknownPhone(tok.to_string()));
        }
        out.push(PhoneToken { phone: phone.to_string(), word });
    }
    Ok(out)
}

/// Formats phones as adapter text, with `|` between words.
pub fn phone_text(phones: &[PhoneToken]) -> String {
    let mut out = String::new();
    for (i, p) in phones.iter().enumerate() {
        if i > 0 {
            out.push_str(if phones[i - 1].word != p.word { " | " } else { " " });
        }
        out.push_str(&p.phone);
    }
    out
}

pub type SynthResult = Result<(Waveform, Alignment), String>;

/// Turns a batch of requests into audio, one result per request, in order.
///
/// Per-request failures are reported inline; an `Err` means the whole batch
/// could not be run.
pub trait Synthesizer: Sync {
    fn synthesize_batch(&self, requests: &[SynthRequest]) -> Result<Vec<SynthResult>, SynthError>;
}

/// In-process synthesis with [`mock_synthesize`].
#[derive(Debug, Clone)]
pub struct MockSynthesizer<'a> {
    pub lexicon: &'a Lexicon,
}

impl<'a> MockSynthesizer<'a> {
    pub fn new(lexicon: &'a Lexicon) -> Self {
        MockSynthesizer { lexicon }
    }

    pub fn synthesize(&self, req: &SynthRequest) -> Result<(Waveform, Alignment), SynthError> {
        let phones = req.phones(self.lexicon)?;
        mock_synthesize(&phones, &MockVoice::for_speaker(req.speaker), self.lexicon)
    }
}

impl Synthesizer for MockSynthesizer<'_> {
    fn synthesize_batch(&self, requests: &[SynthRequest]) -> Result<Vec<SynthResult>, SynthError> {
        Ok(requests.par_iter().map(|r| self.synthesize(r).map_err(|e| e.to_string())).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tokens(phones: &[&str]) -> Vec<PhoneToken> {
        phones.iter().map(|p| PhoneToken { phone: p.to_string(), word: 0 }).collect()
    }

    #[test]
    fn empty_input() {
        let (w, a) = mock_synthesize(&[], &MockVoice::for_speaker(0), Lexicon::bundled()).unwrap();
        assert!(w.is_empty());
        assert!(a.is_empty());
    }

    #[test]
    fn single_vowel() {
        let (w, a) = mock_synthesize(&tokens(&["AA"]), &MockVoice::for_speaker(0), Lexicon::bundled()).unwrap();
        assert_eq!(w.len(), 1920);
        assert_eq!(a.intervals[0].start_s, 0.0);
        assert!((a.intervals[0].end_s - 0.120).abs() < 1e-12);
    }

    #[test]
    fn alignment_covers_waveform() {
        let lex = Lexicon::bundled();
        let phones = lex.phonemize(&["the", "cat", "sat"]).unwrap();
        let (w, a) = mock_synthesize(&phones, &MockVoice::for_speaker(3), lex).unwrap();
        assert!(a.check(w.duration_s()).is_ok());
        assert_eq!(a.intervals.last().unwrap().end_s, w.duration_s());
        for pair in a.intervals.windows(2) {
            assert_eq!(pair[0].end_s, pair[1].start_s);
        }
        // 3 vowels, 5 consonants.
        assert_eq!(w.len(), 3 * 1920 + 5 * 1280);
        let again = mock_synthesize(&phones, &MockVoice::for_speaker(3), lex).unwrap();
        assert_eq!(again, (w, a));
    }

    #[test]
    fn unknown_phone() {
        let r = mock_synthesize(&tokens(&["QX"]), &MockVoice::for_speaker(0), Lexicon::bundled());
        assert_eq!(r.unwrap_err(), SynthError::UnknownPhone("QX".into()));
    }

    #[test]
    fn voices_stay_below_nyquist() {
        let lex = Lexicon::bundled();
        assert!(MockVoice::for_speaker(108).check(lex.inventory_len()).is_ok());
        let mut v = MockVoice::for_speaker(0);
        v.sample_rate = 300;
        assert!(v.check(lex.inventory_len()).is_err());
    }

    #[test]
    fn phone_text_round_trip() {
        let lex = Lexicon::bundled();
        let phones = lex.phonemize(&["the", "cat"]).unwrap();
        let text = phone_text(&phones);
        assert_eq!(text, "DH AH | K AE T");
        assert_eq!(parse_phone_text(&text, lex).unwrap(), phones);
        assert_eq!(parse_phone_text("K AE1 T", lex).unwrap()[1].phone, "AE");
    }
}
