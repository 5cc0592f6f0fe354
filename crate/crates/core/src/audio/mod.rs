//! Mono 16-bit PCM audio with phone alignments, plus the two waveform edits
//! (pause insertion, phone prolongation) and a silence detector.

mod edit;
mod silence;

use std::fs;
use std::io::{Read, Seek, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use edit::{insert_pause, prolong_phone, DEFAULT_FADE_MS};
pub use silence::{detect_silence, DEFAULT_FRAME_MS, DEFAULT_THRESHOLD_DB};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AudioError {
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt WAV header: {0}")]
    CorruptHeader(String),
    #[error("boundary {boundary_s:.4}s lies inside phone {phone} [{start_s:.4}, {end_s:.4})")]
    BoundaryInsidePhone { boundary_s: f64, phone: String, start_s: f64, end_s: f64 },
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("interval {index} lasts {duration_s:.4}s, at least 0.04s is needed")]
    SegmentTooShort { index: usize, duration_s: f64 },
    #[error("interval index {index} out of range for {len} intervals")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid alignment: {0}")]
    InvalidAlignment(String),
    #[error("invalid duration {0}")]
    InvalidDuration(f64),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for AudioError {
    fn from(e: std::io::Error) -> Self {
        AudioError::Io(e.to_string())
    }
}

impl From<hound::Error> for AudioError {
    fn from(e: hound::Error) -> Self {
        match e {
            hound::Error::IoError(e) => AudioError::Io(e.to_string()),
            hound::Error::Unsupported => AudioError::UnsupportedFormat("not PCM".into()),
            other => AudioError::CorruptHeader(other.to_string()),
        }
    }
}

/// Mono 16-bit PCM.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Waveform {
    pub samples: Vec<i16>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<i16>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::UnsupportedFormat("sample rate 0".into()));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn silence(duration_s: f64, sample_rate: u32) -> Result<Self, AudioError> {
        Waveform::new(vec![0; seconds_to_samples(duration_s, sample_rate)], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Largest absolute sample value.
    pub fn peak(&self) -> u16 {
        self.samples.iter().map(|s| s.unsigned_abs()).max().unwrap_or(0)
    }

    pub fn to_seconds(&self, samples: usize) -> f64 {
        samples as f64 / self.sample_rate as f64
    }

    pub fn to_samples(&self, seconds: f64) -> usize {
        seconds_to_samples(seconds, self.sample_rate)
    }
}

pub(crate) fn seconds_to_samples(seconds: f64, sample_rate: u32) -> usize {
    (seconds * sample_rate as f64).round().max(0.0) as usize
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform, AudioError> {
    let file = fs::File::open(path)?;
    read_wav_from(std::io::BufReader::new(file))
}

/// Reads a WAV stream. Read failures inside the stream (truncation, bad
/// chunk sizes) are reported as `CorruptHeader`.
pub fn read_wav_from(reader: impl Read) -> Result<Waveform, AudioError> {
    let corrupt = |e: hound::Error| match e {
        hound::Error::IoError(e) => AudioError::CorruptHeader(e.to_string()),
        other => AudioError::from(other),
    };
    let reader = hound::WavReader::new(reader).map_err(corrupt)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(AudioError::UnsupportedFormat(format!("{} channels, mono required", spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(AudioError::UnsupportedFormat(format!(
            "{:?} {}-bit, 16-bit PCM required",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let samples = reader.into_samples::<i16>().collect::<Result<Vec<_>, _>>().map_err(corrupt)?;
    Waveform::new(samples, spec.sample_rate)
}

pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<(), AudioError> {
    let file = fs::File::create(path)?;
    write_wav_to(std::io::BufWriter::new(file), w)
}

pub fn write_wav_to(writer: impl Write + Seek, w: &Waveform) -> Result<(), AudioError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut out = hound::WavWriter::new(writer, spec)?;
    let mut pcm = out.get_i16_writer(w.samples.len() as u32);
    for &s in &w.samples {
        pcm.write_sample(s);
    }
    pcm.flush()?;
    out.finalize()?;
    Ok(())
}

/// One aligned phone. Serialized as `{"phone", "word", "start", "end"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhoneInterval {
    pub phone: String,
    #[serde(rename = "word")]
    pub word_index: usize,
    #[serde(rename = "start")]
    pub start_s: f64,
    #[serde(rename = "end")]
    pub end_s: f64,
}

impl PhoneInterval {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Alignment {
    pub intervals: Vec<PhoneInterval>,
}

/// Slack for comparing alignment times with sample-quantized positions.
pub(crate) const TIME_EPS: f64 = 1e-6;

impl Alignment {
    pub fn new(intervals: Vec<PhoneInterval>) -> Self {
        Alignment { intervals }
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Checks ordering, positivity and that every time lies within `duration_s`.
    pub fn check(&self, duration_s: f64) -> Result<(), AudioError> {
        let mut prev_end = 0.0f64;
        for (i, iv) in self.intervals.iter().enumerate() {
            let bad = |why: &str| AudioError::InvalidAlignment(format!("interval {i} ({}): {why}", iv.phone));
            if !(iv.start_s.is_finite() && iv.end_s.is_finite()) {
                return Err(bad("non-finite time"));
            }
            if iv.start_s >= iv.end_s {
                return Err(bad("start not before end"));
            }
            if iv.start_s < prev_end - TIME_EPS {
                return Err(bad("overlaps the previous interval"));
            }
            if iv.start_s < -TIME_EPS || iv.end_s > duration_s + TIME_EPS {
                return Err(bad("outside the waveform"));
            }
            prev_end = iv.end_s;
        }
        Ok(())
    }

    /// Times where one word ends and the next begins (start of the next word).
    pub fn word_boundaries(&self) -> Vec<f64> {
        self.intervals
            .windows(2)
            .filter(|w| w[0].word_index != w[1].word_index)
            .map(|w| w[1].start_s)
            .collect()
    }

    /// Times between two consecutive phones of the same word.
    pub fn within_word_boundaries(&self) -> Vec<f64> {
        self.intervals
            .windows(2)
            .filter(|w| w[0].word_index == w[1].word_index)
            .map(|w| w[1].start_s)
            .collect()
    }

    pub fn from_json(text: &str) -> Result<Self, AudioError> {
        serde_json::from_str(text).map_err(|e| AudioError::InvalidAlignment(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("alignment serializes")
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, AudioError> {
        Alignment::from_json(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), AudioError> {
        fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }
}

/// Which duration range to draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationContext {
    PauseWord,
    PausePhoneme,
    Prolong,
}

/// Closed ranges, in seconds, that injected durations are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationRanges {
    pub pause_word: [f64; 2],
    pub pause_phoneme: [f64; 2],
    pub prolong: [f64; 2],
}

impl Default for DurationRanges {
    fn default() -> Self {
        DurationRanges { pause_word: [0.8, 3.5], pause_phoneme: [0.3, 1.5], prolong: [0.17, 0.8] }
    }
}

impl DurationRanges {
    pub fn range(&self, ctx: DurationContext) -> [f64; 2] {
        match ctx {
            DurationContext::PauseWord => self.pause_word,
            DurationContext::PausePhoneme => self.pause_phoneme,
            DurationContext::Prolong => self.prolong,
        }
    }

    pub fn check(&self) -> Result<(), AudioError> {
        for r in [self.pause_word, self.pause_phoneme, self.prolong] {
            if !(r[0].is_finite() && r[1].is_finite() && 0.0 < r[0] && r[0] < r[1]) {
                return Err(AudioError::OutOfRange(format!("duration range [{}, {}]", r[0], r[1])));
            }
        }
        Ok(())
    }

    /// Uniform draw from the range for `ctx`.
    pub fn sample(&self, ctx: DurationContext, rng: &mut impl Rng) -> f64 {
        let [lo, hi] = self.range(ctx);
        rng.gen_range(lo..=hi)
    }
}

/// Uniform draw from the default range for `ctx`.
pub fn sample_duration(ctx: DurationContext, rng: &mut impl Rng) -> f64 {
    DurationRanges::default().sample(ctx, rng)
}
