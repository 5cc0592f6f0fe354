//! Synthesis of annotated dysfluent-speech corpora and token-level evaluation
//! of dysfluency detectors.
//!
//! The crate is organised along the pipeline:
//!
//! * [`annotation`]: dysfluency taxonomy, inline markers, sidecar labels.
//! * [`lexicon`]: CMUdict-style pronouncing lexicon with IPA and articulatory features.
//! * [`textgen`]: rule-based and LLM-backed dysfluent text generation.
//! * [`audio`]: WAV I/O, pause insertion, phone prolongation, silence detection.
//! * [`synth`]: deterministic mock synthesizer and the external TTS adapter contract.
//! * [`corpus`]: manifest-driven corpus builds and corpus statistics.
//! * [`metrics`]: TER, token distance and per-kind detection scores.

pub mod annotation;
pub mod audio;
pub mod corpus;
pub mod edit;
pub mod lexicon;
pub mod metrics;
pub mod seed;
pub mod synth;
pub mod textgen;

pub use annotation::{AnnotatedUtterance, Category, DysfluencyKind, DysfluencyLabel, Level, Span};
pub use audio::{Alignment, PhoneInterval, Waveform};
pub use lexicon::Lexicon;
