//! Token-level evaluation of dysfluency transcripts: edit alignment, token
//! error rate, token distance and clip-level detection scores.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{is_marker, AnnotatedUtterance, DysfluencyKind, DysfluencyLabel};
use crate::edit::{self, EditOp};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("reference sequence is empty")]
    EmptyReference,
    #[error("no clips to score")]
    EmptyInput,
    #[error("bad frequency vector: {0}")]
    BadFrequencyVector(String),
    #[error("invalid dysfluency token {0:?}")]
    InvalidToken(String),
    #[error("line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("id {0:?} has no counterpart in the other file")]
    UnpairedId(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for MetricsError {
    fn from(e: std::io::Error) -> Self {
        MetricsError::Io(e.to_string())
    }
}

/// A transcript token: plain text, or a dysfluency written `<kind_short>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Token {
    Text(String),
    Dysfluency(DysfluencyKind),
}

impl Token {
    pub fn text(s: impl Into<String>) -> Self {
        Token::Text(s.into())
    }

    pub fn kind(&self) -> Option<DysfluencyKind> {
        match self {
            Token::Dysfluency(k) => Some(*k),
            Token::Text(_) => None,
        }
    }
}

impl FromStr for Token {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.strip_prefix('<').and_then(|r| r.strip_suffix('>')) {
            Some(inner) => DysfluencyKind::from_short_name(inner)
                .map(Token::Dysfluency)
                .ok_or_else(|| MetricsError::InvalidToken(s.to_string())),
            None => Ok(Token::Text(s.to_string())),
        }
    }
}

impl TryFrom<String> for Token {
    type Error = MetricsError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Token> for String {
    fn from(t: Token) -> Self {
        t.to_string()
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Text(s) => f.write_str(s),
            Token::Dysfluency(k) => write!(f, "<{}>", k.short_name()),
        }
    }
}

pub type TokenSeq = Vec<Token>;

/// Parses whitespace-separated tokens.
pub fn parse_tokens(text: &str) -> Result<TokenSeq, MetricsError> {
    text.split_whitespace().map(str::parse).collect()
}

/// The target transcript of an annotated utterance: its dysfluent tokens
/// with markers dropped and a dysfluency token placed at the start of every
/// labelled block.
pub fn tokens_from_annotated(u: &AnnotatedUtterance) -> TokenSeq {
    let mut labels: Vec<&DysfluencyLabel> = u.labels.iter().collect();
    labels.sort_by_key(|l| (l.dysfluent_span.start, l.dysfluent_span.end));
    let mut out = Vec::with_capacity(u.dysfluent_tokens.len() + labels.len());
    let mut next = labels.iter().peekable();
    for (i, tok) in u.dysfluent_tokens.iter().enumerate() {
        while let Some(l) = next.next_if(|l| l.dysfluent_span.start <= i) {
            out.push(Token::Dysfluency(l.kind));
        }
        if !is_marker(tok) {
            out.push(Token::Text(tok.clone()));
        }
    }
    out.extend(next.map(|l| Token::Dysfluency(l.kind)));
    out
}

/// Minimum-cost unit edit script from `reference` to `hypothesis`.
pub fn align_tokens(reference: &[Token], hypothesis: &[Token]) -> (Vec<EditOp>, usize) {
    edit::align(reference, hypothesis)
}

/// Substitutions, deletions and insertions over the reference length.
pub fn ter(reference: &[Token], hypothesis: &[Token]) -> Result<f64, MetricsError> {
    if reference.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    Ok(edit::distance(reference, hypothesis) as f64 / reference.len() as f64)
}

/// Greedy one-to-one matching of same-kind dysfluency tokens by index
/// distance; returns the `(ref_index, hyp_index)` pairs.
///
/// All same-kind candidate pairs are ranked by distance, then by reference
/// index, then by hypothesis index, so among equidistant options the
/// leftmost wins.
pub fn match_dysfluencies(reference: &[Token], hypothesis: &[Token]) -> Vec<(usize, usize)> {
    let mut candidates = Vec::new();
    for (i, r) in reference.iter().enumerate() {
        let Some(k) = r.kind() else { continue };
        for (j, h) in hypothesis.iter().enumerate() {
            if h.kind() == Some(k) {
                candidates.push((i.abs_diff(j), i, j));
            }
        }
    }
    candidates.sort_unstable();
    let mut used_r = BTreeSet::new();
    let mut used_h = BTreeSet::new();
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !used_r.contains(&i) && !used_h.contains(&j) {
            used_r.insert(i);
            used_h.insert(j);
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Mean index displacement over matched dysfluency tokens; 0 with no matches.
pub fn token_distance(reference: &[Token], hypothesis: &[Token]) -> f64 {
    let pairs = match_dysfluencies(reference, hypothesis);
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().map(|&(i, j)| i.abs_diff(j) as f64).sum::<f64>() / pairs.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KindScores {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl KindScores {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        KindScores { tp, fp, fn_, precision, recall, f1 }
    }

    /// Clips whose reference contains the kind.
    pub fn support(&self) -> usize {
        self.tp + self.fn_
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub clips: usize,
    /// Total edits over total reference tokens; can exceed 1.
    pub ter: f64,
    /// Mean displacement over all matched dysfluency tokens.
    pub td: f64,
    pub td_matches: usize,
    pub per_kind: BTreeMap<String, KindScores>,
    pub accuracy: f64,
    pub weighted_f1: f64,
}

fn kind_set(tokens: &[Token]) -> BTreeSet<DysfluencyKind> {
    tokens.iter().filter_map(Token::kind).collect()
}

struct ClipStats {
    edits: usize,
    ref_len: usize,
    td_sum: usize,
    td_n: usize,
    ref_kinds: BTreeSet<DysfluencyKind>,
    hyp_kinds: BTreeSet<DysfluencyKind>,
}

/// Scores a set of `(reference, hypothesis)` clips.
///
/// Per kind, a clip is a true positive when the kind occurs in both, a false
/// positive when only in the hypothesis and a false negative when only in
/// the reference. A clip is classified correctly when both sides carry the
/// same set of kinds (empty for fluent clips). The weighted F1 uses
/// `kind_frequencies` when given (normalized), else the reference support of
/// each kind; with no support at all it is 1 when nothing was predicted and
/// 0 otherwise.
pub fn detection_scores(
    pairs: &[(TokenSeq, TokenSeq)],
    kind_frequencies: Option<&BTreeMap<DysfluencyKind, f64>>,
) -> Result<EvalReport, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if let Some(freq) = kind_frequencies {
        if freq.values().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(MetricsError::BadFrequencyVector("negative or non-finite frequency".into()));
        }
        if freq.values().sum::<f64>() <= 0.0 {
            return Err(MetricsError::BadFrequencyVector("frequencies sum to zero".into()));
        }
    }
    let stats: Vec<ClipStats> = pairs
        .par_iter()
        .map(|(r, h)| {
            let pairs = match_dysfluencies(r, h);
            ClipStats {
                edits: edit::distance(r, h),
                ref_len: r.len(),
                td_sum: pairs.iter().map(|&(i, j)| i.abs_diff(j)).sum(),
                td_n: pairs.len(),
                ref_kinds: kind_set(r),
                hyp_kinds: kind_set(h),
            }
        })
        .collect();

    let mut counts: BTreeMap<DysfluencyKind, (usize, usize, usize)> = BTreeMap::new();
    let (mut edits, mut ref_len, mut td_sum, mut td_n, mut correct) = (0, 0, 0, 0, 0);
    for s in &stats {
        edits += s.edits;
        ref_len += s.ref_len;
        td_sum += s.td_sum;
        td_n += s.td_n;
        correct += usize::from(s.ref_kinds == s.hyp_kinds);
        for k in s.ref_kinds.union(&s.hyp_kinds) {
            let c = counts.entry(*k).or_default();
            match (s.ref_kinds.contains(k), s.hyp_kinds.contains(k)) {
                (true, true) => c.0 += 1,
                (false, true) => c.1 += 1,
                _ => c.2 += 1,
            }
        }
    }
    let scores: BTreeMap<DysfluencyKind, KindScores> =
        counts.into_iter().map(|(k, (tp, fp, fn_))| (k, KindScores::from_counts(tp, fp, fn_))).collect();

    let weights: Vec<(DysfluencyKind, f64)> = match kind_frequencies {
        Some(freq) => freq.iter().map(|(k, f)| (*k, *f)).collect(),
        None => scores.iter().map(|(k, s)| (*k, s.support() as f64)).collect(),
    };
    let total: f64 = weights.iter().map(|w| w.1).sum();
    let weighted_f1 = if total > 0.0 {
        weights.iter().map(|(k, w)| w * scores.get(k).map_or(0.0, |s| s.f1)).sum::<f64>() / total
    } else if scores.values().all(|s| s.fp == 0) {
        1.0
    } else {
        0.0
    };

    Ok(EvalReport {
        clips: pairs.len(),
        ter: if ref_len == 0 { 0.0 } else { edits as f64 / ref_len as f64 },
        td: if td_n == 0 { 0.0 } else { td_sum as f64 / td_n as f64 },
        td_matches: td_n,
        per_kind: scores.into_iter().map(|(k, s)| (k.short_name(), s)).collect(),
        accuracy: correct as f64 / pairs.len() as f64,
        weighted_f1,
    })
}

/// Plain-text rendering of a report with aligned columns.
pub fn format_report(r: &EvalReport) -> String {
    let mut out = format!(
        "clips {}\nTER   {:.4}\nTD    {:.4} ({} matched)\nacc   {:.4}\nwF1   {:.4}\n\n",
        r.clips, r.ter, r.td, r.td_matches, r.accuracy, r.weighted_f1
    );
    out.push_str(&format!(
        "{:<8} {:>5} {:>5} {:>5} {:>9} {:>9} {:>9}\n",
        "kind", "tp", "fp", "fn", "precision", "recall", "f1"
    ));
    for (k, s) in &r.per_kind {
        out.push_str(&format!(
            "{:<8} {:>5} {:>5} {:>5} {:>9.4} {:>9.4} {:>9.4}\n",
            k, s.tp, s.fp, s.fn_, s.precision, s.recall, s.f1
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub id: String,
    pub tokens: TokenSeq,
}

/// Reads `{id, tokens}` JSONL; duplicate ids are rejected.
pub fn read_token_records(reader: impl BufRead) -> Result<Vec<TokenRecord>, MetricsError> {
    let mut out: Vec<TokenRecord> = Vec::new();
    let mut seen = BTreeSet::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TokenRecord = serde_json::from_str(&line)
            .map_err(|e| MetricsError::Format { line: n + 1, reason: e.to_string() })?;
        if !seen.insert(rec.id.clone()) {
            return Err(MetricsError::Format { line: n + 1, reason: format!("duplicate id {:?}", rec.id) });
        }
        out.push(rec);
    }
    Ok(out)
}

/// Joins reference and hypothesis records on id, in reference order.
pub fn pair_records(
    reference: Vec<TokenRecord>,
    hypothesis: Vec<TokenRecord>,
) -> Result<Vec<(String, TokenSeq, TokenSeq)>, MetricsError> {
    let mut hyp: HashMap<String, TokenSeq> = hypothesis.into_iter().map(|r| (r.id, r.tokens)).collect();
    let mut out = Vec::with_capacity(reference.len());
    for r in reference {
        let h = hyp.remove(&r.id).ok_or_else(|| MetricsError::UnpairedId(r.id.clone()))?;
        out.push((r.id, r.tokens, h));
    }
    if let Some(id) = hyp.into_keys().min() {
        return Err(MetricsError::UnpairedId(id));
    }
    Ok(out)
}
