use std::fmt;

use serde::Serialize;

use super::{
    is_marker, looks_like_marker, AnnotatedUtterance, Category, DysfluencyLabel, Level,
    PAUSE_MARKER, PROLONG_MARKER,
};
use crate::lexicon::Lexicon;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    MalformedToken,
    LevelMismatch,
    SpanOutOfBounds,
    MarkerMismatch,
    BadShape,
    PayloadMismatch,
    Overlap,
    Reconstruction,
    IdenticalSubstitution,
    UnknownPhone,
    NotProlongable,
    BadRequest,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub kind: FindingKind,
    /// Index into `labels`, when the finding is about one label.
    pub label: Option<usize>,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.label {
            Some(i) => write!(f, "label {i}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has(&self, kind: FindingKind) -> bool {
        self.findings.iter().any(|f| f.kind == kind)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.findings.iter().map(|x| x.to_string()).collect();
        f.write_str(&parts.join("; "))
    }
}

struct Findings(Vec<Finding>);

impl Findings {
    fn push(&mut self, kind: FindingKind, label: Option<usize>, message: impl Into<String>) {
        self.0.push(Finding { kind, label, message: message.into() });
    }
}

/// Checks every lexicon-independent invariant of an utterance.
pub fn check_structure(u: &AnnotatedUtterance) -> Vec<Finding> {
    let mut out = Findings(Vec::new());
    let d = &u.dysfluent_tokens;
    let c = &u.clean_tokens;

    for (side, tokens) in [("clean", c), ("dysfluent", d)] {
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                out.push(FindingKind::MalformedToken, None, format!("{side} token {i} is empty or has whitespace"));
            } else if side == "clean" && looks_like_marker(t) {
                out.push(FindingKind::MalformedToken, None, format!("clean token {i} {t:?} is a marker"));
            } else if looks_like_marker(t) && !is_marker(t) {
                out.push(FindingKind::MalformedToken, None, format!("unknown marker {t:?} at {i}"));
            }
        }
    }

    let mut shaped = true;
    for (i, label) in u.labels.iter().enumerate() {
        if !check_label(u, i, label, &mut out) {
            shaped = false;
        }
    }

    for (marker, category) in [(PAUSE_MARKER, Category::Pause), (PROLONG_MARKER, Category::Prolongation)] {
        let markers = d.iter().filter(|t| *t == marker).count();
        let labels = u.labels.iter().filter(|l| l.kind.category() == category).count();
        if markers != labels {
            out.push(
                FindingKind::MarkerMismatch,
                None,
                format!("{markers} {marker} markers but {labels} {category} labels"),
            );
        }
    }

    if shaped {
        check_blocks(u, &mut out);
    }

    let has = |cat| u.labels.iter().any(|l| l.kind.category() == cat);
    for (value, cat, name) in [
        (u.pause_request_s, Category::Pause, "pause"),
        (u.prolong_request_s, Category::Prolongation, "prolong"),
    ] {
        if let Some(v) = value {
            if !v.is_finite() || v <= 0.0 {
                out.push(FindingKind::BadRequest, None, format!("{name} request {v} is not a positive duration"));
            } else if !has(cat) {
                out.push(FindingKind::BadRequest, None, format!("{name} request without a {cat} label"));
            }
        }
    }
    out.0
}

/// Shape checks for one label; returns false when block checks cannot run.
fn check_label(u: &AnnotatedUtterance, i: usize, label: &DysfluencyLabel, out: &mut Findings) -> bool {
    let d = &u.dysfluent_tokens;
    let c = &u.clean_tokens;
    let ds = label.dysfluent_span;
    let rs = label.reference_span;
    let at = Some(i);

    if label.kind.level() != u.level {
        out.push(FindingKind::LevelMismatch, at, format!("{} label on a {} utterance", label.kind, u.level));
    }
    if ds.end > d.len() {
        out.push(FindingKind::SpanOutOfBounds, at, format!("dysfluent span {ds} beyond {} tokens", d.len()));
        return false;
    }
    if rs.end > c.len() {
        out.push(FindingKind::SpanOutOfBounds, at, format!("reference span {rs} beyond {} tokens", c.len()));
        return false;
    }

    let dtoks = &d[ds.range()];
    let rtoks = &c[rs.range()];
    let no_markers = |out: &mut Findings| {
        if dtoks.iter().any(|t| is_marker(t)) {
            out.push(FindingKind::BadShape, at, "marker inside a literal-token block");
            false
        } else {
            true
        }
    };

    let shape_ok = match label.kind.category() {
        Category::Pause => {
            let ok = ds.len() == 1 && dtoks[0] == PAUSE_MARKER && rs.is_empty();
            if !ok {
                out.push(FindingKind::BadShape, at, "pause must cover one <pause> marker with an empty reference span");
            }
            ok
        }
        Category::Prolongation => {
            let ok = ds.len() == 2
                && rs.len() == 1
                && dtoks[1] == PROLONG_MARKER
                && !is_marker(&dtoks[0])
                && dtoks[0] == rtoks[0];
            if !ok {
                out.push(FindingKind::BadShape, at, "prolongation must cover a phone followed by <prolong>, matching one reference phone");
            }
            ok
        }
        Category::Insertion => {
            let ok = !ds.is_empty() && rs.is_empty();
            if !ok {
                out.push(FindingKind::BadShape, at, "insertion needs a nonempty dysfluent span and an empty reference span");
            }
            ok && no_markers(out)
        }
        Category::Deletion => {
            let ok = ds.is_empty() && !rs.is_empty();
            if !ok {
                out.push(FindingKind::BadShape, at, "deletion needs an empty dysfluent span and a nonempty reference span");
            }
            ok
        }
        Category::Substitution => {
            let ok = !ds.is_empty() && !rs.is_empty();
            if !ok {
                out.push(FindingKind::BadShape, at, "substitution needs both spans nonempty");
                false
            } else if dtoks == rtoks {
                out.push(FindingKind::IdenticalSubstitution, at, "substitution identical to original");
                no_markers(out)
            } else {
                no_markers(out)
            }
        }
        Category::Repetition => {
            let k = rs.len();
            let ok = k > 0
                && ds.len().is_multiple_of(k)
                && ds.len() / k >= 2
                && dtoks.chunks(k).all(|chunk| chunk == rtoks);
            if !ok {
                out.push(FindingKind::BadShape, at, "repetition span must hold at least two copies of the reference unit");
            }
            ok && no_markers(out)
        }
    };

    let expected = match label.kind.category() {
        Category::Insertion | Category::Substitution => Some(dtoks.join(" ")),
        Category::Deletion => Some(rtoks.join(" ")),
        _ => None,
    };
    if let Some(payload) = &label.payload {
        if expected.as_deref() != Some(payload.as_str()) {
            out.push(FindingKind::PayloadMismatch, at, format!("payload {payload:?} does not match the labelled tokens"));
        }
    }
    shape_ok
}

/// Blocks must be disjoint, ordered identically on both sides, and the tokens
/// between blocks must agree; together this reconstructs the clean tokens.
fn check_blocks(u: &AnnotatedUtterance, out: &mut Findings) {
    let d = &u.dysfluent_tokens;
    let c = &u.clean_tokens;
    let mut order: Vec<usize> = (0..u.labels.len()).collect();
    order.sort_by_key(|&i| u.labels[i].sort_key());

    let (mut d_end, mut c_end) = (0usize, 0usize);
    for &i in &order {
        let label = &u.labels[i];
        let ds = label.dysfluent_span;
        let rs = label.reference_span;
        if ds.start < d_end || rs.start < c_end {
            out.push(FindingKind::Overlap, Some(i), "label overlaps a previous label");
            return;
        }
        if ds.start - d_end != rs.start - c_end || d[d_end..ds.start] != c[c_end..rs.start] {
            out.push(
                FindingKind::Reconstruction,
                Some(i),
                "tokens before this label do not match the clean tokens",
            );
            return;
        }
        d_end = ds.end;
        c_end = rs.end;
    }
    if d.len() - d_end != c.len() - c_end || d[d_end..] != c[c_end..] {
        out.push(
            FindingKind::Reconstruction,
            None,
            "unlabelled dysfluent tokens do not reconstruct the clean tokens",
        );
    }
}

/// Full validation: structural invariants plus lexicon-backed phonetic checks.
pub fn validate(u: &AnnotatedUtterance, lex: &Lexicon) -> ValidationReport {
    let mut out = Findings(check_structure(u));
    if u.level == Level::Phoneme {
        for (i, label) in u.labels.iter().enumerate() {
            let ds = label.dysfluent_span;
            let rs = label.reference_span;
            if ds.end > u.dysfluent_tokens.len() || rs.end > u.clean_tokens.len() {
                continue;
            }
            match label.kind.category() {
                Category::Substitution => {
                    for phone in &u.dysfluent_tokens[ds.range()] {
                        if !lex.has_phone(phone) {
                            out.push(FindingKind::UnknownPhone, Some(i), format!("{phone} not in phone inventory"));
                        }
                    }
                }
                Category::Prolongation => {
                    let phone = &u.dysfluent_tokens[ds.start];
                    match lex.is_prolongable(phone) {
                        Ok(true) => {}
                        Ok(false) => out.push(FindingKind::NotProlongable, Some(i), format!("phone not prolongable: {phone}")),
                        Err(_) => out.push(FindingKind::UnknownPhone, Some(i), format!("{phone} not in phone inventory")),
                    }
                }
                _ => {}
            }
        }
    }
    ValidationReport { findings: out.0 }
}
