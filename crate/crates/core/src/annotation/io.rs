use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{
    check_structure, is_marker, looks_like_marker, AnnotatedUtterance, AnnotationError, Category,
    DysfluencyKind, DysfluencyLabel, Level, Span, PAUSE_MARKER, PROLONG_MARKER,
};

/// One line of the sidecar label file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub id: String,
    pub kind: DysfluencyKind,
    pub dspan: Span,
    pub rspan: Span,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
    /// Reference tokens of deletions and substitutions, needed to rebuild the clean text.
    #[serde(default, rename = "ref", skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_s: Option<f64>,
}

/// Splits an utterance into its marker-bearing text and sidecar records.
pub fn serialize_annotated(u: &AnnotatedUtterance) -> (String, Vec<LabelRecord>) {
    let records = u
        .labels
        .iter()
        .map(|l| {
            let reference = match l.kind.category() {
                Category::Deletion | Category::Substitution => {
                    Some(u.clean_tokens[l.reference_span.range()].join(" "))
                }
                _ => None,
            };
            let request_s = match l.kind.category() {
                Category::Pause => u.pause_request_s,
                Category::Prolongation => u.prolong_request_s,
                _ => None,
            };
            LabelRecord {
                id: u.id.clone(),
                kind: l.kind,
                dspan: l.dysfluent_span,
                rspan: l.reference_span,
                payload: l.payload.clone(),
                reference,
                request_s,
            }
        })
        .collect();
    (u.dysfluent_text(), records)
}

/// Rebuilds an utterance from marker text and its sidecar records.
///
/// The clean tokens are reconstructed by walking the label blocks; the result
/// is then checked against every structural invariant.
pub fn parse_annotated(
    id: &str,
    level: Level,
    text: &str,
    records: &[LabelRecord],
) -> Result<AnnotatedUtterance, AnnotationError> {
    let dys: Vec<String> = text.split_whitespace().map(String::from).collect();
    if let Some(bad) = dys.iter().find(|t| looks_like_marker(t) && !is_marker(t)) {
        return Err(AnnotationError::MalformedMarker(bad.clone()));
    }
    for (marker, category) in [(PAUSE_MARKER, Category::Pause), (PROLONG_MARKER, Category::Prolongation)] {
        let markers = dys.iter().filter(|t| *t == marker).count();
        let labels = records.iter().filter(|r| r.kind.category() == category).count();
        if markers != labels {
            return Err(AnnotationError::MarkerLabelMismatch { marker, markers, labels });
        }
    }

    let mut sorted: Vec<&LabelRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.dspan.start, r.dspan.end, r.rspan.start, r.rspan.end));

    let mut clean: Vec<String> = Vec::with_capacity(dys.len());
    let mut d_end = 0usize;
    let mut pause_request = None;
    let mut prolong_request = None;
    for r in &sorted {
        if r.id != id {
            return Err(AnnotationError::InvalidLabel(format!("record for {:?} attached to {id:?}", r.id)));
        }
        if r.kind.level() != level {
            return Err(AnnotationError::InvalidLabel(format!("{} label on a {level} utterance", r.kind)));
        }
        if r.dspan.end > dys.len() {
            return Err(AnnotationError::SpanOutOfBounds { span: r.dspan, side: "dysfluent", len: dys.len() });
        }
        if r.dspan.start < d_end {
            return Err(AnnotationError::InvalidLabel(format!("label at {} overlaps a previous label", r.dspan)));
        }
        clean.extend_from_slice(&dys[d_end..r.dspan.start]);
        if r.rspan.start != clean.len() {
            return Err(misplaced(r, clean.len()));
        }
        let block = &dys[r.dspan.range()];
        match r.kind.category() {
            Category::Pause | Category::Insertion => {}
            Category::Repetition => {
                let k = r.rspan.len().min(block.len());
                clean.extend_from_slice(&block[..k]);
            }
            Category::Prolongation => clean.extend_from_slice(&block[..block.len().min(1)]),
            Category::Deletion | Category::Substitution => {
                let reference = r.reference.as_deref().ok_or_else(|| {
                    AnnotationError::InvalidLabel(format!("{} label at {} lacks reference tokens", r.kind, r.rspan))
                })?;
                clean.extend(reference.split_whitespace().map(String::from));
            }
        }
        if r.rspan.end != clean.len() {
            return Err(misplaced(r, clean.len()));
        }
        match r.kind.category() {
            Category::Pause => merge_request(&mut pause_request, r.request_s)?,
            Category::Prolongation => merge_request(&mut prolong_request, r.request_s)?,
            _ => {
                if r.request_s.is_some() {
                    return Err(AnnotationError::InvalidLabel(format!("duration request on a {} label", r.kind)));
                }
            }
        }
        d_end = r.dspan.end;
    }
    clean.extend_from_slice(&dys[d_end..]);

    let u = AnnotatedUtterance {
        id: id.to_string(),
        level,
        clean_tokens: clean,
        dysfluent_tokens: dys,
        labels: records
            .iter()
            .map(|r| DysfluencyLabel {
                kind: r.kind,
                dysfluent_span: r.dspan,
                reference_span: r.rspan,
                payload: r.payload.clone(),
            })
            .collect(),
        pause_request_s: pause_request,
        prolong_request_s: prolong_request,
    };
    let findings = check_structure(&u);
    if !findings.is_empty() {
        let msg: Vec<String> = findings.iter().map(|f| f.to_string()).collect();
        return Err(AnnotationError::InvalidLabel(msg.join("; ")));
    }
    Ok(u)
}

fn misplaced(r: &LabelRecord, at: usize) -> AnnotationError {
    if r.rspan.start > at {
        AnnotationError::SpanOutOfBounds { span: r.rspan, side: "clean", len: at }
    } else {
        AnnotationError::InvalidLabel(format!(
            "{} reference span {} does not line up with reconstructed position {at}",
            r.kind, r.rspan
        ))
    }
}

fn merge_request(slot: &mut Option<f64>, value: Option<f64>) -> Result<(), AnnotationError> {
    match (*slot, value) {
        (_, None) => Ok(()),
        (None, Some(v)) => {
            *slot = Some(v);
            Ok(())
        }
        (Some(a), Some(b)) if a == b => Ok(()),
        (Some(a), Some(b)) => Err(AnnotationError::InvalidLabel(format!("conflicting duration requests {a} and {b}"))),
    }
}

/// Writes `id<TAB>level<TAB>text` lines and one JSON label record per line.
pub fn write_annotated<'a>(
    mut text_out: impl Write,
    mut labels_out: impl Write,
    utterances: impl IntoIterator<Item = &'a AnnotatedUtterance>,
) -> Result<(), AnnotationError> {
    for u in utterances {
        let (text, records) = serialize_annotated(u);
        writeln!(text_out, "{}\t{}\t{}", u.id, u.level, text)?;
        for r in records {
            let line = serde_json::to_string(&r).map_err(|e| AnnotationError::Io(e.to_string()))?;
            writeln!(labels_out, "{line}")?;
        }
    }
    Ok(())
}

/// Reads an annotated-text file and its sidecar, joined on id.
pub fn read_annotated(
    text_in: impl BufRead,
    labels_in: impl BufRead,
) -> Result<Vec<AnnotatedUtterance>, AnnotationError> {
    let mut by_id: BTreeMap<String, Vec<LabelRecord>> = BTreeMap::new();
    for (n, line) in labels_in.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: LabelRecord = serde_json::from_str(&line)
            .map_err(|e| AnnotationError::Format { line: n + 1, reason: e.to_string() })?;
        by_id.entry(record.id.clone()).or_default().push(record);
    }

    let mut out = Vec::new();
    for (n, line) in text_in.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let (Some(id), Some(level), Some(text)) = (fields.next(), fields.next(), fields.next()) else {
            return Err(AnnotationError::Format { line: n + 1, reason: "expected id<TAB>level<TAB>text".into() });
        };
        let level: Level = level
            .parse()
            .map_err(|reason| AnnotationError::Format { line: n + 1, reason })?;
        let records = by_id.remove(id).unwrap_or_default();
        out.push(parse_annotated(id, level, text, &records)?);
    }
    if let Some(orphan) = by_id.keys().next() {
        return Err(AnnotationError::InvalidLabel(format!("labels for unknown utterance {orphan:?}")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::{apply_edits, Edit};

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn pause_record(id: &str, at: usize) -> LabelRecord {
        LabelRecord {
            id: id.into(),
            kind: DysfluencyKind::new(Level::Word, Category::Pause).unwrap(),
            dspan: Span::new(at, at + 1),
            rspan: Span::empty(at),
            payload: None,
            reference: None,
            request_s: None,
        }
    }

    #[test]
    fn single_pause_parses() {
        let u = parse_annotated("u1", Level::Word, "the <pause> cat sat", &[pause_record("u1", 1)]).unwrap();
        assert_eq!(u.labels.len(), 1);
        assert_eq!(u.clean_tokens, toks("the cat sat"));
    }

    #[test]
    fn repetition_parses() {
        let r = LabelRecord {
            id: "u".into(),
            kind: DysfluencyKind::new(Level::Word, Category::Repetition).unwrap(),
            dspan: Span::new(0, 2),
            rspan: Span::new(0, 1),
            payload: None,
            reference: None,
            request_s: None,
        };
        let u = parse_annotated("u", Level::Word, "the the cat", &[r]).unwrap();
        assert_eq!(u.clean_tokens, toks("the cat"));
    }

    #[test]
    fn marker_without_label_is_mismatch() {
        let e = parse_annotated("u", Level::Word, "the <pause> cat", &[]).unwrap_err();
        assert!(matches!(e, AnnotationError::MarkerLabelMismatch { markers: 1, labels: 0, .. }));
    }

    #[test]
    fn malformed_and_out_of_bounds() {
        let e = parse_annotated("u", Level::Word, "the <paus cat", &[]).unwrap_err();
        assert!(matches!(e, AnnotationError::MalformedMarker(_)));
        let e = parse_annotated("u", Level::Word, "the <stutter> cat", &[]).unwrap_err();
        assert!(matches!(e, AnnotationError::MalformedMarker(_)));
        let mut r = pause_record("u", 1);
        r.dspan = Span::new(5, 6);
        let e = parse_annotated("u", Level::Word, "the <pause> cat", &[r]).unwrap_err();
        assert!(matches!(e, AnnotationError::SpanOutOfBounds { .. }));
    }

    #[test]
    fn no_labels_serializes_to_clean_text() {
        let u = AnnotatedUtterance::fluent("f", Level::Word, toks("a quiet day"));
        let (text, records) = serialize_annotated(&u);
        assert_eq!(text, "a quiet day");
        assert!(records.is_empty());
    }

    #[test]
    fn prolong_marker_follows_its_phone() {
        let u = apply_edits("p", Level::Phoneme, &toks("DH AH S AE T"), &[Edit::Prolong { index: 2 }]).unwrap();
        let (text, _) = serialize_annotated(&u);
        let tokens: Vec<&str> = text.split(' ').collect();
        assert_eq!(tokens.iter().filter(|t| **t == PROLONG_MARKER).count(), 1);
        assert_eq!(tokens[3], PROLONG_MARKER);
        assert_eq!(tokens[2], "S");
    }

    #[test]
    fn files_round_trip() {
        let clean = toks("i can go home now");
        let mut a = apply_edits("a", Level::Word, &clean, &[Edit::Pause { at: 2 }]).unwrap();
        a.pause_request_s = Some(1.25);
        let b = apply_edits("b", Level::Word, &clean, &[Edit::Substitute { span: Span::new(3, 4), tokens: toks("hope") }]).unwrap();
        let c = apply_edits("c", Level::Word, &clean, &[Edit::Delete { span: Span::new(1, 2) }]).unwrap();
        let mut text = Vec::new();
        let mut labels = Vec::new();
        write_annotated(&mut text, &mut labels, [&a, &b, &c]).unwrap();
        let back = read_annotated(text.as_slice(), labels.as_slice()).unwrap();
        assert_eq!(back, vec![a, b, c]);
        let first = String::from_utf8(labels).unwrap();
        assert!(first.lines().next().unwrap().contains(r#""dspan":[2,3]"#));
    }

    #[test]
    fn orphan_labels_are_rejected() {
        let labels = serde_json::to_string(&pause_record("ghost", 0)).unwrap();
        let r = read_annotated("x\tword\thello there\n".as_bytes(), labels.as_bytes());
        assert!(r.is_err());
    }
}
