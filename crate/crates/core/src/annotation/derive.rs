use super::{
    check_structure, is_marker, AnnotatedUtterance, AnnotationError, Category, DysfluencyKind,
    DysfluencyLabel, Level, Span, PAUSE_MARKER, PROLONG_MARKER,
};
use crate::edit::{align, EditOp};

/// A dysfluency to inject, positioned on the clean token sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum Edit {
    Insert { at: usize, tokens: Vec<String> },
    /// `copies` is the total number of occurrences, original included.
    Repeat { span: Span, copies: usize },
    Pause { at: usize },
    Delete { span: Span },
    Substitute { span: Span, tokens: Vec<String> },
    Prolong { index: usize },
}

impl Edit {
    fn footprint(&self) -> Span {
        match self {
            Edit::Insert { at, .. } | Edit::Pause { at } => Span::empty(*at),
            Edit::Repeat { span, .. } | Edit::Delete { span } | Edit::Substitute { span, .. } => *span,
            Edit::Prolong { index } => Span::new(*index, index + 1),
        }
    }

    fn category(&self) -> Category {
        match self {
            Edit::Insert { .. } => Category::Insertion,
            Edit::Repeat { .. } => Category::Repetition,
            Edit::Pause { .. } => Category::Pause,
            Edit::Delete { .. } => Category::Deletion,
            Edit::Substitute { .. } => Category::Substitution,
            Edit::Prolong { .. } => Category::Prolongation,
        }
    }
}

/// Applies non-overlapping edits to `clean` and returns the labelled utterance.
pub fn apply_edits(
    id: &str,
    level: Level,
    clean: &[String],
    edits: &[Edit],
) -> Result<AnnotatedUtterance, AnnotationError> {
    let mut sorted: Vec<&Edit> = edits.iter().collect();
    sorted.sort_by_key(|e| {
        let f = e.footprint();
        (f.start, f.end)
    });

    let mut dys: Vec<String> = Vec::with_capacity(clean.len() + 4);
    let mut labels = Vec::with_capacity(edits.len());
    let mut cursor = 0usize;
    for edit in sorted {
        let span = edit.footprint();
        if span.end > clean.len() {
            return Err(AnnotationError::SpanOutOfBounds { span, side: "clean", len: clean.len() });
        }
        if span.start < cursor {
            return Err(AnnotationError::InvalidLabel(format!("edit at {span} overlaps a previous edit")));
        }
        let kind = DysfluencyKind::new(level, edit.category())?;
        dys.extend_from_slice(&clean[cursor..span.start]);
        let d_start = dys.len();
        let reference = &clean[span.range()];
        let payload = match edit {
            Edit::Insert { tokens, .. } => {
                if tokens.is_empty() {
                    return Err(AnnotationError::InvalidLabel("empty insertion".into()));
                }
                dys.extend(tokens.iter().cloned());
                Some(tokens.join(" "))
            }
            Edit::Repeat { copies, .. } => {
                if span.is_empty() || *copies < 2 {
                    return Err(AnnotationError::InvalidLabel(
                        "repetition needs a nonempty unit and at least two copies".into(),
                    ));
                }
                for _ in 0..*copies {
                    dys.extend_from_slice(reference);
                }
                None
            }
            Edit::Pause { .. } => {
                dys.push(PAUSE_MARKER.to_string());
                None
            }
            Edit::Delete { .. } => {
                if span.is_empty() {
                    return Err(AnnotationError::InvalidLabel("empty deletion".into()));
                }
                Some(reference.join(" "))
            }
            Edit::Substitute { tokens, .. } => {
                if span.is_empty() || tokens.is_empty() {
                    return Err(AnnotationError::InvalidLabel("substitution needs both sides nonempty".into()));
                }
                dys.extend(tokens.iter().cloned());
                Some(tokens.join(" "))
            }
            Edit::Prolong { .. } => {
                dys.extend_from_slice(reference);
                dys.push(PROLONG_MARKER.to_string());
                None
            }
        };
        labels.push(DysfluencyLabel {
            kind,
            dysfluent_span: Span::new(d_start, dys.len()),
            reference_span: span,
            payload,
        });
        cursor = span.end;
    }
    dys.extend_from_slice(&clean[cursor..]);

    let u = AnnotatedUtterance {
        id: id.to_string(),
        level,
        clean_tokens: clean.to_vec(),
        dysfluent_tokens: dys,
        labels,
        pause_request_s: None,
        prolong_request_s: None,
    };
    let findings = check_structure(&u);
    if !findings.is_empty() {
        let msg: Vec<String> = findings.iter().map(|f| f.to_string()).collect();
        return Err(AnnotationError::InvalidLabel(msg.join("; ")));
    }
    Ok(u)
}

#[derive(Debug, Clone, Copy)]
enum Step {
    Match { d: usize, c: usize },
    Sub { d: usize, c: usize },
    Ins { d: usize },
    Del { c: usize },
    Pause { d: usize },
    Prolong { d: usize },
}

impl Step {
    fn is_edit(&self) -> bool {
        matches!(self, Step::Sub { .. } | Step::Ins { .. } | Step::Del { .. })
    }
}

/// Recovers labels from a clean/dysfluent pair.
///
/// Runs a unit-cost edit alignment on the marker-free tokens, then groups
/// maximal runs of edits into blocks: insert-only runs that repeat an adjacent
/// matched unit become Repetition, other insert-only runs Insertion,
/// delete-only runs Deletion and anything mixed Substitution. Markers become
/// Pause and Prolongation labels.
pub fn derive_labels(
    level: Level,
    clean: &[String],
    dysfluent: &[String],
) -> Result<Vec<DysfluencyLabel>, AnnotationError> {
    if clean.is_empty() || dysfluent.is_empty() {
        return Err(AnnotationError::UnalignableInput("empty token sequence".into()));
    }
    if let Some(t) = clean.iter().find(|t| is_marker(t)) {
        return Err(AnnotationError::UnalignableInput(format!("marker {t} in clean tokens")));
    }

    let mut spoken: Vec<&String> = Vec::with_capacity(dysfluent.len());
    let mut spoken_pos: Vec<usize> = Vec::with_capacity(dysfluent.len());
    // markers keyed by how many spoken tokens precede them
    let mut markers: Vec<(usize, Step)> = Vec::new();
    for (i, t) in dysfluent.iter().enumerate() {
        if t == PAUSE_MARKER {
            markers.push((spoken.len(), Step::Pause { d: i }));
        } else if t == PROLONG_MARKER {
            markers.push((spoken.len(), Step::Prolong { d: i }));
        } else {
            spoken.push(t);
            spoken_pos.push(i);
        }
    }
    let clean_refs: Vec<&String> = clean.iter().collect();
    let (ops, cost) = align(&clean_refs, &spoken);
    if cost > clean.len().max(spoken.len()) {
        return Err(AnnotationError::UnalignableInput(format!("edit distance {cost} too large")));
    }

    let mut steps = Vec::with_capacity(ops.len() + markers.len());
    let mut next_marker = 0;
    let mut flush = |consumed: usize, steps: &mut Vec<Step>| {
        while next_marker < markers.len() && markers[next_marker].0 == consumed {
            steps.push(markers[next_marker].1);
            next_marker += 1;
        }
    };
    flush(0, &mut steps);
    for op in ops {
        match op {
            EditOp::Match { reference, hypothesis } => {
                steps.push(Step::Match { d: spoken_pos[hypothesis], c: reference });
                flush(hypothesis + 1, &mut steps);
            }
            EditOp::Substitute { reference, hypothesis } => {
                steps.push(Step::Sub { d: spoken_pos[hypothesis], c: reference });
                flush(hypothesis + 1, &mut steps);
            }
            EditOp::Insert { hypothesis } => {
                steps.push(Step::Ins { d: spoken_pos[hypothesis] });
                flush(hypothesis + 1, &mut steps);
            }
            EditOp::Delete { reference } => steps.push(Step::Del { c: reference }),
        }
    }

    let kind = |category| DysfluencyKind::new(level, category);
    let mut labels = Vec::new();
    let (mut d_cur, mut c_cur) = (0usize, 0usize);
    // steps before this index belong to an emitted block
    let mut free_from = 0usize;
    let mut i = 0usize;
    while i < steps.len() {
        match steps[i] {
            Step::Match { d, c } => {
                if let Some(Step::Prolong { d: m }) = steps.get(i + 1).copied() {
                    labels.push(DysfluencyLabel {
                        kind: kind(Category::Prolongation)?,
                        dysfluent_span: Span::new(d, m + 1),
                        reference_span: Span::new(c, c + 1),
                        payload: None,
                    });
                    d_cur = m + 1;
                    i += 2;
                    free_from = i;
                } else {
                    d_cur = d + 1;
                    i += 1;
                }
                c_cur = c + 1;
            }
            Step::Pause { d } => {
                labels.push(DysfluencyLabel {
                    kind: kind(Category::Pause)?,
                    dysfluent_span: Span::new(d, d + 1),
                    reference_span: Span::empty(c_cur),
                    payload: None,
                });
                d_cur = d + 1;
                i += 1;
                free_from = i;
            }
            Step::Prolong { d } => {
                return Err(AnnotationError::UnalignableInput(format!(
                    "{PROLONG_MARKER} at {d} does not follow an unchanged phone"
                )));
            }
            _ => {
                let mut j = i;
                while j < steps.len() && steps[j].is_edit() {
                    j += 1;
                }
                let run = &steps[i..j];
                let ds: Vec<usize> = run
                    .iter()
                    .filter_map(|s| match s {
                        Step::Sub { d, .. } | Step::Ins { d } => Some(*d),
                        _ => None,
                    })
                    .collect();
                let cs: Vec<usize> = run
                    .iter()
                    .filter_map(|s| match s {
                        Step::Sub { c, .. } | Step::Del { c } => Some(*c),
                        _ => None,
                    })
                    .collect();
                let dspan = match (ds.first(), ds.last()) {
                    (Some(a), Some(b)) => Span::new(*a, b + 1),
                    _ => Span::empty(d_cur),
                };
                let rspan = match (cs.first(), cs.last()) {
                    (Some(a), Some(b)) => Span::new(*a, b + 1),
                    _ => Span::empty(c_cur),
                };
                let only_ins = run.iter().all(|s| matches!(s, Step::Ins { .. }));
                let only_del = run.iter().all(|s| matches!(s, Step::Del { .. }));

                let mut next = j;
                let label = if only_ins {
                    let inserted = &dysfluent[dspan.range()];
                    match find_repetition(&steps, i, j, free_from, inserted, clean) {
                        Some(Repeat::Following(k)) => {
                            let Step::Match { d: last_d, .. } = steps[j + k - 1] else { unreachable!() };
                            next = j + k;
                            d_cur = last_d + 1;
                            c_cur += k;
                            DysfluencyLabel {
                                kind: kind(Category::Repetition)?,
                                dysfluent_span: Span::new(dspan.start, last_d + 1),
                                reference_span: Span::new(c_cur - k, c_cur),
                                payload: None,
                            }
                        }
                        Some(Repeat::Preceding(k)) => {
                            let Step::Match { d: first_d, c: first_c } = steps[i - k] else { unreachable!() };
                            d_cur = dspan.end;
                            DysfluencyLabel {
                                kind: kind(Category::Repetition)?,
                                dysfluent_span: Span::new(first_d, dspan.end),
                                reference_span: Span::new(first_c, first_c + k),
                                payload: None,
                            }
                        }
                        None => {
                            d_cur = dspan.end;
                            DysfluencyLabel {
                                kind: kind(Category::Insertion)?,
                                dysfluent_span: dspan,
                                reference_span: rspan,
                                payload: Some(inserted.join(" ")),
                            }
                        }
                    }
                } else if only_del {
                    c_cur = rspan.end;
                    DysfluencyLabel {
                        kind: kind(Category::Deletion)?,
                        dysfluent_span: dspan,
                        reference_span: rspan,
                        payload: Some(clean[rspan.range()].join(" ")),
                    }
                } else {
                    d_cur = dspan.end;
                    c_cur = rspan.end;
                    DysfluencyLabel {
                        kind: kind(Category::Substitution)?,
                        dysfluent_span: dspan,
                        reference_span: rspan,
                        payload: Some(dysfluent[dspan.range()].join(" ")),
                    }
                };
                labels.push(label);
                i = next;
                free_from = i;
            }
        }
    }

    let u = AnnotatedUtterance {
        id: String::new(),
        level,
        clean_tokens: clean.to_vec(),
        dysfluent_tokens: dysfluent.to_vec(),
        labels,
        pause_request_s: None,
        prolong_request_s: None,
    };
    let findings = check_structure(&u);
    if !findings.is_empty() {
        let msg: Vec<String> = findings.iter().map(|f| f.to_string()).collect();
        return Err(AnnotationError::UnalignableInput(msg.join("; ")));
    }
    Ok(u.labels)
}

enum Repeat {
    Following(usize),
    Preceding(usize),
}

/// Looks for a unit of length k such that the inserted run is n >= 1 copies
/// of it and the k unchanged tokens right after (or before) the run equal it.
fn find_repetition(
    steps: &[Step],
    run_start: usize,
    run_end: usize,
    free_from: usize,
    inserted: &[String],
    clean: &[String],
) -> Option<Repeat> {
    let n = inserted.len();
    let unchanged = |range: std::ops::Range<usize>, unit: &[String]| -> bool {
        range.len() == unit.len()
            && range.clone().zip(unit).all(|(s, u)| match steps[s] {
                Step::Match { c, .. } => clean[c] == *u,
                _ => false,
            })
    };
    for k in (1..=n).filter(|k| n.is_multiple_of(*k)) {
        let unit = &inserted[..k];
        if !inserted.chunks(k).all(|chunk| chunk == unit) {
            continue;
        }
        let after = run_end..run_end + k;
        let prolonged_tail = matches!(steps.get(run_end + k), Some(Step::Prolong { .. }));
        if after.end <= steps.len() && !prolonged_tail && unchanged(after, unit) {
            return Some(Repeat::Following(k));
        }
        if run_start >= k && run_start - k >= free_from && unchanged(run_start - k..run_start, unit) {
            return Some(Repeat::Preceding(k));
        }
    }
    None
}
