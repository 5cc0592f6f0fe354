//! Oracles and generators shared by the property and acceptance tests. They
//! are written independently of the library code they check.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;

use dysfluent::annotation::{apply_edits, AnnotatedUtterance, Category, DysfluencyKind, Edit, Level, Span};
use dysfluent::lexicon::Lexicon;
use dysfluent::metrics::{Token, TokenSeq};

/// Edit distance by memoized recursion over every prefix pair.
pub fn oracle_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    fn go<T: PartialEq>(a: &[T], b: &[T], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&d) = memo.get(&(i, j)) {
            return d;
        }
        let keep = go(a, b, i + 1, j + 1, memo) + usize::from(a[i] != b[j]);
        let del = go(a, b, i + 1, j, memo) + 1;
        let ins = go(a, b, i, j + 1, memo) + 1;
        let d = keep.min(del).min(ins);
        memo.insert((i, j), d);
        d
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

/// Per-kind (tp, fp, fn) and the number of clips with equal kind sets.
pub struct Recount {
    pub counts: BTreeMap<DysfluencyKind, (usize, usize, usize)>,
    pub correct: usize,
    pub edits: usize,
    pub ref_tokens: usize,
}

pub fn recount(pairs: &[(TokenSeq, TokenSeq)]) -> Recount {
    let mut out = Recount { counts: BTreeMap::new(), correct: 0, edits: 0, ref_tokens: 0 };
    for (r, h) in pairs {
        out.edits += oracle_distance(r, h);
        out.ref_tokens += r.len();
        let rk: BTreeSet<_> = r.iter().filter_map(Token::kind).collect();
        let hk: BTreeSet<_> = h.iter().filter_map(Token::kind).collect();
        if rk == hk {
            out.correct += 1;
        }
        for k in DysfluencyKind::ALL {
            let e = out.counts.entry(k).or_default();
            match (rk.contains(&k), hk.contains(&k)) {
                (true, true) => e.0 += 1,
                (false, true) => e.1 += 1,
                (true, false) => e.2 += 1,
                (false, false) => {}
            }
        }
    }
    out.counts.retain(|_, c| *c != (0, 0, 0));
    out
}

/// A random token sequence over a tiny alphabet, so that matches are common.
pub fn random_tokens(rng: &mut impl Rng, max_len: usize) -> TokenSeq {
    let len = rng.gen_range(0..=max_len);
    (0..len)
        .map(|_| {
            if rng.gen_bool(0.3) {
                Token::Dysfluency(DysfluencyKind::ALL[rng.gen_range(0..3)])
            } else {
                Token::text(["a", "b", "c"][rng.gen_range(0..3)])
            }
        })
        .collect()
}

/// Clean tokens with no repeats: real phones at phoneme level, `w<i>` words
/// at word level.
pub fn distinct_clean(rng: &mut impl Rng, level: Level, n: usize, lex: &Lexicon) -> Vec<String> {
    match level {
        Level::Word => (0..n).map(|i| format!("w{i}")).collect(),
        Level::Phoneme => {
            let mut phones: Vec<String> = lex.inventory().map(String::from).collect();
            phones.shuffle(rng);
            phones.truncate(n);
            phones
        }
    }
}

/// Tokens foreign to `clean`, for insertions and substitutions.
fn fresh(level: Level, clean: &[String], k: usize, lex: &Lexicon, rng: &mut impl Rng) -> Vec<String> {
    match level {
        Level::Word => (0..k).map(|i| format!("x{}", rng.gen_range(0..1000) * 10 + i)).collect(),
        Level::Phoneme => {
            let mut pool: Vec<String> = lex.inventory().filter(|p| !clean.iter().any(|c| c == p)).map(String::from).collect();
            pool.shuffle(rng);
            pool.truncate(k);
            pool
        }
    }
}

/// A random valid utterance with 1 to 3 dysfluencies over distinct clean
/// tokens, plus the edits that produced it. Edits are at least six matched
/// tokens apart, more than any single edit costs, so a minimum-cost
/// alignment cannot trade matches across two of them.
pub fn random_utterance(rng: &mut impl Rng, id: &str, lex: &Lexicon) -> (AnnotatedUtterance, Vec<Edit>) {
    let level = if rng.gen_bool(0.5) { Level::Word } else { Level::Phoneme };
    let sectors = rng.gen_range(1..=3);
    let n = 8 * sectors + 2;
    let clean = distinct_clean(rng, level, n, lex);
    let mut edits = Vec::new();
    for s in 0..sectors {
        if s > 0 && rng.gen_bool(0.3) {
            continue;
        }
        let at = 8 * s + 1;
        let width = rng.gen_range(1..=2);
        let kinds: Vec<Category> = DysfluencyKind::ALL.iter().filter(|k| k.level() == level).map(|k| k.category()).collect();
        let edit = match kinds.choose(rng).unwrap() {
            Category::Insertion => Edit::Insert { at, tokens: fresh(level, &clean, width, lex, rng) },
            Category::Repetition => Edit::Repeat { span: Span::new(at, at + width), copies: rng.gen_range(2..=3) },
            Category::Pause => Edit::Pause { at },
            Category::Deletion => Edit::Delete { span: Span::new(at, at + width) },
            Category::Substitution => {
                let k = rng.gen_range(1..=2);
                Edit::Substitute { span: Span::new(at, at + width), tokens: fresh(level, &clean, k, lex, rng) }
            }
            Category::Prolongation => Edit::Prolong { index: at },
        };
        edits.push(edit);
    }
    let mut u = apply_edits(id, level, &clean, &edits).expect("generated edits apply");
    let has = |c: Category| u.labels.iter().any(|l| l.kind.category() == c);
    if has(Category::Pause) {
        u.pause_request_s = Some(rng.gen_range(0.3..3.5));
    }
    if has(Category::Prolongation) {
        u.prolong_request_s = Some(rng.gen_range(0.17..0.8));
    }
    (u, edits)
}

pub fn kind_counts(u: &AnnotatedUtterance) -> BTreeMap<DysfluencyKind, usize> {
    let mut m = BTreeMap::new();
    for l in &u.labels {
        *m.entry(l.kind).or_insert(0) += 1;
    }
    m
}

/// One-sided binomial tail P(X >= k) for X ~ Bin(n, p).
pub fn binomial_upper_tail(n: u64, k: u64, p: f64) -> f64 {
    let ln_choose = |n: u64, k: u64| -> f64 { (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum() };
    (k..=n)
        .map(|i| (ln_choose(n, i) + i as f64 * p.ln() + (n - i) as f64 * (1.0 - p).ln()).exp())
        .sum()
}
