//! Span score charts and exact decoding.
//!
//! A chart holds `s(i, j, l)` for every fencepost span `0 <= i < j <= n` and
//! every label `l`. Label index 0 is the null label: "no constituent here".
//! Trees are scored relative to the null label, so `s(i, j, null)` is treated
//! as zero no matter what the chart stores for it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::treebank::{labeled_spans, LabeledSpan, ParseTree, Token, CHAIN_SEP, UNK_TAG};

pub const NULL_LABEL: &str = "<NULL>";
pub const NULL_INDEX: usize = 0;

/// Largest sentence [`decode_brute_force`] will enumerate.
pub const BRUTE_FORCE_MAX_LEN: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChartError {
    #[error("cannot decode an empty sentence")]
    EmptySentence,
    #[error("sentence length {got} does not match chart length {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("label '{0}' is not in the label set")]
    UnknownLabel(String),
    #[error("span ({i}, {j}) is out of range for length {n}")]
    SpanOutOfRange { i: usize, j: usize, n: usize },
    #[error("brute-force decoding is limited to length {max}, got {n}")]
    TooLong { n: usize, max: usize },
    #[error("label sets differ")]
    LabelSetMismatch,
    #[error("chart shape mismatch: {0}")]
    Shape(String),
}

/// Ordered label inventory with the null label at index 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    labels: Vec<String>,
}

impl LabelSet {
    /// Builds a label set from composite span labels; duplicates are dropped,
    /// order is sorted for reproducibility.
    pub fn from_labels<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut set: Vec<String> = labels.into_iter().map(Into::into).filter(|l| l != NULL_LABEL).collect();
        set.sort();
        set.dedup();
        let mut all = vec![NULL_LABEL.to_string()];
        all.extend(set);
        LabelSet { labels: all }
    }

    pub fn from_trees<'a>(trees: impl IntoIterator<Item = &'a ParseTree>) -> Self {
        Self::from_labels(trees.into_iter().flat_map(|t| labeled_spans(t).into_iter().map(|s| s.label)))
    }

    /// Validates and wraps an already-ordered label list.
    pub fn from_ordered(labels: Vec<String>) -> Result<Self, ChartError> {
        if labels.first().map(String::as_str) != Some(NULL_LABEL) || labels.len() < 2 {
            return Err(ChartError::Shape("label set must start with the null label and hold one real label".into()));
        }
        Ok(LabelSet { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn name(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

#[inline]
fn span_offset(n: usize, i: usize, j: usize) -> usize {
    i * n - i * i.saturating_sub(1) / 2 + (j - i - 1)
}

/// Number of spans `0 <= i < j <= n`.
pub fn span_count(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Scores for all labeled spans of one sentence, stored densely over the
/// strict upper triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanScoreChart {
    n: usize,
    num_labels: usize,
    scores: Vec<f64>,
}

impl SpanScoreChart {
    pub fn zeros(n: usize, num_labels: usize) -> Self {
        SpanScoreChart { n, num_labels, scores: vec![0.0; span_count(n) * num_labels] }
    }

    pub fn from_vec(n: usize, num_labels: usize, scores: Vec<f64>) -> Result<Self, ChartError> {
        if scores.len() != span_count(n) * num_labels {
            return Err(ChartError::Shape(format!(
                "expected {} scores, got {}",
                span_count(n) * num_labels,
                scores.len()
            )));
        }
        Ok(SpanScoreChart { n, num_labels, scores })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn num_spans(&self) -> usize {
        span_count(self.n)
    }

    /// Row index of span `(i, j)` in [`Self::as_slice`] (row-major, one row per span).
    #[inline]
    pub fn span_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j && j <= self.n);
        span_offset(self.n, i, j)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, label: usize) -> f64 {
        self.scores[self.span_index(i, j) * self.num_labels + label]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, label: usize, value: f64) {
        let k = self.span_index(i, j) * self.num_labels + label;
        self.scores[k] = value;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, label: usize, value: f64) {
        let k = self.span_index(i, j) * self.num_labels + label;
        self.scores[k] += value;
    }

    /// Score of `label` at `(i, j)` relative to the null label.
    #[inline]
    pub fn relative(&self, i: usize, j: usize, label: usize) -> f64 {
        let row = self.span_index(i, j) * self.num_labels;
        self.scores[row + label] - self.scores[row + NULL_INDEX]
    }

    pub fn row(&self, i: usize, j: usize) -> &[f64] {
        let row = self.span_index(i, j) * self.num_labels;
        &self.scores[row..row + self.num_labels]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.scores
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.scores
    }

    /// Subtracts each span's null score from all its labels.
    pub fn pin_null(&mut self) {
        for row in self.scores.chunks_mut(self.num_labels) {
            let null = row[NULL_INDEX];
            row.iter_mut().for_each(|v| *v -= null);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.scores.iter().all(|v| v.is_finite())
    }

    /// All spans in row order.
    pub fn spans(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n;
        (0..n).flat_map(move |i| (i + 1..=n).map(move |j| (i, j)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub tree: ParseTree,
    pub score: f64,
}

/// Sum of relative chart scores over the tree's labeled spans.
pub fn tree_score(chart: &SpanScoreChart, labels: &LabelSet, tree: &ParseTree) -> Result<f64, ChartError> {
    let spans = labeled_spans(tree);
    if tree.len() != chart.n() {
        return Err(ChartError::LengthMismatch { expected: chart.n(), got: tree.len() });
    }
    spans_score(chart, labels, &spans)
}

pub fn spans_score(chart: &SpanScoreChart, labels: &LabelSet, spans: &[LabeledSpan]) -> Result<f64, ChartError> {
    let mut total = 0.0;
    for s in spans {
        let l = labels.index_of(&s.label).ok_or_else(|| ChartError::UnknownLabel(s.label.clone()))?;
        if s.i >= s.j || s.j > chart.n() {
            return Err(ChartError::SpanOutOfRange { i: s.i, j: s.j, n: chart.n() });
        }
        total += chart.relative(s.i, s.j, l);
    }
    Ok(total)
}

/// Best label for a span; the null label is excluded at the root.
fn best_label(chart: &SpanScoreChart, i: usize, j: usize, allow_null: bool) -> (usize, f64) {
    let first = if allow_null { NULL_INDEX } else { NULL_INDEX + 1 };
    let mut best = (first, if first == NULL_INDEX { 0.0 } else { chart.relative(i, j, first) });
    for l in first + 1..chart.num_labels() {
        let v = chart.relative(i, j, l);
        if v > best.1 {
            best = (l, v);
        }
    }
    best
}

/// A binary derivation: a span, its label, and (for width > 1) a split point.
#[derive(Debug, Clone)]
struct Derivation {
    i: usize,
    label: usize,
    children: Option<Box<(Derivation, Derivation)>>,
}

fn check_words(chart: &SpanScoreChart, words: &[String]) -> Result<(), ChartError> {
    if chart.n() == 0 {
        return Err(ChartError::EmptySentence);
    }
    if words.len() != chart.n() {
        return Err(ChartError::LengthMismatch { expected: chart.n(), got: words.len() });
    }
    Ok(())
}

/// Exact CYK decoding. Every derivation span takes its argmax label; ties
/// prefer the smaller label index, then the smaller split point.
pub fn decode(chart: &SpanScoreChart, labels: &LabelSet, words: &[String]) -> Result<DecodeResult, ChartError> {
    check_words(chart, words)?;
    let n = chart.n();
    let idx = |i: usize, j: usize| i * (n + 1) + j;
    let mut best = vec![0.0f64; (n + 1) * (n + 1)];
    let mut label_at = vec![0usize; (n + 1) * (n + 1)];
    let mut split_at = vec![0usize; (n + 1) * (n + 1)];
    for width in 1..=n {
        for i in 0..=n - width {
            let j = i + width;
            let is_root = width == n;
            let (l, lv) = best_label(chart, i, j, !is_root);
            let mut split_score = 0.0;
            if width > 1 {
                let mut best_k = i + 1;
                let mut best_v = best[idx(i, i + 1)] + best[idx(i + 1, j)];
                for k in i + 2..j {
                    let v = best[idx(i, k)] + best[idx(k, j)];
                    if v > best_v {
                        best_v = v;
                        best_k = k;
                    }
                }
                split_at[idx(i, j)] = best_k;
                split_score = best_v;
            }
            best[idx(i, j)] = lv + split_score;
            label_at[idx(i, j)] = l;
        }
    }
    fn build(i: usize, j: usize, n: usize, label_at: &[usize], split_at: &[usize]) -> Derivation {
        let at = i * (n + 1) + j;
        let children = (j - i > 1).then(|| {
            let k = split_at[at];
            Box::new((build(i, k, n, label_at, split_at), build(k, j, n, label_at, split_at)))
        });
        Derivation { i, label: label_at[at], children }
    }
    let derivation = build(0, n, n, &label_at, &split_at);
    finish(chart, labels, words, &derivation)
}

fn finish(chart: &SpanScoreChart, labels: &LabelSet, words: &[String], d: &Derivation) -> Result<DecodeResult, ChartError> {
    let mut nodes = derivation_to_nodes(d, labels, words);
    debug_assert_eq!(nodes.len(), 1);
    let tree = nodes.remove(0);
    let score = tree_score(chart, labels, &tree)?;
    Ok(DecodeResult { tree, score })
}

/// Un-collapses a derivation: null spans splice their children into the
/// parent, composite labels expand into unary chains.
fn derivation_to_nodes(d: &Derivation, labels: &LabelSet, words: &[String]) -> Vec<ParseTree> {
    let children = match &d.children {
        None => vec![ParseTree::Leaf(Token { surface: words[d.i].clone(), index: d.i, tag: UNK_TAG.to_string() })],
        Some(pair) => {
            let mut c = derivation_to_nodes(&pair.0, labels, words);
            c.extend(derivation_to_nodes(&pair.1, labels, words));
            c
        }
    };
    if d.label == NULL_INDEX {
        return children;
    }
    vec![expand_chain(labels.name(d.label), children)]
}

/// Builds `A(B(C(children)))` from the composite label `A+B+C`.
pub fn expand_chain(label: &str, children: Vec<ParseTree>) -> ParseTree {
    let mut parts = label.split(CHAIN_SEP).collect::<Vec<_>>();
    let innermost = parts.pop().unwrap_or(label);
    let mut node = ParseTree::node(innermost, children);
    while let Some(p) = parts.pop() {
        node = ParseTree::node(p, vec![node]);
    }
    node
}

/// All binary bracketings of `[0, n)`; each is the list of its `2n - 1` spans.
pub fn enumerate_bracketings(n: usize) -> Vec<Vec<(usize, usize)>> {
    fn go(i: usize, j: usize) -> Vec<Vec<(usize, usize)>> {
        if j - i == 1 {
            return vec![vec![(i, j)]];
        }
        let mut out = Vec::new();
        for k in i + 1..j {
            let left = go(i, k);
            let right = go(k, j);
            for l in &left {
                for r in &right {
                    let mut v = Vec::with_capacity(l.len() + r.len() + 1);
                    v.push((i, j));
                    v.extend_from_slice(l);
                    v.extend_from_slice(r);
                    out.push(v);
                }
            }
        }
        out
    }
    if n == 0 {
        return Vec::new();
    }
    go(0, n)
}

/// Exhaustive search over every binary bracketing, used as a test oracle.
pub fn decode_brute_force(chart: &SpanScoreChart, labels: &LabelSet, words: &[String]) -> Result<DecodeResult, ChartError> {
    check_words(chart, words)?;
    let n = chart.n();
    if n > BRUTE_FORCE_MAX_LEN {
        return Err(ChartError::TooLong { n, max: BRUTE_FORCE_MAX_LEN });
    }
    let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
    for bracketing in enumerate_bracketings(n) {
        let score: f64 = bracketing.iter().map(|&(i, j)| best_label(chart, i, j, !(i == 0 && j == n)).1).sum();
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, bracketing));
        }
    }
    let (_, spans) = best.expect("n >= 1 has a bracketing");
    // Rebuild the derivation from the preorder span list.
    fn rebuild(spans: &[(usize, usize)], pos: &mut usize, chart: &SpanScoreChart, n: usize) -> Derivation {
        let (i, j) = spans[*pos];
        *pos += 1;
        let label = best_label(chart, i, j, !(i == 0 && j == n)).0;
        let children = (j - i > 1).then(|| {
            let l = rebuild(spans, pos, chart, n);
            let r = rebuild(spans, pos, chart, n);
            Box::new((l, r))
        });
        Derivation { i, label, children }
    }
    let mut pos = 0;
    let d = rebuild(&spans, &mut pos, chart, n);
    finish(chart, labels, words, &d)
}

fn span_label_map(spans: &[LabeledSpan]) -> BTreeMap<(usize, usize), &str> {
    spans.iter().map(|s| ((s.i, s.j), s.label.as_str())).collect()
}

/// Hamming cost between two span sets: spans whose label (null when absent)
/// differs between prediction and gold.
pub fn hamming_cost(pred: &[LabeledSpan], gold: &[LabeledSpan]) -> usize {
    let p = span_label_map(pred);
    let g = span_label_map(gold);
    let mut cost = p.iter().filter(|(k, l)| g.get(k) != Some(l)).count();
    cost += g.keys().filter(|k| !p.contains_key(k)).count();
    cost
}

/// Maximizes `s(T) + hamming(T, gold)`; the returned score is that sum.
pub fn loss_augmented_decode(
    chart: &SpanScoreChart,
    labels: &LabelSet,
    words: &[String],
    gold: &[LabeledSpan],
) -> Result<DecodeResult, ChartError> {
    check_words(chart, words)?;
    let n = chart.n();
    let l = chart.num_labels();
    let mut gold_at = BTreeMap::new();
    for s in gold {
        if s.i >= s.j || s.j > n {
            return Err(ChartError::LengthMismatch { expected: n, got: s.j });
        }
        let li = labels.index_of(&s.label).ok_or_else(|| ChartError::UnknownLabel(s.label.clone()))?;
        gold_at.insert((s.i, s.j), li);
    }
    // Relative scores plus the per-span cost, shifted so the null label stays 0:
    // off-gold spans pay +1 for any real label; on gold spans the gold label
    // gets -1 and everything else 0 (a constant |gold| is dropped).
    let mut augmented = SpanScoreChart::zeros(n, l);
    for (i, j) in chart.spans() {
        let gold_label = gold_at.get(&(i, j)).copied();
        for lab in 1..l {
            let cost = match gold_label {
                None => 1.0,
                Some(g) if g == lab => -1.0,
                Some(_) => 0.0,
            };
            augmented.set(i, j, lab, chart.relative(i, j, lab) + cost);
        }
    }
    let mut result = decode(&augmented, labels, words)?;
    let pred = labeled_spans(&result.tree);
    result.score = spans_score(chart, labels, &pred)? + hamming_cost(&pred, gold) as f64;
    Ok(result)
}

#[derive(Debug, Clone)]
pub struct HingeLossResult {
    pub loss: f64,
    pub chart_gradient: SpanScoreChart,
    pub violator: ParseTree,
}

/// Structured hinge loss against the cost-augmented best tree. The gradient
/// is +1 on violator spans and -1 on gold spans, cancelling where they agree.
pub fn hinge_loss(chart: &SpanScoreChart, labels: &LabelSet, gold: &ParseTree) -> Result<HingeLossResult, ChartError> {
    let words = gold.words();
    let gold_spans = labeled_spans(gold);
    let gold_score = tree_score(chart, labels, gold)?;
    let violator = loss_augmented_decode(chart, labels, &words, &gold_spans)?;
    let loss = (violator.score - gold_score).max(0.0);
    let mut grad = SpanScoreChart::zeros(chart.n(), chart.num_labels());
    if loss > 0.0 {
        for s in labeled_spans(&violator.tree) {
            grad.add(s.i, s.j, labels.index_of(&s.label).expect("decoded label"), 1.0);
        }
        for s in &gold_spans {
            grad.add(s.i, s.j, labels.index_of(&s.label).expect("checked by tree_score"), -1.0);
        }
    }
    Ok(HingeLossResult { loss, chart_gradient: grad, violator: violator.tree })
}
