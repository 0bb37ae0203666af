//! Helpers shared by the integration and acceptance tests. The metric
//! oracle here works on bracketed strings with its own little reader so it
//! does not share code with the library's span extraction.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use disfluency_parser::chart::{LabelSet, SpanScoreChart};
use disfluency_parser::model::{EncoderConfig, Model, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;

fn objective(model: &Model, words: &[String], g: &SpanScoreChart) -> f64 {
    let c = model.score_spans(words, None).unwrap();
    c.as_slice().iter().zip(g.as_slice()).map(|(a, b)| a * b).sum()
}

/// Worst relative error between backward and central differences over
/// `samples` parameters of one random (config, sentence) instance. The
/// objective is a random linear function of the span chart, so its chart
/// gradient is the random weights themselves.
pub fn worst_relative_error(seed: u64, samples: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heads = [1, 2][rng.random_range(0..2)];
    let cfg = EncoderConfig {
        d_model: 4 * rng.random_range(1..4),
        n_layers: rng.random_range(1..3),
        n_heads: heads,
        d_ff: rng.random_range(4..12),
        d_span: rng.random_range(3..8),
        external_dim: 0,
        dropout: 0.0,
        labels: LabelSet::from_labels(["S", "NP", "VP", "EDITED"][..rng.random_range(1..5)].iter().copied()),
        seed,
    };
    let vocab = Vocabulary::from_words(["a", "b", "c", "d"]).unwrap();
    let mut model = Model::init(cfg, vocab).unwrap();
    let n = rng.random_range(1..7);
    let words: Vec<String> = (0..n).map(|_| ["a", "b", "c", "d", "zz"][rng.random_range(0..5)].to_string()).collect();
    let mut g = SpanScoreChart::zeros(n, model.labels().len());
    g.as_mut_slice().iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
    let grads = model.backward(&words, None, &g).unwrap();
    let total = model.weights.num_params();
    let h = FD_STEP;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut attempts = 0;
    while checked < samples && attempts < 20 * samples {
        attempts += 1;
        let k = rng.random_range(0..total);
        let orig = model.weights.get_flat(k);
        let f0 = objective(&model, &words, &g);
        model.weights.set_flat(k, orig + h);
        let fp = objective(&model, &words, &g);
        model.weights.set_flat(k, orig - h);
        let fm = objective(&model, &words, &g);
        model.weights.set_flat(k, orig);
        // A ReLU kink inside [orig - h, orig + h] makes the one-sided slopes disagree.
        let right = (fp - f0) / h;
        let left = (f0 - fm) / h;
        if (right - left).abs() > 1e-3 * (1.0 + right.abs().max(left.abs())) {
            continue;
        }
        let numeric = (fp - fm) / (2.0 * h);
        let analytic = grads.get_flat(k);
        let err = (analytic - numeric).abs() / (analytic.abs().max(numeric.abs()).max(1e-6));
        worst = worst.max(err);
        checked += 1;
    }
    assert_eq!(checked, samples, "too many kinks");
    worst
}

const PHRASES: [&str; 8] = ["S", "NP", "VP", "PP", "EDITED", "INTJ", "PRN", "SBAR"];

fn random_constituent(rng: &mut impl Rng, words: &[String], out: &mut String) {
    let label = PHRASES[rng.random_range(0..PHRASES.len())];
    out.push('(');
    out.push_str(label);
    if rng.random_bool(0.15) {
        // Unary chain on top of whatever comes next.
        out.push(' ');
        random_constituent(rng, words, out);
    } else if words.len() == 1 {
        out.push_str(&format!(" (T {})", words[0]));
    } else {
        let mut cuts: Vec<usize> = (1..words.len()).filter(|_| rng.random_bool(0.5)).collect();
        if cuts.is_empty() {
            cuts.push(rng.random_range(1..words.len()));
        }
        let mut start = 0;
        for end in cuts.into_iter().chain([words.len()]) {
            out.push(' ');
            let part = &words[start..end];
            if part.len() == 1 && rng.random_bool(0.6) {
                out.push_str(&format!("(T {})", part[0]));
            } else {
                random_constituent(rng, part, out);
            }
            start = end;
        }
    }
    out.push(')');
}

/// A random bracketed tree over `words` with labels drawn from a small
/// pool that includes EDITED, INTJ and PRN, and occasional unary chains.
pub fn random_bracketed(rng: &mut impl Rng, words: &[String]) -> String {
    let mut out = String::new();
    random_constituent(rng, words, &mut out);
    out
}

/// A prediction close to `gold`: identical, or with a few constituent
/// labels swapped, so matched counts are not trivially small.
pub fn perturbed(rng: &mut impl Rng, gold: &str) -> String {
    let mut out = String::with_capacity(gold.len());
    let mut rest = gold;
    while let Some(k) = rest.find('(') {
        out.push_str(&rest[..=k]);
        rest = &rest[k + 1..];
        let end = rest.find(' ').unwrap_or(rest.len());
        let label = &rest[..end];
        if label != "T" && rng.random_bool(0.2) {
            out.push_str(PHRASES[rng.random_range(0..PHRASES.len())]);
        } else {
            out.push_str(label);
        }
        rest = &rest[end..];
    }
    out.push_str(rest);
    out
}

struct Node {
    label: String,
    kids: Vec<Node>,
    word: Option<String>,
}

fn read_node(tokens: &[String], pos: &mut usize) -> Node {
    assert_eq!(tokens[*pos], "(");
    *pos += 1;
    let label = tokens[*pos].clone();
    *pos += 1;
    if tokens[*pos] != "(" {
        let word = tokens[*pos].clone();
        *pos += 2;
        return Node { label, kids: Vec::new(), word: Some(word) };
    }
    let mut kids = Vec::new();
    while tokens[*pos] == "(" {
        kids.push(read_node(tokens, pos));
    }
    *pos += 1;
    Node { label, kids, word: None }
}

fn read_tree(text: &str) -> Node {
    let spaced = text.replace('(', " ( ").replace(')', " ) ");
    let tokens: Vec<String> = spaced.split_whitespace().map(str::to_string).collect();
    let mut pos = 0;
    read_node(&tokens, &mut pos)
}

fn width(node: &Node) -> usize {
    if node.word.is_some() {
        1
    } else {
        node.kids.iter().map(width).sum()
    }
}

/// Oracle view of one tree: labeled spans with unary chains joined top-down
/// by "+", preterminals skipped; and, per word, the labels above it.
pub struct OracleTree {
    pub spans: Vec<(usize, usize, String)>,
    pub ancestors: Vec<Vec<String>>,
}

fn walk(node: &Node, start: usize, chain: Option<String>, above: &mut Vec<String>, out: &mut OracleTree) {
    if let Some(_w) = &node.word {
        out.ancestors.push(above.clone());
        return;
    }
    let label = match chain {
        Some(c) => format!("{c}+{}", node.label),
        None => node.label.clone(),
    };
    above.push(node.label.clone());
    if node.kids.len() == 1 && node.kids[0].word.is_none() {
        walk(&node.kids[0], start, Some(label), above, out);
    } else {
        out.spans.push((start, start + width(node), label));
        let mut at = start;
        for k in &node.kids {
            walk(k, at, None, above, out);
            at += width(k);
        }
    }
    above.pop();
}

pub fn oracle_view(text: &str) -> OracleTree {
    let root = read_tree(text);
    let mut out = OracleTree { spans: Vec::new(), ancestors: Vec::new() };
    walk(&root, 0, None, &mut Vec::new(), &mut out);
    out
}

fn has_part(label: &str, part: &str) -> bool {
    label.split('+').any(|p| p == part)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleCounts {
    pub matched: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl OracleCounts {
    /// (P, R, F) with both-empty scored as perfect agreement and an empty
    /// side otherwise scored as zero.
    pub fn prf(&self) -> (f64, f64, f64) {
        if self.predicted == 0 && self.gold == 0 {
            return (1.0, 1.0, 1.0);
        }
        let p = if self.predicted == 0 { 0.0 } else { self.matched as f64 / self.predicted as f64 };
        let r = if self.gold == 0 { 0.0 } else { self.matched as f64 / self.gold as f64 };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        (p, r, f)
    }
}

/// Span counts over a corpus; `keep` filters by composite label.
pub fn oracle_span_counts(gold: &[String], pred: &[String], keep: impl Fn(&str) -> bool) -> OracleCounts {
    let mut c = OracleCounts { matched: 0, predicted: 0, gold: 0 };
    for (g, p) in gold.iter().zip(pred) {
        let mut bag: HashMap<(usize, usize, String), usize> = HashMap::new();
        for s in oracle_view(g).spans.into_iter().filter(|s| keep(&s.2)) {
            *bag.entry(s).or_default() += 1;
            c.gold += 1;
        }
        for s in oracle_view(p).spans.into_iter().filter(|s| keep(&s.2)) {
            c.predicted += 1;
            if let Some(n) = bag.get_mut(&s) {
                if *n > 0 {
                    *n -= 1;
                    c.matched += 1;
                }
            }
        }
    }
    c
}

/// Word-position counts; a position counts when any label above it has a
/// component in `parts`.
pub fn oracle_word_counts(gold: &[String], pred: &[String], parts: &[&str]) -> OracleCounts {
    let positions = |t: &str| -> BTreeSet<usize> {
        oracle_view(t)
            .ancestors
            .iter()
            .enumerate()
            .filter(|(_, labels)| labels.iter().any(|l| parts.iter().any(|p| has_part(l, p))))
            .map(|(k, _)| k)
            .collect()
    };
    let mut c = OracleCounts { matched: 0, predicted: 0, gold: 0 };
    for (g, p) in gold.iter().zip(pred) {
        let (gs, ps) = (positions(g), positions(p));
        c.gold += gs.len();
        c.predicted += ps.len();
        c.matched += gs.intersection(&ps).count();
    }
    c
}

pub fn edited_only(label: &str) -> bool {
    has_part(label, "EDITED")
}

pub fn eip_only(label: &str) -> bool {
    ["EDITED", "INTJ", "PRN"].iter().any(|p| has_part(label, p))
}

pub fn words(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("w{i}")).collect()
}
