//! Span and word-position precision/recall/f-score, with EDITED and
//! EDITED+INTJ+PRN filters, plus a per-disfluency-type breakdown.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::treebank::{
    disfluency_sets, label_has_component, labeled_spans, LabeledSpan, ParseTree, EDITED, INTJ, PRN,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("corpus sizes differ: {gold} gold vs {pred} predicted trees")]
    CountMismatch { gold: usize, pred: usize },
    #[error("sentence {index}: gold has {gold} words, prediction has {pred}")]
    LengthMismatch { index: usize, gold: usize, pred: usize },
    #[error("span ({i}, {j}, {label}) is not an EDITED constituent")]
    NotEdited { i: usize, j: usize, label: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpanFilter {
    All,
    Edited,
    Eip,
}

impl SpanFilter {
    fn keeps(self, label: &str) -> bool {
        match self {
            SpanFilter::All => true,
            SpanFilter::Edited => label_has_component(label, EDITED),
            SpanFilter::Eip => [EDITED, INTJ, PRN].iter().any(|c| label_has_component(label, c)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WordCategory {
    Edited,
    Eip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisfluencyType {
    Repetition,
    Correction,
    Restart,
}

impl DisfluencyType {
    pub const ALL: [DisfluencyType; 3] = [DisfluencyType::Repetition, DisfluencyType::Correction, DisfluencyType::Restart];

    pub fn name(self) -> &'static str {
        match self {
            DisfluencyType::Repetition => "repetition",
            DisfluencyType::Correction => "correction",
            DisfluencyType::Restart => "restart",
        }
    }
}

impl fmt::Display for DisfluencyType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An EDITED region `[start, end)` with its disfluency type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypedRegion {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub kind: DisfluencyType,
}

/// Counts and derived scores for one metric category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRecord {
    pub category: String,
    pub matched: usize,
    pub predicted: usize,
    pub gold: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    /// No predictions: precision is reported as 0.
    pub precision_undefined: bool,
}

impl CategoryRecord {
    pub fn from_counts(category: impl Into<String>, matched: usize, predicted: usize, gold: usize) -> Self {
        let category = category.into();
        if predicted == 0 && gold == 0 {
            // Nothing to find and nothing found: vacuous agreement.
            return CategoryRecord {
                category,
                matched,
                predicted,
                gold,
                precision: 1.0,
                recall: 1.0,
                f_score: 1.0,
                precision_undefined: false,
            };
        }
        let precision = if predicted == 0 { 0.0 } else { matched as f64 / predicted as f64 };
        let recall = if gold == 0 { 0.0 } else { matched as f64 / gold as f64 };
        CategoryRecord {
            category,
            matched,
            predicted,
            gold,
            precision,
            recall,
            f_score: harmonic_mean(precision, recall),
            precision_undefined: predicted == 0,
        }
    }

    fn renamed(mut self, category: &str) -> Self {
        self.category = category.to_string();
        self
    }

    pub fn to_record_line(&self) -> String {
        format!(
            "category={} matched={} predicted={} gold={} P={:.6} R={:.6} F={:.6}{}",
            self.category,
            self.matched,
            self.predicted,
            self.gold,
            self.precision,
            self.recall,
            self.f_score,
            if self.precision_undefined { " precision_undefined=true" } else { "" }
        )
    }
}

pub fn harmonic_mean(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn check_aligned(gold: &[ParseTree], pred: &[ParseTree]) -> Result<(), EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::CountMismatch { gold: gold.len(), pred: pred.len() });
    }
    for (index, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(EvalError::LengthMismatch { index, gold: g.len(), pred: p.len() });
        }
    }
    Ok(())
}

fn span_bag(tree: &ParseTree, filter: SpanFilter) -> HashMap<LabeledSpan, usize> {
    let mut bag = HashMap::new();
    for s in labeled_spans(tree) {
        if filter.keeps(&s.label) {
            *bag.entry(s).or_insert(0) += 1;
        }
    }
    bag
}

/// Corpus-level (micro-averaged) labeled-span scores.
pub fn span_prf(gold: &[ParseTree], pred: &[ParseTree], filter: SpanFilter) -> Result<CategoryRecord, EvalError> {
    check_aligned(gold, pred)?;
    let (mut matched, mut n_pred, mut n_gold) = (0, 0, 0);
    for (g, p) in gold.iter().zip(pred) {
        let gb = span_bag(g, filter);
        let pb = span_bag(p, filter);
        n_gold += gb.values().sum::<usize>();
        n_pred += pb.values().sum::<usize>();
        matched += pb.iter().map(|(s, c)| (*c).min(gb.get(s).copied().unwrap_or(0))).sum::<usize>();
    }
    let name = match filter {
        SpanFilter::All => "S",
        SpanFilter::Edited => "S_E",
        SpanFilter::Eip => "S_EIP",
    };
    Ok(CategoryRecord::from_counts(name, matched, n_pred, n_gold))
}

fn word_set(tree: &ParseTree, category: WordCategory) -> BTreeSet<usize> {
    let sets = disfluency_sets(tree);
    match category {
        WordCategory::Edited => sets.edited,
        WordCategory::Eip => sets.eip,
    }
}

/// Corpus-level word-position scores over EDITED or EDITED/INTJ/PRN positions.
pub fn word_prf(gold: &[ParseTree], pred: &[ParseTree], category: WordCategory) -> Result<CategoryRecord, EvalError> {
    check_aligned(gold, pred)?;
    let (mut matched, mut n_pred, mut n_gold) = (0, 0, 0);
    for (g, p) in gold.iter().zip(pred) {
        let gs = word_set(g, category);
        let ps = word_set(p, category);
        n_gold += gs.len();
        n_pred += ps.len();
        matched += gs.intersection(&ps).count();
    }
    let name = match category {
        WordCategory::Edited => "W_E",
        WordCategory::Eip => "W_EIP",
    };
    Ok(CategoryRecord::from_counts(name, matched, n_pred, n_gold))
}

/// Outermost EDITED spans of a tree.
pub fn edited_regions(tree: &ParseTree) -> Vec<LabeledSpan> {
    let edited: Vec<LabeledSpan> = labeled_spans(tree).into_iter().filter(|s| s.has_component(EDITED)).collect();
    edited
        .iter()
        .filter(|s| !edited.iter().any(|o| o != *s && o.i <= s.i && s.j <= o.j && (o.i, o.j) != (s.i, s.j)))
        .cloned()
        .collect()
}

/// Heuristic typing of one EDITED region: compare the reparandum with the
/// next fluent tokens after any interregnum.
pub fn classify_disfluency(tree: &ParseTree, edited_span: &LabeledSpan) -> Result<DisfluencyType, EvalError> {
    if !edited_span.has_component(EDITED) {
        return Err(EvalError::NotEdited { i: edited_span.i, j: edited_span.j, label: edited_span.label.clone() });
    }
    let words = tree.words();
    let disfluent = disfluency_sets(tree).eip;
    let reparandum: Vec<String> = words[edited_span.i..edited_span.j].iter().map(|w| w.to_lowercase()).collect();
    let following: Vec<String> = (edited_span.j..words.len())
        .filter(|k| !disfluent.contains(k))
        .map(|k| words[k].to_lowercase())
        .collect();
    if following.is_empty() {
        return Ok(DisfluencyType::Restart);
    }
    let candidate = &following[..reparandum.len().min(following.len())];
    if candidate.len() == reparandum.len() && candidate == reparandum.as_slice() {
        return Ok(DisfluencyType::Repetition);
    }
    let overlap = candidate.iter().any(|w| reparandum.contains(w));
    if reparandum.len() >= 2 && !overlap {
        return Ok(DisfluencyType::Restart);
    }
    Ok(DisfluencyType::Correction)
}

/// Per-type F(W_E): both gold and predicted EDITED positions are restricted
/// to the gold EDITED regions of each type. Region types come from
/// `annotations` when given (matched by span), otherwise from
/// [`classify_disfluency`] on the gold tree.
pub fn typology_report(
    gold: &[ParseTree],
    pred: &[ParseTree],
    annotations: Option<&[Vec<TypedRegion>]>,
) -> Result<BTreeMap<DisfluencyType, CategoryRecord>, EvalError> {
    check_aligned(gold, pred)?;
    if let Some(a) = annotations {
        if a.len() != gold.len() {
            return Err(EvalError::CountMismatch { gold: gold.len(), pred: a.len() });
        }
    }
    let mut counts: BTreeMap<DisfluencyType, (usize, usize, usize)> =
        DisfluencyType::ALL.iter().map(|t| (*t, (0, 0, 0))).collect();
    for (k, (g, p)) in gold.iter().zip(pred).enumerate() {
        let pred_edited = disfluency_sets(p).edited;
        for region in typed_regions(g, annotations.map(|a| a[k].as_slice()))? {
            let positions: BTreeSet<usize> = (region.start..region.end).collect();
            let hit = positions.intersection(&pred_edited).count();
            let c = counts.get_mut(&region.kind).expect("all types present");
            c.0 += hit;
            c.1 += hit;
            c.2 += positions.len();
        }
    }
    Ok(counts
        .into_iter()
        .map(|(t, (m, p, g))| (t, CategoryRecord::from_counts(format!("W_E[{t}]"), m, p, g)))
        .collect())
}

/// Gold EDITED regions with their types; annotated regions win over the heuristic.
pub fn typed_regions(tree: &ParseTree, annotation: Option<&[TypedRegion]>) -> Result<Vec<TypedRegion>, EvalError> {
    edited_regions(tree)
        .into_iter()
        .map(|span| {
            let annotated = annotation.and_then(|a| a.iter().find(|r| r.start == span.i && r.end == span.j));
            let kind = match annotated {
                Some(r) => r.kind,
                None => classify_disfluency(tree, &span)?,
            };
            Ok(TypedRegion { start: span.i, end: span.j, kind })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sentences: usize,
    pub s: CategoryRecord,
    pub s_e: CategoryRecord,
    pub s_eip: CategoryRecord,
    pub w_e: CategoryRecord,
    pub w_eip: CategoryRecord,
    pub typology: BTreeMap<DisfluencyType, CategoryRecord>,
}

impl EvalReport {
    pub fn categories(&self) -> Vec<&CategoryRecord> {
        let mut v = vec![&self.s, &self.s_e, &self.s_eip, &self.w_e, &self.w_eip];
        v.extend(self.typology.values());
        v
    }

    /// Machine-readable form: one `key=value` record per line.
    pub fn to_records(&self) -> String {
        let mut out = format!("sentences={}\n", self.sentences);
        for c in self.categories() {
            out.push_str(&c.to_record_line());
            out.push('\n');
        }
        out
    }

    /// Aligned human-readable table.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<16} {:>8} {:>9} {:>8} {:>8} {:>8} {:>8}\n",
            "category", "matched", "predicted", "gold", "P", "R", "F"
        );
        for c in self.categories() {
            out.push_str(&format!(
                "{:<16} {:>8} {:>9} {:>8} {:>8.4} {:>8.4} {:>8.4}{}\n",
                c.category,
                c.matched,
                c.predicted,
                c.gold,
                c.precision,
                c.recall,
                c.f_score,
                if c.precision_undefined { " *" } else { "" }
            ));
        }
        out.push_str(&format!("sentences: {}\n", self.sentences));
        out
    }

    /// Category-wise mean of several reports; counts are averaged and rounded.
    pub fn mean(reports: &[EvalReport]) -> Option<EvalReport> {
        let first = reports.first()?;
        let k = reports.len() as f64;
        let avg = |pick: &dyn Fn(&EvalReport) -> &CategoryRecord| {
            let base = pick(first).clone();
            let sum = |f: &dyn Fn(&CategoryRecord) -> f64| reports.iter().map(|r| f(pick(r))).sum::<f64>() / k;
            let sumc = |f: &dyn Fn(&CategoryRecord) -> usize| {
                (reports.iter().map(|r| f(pick(r)) as f64).sum::<f64>() / k).round() as usize
            };
            CategoryRecord {
                category: base.category,
                matched: sumc(&|c| c.matched),
                predicted: sumc(&|c| c.predicted),
                gold: sumc(&|c| c.gold),
                precision: sum(&|c| c.precision),
                recall: sum(&|c| c.recall),
                f_score: sum(&|c| c.f_score),
                precision_undefined: reports.iter().any(|r| pick(r).precision_undefined),
            }
        };
        let typology = first
            .typology
            .keys()
            .map(|t| (*t, avg(&|r: &EvalReport| &r.typology[t])))
            .collect();
        Some(EvalReport {
            sentences: first.sentences,
            s: avg(&|r| &r.s),
            s_e: avg(&|r| &r.s_e),
            s_eip: avg(&|r| &r.s_eip),
            w_e: avg(&|r| &r.w_e),
            w_eip: avg(&|r| &r.w_eip),
            typology,
        })
    }
}

/// All metrics for an aligned pair of corpora.
pub fn evaluate(
    gold: &[ParseTree],
    pred: &[ParseTree],
    annotations: Option<&[Vec<TypedRegion>]>,
) -> Result<EvalReport, EvalError> {
    Ok(EvalReport {
        sentences: gold.len(),
        s: span_prf(gold, pred, SpanFilter::All)?,
        s_e: span_prf(gold, pred, SpanFilter::Edited)?,
        s_eip: span_prf(gold, pred, SpanFilter::Eip)?,
        w_e: word_prf(gold, pred, WordCategory::Edited)?,
        w_eip: word_prf(gold, pred, WordCategory::Eip)?,
        typology: typology_report(gold, pred, annotations)?
            .into_iter()
            .map(|(t, r)| {
                let name = format!("W_E[{t}]");
                (t, r.renamed(&name))
            })
            .collect(),
    })
}
