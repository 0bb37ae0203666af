//! Synthetic treebank generation: fluent trees from a weighted grammar, then
//! repetitions, corrections and restarts injected with EDITED / INTJ / PRN
//! structure and their true types recorded.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{edited_regions, DisfluencyType, TypedRegion};
use crate::treebank::{disfluency_sets, serialize, ParseTree, Token, EDITED, INTJ, PRN};

pub const DEFAULT_GRAMMAR: &str = include_str!("../data/conversational.grammar");
pub const OUT_OF_DOMAIN_GRAMMAR: &str = include_str!("../data/newswire.grammar");

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("grammar line {line}: {message}")]
    Grammar { line: usize, message: String },
    #[error("grammar: {0}")]
    GrammarSemantics(String),
    #[error("no sentence within {max_len} words after {attempts} attempts")]
    NoTermination { max_len: usize, attempts: usize },
    #[error("invalid disfluency config: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Production {
    pub rhs: Vec<String>,
    pub weight: f64,
}

/// Weighted productions plus a per-tag lexicon.
#[derive(Debug, Clone, PartialEq)]
pub struct GrammarSpec {
    pub start: String,
    pub productions: BTreeMap<String, Vec<Production>>,
    pub lexicon: BTreeMap<String, Vec<String>>,
}

impl GrammarSpec {
    /// Parses the line format:
    ///
    /// ```text
    /// start S
    /// S -> NP VP 3.5
    /// lex NN dog cat house
    /// ```
    pub fn parse(text: &str) -> Result<Self, SynthError> {
        let mut start = None;
        let mut productions: BTreeMap<String, Vec<Production>> = BTreeMap::new();
        let mut lexicon: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut first_seen: BTreeMap<String, usize> = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |message: &str| SynthError::Grammar { line, message: message.to_string() };
            let fields: Vec<&str> = content.split_whitespace().collect();
            match fields[0] {
                "start" => {
                    if fields.len() != 2 {
                        return Err(err("expected `start SYMBOL`"));
                    }
                    start = Some(fields[1].to_string());
                }
                "lex" => {
                    if fields.len() < 3 {
                        return Err(err("expected `lex TAG word...`"));
                    }
                    let words = lexicon.entry(fields[1].to_string()).or_default();
                    for w in &fields[2..] {
                        if !words.iter().any(|x| x == w) {
                            words.push(w.to_string());
                        }
                    }
                    first_seen.entry(fields[1].to_string()).or_insert(line);
                }
                lhs => {
                    if fields.len() < 3 || fields[1] != "->" {
                        return Err(err("expected `LHS -> RHS... [weight]` or a `start`/`lex` directive"));
                    }
                    let mut rhs: Vec<String> = fields[2..].iter().map(|s| s.to_string()).collect();
                    let mut weight = 1.0;
                    if let Some(w) = rhs.last().and_then(|s| s.parse::<f64>().ok()) {
                        weight = w;
                        rhs.pop();
                    }
                    if rhs.is_empty() {
                        return Err(err("production has an empty right-hand side"));
                    }
                    if !(weight > 0.0 && weight.is_finite()) {
                        return Err(err("production weight must be positive"));
                    }
                    for sym in std::iter::once(lhs).chain(rhs.iter().map(String::as_str)) {
                        first_seen.entry(sym.to_string()).or_insert(line);
                    }
                    productions.entry(lhs.to_string()).or_default().push(Production { rhs, weight });
                }
            }
        }
        let start = start.ok_or_else(|| SynthError::GrammarSemantics("missing `start` directive".into()))?;
        for (sym, line) in &first_seen {
            let is_nt = productions.contains_key(sym);
            let is_pt = lexicon.contains_key(sym);
            if is_nt && is_pt {
                return Err(SynthError::Grammar { line: *line, message: format!("{sym} is both a nonterminal and a tag") });
            }
            if !is_nt && !is_pt {
                return Err(SynthError::Grammar { line: *line, message: format!("symbol {sym} has no productions or words") });
            }
        }
        if !productions.contains_key(&start) {
            return Err(SynthError::GrammarSemantics(format!("start symbol {start} has no productions")));
        }
        Ok(GrammarSpec { start, productions, lexicon })
    }

    pub fn from_file(path: &Path) -> Result<Self, SynthError> {
        let text = fs::read_to_string(path).map_err(|source| SynthError::Io { path: path.into(), source })?;
        Self::parse(&text)
    }

    pub fn default_conversational() -> Self {
        Self::parse(DEFAULT_GRAMMAR).expect("bundled grammar parses")
    }

    pub fn out_of_domain() -> Self {
        Self::parse(OUT_OF_DOMAIN_GRAMMAR).expect("bundled grammar parses")
    }

    /// Every constituent label the grammar can emit.
    pub fn nonterminals(&self) -> impl Iterator<Item = &str> {
        self.productions.keys().map(String::as_str)
    }

    fn tag_of_word(&self, word: &str) -> Vec<&str> {
        self.lexicon.iter().filter(|(_, ws)| ws.iter().any(|w| w == word)).map(|(t, _)| t.as_str()).collect()
    }
}

/// Maximum expansion depth before a sample is rejected.
const MAX_DEPTH: usize = 40;
pub const DEFAULT_MAX_LEN: usize = 40;
const MAX_ATTEMPTS: usize = 1000;

fn expand(
    grammar: &GrammarSpec,
    symbol: &str,
    rng: &mut impl Rng,
    depth: usize,
    budget: &mut usize,
    next: &mut usize,
) -> Option<ParseTree> {
    if let Some(words) = grammar.lexicon.get(symbol) {
        if *budget == 0 {
            return None;
        }
        *budget -= 1;
        let w = &words[rng.random_range(0..words.len())];
        let tok = Token { surface: w.clone(), index: *next, tag: symbol.to_string() };
        *next += 1;
        return Some(ParseTree::Leaf(tok));
    }
    if depth >= MAX_DEPTH {
        return None;
    }
    let prods = &grammar.productions[symbol];
    let dist = WeightedIndex::new(prods.iter().map(|p| p.weight)).expect("positive weights");
    let prod = &prods[dist.sample(rng)];
    let mut children = Vec::with_capacity(prod.rhs.len());
    for sym in &prod.rhs {
        children.push(expand(grammar, sym, rng, depth + 1, budget, next)?);
    }
    Some(ParseTree::node(symbol, children))
}

/// Samples one tree with at most `max_len` words, rejecting longer ones.
pub fn sample_tree(grammar: &GrammarSpec, rng: &mut impl Rng, max_len: usize) -> Result<ParseTree, SynthError> {
    for _ in 0..MAX_ATTEMPTS {
        let mut budget = max_len;
        let mut next = 0;
        if let Some(t) = expand(grammar, &grammar.start, rng, 0, &mut budget, &mut next) {
            return Ok(t);
        }
    }
    Err(SynthError::NoTermination { max_len, attempts: MAX_ATTEMPTS })
}

/// `count` independent fluent trees.
pub fn generate_fluent(grammar: &GrammarSpec, rng: &mut impl Rng, count: usize, max_len: usize) -> Result<Vec<ParseTree>, SynthError> {
    (0..count).map(|_| sample_tree(grammar, rng, max_len)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisfluencyConfig {
    /// Probability that a sentence receives an edit disfluency.
    pub rate: f64,
    pub repetition_weight: f64,
    pub correction_weight: f64,
    pub restart_weight: f64,
    /// Probability of an interregnum between reparandum and repair.
    pub interregnum_prob: f64,
    /// Probability of a free-standing filler in an otherwise fluent position.
    pub filler_prob: f64,
    pub fillers: Vec<String>,
    pub discourse_markers: Vec<Vec<String>>,
    /// Longest reparandum in words. Short ones dominate in real speech.
    pub max_reparandum: usize,
    /// Per-token substitution rate for corrections (at least one is forced).
    pub substitution_rate: f64,
}

impl Default for DisfluencyConfig {
    fn default() -> Self {
        DisfluencyConfig {
            rate: 0.34,
            repetition_weight: 0.5,
            correction_weight: 0.3,
            restart_weight: 0.2,
            interregnum_prob: 0.3,
            filler_prob: 0.08,
            fillers: ["uh", "um", "well", "oh"].iter().map(|s| s.to_string()).collect(),
            discourse_markers: vec![
                vec!["i".to_string(), "mean".to_string()],
                vec!["you".to_string(), "know".to_string()],
            ],
            max_reparandum: 2,
            substitution_rate: 0.5,
        }
    }
}

impl DisfluencyConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        for (name, p) in [
            ("rate", self.rate),
            ("interregnum_prob", self.interregnum_prob),
            ("filler_prob", self.filler_prob),
            ("substitution_rate", self.substitution_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SynthError::Config(format!("{name} must be in [0, 1]")));
            }
        }
        let w = [self.repetition_weight, self.correction_weight, self.restart_weight];
        if w.iter().any(|x| *x < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(SynthError::Config("type mixture weights must be non-negative and sum to 1".into()));
        }
        if self.max_reparandum == 0 {
            return Err(SynthError::Config("max_reparandum must be at least 1".into()));
        }
        if self.fillers.is_empty() || self.discourse_markers.iter().any(Vec::is_empty) {
            return Err(SynthError::Config("filler and discourse-marker lexicons must be non-empty".into()));
        }
        Ok(())
    }
}

/// A generated sentence with gold disfluency structure.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedEntry {
    pub tree: ParseTree,
    pub regions: Vec<TypedRegion>,
    /// Tokens of the sentence with reparandum and interregnum removed.
    pub fluent: Vec<String>,
    /// Set when the requested disfluency type could not be placed.
    pub fell_back: bool,
}

fn node_children_mut<'a>(tree: &'a mut ParseTree, path: &[usize]) -> &'a mut Vec<ParseTree> {
    let mut cur = tree;
    for &k in path {
        cur = match cur {
            ParseTree::Node { children, .. } => &mut children[k],
            ParseTree::Leaf(_) => unreachable!("paths only address constituents"),
        };
    }
    match cur {
        ParseTree::Node { children, .. } => children,
        ParseTree::Leaf(_) => unreachable!("paths only address constituents"),
    }
}

fn subtree<'a>(tree: &'a ParseTree, path: &[usize]) -> &'a ParseTree {
    let mut cur = tree;
    for &k in path {
        if let ParseTree::Node { children, .. } = cur {
            cur = &children[k];
        }
    }
    cur
}

/// Paths (child-index sequences) of every non-root node with `1..=max_len` words.
fn candidate_sites(tree: &ParseTree, max_len: usize) -> Vec<Vec<usize>> {
    fn walk(t: &ParseTree, path: &mut Vec<usize>, max_len: usize, out: &mut Vec<Vec<usize>>) {
        if !path.is_empty() && t.len() <= max_len {
            out.push(path.clone());
        }
        if let ParseTree::Node { children, .. } = t {
            for (k, c) in children.iter().enumerate() {
                path.push(k);
                walk(c, path, max_len, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    walk(tree, &mut Vec::new(), max_len, &mut out);
    out
}

/// Keeps only the first `k` words of a tree, dropping emptied constituents.
fn truncate(tree: &ParseTree, k: usize) -> Option<ParseTree> {
    fn go(t: &ParseTree, left: &mut usize) -> Option<ParseTree> {
        if *left == 0 {
            return None;
        }
        match t {
            ParseTree::Leaf(_) => {
                *left -= 1;
                Some(t.clone())
            }
            ParseTree::Node { label, children } => {
                let kept: Vec<_> = children.iter().map_while(|c| go(c, left)).collect();
                (!kept.is_empty()).then(|| ParseTree::node(label.clone(), kept))
            }
        }
    }
    let mut left = k;
    go(tree, &mut left)
}

fn substitute(tree: &mut ParseTree, grammar: &GrammarSpec, rate: f64, rng: &mut impl Rng) -> bool {
    let mut leaves: Vec<&mut Token> = Vec::new();
    fn collect<'a>(t: &'a mut ParseTree, out: &mut Vec<&'a mut Token>) {
        match t {
            ParseTree::Leaf(tok) => out.push(tok),
            ParseTree::Node { children, .. } => children.iter_mut().for_each(|c| collect(c, out)),
        }
    }
    collect(tree, &mut leaves);
    let substitutable: Vec<usize> = leaves
        .iter()
        .enumerate()
        .filter(|(_, t)| grammar.lexicon.get(&t.tag).is_some_and(|ws| ws.len() >= 2))
        .map(|(k, _)| k)
        .collect();
    if substitutable.is_empty() {
        return false;
    }
    let mut chosen: Vec<usize> = substitutable.iter().copied().filter(|_| rng.random::<f64>() < rate).collect();
    if chosen.is_empty() {
        chosen.push(substitutable[rng.random_range(0..substitutable.len())]);
    }
    for k in chosen {
        let tok = &mut leaves[k];
        let words = &grammar.lexicon[&tok.tag];
        let options: Vec<&String> = words.iter().filter(|w| **w != tok.surface).collect();
        tok.surface = options[rng.random_range(0..options.len())].clone();
    }
    true
}

fn interregnum(config: &DisfluencyConfig, rng: &mut impl Rng) -> Vec<ParseTree> {
    let filler = |rng: &mut dyn rand::RngCore| {
        let w = &config.fillers[rng.random_range(0..config.fillers.len())];
        ParseTree::node(INTJ, vec![ParseTree::leaf("UH", w.clone(), 0)])
    };
    let marker = |rng: &mut dyn rand::RngCore| {
        let m = &config.discourse_markers[rng.random_range(0..config.discourse_markers.len())];
        ParseTree::node(PRN, m.iter().map(|w| ParseTree::leaf("DM", w.clone(), 0)).collect())
    };
    let r: f64 = rng.random();
    if r < 0.6 {
        vec![filler(rng)]
    } else if r < 0.85 {
        vec![marker(rng)]
    } else {
        vec![filler(rng), marker(rng)]
    }
}

/// Possibly injects one edit disfluency (and free-standing fillers).
/// `grammar` supplies same-tag substitutions and restart material.
pub fn inject_disfluency(
    tree: &ParseTree,
    grammar: &GrammarSpec,
    config: &DisfluencyConfig,
    rng: &mut impl Rng,
) -> Result<AnnotatedEntry, SynthError> {
    let fluent = tree.words();
    let mut out = tree.clone();
    let mut fell_back = false;
    let mut kind = None;
    if rng.random::<f64>() < config.rate {
        let mix = WeightedIndex::new([config.repetition_weight, config.correction_weight, config.restart_weight])
            .map_err(|e| SynthError::Config(e.to_string()))?;
        let wanted = DisfluencyType::ALL[mix.sample(rng)];
        let placed = match wanted {
            DisfluencyType::Repetition | DisfluencyType::Correction => {
                let sites = candidate_sites(&out, config.max_reparandum);
                let mut placed = false;
                if !sites.is_empty() {
                    let path = sites[rng.random_range(0..sites.len())].clone();
                    let mut reparandum = subtree(&out, &path).clone();
                    let ok = wanted == DisfluencyType::Repetition
                        || substitute(&mut reparandum, grammar, config.substitution_rate, rng);
                    if ok {
                        let (at, parent) = path.split_last().expect("non-root site");
                        let mut insert = vec![ParseTree::node(EDITED, vec![reparandum])];
                        if rng.random::<f64>() < config.interregnum_prob {
                            insert.extend(interregnum(config, rng));
                        }
                        let siblings = node_children_mut(&mut out, parent);
                        for (k, node) in insert.into_iter().enumerate() {
                            siblings.insert(at + k, node);
                        }
                        placed = true;
                    }
                }
                placed
            }
            DisfluencyType::Restart => {
                let other = sample_tree(grammar, rng, DEFAULT_MAX_LEN)?;
                let k = rng.random_range(1..=config.max_reparandum.min(other.len().saturating_sub(1)).max(1));
                let abandoned = truncate(&other, k).expect("k >= 1");
                let mut insert = vec![ParseTree::node(EDITED, vec![abandoned])];
                if rng.random::<f64>() < config.interregnum_prob {
                    insert.extend(interregnum(config, rng));
                }
                let siblings = node_children_mut(&mut out, &[]);
                for (k, node) in insert.into_iter().enumerate() {
                    siblings.insert(k, node);
                }
                true
            }
        };
        if placed {
            kind = Some(wanted);
        } else {
            fell_back = true;
        }
    }
    if rng.random::<f64>() < config.filler_prob {
        // A filled pause before a random top-level constituent.
        let ParseTree::Node { children, .. } = &mut out else { unreachable!() };
        let at = rng.random_range(0..=children.len());
        let w = &config.fillers[rng.random_range(0..config.fillers.len())];
        children.insert(at, ParseTree::node(INTJ, vec![ParseTree::leaf("UH", w.clone(), 0)]));
    }
    out.renumber();
    let regions = match kind {
        None => Vec::new(),
        Some(kind) => edited_regions(&out)
            .into_iter()
            .map(|s| TypedRegion { start: s.i, end: s.j, kind })
            .collect(),
    };
    Ok(AnnotatedEntry { tree: out, regions, fluent, fell_back })
}

/// Words left after deleting every EDITED / INTJ / PRN position.
pub fn fluent_projection(tree: &ParseTree) -> Vec<String> {
    let drop = disfluency_sets(tree).eip;
    tree.words().into_iter().enumerate().filter(|(k, _)| !drop.contains(k)).map(|(_, w)| w).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub unlabeled: usize,
}

impl Default for CorpusSizes {
    fn default() -> Self {
        CorpusSizes { train: 2000, dev: 500, test: 500, unlabeled: 20000 }
    }
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub grammar: GrammarSpec,
    /// Grammar for the unlabeled corpus; `None` reuses `grammar` (in-domain).
    pub unlabeled_grammar: Option<GrammarSpec>,
    pub disfluency: DisfluencyConfig,
    pub sizes: CorpusSizes,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            grammar: GrammarSpec::default_conversational(),
            unlabeled_grammar: None,
            disfluency: DisfluencyConfig::default(),
            sizes: CorpusSizes::default(),
            max_len: DEFAULT_MAX_LEN,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub sentences: usize,
    pub words: usize,
    pub edited_words: usize,
    pub eip_words: usize,
    pub by_type: BTreeMap<DisfluencyType, usize>,
    pub fallbacks: usize,
}

impl GenerationStats {
    fn add(&mut self, e: &AnnotatedEntry) {
        let sets = disfluency_sets(&e.tree);
        self.sentences += 1;
        self.words += e.tree.len();
        self.edited_words += sets.edited.len();
        self.eip_words += sets.eip.len();
        for r in &e.regions {
            *self.by_type.entry(r.kind).or_insert(0) += 1;
        }
        self.fallbacks += usize::from(e.fell_back);
    }

    /// Fraction of words inside EDITED regions.
    pub fn edited_rate(&self) -> f64 {
        if self.words == 0 {
            0.0
        } else {
            self.edited_words as f64 / self.words as f64
        }
    }
}

/// One split of generated data.
#[derive(Debug, Clone)]
pub struct GeneratedSplit {
    pub entries: Vec<AnnotatedEntry>,
    pub stats: GenerationStats,
}

/// Generates `count` annotated entries from an RNG stream.
pub fn generate_annotated(
    grammar: &GrammarSpec,
    config: &DisfluencyConfig,
    count: usize,
    max_len: usize,
    inject: bool,
    rng: &mut impl Rng,
) -> Result<GeneratedSplit, SynthError> {
    config.validate()?;
    let mut stats = GenerationStats::default();
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let fluent = sample_tree(grammar, rng, max_len)?;
        let entry = if inject {
            inject_disfluency(&fluent, grammar, config, rng)?
        } else {
            AnnotatedEntry { fluent: fluent.words(), tree: fluent, regions: Vec::new(), fell_back: false }
        };
        stats.add(&entry);
        entries.push(entry);
    }
    Ok(GeneratedSplit { entries, stats })
}

/// File names written by [`emit_corpora`].
pub const GOLD_TRAIN: &str = "gold_train.trees";
pub const GOLD_DEV: &str = "gold_dev.trees";
pub const GOLD_TEST: &str = "gold_test.trees";
pub const UNLABELED: &str = "unlabeled.txt";

pub fn types_sidecar_name(trees_file: &str) -> String {
    format!("{}.types.jsonl", trees_file.trim_end_matches(".trees"))
}

#[derive(Serialize, Deserialize)]
struct SidecarRecord {
    sentence: usize,
    regions: Vec<TypedRegion>,
}

pub fn write_type_sidecar(path: &Path, entries: &[AnnotatedEntry]) -> Result<(), SynthError> {
    let mut buf = String::new();
    for (k, e) in entries.iter().enumerate() {
        let rec = SidecarRecord { sentence: k, regions: e.regions.clone() };
        buf.push_str(&serde_json::to_string(&rec).expect("serializable"));
        buf.push('\n');
    }
    fs::write(path, buf).map_err(|source| SynthError::Io { path: path.into(), source })
}

/// Reads a type-annotation sidecar; the result is indexed by sentence.
pub fn read_type_sidecar(path: &Path) -> Result<Vec<Vec<TypedRegion>>, SynthError> {
    let text = fs::read_to_string(path).map_err(|source| SynthError::Io { path: path.into(), source })?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: SidecarRecord = serde_json::from_str(line)
            .map_err(|e| SynthError::Grammar { line: k + 1, message: format!("bad sidecar record: {e}") })?;
        if rec.sentence != out.len() {
            return Err(SynthError::Grammar { line: k + 1, message: "sidecar records out of order".into() });
        }
        out.push(rec.regions);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct EmittedCorpora {
    pub files: Vec<PathBuf>,
    pub stats: BTreeMap<String, GenerationStats>,
}

fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

fn write_lines(path: &Path, lines: impl Iterator<Item = String>) -> Result<(), SynthError> {
    let io = |source| SynthError::Io { path: path.into(), source };
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    for l in lines {
        writeln!(f, "{l}").map_err(io)?;
    }
    f.flush().map_err(io)
}

/// Writes gold train/dev/test trees (with type sidecars) and an unlabeled
/// sentence file. Each file draws from its own RNG stream.
pub fn emit_corpora(config: &SynthConfig, out_dir: &Path) -> Result<EmittedCorpora, SynthError> {
    fs::create_dir_all(out_dir).map_err(|source| SynthError::Io { path: out_dir.into(), source })?;
    let mut files = Vec::new();
    let mut stats = BTreeMap::new();
    let splits = [(GOLD_TRAIN, config.sizes.train), (GOLD_DEV, config.sizes.dev), (GOLD_TEST, config.sizes.test)];
    for (k, (name, count)) in splits.iter().enumerate() {
        let mut rng = stream(config.seed, k as u64);
        let split = generate_annotated(&config.grammar, &config.disfluency, *count, config.max_len, true, &mut rng)?;
        let path = out_dir.join(name);
        write_lines(&path, split.entries.iter().map(|e| serialize(&e.tree)))?;
        let sidecar = out_dir.join(types_sidecar_name(name));
        write_type_sidecar(&sidecar, &split.entries)?;
        log::info!(
            "{name}: {} sentences, {:.2}% EDITED words, types {:?}",
            split.stats.sentences,
            100.0 * split.stats.edited_rate(),
            split.stats.by_type
        );
        files.push(path);
        files.push(sidecar);
        stats.insert(name.to_string(), split.stats);
    }
    let (grammar, inject) = match &config.unlabeled_grammar {
        Some(g) => (g, false),
        None => (&config.grammar, true),
    };
    let mut rng = stream(config.seed, 3);
    let split = generate_annotated(grammar, &config.disfluency, config.sizes.unlabeled, config.max_len, inject, &mut rng)?;
    let path = out_dir.join(UNLABELED);
    write_lines(&path, split.entries.iter().map(|e| e.tree.words().join(" ")))?;
    log::info!(
        "{UNLABELED}: {} sentences, {:.2}% EDITED words (trees discarded), types {:?}",
        split.stats.sentences,
        100.0 * split.stats.edited_rate(),
        split.stats.by_type
    );
    files.push(path);
    stats.insert(UNLABELED.to_string(), split.stats);
    Ok(EmittedCorpora { files, stats })
}

/// Labels used by a set of trees (composite span labels).
pub fn label_inventory<'a>(trees: impl IntoIterator<Item = &'a ParseTree>) -> BTreeSet<String> {
    trees.into_iter().flat_map(|t| crate::treebank::labeled_spans(t).into_iter().map(|s| s.label)).collect()
}

/// Whether a word could have come from the grammar's lexicon.
pub fn in_lexicon(grammar: &GrammarSpec, word: &str) -> bool {
    !grammar.tag_of_word(word).is_empty()
}
