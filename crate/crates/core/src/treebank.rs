//! Bracketed parse trees: reading, writing, normalization and the span /
//! word-position label sets consumed by the decoder and the evaluator.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Preterminal tag assigned to every token after normalization.
pub const UNK_TAG: &str = "UNK";
pub const EDITED: &str = "EDITED";
pub const INTJ: &str = "INTJ";
pub const PRN: &str = "PRN";
/// Separator for collapsed unary chains, e.g. `S+VP`.
pub const CHAIN_SEP: char = '+';

/// Default punctuation preterminal tags removed by [`normalize`].
pub const DEFAULT_PUNCT_TAGS: &[&str] = &[".", ",", "?", "!", ":", "``", "''"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreebankError {
    #[error("unbalanced parentheses at offset {offset}")]
    Unbalanced { offset: usize },
    #[error("empty constituent at offset {offset}")]
    EmptyConstituent { offset: usize },
    #[error("bare token at internal position at offset {offset}")]
    BareToken { offset: usize },
    #[error("unexpected input at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("normalization removed every token")]
    EmptySentence,
    #[error("tree is invalid: {0}")]
    Invalid(String),
    #[error("{path}:{line}: {source}")]
    AtLine {
        path: String,
        line: usize,
        #[source]
        source: Box<TreebankError>,
    },
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub index: usize,
    pub tag: String,
}

/// A constituent with ordered children, or a preterminal over one token.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ParseTree {
    Node { label: String, children: Vec<ParseTree> },
    Leaf(Token),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabeledSpan {
    pub i: usize,
    pub j: usize,
    pub label: String,
}

impl LabeledSpan {
    pub fn new(i: usize, j: usize, label: impl Into<String>) -> Self {
        LabeledSpan { i, j, label: label.into() }
    }

    pub fn has_component(&self, name: &str) -> bool {
        label_has_component(&self.label, name)
    }
}

/// Word positions dominated by disfluency nodes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DisfluencySets {
    pub edited: BTreeSet<usize>,
    pub intj: BTreeSet<usize>,
    pub prn: BTreeSet<usize>,
    pub eip: BTreeSet<usize>,
}

pub fn label_has_component(label: &str, name: &str) -> bool {
    label.split(CHAIN_SEP).any(|c| c == name)
}

impl ParseTree {
    pub fn node(label: impl Into<String>, children: Vec<ParseTree>) -> Self {
        ParseTree::Node { label: label.into(), children }
    }

    pub fn leaf(tag: impl Into<String>, surface: impl Into<String>, index: usize) -> Self {
        ParseTree::Leaf(Token { surface: surface.into(), index, tag: tag.into() })
    }

    pub fn label(&self) -> &str {
        match self {
            ParseTree::Node { label, .. } => label,
            ParseTree::Leaf(t) => &t.tag,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, ParseTree::Leaf(_))
    }

    /// Tokens in left-to-right order.
    pub fn tokens(&self) -> Vec<&Token> {
        let mut out = Vec::new();
        self.collect_tokens(&mut out);
        out
    }

    fn collect_tokens<'a>(&'a self, out: &mut Vec<&'a Token>) {
        match self {
            ParseTree::Leaf(t) => out.push(t),
            ParseTree::Node { children, .. } => {
                for c in children {
                    c.collect_tokens(out);
                }
            }
        }
    }

    pub fn words(&self) -> Vec<String> {
        self.tokens().into_iter().map(|t| t.surface.clone()).collect()
    }

    pub fn len(&self) -> usize {
        match self {
            ParseTree::Leaf(_) => 1,
            ParseTree::Node { children, .. } => children.iter().map(ParseTree::len).sum(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks the structural invariants: internal nodes are non-empty,
    /// the root is a constituent, and token indices run 0..n without gaps.
    pub fn validate(&self) -> Result<(), TreebankError> {
        if self.is_leaf() {
            return Err(TreebankError::Invalid("root is a preterminal".into()));
        }
        fn walk(t: &ParseTree, next: &mut usize) -> Result<(), TreebankError> {
            match t {
                ParseTree::Leaf(tok) => {
                    if tok.surface.is_empty() {
                        return Err(TreebankError::Invalid("empty token surface".into()));
                    }
                    if tok.index != *next {
                        return Err(TreebankError::Invalid(format!(
                            "token '{}' has index {} but expected {}",
                            tok.surface, tok.index, next
                        )));
                    }
                    *next += 1;
                    Ok(())
                }
                ParseTree::Node { label, children } => {
                    if children.is_empty() {
                        return Err(TreebankError::Invalid(format!("node '{label}' has no children")));
                    }
                    children.iter().try_for_each(|c| walk(c, next))
                }
            }
        }
        let mut next = 0;
        walk(self, &mut next)
    }

    /// Re-assigns token indices left to right.
    pub fn renumber(&mut self) {
        fn walk(t: &mut ParseTree, next: &mut usize) {
            match t {
                ParseTree::Leaf(tok) => {
                    tok.index = *next;
                    *next += 1;
                }
                ParseTree::Node { children, .. } => children.iter_mut().for_each(|c| walk(c, next)),
            }
        }
        let mut next = 0;
        walk(self, &mut next);
    }
}

impl fmt::Display for ParseTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseTree::Leaf(t) => write!(f, "({} {})", t.tag, t.surface),
            ParseTree::Node { label, children } => {
                write!(f, "({label}")?;
                for c in children {
                    write!(f, " {c}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Debug, PartialEq)]
enum Lexeme {
    Open,
    Close,
    Atom(String),
}

fn lex(text: &str) -> Vec<(usize, Lexeme)> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(pos, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c == '(' {
            out.push((pos, Lexeme::Open));
            chars.next();
        } else if c == ')' {
            out.push((pos, Lexeme::Close));
            chars.next();
        } else {
            let start = pos;
            let mut atom = String::new();
            while let Some(&(_, c)) = chars.peek() {
                if c.is_whitespace() || c == '(' || c == ')' {
                    break;
                }
                atom.push(c);
                chars.next();
            }
            out.push((start, Lexeme::Atom(atom)));
        }
    }
    out
}

/// Parses one bracketed tree, e.g. `(S (NP (DT the) (NN dog)))`.
///
/// A PTB-style outer wrapper with an empty label, `( (S ...) )`, is unwrapped.
pub fn parse_bracketed(text: &str) -> Result<ParseTree, TreebankError> {
    // Balance is checked up front so structural errors never mask it.
    let mut depth = 0usize;
    let mut seen_open = false;
    for (pos, c) in text.char_indices() {
        match c {
            '(' => {
                depth += 1;
                seen_open = true;
            }
            ')' => {
                if depth == 0 {
                    return Err(TreebankError::Unbalanced { offset: pos });
                }
                depth -= 1;
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err(TreebankError::Unbalanced { offset: text.len() });
    }
    if !seen_open {
        return Err(TreebankError::Syntax { offset: 0, message: "expected '('".into() });
    }

    let lexemes = lex(text);
    let mut pos = 0usize;
    let mut next_index = 0usize;
    let tree = parse_node(&lexemes, &mut pos, &mut next_index, text.len())?;
    if pos != lexemes.len() {
        return Err(TreebankError::Syntax {
            offset: lexemes[pos].0,
            message: "trailing input after tree".into(),
        });
    }
    let tree = match tree {
        ParseTree::Node { label, mut children } if label.is_empty() && children.len() == 1 => children.remove(0),
        t => t,
    };
    if tree.is_leaf() {
        return Err(TreebankError::Syntax { offset: 0, message: "root must be a constituent".into() });
    }
    Ok(tree)
}

fn parse_node(
    lexemes: &[(usize, Lexeme)],
    pos: &mut usize,
    next_index: &mut usize,
    end: usize,
) -> Result<ParseTree, TreebankError> {
    let open_at = match lexemes.get(*pos) {
        Some((off, Lexeme::Open)) => *off,
        Some((off, _)) => return Err(TreebankError::Syntax { offset: *off, message: "expected '('".into() }),
        None => return Err(TreebankError::Unbalanced { offset: end }),
    };
    *pos += 1;
    let label = match lexemes.get(*pos) {
        Some((_, Lexeme::Atom(a))) => {
            *pos += 1;
            a.clone()
        }
        Some((_, Lexeme::Open)) => String::new(),
        Some((_, Lexeme::Close)) => return Err(TreebankError::EmptyConstituent { offset: open_at }),
        None => return Err(TreebankError::Unbalanced { offset: end }),
    };
    // Preterminal: (TAG word)
    if let (Some((_, Lexeme::Atom(word))), Some((_, Lexeme::Close))) = (lexemes.get(*pos), lexemes.get(*pos + 1)) {
        if label.is_empty() {
            return Err(TreebankError::EmptyConstituent { offset: open_at });
        }
        *pos += 2;
        let index = *next_index;
        *next_index += 1;
        return Ok(ParseTree::Leaf(Token { surface: word.clone(), index, tag: label }));
    }
    let mut children = Vec::new();
    loop {
        match lexemes.get(*pos) {
            Some((_, Lexeme::Close)) => {
                *pos += 1;
                break;
            }
            Some((_, Lexeme::Open)) => children.push(parse_node(lexemes, pos, next_index, end)?),
            Some((off, Lexeme::Atom(_))) => return Err(TreebankError::BareToken { offset: *off }),
            None => return Err(TreebankError::Unbalanced { offset: end }),
        }
    }
    if children.is_empty() {
        return Err(TreebankError::EmptyConstituent { offset: open_at });
    }
    Ok(ParseTree::Node { label, children })
}

/// Writes the tree on one line with single spaces; labels are emitted verbatim.
pub fn serialize(tree: &ParseTree) -> String {
    tree.to_string()
}

#[derive(Debug, Clone)]
pub struct NormalizeOptions {
    pub punct_tags: BTreeSet<String>,
}

impl Default for NormalizeOptions {
    fn default() -> Self {
        NormalizeOptions { punct_tags: DEFAULT_PUNCT_TAGS.iter().map(|s| s.to_string()).collect() }
    }
}

/// Removes partial words (tag `XX` or surface ending in `-`) and punctuation,
/// prunes emptied constituents, renumbers tokens and rewrites every
/// preterminal tag to `UNK`.
pub fn normalize(tree: &ParseTree) -> Result<ParseTree, TreebankError> {
    normalize_with(tree, &NormalizeOptions::default())
}

pub fn normalize_with(tree: &ParseTree, opts: &NormalizeOptions) -> Result<ParseTree, TreebankError> {
    fn prune(t: &ParseTree, opts: &NormalizeOptions) -> Option<ParseTree> {
        match t {
            ParseTree::Leaf(tok) => {
                let drop = tok.tag == "XX" || tok.surface.ends_with('-') || opts.punct_tags.contains(&tok.tag);
                (!drop).then(|| ParseTree::Leaf(Token { tag: UNK_TAG.to_string(), ..tok.clone() }))
            }
            ParseTree::Node { label, children } => {
                let kept: Vec<_> = children.iter().filter_map(|c| prune(c, opts)).collect();
                (!kept.is_empty()).then(|| ParseTree::Node { label: label.clone(), children: kept })
            }
        }
    }
    let mut out = match prune(tree, opts) {
        Some(t @ ParseTree::Node { .. }) => t,
        _ => return Err(TreebankError::EmptySentence),
    };
    out.renumber();
    Ok(out)
}

/// One span per maximal unary chain of constituents, labels joined top-down
/// with `+`. Preterminals are not part of the span set.
pub fn labeled_spans(tree: &ParseTree) -> Vec<LabeledSpan> {
    fn walk(t: &ParseTree, start: usize, out: &mut Vec<LabeledSpan>) -> usize {
        let ParseTree::Node { label, children } = t else {
            return start + 1;
        };
        let mut chain = label.clone();
        let mut kids = children;
        while kids.len() == 1 {
            match &kids[0] {
                ParseTree::Node { label, children } => {
                    chain.push(CHAIN_SEP);
                    chain.push_str(label);
                    kids = children;
                }
                ParseTree::Leaf(_) => break,
            }
        }
        let slot = out.len();
        out.push(LabeledSpan { i: start, j: start, label: chain });
        let mut end = start;
        for c in kids {
            end = walk(c, end, out);
        }
        out[slot].j = end;
        end
    }
    let mut out = Vec::new();
    walk(tree, 0, &mut out);
    out
}

/// Word positions dominated by EDITED, INTJ and PRN nodes (composite labels
/// count for each of their components).
pub fn disfluency_sets(tree: &ParseTree) -> DisfluencySets {
    let mut sets = DisfluencySets::default();
    for span in labeled_spans(tree) {
        for (name, set) in [(EDITED, &mut sets.edited), (INTJ, &mut sets.intj), (PRN, &mut sets.prn)] {
            if span.has_component(name) {
                set.extend(span.i..span.j);
            }
        }
    }
    sets.eip = sets.edited.iter().chain(&sets.intj).chain(&sets.prn).copied().collect();
    sets
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Gold,
    Silver,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub words: Vec<String>,
    pub tree: ParseTree,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub entries: Vec<CorpusEntry>,
    pub provenance: Provenance,
}

impl Corpus {
    pub fn new(provenance: Provenance) -> Self {
        Corpus { entries: Vec::new(), provenance }
    }

    pub fn from_trees(trees: Vec<ParseTree>, provenance: Provenance) -> Self {
        let entries = trees.into_iter().map(|tree| CorpusEntry { words: tree.words(), tree }).collect();
        Corpus { entries, provenance }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn trees(&self) -> impl Iterator<Item = &ParseTree> {
        self.entries.iter().map(|e| &e.tree)
    }

    /// Reads a one-tree-per-line file. When `normalize_trees` is set, entries
    /// that normalize to nothing are skipped; the skip count is returned.
    pub fn read(path: &Path, provenance: Provenance, normalize_trees: bool) -> Result<(Corpus, usize), TreebankError> {
        let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
        let mut corpus = Corpus::new(provenance);
        let mut skipped = 0;
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| io_err(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let at_line = |source| TreebankError::AtLine {
                path: path.display().to_string(),
                line: lineno + 1,
                source: Box::new(source),
            };
            let tree = parse_bracketed(&line).map_err(at_line)?;
            let tree = if normalize_trees {
                match normalize(&tree) {
                    Ok(t) => t,
                    Err(TreebankError::EmptySentence) => {
                        skipped += 1;
                        continue;
                    }
                    Err(e) => return Err(at_line(e)),
                }
            } else {
                tree
            };
            corpus.entries.push(CorpusEntry { words: tree.words(), tree });
        }
        Ok((corpus, skipped))
    }

    pub fn write(&self, path: &Path) -> Result<(), TreebankError> {
        let mut buf = String::new();
        for e in &self.entries {
            buf.push_str(&serialize(&e.tree));
            buf.push('\n');
        }
        fs::write(path, buf).map_err(|e| io_err(path, e))
    }
}

fn io_err(path: &Path, e: std::io::Error) -> TreebankError {
    TreebankError::Io { path: path.display().to_string(), message: e.to_string() }
}

/// Reads a whitespace-tokenized sentence file. Returns the non-empty
/// sentences and the number of blank lines skipped.
pub fn read_sentences(path: &Path) -> Result<(Vec<Vec<String>>, usize), TreebankError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    let mut skipped = 0;
    for line in text.lines() {
        let words: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if words.is_empty() {
            skipped += 1;
        } else {
            out.push(words);
        }
    }
    Ok((out, skipped))
}

pub fn write_sentences(path: &Path, sentences: &[Vec<String>]) -> Result<(), TreebankError> {
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(|e| io_err(path, e))?);
    for s in sentences {
        writeln!(f, "{}", s.join(" ")).map_err(|e| io_err(path, e))?;
    }
    f.flush().map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "(S (EDITED (NP (UNK a))) (NP (UNK a) (UNK b)))";

    #[test]
    fn parses_minimal_tree() {
        let t = parse_bracketed("(S (UNK a))").unwrap();
        assert_eq!(t, ParseTree::node("S", vec![ParseTree::leaf("UNK", "a", 0)]));
    }

    #[test]
    fn parses_fixture() {
        let t = parse_bracketed(FIXTURE).unwrap();
        assert_eq!(t.words(), vec!["a", "a", "b"]);
        fn internal(t: &ParseTree) -> usize {
            match t {
                ParseTree::Leaf(_) => 0,
                ParseTree::Node { children, .. } => 1 + children.iter().map(internal).sum::<usize>(),
            }
        }
        // S, EDITED, NP, NP
        assert_eq!(internal(&t), 4);
        t.validate().unwrap();
    }

    #[test]
    fn reports_unbalanced_offset() {
        assert_eq!(parse_bracketed("(S (NP a b)"), Err(TreebankError::Unbalanced { offset: 11 }));
        assert_eq!(parse_bracketed("(S (UNK a)))"), Err(TreebankError::Unbalanced { offset: 11 }));
    }

    #[test]
    fn reports_structural_errors() {
        assert_eq!(parse_bracketed("(S ())"), Err(TreebankError::EmptyConstituent { offset: 3 }));
        assert_eq!(parse_bracketed("(S a (UNK b))"), Err(TreebankError::BareToken { offset: 3 }));
        assert_eq!(parse_bracketed("(S (NP a b))"), Err(TreebankError::BareToken { offset: 7 }));
    }

    #[test]
    fn whitespace_insensitive() {
        let a = parse_bracketed("(S\n  (UNK   a)\t(UNK b) )").unwrap();
        let b = parse_bracketed("(S (UNK a) (UNK b))").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unwraps_ptb_outer_bracket() {
        let t = parse_bracketed("( (S (UNK a)) )").unwrap();
        assert_eq!(serialize(&t), "(S (UNK a))");
    }

    #[test]
    fn serialize_round_trips() {
        for s in ["(S (UNK a))", FIXTURE, "(S+VP (UNK a) (UNK b))"] {
            let t = parse_bracketed(s).unwrap();
            assert_eq!(serialize(&t), s);
            assert_eq!(parse_bracketed(&serialize(&t)).unwrap(), t);
        }
    }

    #[test]
    fn normalize_removes_partials_and_punct() {
        let t = parse_bracketed("(S (NP (XX th-) (DT the) (NN dog)) (. .))").unwrap();
        let n = normalize(&t).unwrap();
        assert_eq!(serialize(&n), "(S (NP (UNK the) (UNK dog)))");
        n.validate().unwrap();
    }

    #[test]
    fn normalize_identity_modulo_tags() {
        let t = parse_bracketed("(S (NP (DT the) (NN dog)) (VP (VBD ran)))").unwrap();
        let n = normalize(&t).unwrap();
        assert_eq!(serialize(&n), "(S (NP (UNK the) (UNK dog)) (VP (UNK ran)))");
        assert_eq!(normalize(&n).unwrap(), n);
    }

    #[test]
    fn normalize_all_punct_is_empty() {
        let t = parse_bracketed("(S (. .) (, ,))").unwrap();
        assert_eq!(normalize(&t), Err(TreebankError::EmptySentence));
    }

    #[test]
    fn normalize_dash_suffix_only() {
        let t = parse_bracketed("(S (NN well-) (NN well-known))").unwrap();
        assert_eq!(serialize(&normalize(&t).unwrap()), "(S (UNK well-known))");
    }

    #[test]
    fn spans_of_fixture() {
        let t = parse_bracketed(FIXTURE).unwrap();
        let spans: BTreeSet<_> = labeled_spans(&t).into_iter().collect();
        let want: BTreeSet<_> = [
            LabeledSpan::new(0, 3, "S"),
            LabeledSpan::new(0, 1, "EDITED+NP"),
            LabeledSpan::new(1, 3, "NP"),
        ]
        .into_iter()
        .collect();
        assert_eq!(spans, want);
    }

    #[test]
    fn spans_single_and_flat() {
        let t = parse_bracketed("(S (UNK a))").unwrap();
        assert_eq!(labeled_spans(&t), vec![LabeledSpan::new(0, 1, "S")]);
        let t = parse_bracketed("(S (UNK a) (UNK b))").unwrap();
        assert_eq!(labeled_spans(&t), vec![LabeledSpan::new(0, 2, "S")]);
    }

    #[test]
    fn root_unary_chain_collapses() {
        let t = parse_bracketed("(S (VP (UNK a) (UNK b)))").unwrap();
        assert_eq!(labeled_spans(&t), vec![LabeledSpan::new(0, 2, "S+VP")]);
    }

    #[test]
    fn figure_one_disfluency_sets() {
        // the first kind of invasion of | uh | I mean | the first type of privacy seemed invaded to me
        let t = parse_bracketed(
            "(S (EDITED (NP (NP (UNK the) (UNK first) (UNK kind)) (PP (UNK of) (NP (UNK invasion) (PP (UNK of)))))) \
             (INTJ (UNK uh)) (PRN (S (NP (UNK I)) (VP (UNK mean)))) \
             (NP (NP (UNK the) (UNK first) (UNK type)) (PP (UNK of) (NP (UNK privacy)))) \
             (VP (UNK seemed) (VP (UNK invaded) (PP (UNK to) (NP (UNK me))))))",
        )
        .unwrap();
        let d = disfluency_sets(&t);
        assert_eq!(d.edited, (0..6).collect());
        assert_eq!(d.intj, [6].into_iter().collect());
        assert_eq!(d.prn, [7, 8].into_iter().collect());
        assert_eq!(d.eip, (0..9).collect());
    }

    #[test]
    fn fluent_tree_has_no_disfluency() {
        let t = parse_bracketed("(S (NP (UNK a)) (VP (UNK b)))").unwrap();
        assert_eq!(disfluency_sets(&t), DisfluencySets::default());
    }

    #[test]
    fn nested_edited_counts_once() {
        let t = parse_bracketed("(S (EDITED (EDITED (UNK a)) (UNK b)) (UNK c))").unwrap();
        let d = disfluency_sets(&t);
        assert_eq!(d.edited, [0, 1].into_iter().collect());
    }

    #[test]
    fn composite_labels_count_components() {
        let t = parse_bracketed("(S (EDITED+NP (UNK a)) (UNK b))").unwrap();
        assert_eq!(disfluency_sets(&t).edited, [0].into_iter().collect());
    }

    #[test]
    fn validate_rejects_gaps() {
        let t = ParseTree::node("S", vec![ParseTree::leaf("UNK", "a", 0), ParseTree::leaf("UNK", "b", 2)]);
        assert!(t.validate().is_err());
    }
}
