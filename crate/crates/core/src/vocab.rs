//! Symbol tables for terminals, dependency placeholders, and expansion
//! placeholders, plus pattern composition/parsing.
//!
//! The token table is the shared model-level vocabulary: terminals and
//! dependency placeholders live in one ID space, and the placeholder rows
//! are masked out of the final token softmax. Expansion placeholders get
//! their own table.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::treebank::{Corpus, DepTree};

/// Reserved token-table IDs.
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const ROOT_ID: usize = 2;

pub const PAD_SYMBOL: &str = "[pad]";
pub const UNK_SYMBOL: &str = "<unk>";
pub const ROOT_SYMBOL: &str = "[ROOT]";

/// Reserved expansion-table ID for the padding entry.
pub const EXP_PAD_ID: usize = 0;

/// The ordered left/right dependency labels around a head, e.g.
/// `[nsubj-advmod-HEAD-xcomp]`. An empty pattern renders as `[HEAD]` and
/// marks the end of a branch.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExpansionPattern {
    /// Labels of left dependents, outermost (leftmost) first.
    pub left: Vec<String>,
    /// Labels of right dependents in surface order.
    pub right: Vec<String>,
}

impl ExpansionPattern {
    pub fn new(left: Vec<String>, right: Vec<String>) -> Self {
        ExpansionPattern { left, right }
    }

    pub fn head_only() -> Self {
        ExpansionPattern::default()
    }

    pub fn is_head_only(&self) -> bool {
        self.left.is_empty() && self.right.is_empty()
    }

    pub fn render(&self) -> String {
        let mut parts: Vec<&str> = self.left.iter().map(String::as_str).collect();
        parts.push("HEAD");
        parts.extend(self.right.iter().map(String::as_str));
        format!("[{}]", parts.join("-"))
    }
}

impl fmt::Display for ExpansionPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PatternError {
    #[error("pattern {0:?} is not bracketed")]
    NotBracketed(String),
    #[error("pattern {0:?} has no HEAD component")]
    MissingHead(String),
    #[error("pattern {0:?} has more than one HEAD component")]
    DuplicateHead(String),
    #[error("pattern {0:?} has an empty component")]
    EmptyComponent(String),
}

impl FromStr for ExpansionPattern {
    type Err = PatternError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let inner = s
            .strip_prefix('[')
            .and_then(|rest| rest.strip_suffix(']'))
            .ok_or_else(|| PatternError::NotBracketed(s.to_string()))?;
        let parts: Vec<&str> = inner.split('-').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(PatternError::EmptyComponent(s.to_string()));
        }
        let head_positions: Vec<usize> =
            parts.iter().enumerate().filter(|(_, p)| **p == "HEAD").map(|(i, _)| i).collect();
        match head_positions.as_slice() {
            [] => Err(PatternError::MissingHead(s.to_string())),
            [pos] => Ok(ExpansionPattern {
                left: parts[..*pos].iter().map(|p| p.to_string()).collect(),
                right: parts[*pos + 1..].iter().map(|p| p.to_string()).collect(),
            }),
            _ => Err(PatternError::DuplicateHead(s.to_string())),
        }
    }
}

/// Parses a rendered expansion placeholder back into its pattern.
pub fn parse_expansion(token: &str) -> Result<ExpansionPattern, PatternError> {
    token.parse()
}

/// Reads the expansion pattern of one node off the tree: deprels of its
/// left and right dependents in surface order.
pub fn compose_expansion(tree: &DepTree, node: usize) -> ExpansionPattern {
    let mut left = Vec::new();
    let mut right = Vec::new();
    for dep in tree.dependents(node) {
        let label = tree.tokens()[dep].deprel.clone();
        if dep < node {
            left.push(label);
        } else {
            right.push(label);
        }
    }
    ExpansionPattern { left, right }
}

/// Renders a dependency placeholder for a relation label, e.g. `[nsubj]`.
pub fn placeholder_symbol(label: &str) -> String {
    format!("[{label}]")
}

/// Induced symbol tables. Token IDs: `[pad]`=0, `<unk>`=1, `[ROOT]`=2,
/// then terminals, then dependency placeholders, both ordered by
/// descending frequency with lexicographic tie-breaks. Expansion IDs:
/// `[pad]`=0, then patterns in the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolTable {
    token_symbols: Vec<String>,
    token_counts: Vec<u64>,
    token_ids: HashMap<String, usize>,
    /// First dependency-placeholder slot; terminals occupy `3..placeholder_start`.
    placeholder_start: usize,
    exp_symbols: Vec<String>,
    exp_counts: Vec<u64>,
    exp_ids: HashMap<String, usize>,
}

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {0}: {1}")]
    Parse(usize, String),
    #[error("vocab file is missing required reserved symbols")]
    MissingReserved,
}

impl SymbolTable {
    /// Induces the tables from a corpus transformed exactly as it will be
    /// used for training. Terminals with frequency below `min_freq` are
    /// dropped (they encode as `<unk>`); the threshold never applies to
    /// placeholders or expansion symbols.
    pub fn induce(corpus: &Corpus, min_freq: u64) -> SymbolTable {
        let mut term_counts: HashMap<String, u64> = HashMap::new();
        let mut dep_counts: HashMap<String, u64> = HashMap::new();
        let mut exp_counts: HashMap<String, u64> = HashMap::new();
        let mut root_count = 0u64;
        for tree in &corpus.sentences {
            root_count += 1;
            for (i, tok) in tree.tokens().iter().enumerate() {
                *term_counts.entry(tok.form.clone()).or_default() += 1;
                if tok.head.is_some() {
                    *dep_counts.entry(tok.deprel.clone()).or_default() += 1;
                }
                *exp_counts.entry(compose_expansion(tree, i).render()).or_default() += 1;
            }
        }

        let mut token_symbols = vec![PAD_SYMBOL.to_string(), UNK_SYMBOL.to_string(), ROOT_SYMBOL.to_string()];
        let mut token_counts = vec![0u64, 0u64, root_count];

        for (form, count) in sorted_by_count(term_counts) {
            if count >= min_freq.max(1) {
                token_symbols.push(form);
                token_counts.push(count);
            }
        }
        let placeholder_start = token_symbols.len();
        for (label, count) in sorted_by_count(dep_counts) {
            token_symbols.push(placeholder_symbol(&label));
            token_counts.push(count);
        }

        let mut exp_symbols = vec![PAD_SYMBOL.to_string()];
        let mut exp_counts_v = vec![0u64];
        for (pattern, count) in sorted_by_count(exp_counts) {
            exp_symbols.push(pattern);
            exp_counts_v.push(count);
        }

        SymbolTable::from_parts(token_symbols, token_counts, placeholder_start, exp_symbols, exp_counts_v)
    }

    fn from_parts(
        token_symbols: Vec<String>,
        token_counts: Vec<u64>,
        placeholder_start: usize,
        exp_symbols: Vec<String>,
        exp_counts: Vec<u64>,
    ) -> SymbolTable {
        let token_ids = token_symbols.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let exp_ids = exp_symbols.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        SymbolTable {
            token_symbols,
            token_counts,
            token_ids,
            placeholder_start,
            exp_symbols,
            exp_counts,
            exp_ids,
        }
    }

    pub fn token_vocab_size(&self) -> usize {
        self.token_symbols.len()
    }

    pub fn exp_vocab_size(&self) -> usize {
        self.exp_symbols.len()
    }

    pub fn token_symbol(&self, id: usize) -> &str {
        &self.token_symbols[id]
    }

    pub fn exp_symbol(&self, id: usize) -> &str {
        &self.exp_symbols[id]
    }

    /// ID of a terminal form, falling back to `<unk>`.
    pub fn terminal_id(&self, form: &str) -> usize {
        match self.token_ids.get(form) {
            Some(&id) if self.is_terminal_id(id) || id == ROOT_ID => id,
            _ => UNK_ID,
        }
    }

    /// ID of a dependency placeholder by relation label; `[ROOT]` for the
    /// root label. Unknown labels return None.
    pub fn placeholder_id(&self, label: &str) -> Option<usize> {
        if label == crate::treebank::ROOT_LABEL {
            return Some(ROOT_ID);
        }
        self.token_ids.get(&placeholder_symbol(label)).copied()
    }

    pub fn expansion_id(&self, pattern: &ExpansionPattern) -> Option<usize> {
        self.exp_ids.get(&pattern.render()).copied()
    }

    fn is_terminal_id(&self, id: usize) -> bool {
        (3..self.placeholder_start).contains(&id)
    }

    /// True for `[ROOT]` and every `[label]` row: the entries masked out of
    /// the final token softmax.
    pub fn is_placeholder_id(&self, id: usize) -> bool {
        id == ROOT_ID || id >= self.placeholder_start
    }

    /// All dependency-placeholder symbols, `[ROOT]` included.
    pub fn dep_placeholder_symbols(&self) -> Vec<&str> {
        let mut out = vec![ROOT_SYMBOL];
        out.extend(self.token_symbols[self.placeholder_start..].iter().map(String::as_str));
        out
    }

    /// Expansion symbols, `[pad]` excluded.
    pub fn expansion_symbols(&self) -> Vec<&str> {
        self.exp_symbols[1..].iter().map(String::as_str).collect()
    }

    /// Token-table entries that survive the placeholder mask: `[pad]`,
    /// `<unk>`, and the terminals.
    pub fn unmasked_token_count(&self) -> usize {
        self.placeholder_start - 1
    }

    /// Writes the plain-text vocab file: `symbol<TAB>count` lines grouped
    /// under `##terminals`, `##dep_placeholders`, `##expansions` headers.
    pub fn write<W: Write>(&self, mut w: W) -> Result<(), VocabError> {
        writeln!(w, "##terminals")?;
        for id in 0..self.placeholder_start {
            writeln!(w, "{}\t{}", self.token_symbols[id], self.token_counts[id])?;
        }
        writeln!(w, "##dep_placeholders")?;
        for id in self.placeholder_start..self.token_symbols.len() {
            writeln!(w, "{}\t{}", self.token_symbols[id], self.token_counts[id])?;
        }
        writeln!(w, "##expansions")?;
        for id in 0..self.exp_symbols.len() {
            writeln!(w, "{}\t{}", self.exp_symbols[id], self.exp_counts[id])?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<SymbolTable, VocabError> {
        #[derive(PartialEq)]
        enum Section {
            None,
            Terminals,
            Placeholders,
            Expansions,
        }
        let mut section = Section::None;
        let mut token_symbols = Vec::new();
        let mut token_counts = Vec::new();
        let mut placeholder_start = None;
        let mut exp_symbols = Vec::new();
        let mut exp_counts = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            match line.as_str() {
                "##terminals" => section = Section::Terminals,
                "##dep_placeholders" => {
                    placeholder_start = Some(token_symbols.len());
                    section = Section::Placeholders;
                }
                "##expansions" => section = Section::Expansions,
                _ => {
                    let (sym, count) = line
                        .split_once('\t')
                        .ok_or_else(|| VocabError::Parse(idx + 1, "expected symbol<TAB>count".into()))?;
                    let count: u64 = count
                        .parse()
                        .map_err(|_| VocabError::Parse(idx + 1, format!("bad count {count:?}")))?;
                    match section {
                        Section::Terminals | Section::Placeholders => {
                            token_symbols.push(sym.to_string());
                            token_counts.push(count);
                        }
                        Section::Expansions => {
                            exp_symbols.push(sym.to_string());
                            exp_counts.push(count);
                        }
                        Section::None => {
                            return Err(VocabError::Parse(idx + 1, "entry before section header".into()))
                        }
                    }
                }
            }
        }
        let placeholder_start = placeholder_start.unwrap_or(token_symbols.len());
        let reserved_ok = token_symbols.get(PAD_ID).map(String::as_str) == Some(PAD_SYMBOL)
            && token_symbols.get(UNK_ID).map(String::as_str) == Some(UNK_SYMBOL)
            && token_symbols.get(ROOT_ID).map(String::as_str) == Some(ROOT_SYMBOL)
            && exp_symbols.first().map(String::as_str) == Some(PAD_SYMBOL);
        if !reserved_ok {
            return Err(VocabError::MissingReserved);
        }
        Ok(SymbolTable::from_parts(token_symbols, token_counts, placeholder_start, exp_symbols, exp_counts))
    }

    pub fn write_file(&self, path: &Path) -> Result<(), VocabError> {
        let file = std::fs::File::create(path)?;
        self.write(std::io::BufWriter::new(file))
    }

    pub fn read_file(path: &Path) -> Result<SymbolTable, VocabError> {
        let file = std::fs::File::open(path)?;
        SymbolTable::read(std::io::BufReader::new(file))
    }
}

fn sorted_by_count(counts: HashMap<String, u64>) -> Vec<(String, u64)> {
    let mut entries: Vec<(String, u64)> = counts.into_iter().collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    entries
}
