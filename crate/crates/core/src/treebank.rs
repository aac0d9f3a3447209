//! Dependency-tree domain types, CoNLL-U ingestion, and corpus persistence.
//!
//! A [`DepTree`] is positional: a token's index is its surface position,
//! and the tree structure lives entirely in the `head` links. Every tree
//! handed out by this module has been validated (single root, acyclic,
//! in-bounds heads), and corpus ingestion additionally filters for
//! projectivity, since level expansion reconstructs surface order by
//! in-order placement.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relation label carried by the root arc. Ingestion normalizes whatever
/// label the source file used for its root row to this value so that
/// levelize/replay round trips are exact.
pub const ROOT_LABEL: &str = "ROOT";

/// One token of a sentence. The token's index is its position in
/// [`DepTree::tokens`]; `head` is `None` for the root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub form: String,
    pub head: Option<usize>,
    pub deprel: String,
}

impl Token {
    pub fn new(form: impl Into<String>, head: Option<usize>, deprel: impl Into<String>) -> Self {
        Token { form: form.into(), head, deprel: deprel.into() }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("sentence has no tokens")]
    Empty,
    #[error("expected exactly one root, found {0}")]
    RootCount(usize),
    #[error("token {0} has out-of-range head {1}")]
    HeadOutOfRange(usize, usize),
    #[error("token {0} is its own head")]
    SelfHead(usize),
    #[error("head links contain a cycle through token {0}")]
    Cyclic(usize),
}

/// A validated dependency tree over one sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepTree {
    tokens: Vec<Token>,
    root: usize,
}

impl DepTree {
    /// Validates the head links (single root, in-bounds, acyclic) and
    /// builds the tree. Token order is surface order.
    pub fn new(tokens: Vec<Token>) -> Result<Self, TreeError> {
        if tokens.is_empty() {
            return Err(TreeError::Empty);
        }
        let n = tokens.len();
        let roots: Vec<usize> = tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.head.is_none())
            .map(|(i, _)| i)
            .collect();
        if roots.len() != 1 {
            return Err(TreeError::RootCount(roots.len()));
        }
        for (i, tok) in tokens.iter().enumerate() {
            if let Some(h) = tok.head {
                if h >= n {
                    return Err(TreeError::HeadOutOfRange(i, h));
                }
                if h == i {
                    return Err(TreeError::SelfHead(i));
                }
            }
        }
        // Walking up from every token must reach the root in < n steps.
        for start in 0..n {
            let mut cur = start;
            let mut steps = 0;
            while let Some(h) = tokens[cur].head {
                cur = h;
                steps += 1;
                if steps >= n {
                    return Err(TreeError::Cyclic(start));
                }
            }
        }
        Ok(DepTree { tokens, root: roots[0] })
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn form(&self, i: usize) -> &str {
        &self.tokens[i].form
    }

    pub fn forms(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.form.clone()).collect()
    }

    /// Dependents of `head`, in surface order.
    pub fn dependents(&self, head: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.tokens[i].head == Some(head)).collect()
    }

    /// Depth of every node, root at depth 1.
    pub fn depths(&self) -> Vec<usize> {
        let mut depths = vec![0usize; self.len()];
        for i in 0..self.len() {
            let mut d = 1;
            let mut cur = i;
            while let Some(h) = self.tokens[cur].head {
                cur = h;
                d += 1;
            }
            depths[i] = d;
        }
        depths
    }

    /// Maximum node depth; equals the number of expansion iterations the
    /// sentence needs.
    pub fn depth(&self) -> usize {
        self.depths().into_iter().max().unwrap_or(0)
    }

    /// True iff every subtree spans a contiguous index interval, which for
    /// trees drawn above the sentence is the same as "no two arcs cross".
    pub fn is_projective(&self) -> bool {
        let n = self.len();
        // Propagate subtree intervals upward, then check each against the
        // subtree's actual member count.
        let mut lo: Vec<usize> = (0..n).collect();
        let mut hi: Vec<usize> = (0..n).collect();
        let mut size = vec![1usize; n];
        let depths = self.depths();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| depths[b].cmp(&depths[a]));
        for &i in &order {
            if let Some(h) = self.tokens[i].head {
                lo[h] = lo[h].min(lo[i]);
                hi[h] = hi[h].max(hi[i]);
                size[h] += size[i];
            }
        }
        (0..n).all(|i| hi[i] - lo[i] + 1 == size[i])
    }
}

/// Ingestion statistics attached to a [`Corpus`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub kept: usize,
    pub dropped_nonprojective: usize,
    pub dropped_malformed: usize,
}

/// An ordered collection of validated, projective dependency trees.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub sentences: Vec<DepTree>,
    pub provenance: Provenance,
}

impl Corpus {
    pub fn from_trees(sentences: Vec<DepTree>) -> Self {
        let kept = sentences.len();
        Corpus {
            sentences,
            provenance: Provenance { source: "<memory>".to_string(), kept, ..Default::default() },
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum CorpusIoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {0}: invalid record: {1}")]
    Record(usize, String),
    #[error("missing header line")]
    MissingHeader,
    #[error("unsupported format/version: expected {expected}, found {found}")]
    Version { expected: String, found: String },
    #[error("line {0}: invalid tree: {1}")]
    Tree(usize, TreeError),
}

/// Parses CoNLL-U text into a corpus of projective trees.
///
/// Only columns 1, 2, 7, 8 (ID, FORM, HEAD, DEPREL) are used. Comment
/// lines and multiword-token range lines are skipped. Sentences that are
/// malformed (wrong column count, non-numeric ID/HEAD, bad head links) or
/// non-projective are dropped and counted in the provenance, never
/// repaired. The root row's DEPREL is normalized to [`ROOT_LABEL`].
pub fn parse_conllu<R: BufRead>(reader: R, source: &str) -> Result<Corpus, std::io::Error> {
    let mut sentences = Vec::new();
    let mut prov = Provenance { source: source.to_string(), ..Default::default() };
    let mut block: Vec<String> = Vec::new();

    let flush = |block: &mut Vec<String>, prov: &mut Provenance, out: &mut Vec<DepTree>| {
        if block.is_empty() {
            return;
        }
        match sentence_from_block(block) {
            Ok(tree) => {
                if tree.is_projective() {
                    prov.kept += 1;
                    out.push(tree);
                } else {
                    prov.dropped_nonprojective += 1;
                }
            }
            Err(_) => prov.dropped_malformed += 1,
        }
        block.clear();
    };

    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            flush(&mut block, &mut prov, &mut sentences);
        } else {
            block.push(line);
        }
    }
    flush(&mut block, &mut prov, &mut sentences);

    Ok(Corpus { sentences, provenance: prov })
}

#[derive(Debug, Error, PartialEq, Eq)]
enum ConlluError {
    #[error("malformed line")]
    MalformedLine,
    #[error(transparent)]
    Tree(#[from] TreeError),
}

fn sentence_from_block(lines: &[String]) -> Result<DepTree, ConlluError> {
    let mut tokens = Vec::new();
    let mut expected_id = 1usize;
    for line in lines {
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(ConlluError::MalformedLine);
        }
        // Multiword ranges (1-2) and empty nodes (1.1) are not word rows.
        if cols[0].contains('-') {
            continue;
        }
        if cols[0].contains('.') {
            return Err(ConlluError::MalformedLine);
        }
        let id: usize = cols[0].parse().map_err(|_| ConlluError::MalformedLine)?;
        if id != expected_id {
            return Err(ConlluError::MalformedLine);
        }
        expected_id += 1;
        let head_raw: usize = cols[6].parse().map_err(|_| ConlluError::MalformedLine)?;
        let head = if head_raw == 0 { None } else { Some(head_raw - 1) };
        let deprel = if head.is_none() { ROOT_LABEL.to_string() } else { cols[7].to_string() };
        tokens.push(Token::new(cols[1], head, deprel));
    }
    Ok(DepTree::new(tokens)?)
}

const TREES_FORMAT: &str = "itexp-trees";
const TREES_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TreesHeader {
    format: String,
    version: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

#[derive(Serialize, Deserialize)]
struct TokenRec {
    form: String,
    head: i64,
    deprel: String,
}

#[derive(Serialize, Deserialize)]
struct SentenceRec {
    id: usize,
    tokens: Vec<TokenRec>,
}

/// Writes a corpus as line-delimited records, one sentence per line, with
/// a leading header object. `head` is -1 for the root.
pub fn write_trees<W: Write>(mut writer: W, corpus: &Corpus) -> Result<(), CorpusIoError> {
    let header = TreesHeader {
        format: TREES_FORMAT.to_string(),
        version: TREES_VERSION,
        provenance: Some(corpus.provenance.clone()),
    };
    serde_json::to_writer(&mut writer, &header).map_err(io_err)?;
    writer.write_all(b"\n")?;
    for (id, tree) in corpus.sentences.iter().enumerate() {
        let rec = SentenceRec {
            id,
            tokens: tree
                .tokens()
                .iter()
                .map(|t| TokenRec {
                    form: t.form.clone(),
                    head: t.head.map_or(-1, |h| h as i64),
                    deprel: t.deprel.clone(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut writer, &rec).map_err(io_err)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a corpus written by [`write_trees`]. A version or format mismatch
/// is an explicit error, never a silent reinterpretation.
pub fn read_trees<R: BufRead>(reader: R) -> Result<Corpus, CorpusIoError> {
    let mut lines = reader.lines().enumerate();
    let (_, header_line) = lines.next().ok_or(CorpusIoError::MissingHeader)?;
    let header_line = header_line?;
    let header: TreesHeader = serde_json::from_str(&header_line)
        .map_err(|e| CorpusIoError::Record(1, e.to_string()))?;
    if header.format != TREES_FORMAT || header.version != TREES_VERSION {
        return Err(CorpusIoError::Version {
            expected: format!("{TREES_FORMAT} v{TREES_VERSION}"),
            found: format!("{} v{}", header.format, header.version),
        });
    }
    let mut sentences = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SentenceRec =
            serde_json::from_str(&line).map_err(|e| CorpusIoError::Record(idx + 1, e.to_string()))?;
        let tokens = rec
            .tokens
            .into_iter()
            .map(|t| {
                let head = if t.head < 0 { None } else { Some(t.head as usize) };
                Token { form: t.form, head, deprel: t.deprel }
            })
            .collect();
        let tree = DepTree::new(tokens).map_err(|e| CorpusIoError::Tree(idx + 1, e))?;
        sentences.push(tree);
    }
    let provenance = header.provenance.unwrap_or_default();
    Ok(Corpus { sentences, provenance })
}

pub fn write_trees_file(path: &Path, corpus: &Corpus) -> Result<(), CorpusIoError> {
    let file = std::fs::File::create(path)?;
    write_trees(std::io::BufWriter::new(file), corpus)
}

pub fn read_trees_file(path: &Path) -> Result<Corpus, CorpusIoError> {
    let file = std::fs::File::open(path)?;
    read_trees(std::io::BufReader::new(file))
}

fn io_err(e: serde_json::Error) -> CorpusIoError {
    CorpusIoError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}
