//! Level decomposition of dependency trees and the inverse expansion step.
//!
//! A tree of depth d yields exactly d [`LevelTransition`]s. Transition k's
//! input is the in-order traversal of the tree truncated at depth k: nodes
//! shallower than k appear as terminals, nodes at exactly depth k appear
//! as `[deprel]` placeholders, deeper nodes are absent. The outputs fill
//! every placeholder position with the node's form and expansion pattern
//! and are `[pad]` elsewhere. [`expand`] turns a transition into the next
//! iteration's input; [`replay`] chains expansions to rebuild the sentence
//! and its tree.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::treebank::{DepTree, Token, TreeError, ROOT_LABEL};
use crate::vocab::{compose_expansion, parse_expansion, ExpansionPattern, PatternError, PAD_SYMBOL};

/// One input-sequence symbol: an already-generated terminal or an open
/// dependency placeholder. The root placeholder carries [`ROOT_LABEL`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum InputSymbol {
    Terminal(String),
    Placeholder(String),
}

impl InputSymbol {
    pub fn root() -> Self {
        InputSymbol::Placeholder(ROOT_LABEL.to_string())
    }

    pub fn is_placeholder(&self) -> bool {
        matches!(self, InputSymbol::Placeholder(_))
    }

    /// Rendered form: terminals verbatim, placeholders as `[label]`.
    pub fn render(&self) -> String {
        match self {
            InputSymbol::Terminal(form) => form.clone(),
            InputSymbol::Placeholder(label) => format!("[{label}]"),
        }
    }

    /// Inverse of [`render`](Self::render). Bracketed symbols are read as
    /// placeholders, so terminal forms must not themselves look like
    /// `[label]`; tree and transition files share that restriction.
    pub fn parse(s: &str) -> InputSymbol {
        if s.len() >= 3 && s.starts_with('[') && s.ends_with(']') && s != PAD_SYMBOL {
            InputSymbol::Placeholder(s[1..s.len() - 1].to_string())
        } else {
            InputSymbol::Terminal(s.to_string())
        }
    }
}

impl fmt::Display for InputSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// One training/inference step. All four sequences are parallel; `heads`
/// holds each position's parent index within `i_tok` (`None` for the
/// root's position). Output positions are `None` ("[pad]") exactly where
/// the input already holds a terminal.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelTransition {
    pub i_tok: Vec<InputSymbol>,
    pub heads: Vec<Option<usize>>,
    pub o_tok: Vec<Option<String>>,
    pub o_exp: Vec<Option<ExpansionPattern>>,
}

impl LevelTransition {
    pub fn len(&self) -> usize {
        self.i_tok.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i_tok.is_empty()
    }

    /// Checks the parallel-structure invariants; used by tests and file
    /// ingestion.
    pub fn validate(&self) -> Result<(), LevelError> {
        let n = self.i_tok.len();
        if self.heads.len() != n || self.o_tok.len() != n || self.o_exp.len() != n {
            return Err(LevelError::LengthMismatch);
        }
        for i in 0..n {
            let placeholder = self.i_tok[i].is_placeholder();
            if self.o_tok[i].is_some() != placeholder || self.o_exp[i].is_some() != placeholder {
                return Err(LevelError::PadMismatch(i));
            }
            if let Some(h) = self.heads[i] {
                if h >= n {
                    return Err(LevelError::HeadOutOfRange(i));
                }
                if self.i_tok[h].is_placeholder() {
                    return Err(LevelError::HeadAtPlaceholder(i));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LevelError {
    #[error("input tree is not projective")]
    NonProjectiveInput,
    #[error("parallel sequences have different lengths")]
    LengthMismatch,
    #[error("position {0}: pad/placeholder structure is inconsistent")]
    PadMismatch(usize),
    #[error("position {0}: head index out of range")]
    HeadOutOfRange(usize),
    #[error("position {0}: head points at a placeholder")]
    HeadAtPlaceholder(usize),
    #[error("position {0}: output is [pad] at a placeholder position")]
    PadAtPlaceholder(usize),
    #[error("transition {0} does not chain from the previous expansion")]
    ChainMismatch(usize),
    #[error("replay ended with unexpanded placeholders")]
    Unfinished,
    #[error("malformed expansion pattern: {0}")]
    MalformedPattern(#[from] PatternError),
    #[error("reconstructed tree is invalid: {0}")]
    BadTree(#[from] TreeError),
}

/// Decomposes a projective tree into its per-iteration transitions.
pub fn levelize(tree: &DepTree) -> Result<Vec<LevelTransition>, LevelError> {
    if !tree.is_projective() {
        return Err(LevelError::NonProjectiveInput);
    }
    let depths = tree.depths();
    let max_depth = tree.depth();
    let mut transitions = Vec::with_capacity(max_depth);
    for level in 1..=max_depth {
        // Surface order of a projective tree is index order, so the
        // truncated in-order traversal is just the index filter.
        let nodes: Vec<usize> = (0..tree.len()).filter(|&i| depths[i] <= level).collect();
        let pos_of = |node: usize| nodes.binary_search(&node).expect("parent shallower than child");
        let mut i_tok = Vec::with_capacity(nodes.len());
        let mut heads = Vec::with_capacity(nodes.len());
        let mut o_tok = Vec::with_capacity(nodes.len());
        let mut o_exp = Vec::with_capacity(nodes.len());
        for &node in &nodes {
            let tok = &tree.tokens()[node];
            heads.push(tok.head.map(pos_of));
            if depths[node] == level {
                i_tok.push(InputSymbol::Placeholder(label_of(tok)));
                o_tok.push(Some(tok.form.clone()));
                o_exp.push(Some(compose_expansion(tree, node)));
            } else {
                i_tok.push(InputSymbol::Terminal(tok.form.clone()));
                o_tok.push(None);
                o_exp.push(None);
            }
        }
        transitions.push(LevelTransition { i_tok, heads, o_tok, o_exp });
    }
    Ok(transitions)
}

fn label_of(tok: &Token) -> String {
    if tok.head.is_none() {
        ROOT_LABEL.to_string()
    } else {
        tok.deprel.clone()
    }
}

/// The next iteration's input produced by [`expand`].
#[derive(Debug, Clone, PartialEq)]
pub struct Expanded {
    pub i_tok: Vec<InputSymbol>,
    pub heads: Vec<Option<usize>>,
}

impl Expanded {
    /// Generation terminates when no dependency placeholders remain; there
    /// is no end-of-sequence token.
    pub fn is_finished(&self) -> bool {
        !self.i_tok.iter().any(InputSymbol::is_placeholder)
    }
}

/// Combines a transition's input and outputs into the next input sequence:
/// terminals copy through; each placeholder is replaced by its pattern's
/// left labels (as placeholders), the emitted terminal, then the right
/// labels. New placeholders point at the emitted terminal; surviving heads
/// are remapped through the index shift.
pub fn expand(t: &LevelTransition) -> Result<Expanded, LevelError> {
    t.validate()?;
    let n = t.len();
    // First pass: where each old position's terminal lands.
    let mut new_pos = Vec::with_capacity(n);
    let mut cursor = 0usize;
    for i in 0..n {
        match &t.i_tok[i] {
            InputSymbol::Terminal(_) => {
                new_pos.push(cursor);
                cursor += 1;
            }
            InputSymbol::Placeholder(_) => {
                let pattern = t.o_exp[i].as_ref().ok_or(LevelError::PadAtPlaceholder(i))?;
                new_pos.push(cursor + pattern.left.len());
                cursor += pattern.left.len() + 1 + pattern.right.len();
            }
        }
    }
    let remap = |head: Option<usize>| head.map(|h| new_pos[h]);

    let mut i_tok = Vec::with_capacity(cursor);
    let mut heads = Vec::with_capacity(cursor);
    for i in 0..n {
        match &t.i_tok[i] {
            InputSymbol::Terminal(form) => {
                i_tok.push(InputSymbol::Terminal(form.clone()));
                heads.push(remap(t.heads[i]));
            }
            InputSymbol::Placeholder(_) => {
                let pattern = t.o_exp[i].as_ref().ok_or(LevelError::PadAtPlaceholder(i))?;
                let form = t.o_tok[i].as_ref().ok_or(LevelError::PadAtPlaceholder(i))?;
                for label in &pattern.left {
                    i_tok.push(InputSymbol::Placeholder(label.clone()));
                    heads.push(Some(new_pos[i]));
                }
                i_tok.push(InputSymbol::Terminal(form.clone()));
                heads.push(remap(t.heads[i]));
                for label in &pattern.right {
                    i_tok.push(InputSymbol::Placeholder(label.clone()));
                    heads.push(Some(new_pos[i]));
                }
            }
        }
    }
    Ok(Expanded { i_tok, heads })
}

/// Replays a chain of transitions, verifying that each one's input equals
/// the previous expansion, and reconstructs the surface forms and the
/// dependency tree they define.
pub fn replay(transitions: &[LevelTransition]) -> Result<(Vec<String>, DepTree), LevelError> {
    if transitions.is_empty() {
        return Err(LevelError::Unfinished);
    }
    let first = &transitions[0];
    if first.i_tok != [InputSymbol::root()] || first.heads != [None] {
        return Err(LevelError::ChainMismatch(0));
    }

    // Node bookkeeping across iterations: a slot is created for every
    // placeholder and keeps its identity as positions shift.
    struct Slot {
        parent: Option<usize>, // slot id
        label: String,
        form: Option<String>,
    }
    let mut slots: Vec<Slot> = vec![Slot { parent: None, label: ROOT_LABEL.to_string(), form: None }];
    // Slot id at each current sequence position.
    let mut pos_slots: Vec<usize> = vec![0];

    let mut current: Option<Expanded> = None;
    for (step, t) in transitions.iter().enumerate() {
        if let Some(prev) = &current {
            if prev.i_tok != t.i_tok || prev.heads != t.heads {
                return Err(LevelError::ChainMismatch(step));
            }
        }
        t.validate()?;
        // Fill forms and create child slots in position order.
        let mut next_pos_slots = Vec::new();
        for (i, sym) in t.i_tok.iter().enumerate() {
            let slot_id = pos_slots[i];
            match sym {
                InputSymbol::Terminal(_) => next_pos_slots.push(slot_id),
                InputSymbol::Placeholder(_) => {
                    let form = t.o_tok[i].as_ref().ok_or(LevelError::PadAtPlaceholder(i))?;
                    let pattern = t.o_exp[i].as_ref().ok_or(LevelError::PadAtPlaceholder(i))?;
                    slots[slot_id].form = Some(form.clone());
                    for label in &pattern.left {
                        slots.push(Slot { parent: Some(slot_id), label: label.clone(), form: None });
                        next_pos_slots.push(slots.len() - 1);
                    }
                    next_pos_slots.push(slot_id);
                    for label in &pattern.right {
                        slots.push(Slot { parent: Some(slot_id), label: label.clone(), form: None });
                        next_pos_slots.push(slots.len() - 1);
                    }
                }
            }
        }
        pos_slots = next_pos_slots;
        current = Some(expand(t)?);
    }

    let last = current.expect("at least one transition");
    if !last.is_finished() {
        return Err(LevelError::Unfinished);
    }

    // Final positions give token indices; parents map through slot ids.
    let mut slot_index = vec![usize::MAX; slots.len()];
    for (pos, &slot_id) in pos_slots.iter().enumerate() {
        slot_index[slot_id] = pos;
    }
    let mut tokens = Vec::with_capacity(pos_slots.len());
    for &slot_id in &pos_slots {
        let slot = &slots[slot_id];
        let form = slot.form.clone().ok_or(LevelError::Unfinished)?;
        tokens.push(Token::new(form, slot.parent.map(|p| slot_index[p]), slot.label.clone()));
    }
    let forms: Vec<String> = tokens.iter().map(|t| t.form.clone()).collect();
    let tree = DepTree::new(tokens)?;
    Ok((forms, tree))
}

const LEVELS_FORMAT: &str = "itexp-levels";
const LEVELS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LevelsHeader {
    format: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
struct TransitionRec {
    sent_id: usize,
    step: usize,
    i_tok: Vec<String>,
    heads: Vec<i64>,
    o_tok: Vec<String>,
    o_exp: Vec<String>,
}

#[derive(Debug, Error)]
pub enum LevelsIoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {0}: invalid record: {1}")]
    Record(usize, String),
    #[error("missing header line")]
    MissingHeader,
    #[error("unsupported format/version: expected {expected}, found {found}")]
    Version { expected: String, found: String },
    #[error("line {0}: {1}")]
    Level(usize, LevelError),
}

/// Writes per-sentence transition chains as line-delimited records. Heads
/// use -1 for the root sentinel; steps are 1-based within a sentence.
pub fn write_transitions<W: Write>(
    mut writer: W,
    sentences: &[Vec<LevelTransition>],
) -> Result<(), LevelsIoError> {
    let header = LevelsHeader { format: LEVELS_FORMAT.to_string(), version: LEVELS_VERSION };
    serde_json::to_writer(&mut writer, &header)
        .map_err(|e| LevelsIoError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e)))?;
    writer.write_all(b"\n")?;
    for (sent_id, transitions) in sentences.iter().enumerate() {
        for (k, t) in transitions.iter().enumerate() {
            let rec = TransitionRec {
                sent_id,
                step: k + 1,
                i_tok: t.i_tok.iter().map(InputSymbol::render).collect(),
                heads: t.heads.iter().map(|h| h.map_or(-1, |v| v as i64)).collect(),
                o_tok: t
                    .o_tok
                    .iter()
                    .map(|o| o.clone().unwrap_or_else(|| PAD_SYMBOL.to_string()))
                    .collect(),
                o_exp: t
                    .o_exp
                    .iter()
                    .map(|o| o.as_ref().map_or_else(|| PAD_SYMBOL.to_string(), ExpansionPattern::render))
                    .collect(),
            };
            serde_json::to_writer(&mut writer, &rec)
                .map_err(|e| LevelsIoError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e)))?;
            writer.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Reads transitions grouped per sentence, in file order.
pub fn read_transitions<R: BufRead>(reader: R) -> Result<Vec<Vec<LevelTransition>>, LevelsIoError> {
    let mut lines = reader.lines().enumerate();
    let (_, header_line) = lines.next().ok_or(LevelsIoError::MissingHeader)?;
    let header_line = header_line?;
    let header: LevelsHeader = serde_json::from_str(&header_line)
        .map_err(|e| LevelsIoError::Record(1, e.to_string()))?;
    if header.format != LEVELS_FORMAT || header.version != LEVELS_VERSION {
        return Err(LevelsIoError::Version {
            expected: format!("{LEVELS_FORMAT} v{LEVELS_VERSION}"),
            found: format!("{} v{}", header.format, header.version),
        });
    }
    let mut sentences: Vec<Vec<LevelTransition>> = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TransitionRec =
            serde_json::from_str(&line).map_err(|e| LevelsIoError::Record(idx + 1, e.to_string()))?;
        let mut o_exp = Vec::with_capacity(rec.o_exp.len());
        for s in &rec.o_exp {
            if s == PAD_SYMBOL {
                o_exp.push(None);
            } else {
                let p = parse_expansion(s)
                    .map_err(|e| LevelsIoError::Level(idx + 1, LevelError::MalformedPattern(e)))?;
                o_exp.push(Some(p));
            }
        }
        let t = LevelTransition {
            i_tok: rec.i_tok.iter().map(|s| InputSymbol::parse(s)).collect(),
            heads: rec.heads.iter().map(|&h| if h < 0 { None } else { Some(h as usize) }).collect(),
            o_tok: rec
                .o_tok
                .into_iter()
                .map(|s| if s == PAD_SYMBOL { None } else { Some(s) })
                .collect(),
            o_exp,
        };
        t.validate().map_err(|e| LevelsIoError::Level(idx + 1, e))?;
        if rec.sent_id >= sentences.len() {
            sentences.resize_with(rec.sent_id + 1, Vec::new);
        }
        sentences[rec.sent_id].push(t);
    }
    Ok(sentences)
}

pub fn write_transitions_file(path: &Path, sentences: &[Vec<LevelTransition>]) -> Result<(), LevelsIoError> {
    let file = std::fs::File::create(path)?;
    write_transitions(std::io::BufWriter::new(file), sentences)
}

pub fn read_transitions_file(path: &Path) -> Result<Vec<Vec<LevelTransition>>, LevelsIoError> {
    let file = std::fs::File::open(path)?;
    read_transitions(std::io::BufReader::new(file))
}
