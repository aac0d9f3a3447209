//! Iterative-expansion language modeling.
//!
//! Text is generated level by level along a sentence's dependency parse
//! tree instead of left to right: each decoding iteration fills in every
//! open dependency placeholder at once, so generation needs as many steps
//! as the tree is deep rather than as many as the sentence is long.
//!
//! The pipeline, end to end:
//!
//! 1. [`treebank`] — ingest CoNLL-U into validated projective [`treebank::DepTree`]s.
//! 2. [`transform`] — binarize trees (at most one dependent per side) and
//!    decompose word nodes into BPE subword chains.
//! 3. [`vocab`] — induce terminal, dependency-placeholder, and expansion
//!    symbol tables from the transformed corpus.
//! 4. [`leveler`] — decompose each tree into per-iteration
//!    [`leveler::LevelTransition`]s and expand/replay them back.
//! 5. [`predictor`] / [`neural`] — per-position joint distributions over
//!    terminals and expansion placeholders (count-based and transformer).
//! 6. [`generate`] — the iterative sampling engine with temperature,
//!    nucleus filtering, and expansion-level style control.
//! 7. [`eval`] — BLEU / self-BLEU quality-diversity sweeps, decoding-step
//!    speedup statistics, and adjective-rate measurements.

pub mod eval;
pub mod generate;
pub mod leveler;
pub mod neural;
pub mod predictor;
pub mod synth;
pub mod transform;
pub mod treebank;
pub mod vocab;

pub use treebank::{Corpus, DepTree, Token};
