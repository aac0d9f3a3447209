//! The prediction contract consumed by the generation engine, plus two
//! non-neural implementations: an oracle that replays a reference tree
//! (for exact end-to-end tests) and an empirical count model with
//! two-level back-off (fast, fully inspectable generation).

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::leveler::{levelize, InputSymbol, LevelTransition};
use crate::treebank::DepTree;
use crate::vocab::{parse_expansion, SymbolTable, EXP_PAD_ID, PAD_ID, ROOT_SYMBOL};

/// Per-position joint output: a distribution over the token table and one
/// over the expansion table. Each vector is non-negative and sums to 1.
#[derive(Debug, Clone)]
pub struct PositionPrediction {
    pub token_dist: Vec<f64>,
    pub exp_dist: Vec<f64>,
}

impl PositionPrediction {
    /// One-hot helper used by padding positions and the oracle.
    pub fn one_hot(token_vocab: usize, exp_vocab: usize, token_id: usize, exp_id: usize) -> Self {
        let mut token_dist = vec![0.0; token_vocab];
        let mut exp_dist = vec![0.0; exp_vocab];
        token_dist[token_id] = 1.0;
        exp_dist[exp_id] = 1.0;
        PositionPrediction { token_dist, exp_dist }
    }

    pub fn validate(&self) -> Result<(), PredictError> {
        for dist in [&self.token_dist, &self.exp_dist] {
            if dist.iter().any(|&p| p < 0.0 || !p.is_finite()) {
                return Err(PredictError::InvalidDistribution("negative or non-finite mass".into()));
            }
            let sum: f64 = dist.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(PredictError::InvalidDistribution(format!("sums to {sum}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("query is off the oracle's reference path")]
    QueryOffReferencePath,
    #[error("empty transition corpus")]
    EmptyCorpus,
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("sequence of length {0} exceeds the model's maximum {1}")]
    SequenceTooLong(usize, usize),
}

/// Anything that can score the open placeholders of one level-transition
/// input. Implementations must be callable from multiple generation
/// workers at once, hence `Sync`.
pub trait Predictor: Sync {
    /// Returns a prediction for every position. Positions already holding
    /// terminals may return anything (the engine pads them); placeholder
    /// positions must return proper distributions.
    fn predict(
        &self,
        i_tok: &[InputSymbol],
        heads: &[Option<usize>],
    ) -> Result<Vec<PositionPrediction>, PredictError>;
}

/// Replays one reference tree: at each step the predictor returns one-hot
/// distributions reproducing `levelize(reference)`, so driving the engine
/// with it regenerates the reference sentence exactly.
pub struct OraclePredictor<'a> {
    table: &'a SymbolTable,
    transitions: Vec<LevelTransition>,
}

impl<'a> OraclePredictor<'a> {
    pub fn new(reference: &DepTree, table: &'a SymbolTable) -> Result<Self, crate::leveler::LevelError> {
        Ok(OraclePredictor { table, transitions: levelize(reference)? })
    }
}

impl Predictor for OraclePredictor<'_> {
    fn predict(
        &self,
        i_tok: &[InputSymbol],
        heads: &[Option<usize>],
    ) -> Result<Vec<PositionPrediction>, PredictError> {
        let step = self
            .transitions
            .iter()
            .find(|t| t.i_tok == i_tok && t.heads == heads)
            .ok_or(PredictError::QueryOffReferencePath)?;
        let v_tok = self.table.token_vocab_size();
        let v_exp = self.table.exp_vocab_size();
        let mut out = Vec::with_capacity(i_tok.len());
        for i in 0..i_tok.len() {
            match (&step.o_tok[i], &step.o_exp[i]) {
                (Some(form), Some(pattern)) => {
                    let tok_id = self.table.terminal_id(form);
                    let exp_id = self
                        .table
                        .expansion_id(pattern)
                        .ok_or(PredictError::QueryOffReferencePath)?;
                    out.push(PositionPrediction::one_hot(v_tok, v_exp, tok_id, exp_id));
                }
                _ => out.push(PositionPrediction::one_hot(v_tok, v_exp, PAD_ID, EXP_PAD_ID)),
            }
        }
        Ok(out)
    }
}

/// Context key for the full table: placeholder label and the surface form
/// of the head terminal ("[ROOT]" for the root sentinel).
type Context = (String, String);
/// Joint outcome: emitted terminal form and rendered expansion pattern.
type Outcome = (String, String);

/// Maximum-likelihood joint counts over (terminal, expansion) outcomes,
/// keyed by (label, head form) with back-off to label-only and then
/// global counts. The back-off tables are marginals of the full table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmpiricalModel {
    full: HashMap<Context, HashMap<Outcome, u64>>,
    by_label: HashMap<String, HashMap<Outcome, u64>>,
    global: HashMap<Outcome, u64>,
}

impl EmpiricalModel {
    /// Fits the count tables on a transition corpus.
    pub fn fit(sentences: &[Vec<LevelTransition>]) -> Result<EmpiricalModel, PredictError> {
        let mut model = EmpiricalModel::default();
        let mut seen = false;
        for transitions in sentences {
            for t in transitions {
                for i in 0..t.len() {
                    let InputSymbol::Placeholder(label) = &t.i_tok[i] else { continue };
                    let (Some(form), Some(pattern)) = (&t.o_tok[i], &t.o_exp[i]) else { continue };
                    seen = true;
                    let head_form = head_context(t, i);
                    let outcome = (form.clone(), pattern.render());
                    *model
                        .full
                        .entry((label.clone(), head_form))
                        .or_default()
                        .entry(outcome.clone())
                        .or_default() += 1;
                    *model.by_label.entry(label.clone()).or_default().entry(outcome.clone()).or_default() += 1;
                    *model.global.entry(outcome).or_default() += 1;
                }
            }
        }
        if !seen {
            return Err(PredictError::EmptyCorpus);
        }
        Ok(model)
    }

    /// The counts backing a (label, head) query: first context level with
    /// any observations wins.
    fn lookup(&self, label: &str, head_form: &str) -> &HashMap<Outcome, u64> {
        if let Some(counts) = self.full.get(&(label.to_string(), head_form.to_string())) {
            return counts;
        }
        if let Some(counts) = self.by_label.get(label) {
            return counts;
        }
        &self.global
    }

    /// Line-delimited `{label, head, token, exp, count}` records.
    pub fn write<W: Write>(&self, mut w: W) -> Result<(), std::io::Error> {
        let mut entries: Vec<CountRec> = self
            .full
            .iter()
            .flat_map(|((label, head), counts)| {
                counts.iter().map(move |((token, exp), count)| CountRec {
                    label: label.clone(),
                    head: head.clone(),
                    token: token.clone(),
                    exp: exp.clone(),
                    count: *count,
                })
            })
            .collect();
        entries.sort_by(|a, b| {
            (&a.label, &a.head, &a.token, &a.exp).cmp(&(&b.label, &b.head, &b.token, &b.exp))
        });
        for rec in entries {
            serde_json::to_writer(&mut w, &rec)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Rebuilds the model (back-off marginals included) from the records.
    pub fn read<R: BufRead>(reader: R) -> Result<EmpiricalModel, std::io::Error> {
        let mut model = EmpiricalModel::default();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CountRec = serde_json::from_str(&line)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            let outcome = (rec.token, rec.exp);
            *model
                .full
                .entry((rec.label.clone(), rec.head))
                .or_default()
                .entry(outcome.clone())
                .or_default() += rec.count;
            *model.by_label.entry(rec.label).or_default().entry(outcome.clone()).or_default() += rec.count;
            *model.global.entry(outcome).or_default() += rec.count;
        }
        Ok(model)
    }

    pub fn write_file(&self, path: &Path) -> Result<(), std::io::Error> {
        let file = std::fs::File::create(path)?;
        self.write(std::io::BufWriter::new(file))
    }

    pub fn read_file(path: &Path) -> Result<EmpiricalModel, std::io::Error> {
        let file = std::fs::File::open(path)?;
        EmpiricalModel::read(std::io::BufReader::new(file))
    }
}

#[derive(Serialize, Deserialize)]
struct CountRec {
    label: String,
    head: String,
    token: String,
    exp: String,
    count: u64,
}

fn head_context(t: &LevelTransition, i: usize) -> String {
    match t.heads[i] {
        None => ROOT_SYMBOL.to_string(),
        Some(h) => match &t.i_tok[h] {
            InputSymbol::Terminal(form) => form.clone(),
            InputSymbol::Placeholder(_) => ROOT_SYMBOL.to_string(),
        },
    }
}

/// An [`EmpiricalModel`] bound to the symbol table it answers in.
pub struct EmpiricalPredictor<'a> {
    pub model: &'a EmpiricalModel,
    pub table: &'a SymbolTable,
}

impl Predictor for EmpiricalPredictor<'_> {
    fn predict(
        &self,
        i_tok: &[InputSymbol],
        heads: &[Option<usize>],
    ) -> Result<Vec<PositionPrediction>, PredictError> {
        let v_tok = self.table.token_vocab_size();
        let v_exp = self.table.exp_vocab_size();
        let mut out = Vec::with_capacity(i_tok.len());
        for (i, sym) in i_tok.iter().enumerate() {
            let InputSymbol::Placeholder(label) = sym else {
                out.push(PositionPrediction::one_hot(v_tok, v_exp, PAD_ID, EXP_PAD_ID));
                continue;
            };
            let head_form = match heads[i] {
                None => ROOT_SYMBOL.to_string(),
                Some(h) => i_tok[h].render(),
            };
            let counts = self.model.lookup(label, &head_form);
            let mut token_dist = vec![0.0; v_tok];
            let mut exp_dist = vec![0.0; v_exp];
            let mut total = 0.0f64;
            for ((form, exp), &count) in counts {
                let c = count as f64;
                total += c;
                token_dist[self.table.terminal_id(form)] += c;
                if let Ok(pattern) = parse_expansion(exp) {
                    if let Some(id) = self.table.expansion_id(&pattern) {
                        exp_dist[id] += c;
                    }
                }
            }
            if total == 0.0 {
                return Err(PredictError::EmptyCorpus);
            }
            for p in token_dist.iter_mut().chain(exp_dist.iter_mut()) {
                *p /= total;
            }
            out.push(PositionPrediction { token_dist, exp_dist });
        }
        Ok(out)
    }
}

/// Convenience for tests and argmax decoding.
pub fn argmax(dist: &[f64]) -> usize {
    dist.iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probabilities"))
        .map(|(i, _)| i)
        .unwrap_or(0)
}
