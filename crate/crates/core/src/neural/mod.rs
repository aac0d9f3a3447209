//! Desk-scale transformer predictor: dual-output conditioning (terminals
//! conditioned on expansions), head-position embeddings, unmasked
//! bidirectional self-attention, dual cross-entropy training with Adam,
//! and finite-difference gradient verification.

mod net;

use std::io::{BufRead, Write};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::leveler::{InputSymbol, LevelTransition};
use crate::predictor::{PositionPrediction, PredictError, Predictor};
use crate::vocab::{SymbolTable, EXP_PAD_ID, ROOT_ID};

pub use net::{EncodedSeq, Forward, Layout, Targets, TrainExample};

/// Architecture and optimization settings. The defaults are deliberately
/// tiny: enough capacity to memorize fixture corpora and demonstrate the
/// conditioning machinery, small enough to train on a laptop CPU in
/// seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub embed_size: usize,
    pub ff_size: usize,
    /// 1-based index of the layer whose output feeds the expansion
    /// projection; must satisfy 1 <= exp_layer < num_layers.
    pub exp_layer: usize,
    pub max_seq_len: usize,
    pub token_vocab: usize,
    pub exp_vocab: usize,
    /// First dependency-placeholder row of the token table; rows from here
    /// up, plus `[ROOT]`, are masked out of the final token softmax.
    pub placeholder_start: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_layers: 2,
            num_heads: 2,
            embed_size: 32,
            ff_size: 64,
            exp_layer: 1,
            max_seq_len: 128,
            token_vocab: 0,
            exp_vocab: 0,
            placeholder_start: 0,
            learning_rate: 5e-3,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn for_table(table: &SymbolTable) -> ModelConfig {
        ModelConfig {
            token_vocab: table.token_vocab_size(),
            exp_vocab: table.exp_vocab_size(),
            placeholder_start: table.token_vocab_size() - table.dep_placeholder_symbols().len() + 1,
            ..Default::default()
        }
    }

    /// The smallest configuration that still exercises every code path;
    /// used by the gradient check.
    pub fn tiny() -> ModelConfig {
        ModelConfig {
            num_layers: 2,
            num_heads: 2,
            embed_size: 8,
            ff_size: 16,
            exp_layer: 1,
            max_seq_len: 5,
            token_vocab: 12,
            exp_vocab: 5,
            placeholder_start: 8,
            learning_rate: 1e-3,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.embed_size == 0 || self.num_heads == 0 || self.embed_size % self.num_heads != 0 {
            return Err(NeuralError::BadConfig("embed_size must be a positive multiple of num_heads".into()));
        }
        if !(1 <= self.exp_layer && self.exp_layer < self.num_layers) {
            return Err(NeuralError::BadConfig("exp_layer must satisfy 1 <= exp_layer < num_layers".into()));
        }
        if self.token_vocab < 3 || self.exp_vocab < 1 {
            return Err(NeuralError::BadConfig("vocabulary sizes not set".into()));
        }
        if self.placeholder_start < 3 || self.placeholder_start > self.token_vocab {
            return Err(NeuralError::BadConfig("placeholder_start out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("sequence of length {0} exceeds max_seq_len {1}")]
    SequenceTooLong(usize, usize),
    #[error("transition references a symbol missing from the vocabulary: {0}")]
    VocabMismatch(String),
    #[error("training diverged (non-finite loss) at epoch {0}")]
    Diverged(usize),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
}

/// The transformer predictor. Parameters are a flat f64 buffer addressed
/// through a [`Layout`]; training is single-threaded and deterministic
/// for a fixed seed, and a trained model is read-only at inference.
pub struct Model {
    pub config: ModelConfig,
    layout: Layout,
    params: Vec<f64>,
    masked_token_ids: Vec<usize>,
}

impl Model {
    /// Fresh model: embeddings and inner weights get small seeded normal
    /// noise, layer-norm gains start at one, and both output projections
    /// start at zero so the initial softmaxes are exactly uniform.
    pub fn new(config: ModelConfig) -> Result<Model, NeuralError> {
        config.validate()?;
        let layout = Layout::build(&config);
        let mut params = vec![0.0; layout.total()];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, 0.02).expect("valid normal");
        for entry in layout.entries() {
            let name = entry.name.as_str();
            let range = layout.range(name);
            if name == "tok_out.w" || name == "tok_out.b" || name == "exp_out.w" || name == "exp_out.b" {
                continue; // stay zero
            }
            if name.ends_with("ln1.g") || name.ends_with("ln2.g") {
                params[range].fill(1.0);
            } else if name.ends_with(".b") || name.ends_with("ln1.b") || name.ends_with("ln2.b") {
                // biases start at zero
            } else {
                for slot in &mut params[range] {
                    *slot = normal.sample(&mut rng);
                }
            }
        }
        let masked_token_ids = masked_ids(&config);
        Ok(Model { config, layout, params, masked_token_ids })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Logits for one encoded sequence. Dependency-placeholder entries of
    /// the token logits are negative infinity.
    pub fn forward(&self, input: &EncodedSeq, gold_exp: Option<&[usize]>) -> Result<net::Forward, NeuralError> {
        if input.ids.len() > self.config.max_seq_len {
            return Err(NeuralError::SequenceTooLong(input.ids.len(), self.config.max_seq_len));
        }
        Ok(self.forward_cached(input, gold_exp).0)
    }

    /// Mean dual cross-entropy over the batch: token CE over non-pad token
    /// targets plus expansion CE over non-pad expansion targets, each
    /// normalized by its own count. An all-pad batch scores zero.
    pub fn batch_loss(&self, batch: &[&TrainExample]) -> Result<f64, NeuralError> {
        let mut tok_sum = 0.0;
        let mut exp_sum = 0.0;
        let mut tok_count = 0usize;
        let mut exp_count = 0usize;
        for ex in batch {
            if ex.input.ids.len() > self.config.max_seq_len {
                return Err(NeuralError::SequenceTooLong(ex.input.ids.len(), self.config.max_seq_len));
            }
            let gold: Vec<usize> = gold_conditioning(ex);
            let (_, cache) = self.forward_cached(&ex.input, Some(&gold));
            let (ts, tc, es, ec) = self.ce_sums(&cache, &ex.targets);
            tok_sum += ts;
            tok_count += tc;
            exp_sum += es;
            exp_count += ec;
        }
        let tok_mean = if tok_count > 0 { tok_sum / tok_count as f64 } else { 0.0 };
        let exp_mean = if exp_count > 0 { exp_sum / exp_count as f64 } else { 0.0 };
        Ok(tok_mean + exp_mean)
    }

    /// Analytic gradient of [`batch_loss`] with respect to every
    /// parameter, teacher-forcing gold expansions.
    pub fn batch_grads(&self, batch: &[&TrainExample]) -> Vec<f64> {
        let mut tok_count = 0usize;
        let mut exp_count = 0usize;
        for ex in batch {
            tok_count += ex.targets.tok.iter().flatten().count();
            exp_count += ex.targets.exp.iter().flatten().count();
        }
        let tok_scale = if tok_count > 0 { 1.0 / tok_count as f64 } else { 0.0 };
        let exp_scale = if exp_count > 0 { 1.0 / exp_count as f64 } else { 0.0 };
        let mut grads = vec![0.0; self.layout.total()];
        for ex in batch {
            let gold = gold_conditioning(ex);
            let (_, cache) = self.forward_cached(&ex.input, Some(&gold));
            self.backward(&ex.input, &ex.targets, &cache, tok_scale, exp_scale, &mut grads);
        }
        grads
    }

    /// Argmax accuracy over non-pad positions with gold expansions
    /// teacher-forced, reported separately for the two channels.
    pub fn teacher_forced_accuracy(&self, examples: &[TrainExample]) -> (f64, f64) {
        let mut tok_hits = 0usize;
        let mut tok_total = 0usize;
        let mut exp_hits = 0usize;
        let mut exp_total = 0usize;
        for ex in examples {
            let gold = gold_conditioning(ex);
            let (fwd, _) = self.forward_cached(&ex.input, Some(&gold));
            for (i, target) in ex.targets.tok.iter().enumerate() {
                if let Some(t) = target {
                    tok_total += 1;
                    if net::argmax_row(&fwd.tok_logits.row(i).to_owned()) == *t {
                        tok_hits += 1;
                    }
                }
            }
            for (i, target) in ex.targets.exp.iter().enumerate() {
                if let Some(t) = target {
                    exp_total += 1;
                    if net::argmax_row(&fwd.exp_logits.row(i).to_owned()) == *t {
                        exp_hits += 1;
                    }
                }
            }
        }
        (
            if tok_total > 0 { tok_hits as f64 / tok_total as f64 } else { 1.0 },
            if exp_total > 0 { exp_hits as f64 / exp_total as f64 } else { 1.0 },
        )
    }
}

fn masked_ids(config: &ModelConfig) -> Vec<usize> {
    let mut ids = vec![ROOT_ID];
    ids.extend(config.placeholder_start..config.token_vocab);
    ids
}

/// Gold conditioning IDs: the gold expansion at supervised positions,
/// `[pad]` elsewhere, mirroring what inference feeds at terminal
/// positions.
fn gold_conditioning(ex: &TrainExample) -> Vec<usize> {
    ex.targets.exp.iter().map(|t| t.unwrap_or(EXP_PAD_ID)).collect()
}

/// Encodes level transitions into model inputs/targets against a table.
pub fn encode_transitions(
    sentences: &[Vec<LevelTransition>],
    table: &SymbolTable,
    config: &ModelConfig,
) -> Result<Vec<TrainExample>, NeuralError> {
    let mut out = Vec::new();
    for transitions in sentences {
        for t in transitions {
            out.push(encode_transition(t, table, config)?);
        }
    }
    Ok(out)
}

pub fn encode_transition(
    t: &LevelTransition,
    table: &SymbolTable,
    config: &ModelConfig,
) -> Result<TrainExample, NeuralError> {
    if t.len() > config.max_seq_len {
        return Err(NeuralError::SequenceTooLong(t.len(), config.max_seq_len));
    }
    let mut ids = Vec::with_capacity(t.len());
    let mut placeholder = Vec::with_capacity(t.len());
    for sym in &t.i_tok {
        match sym {
            InputSymbol::Terminal(form) => {
                ids.push(table.terminal_id(form));
                placeholder.push(false);
            }
            InputSymbol::Placeholder(label) => {
                let id = table
                    .placeholder_id(label)
                    .ok_or_else(|| NeuralError::VocabMismatch(format!("[{label}]")))?;
                ids.push(id);
                placeholder.push(true);
            }
        }
    }
    let head_rows = t.heads.iter().map(|h| h.map_or(0, |p| p + 1)).collect();
    let tok = t.o_tok.iter().map(|o| o.as_ref().map(|form| table.terminal_id(form))).collect();
    let exp = t
        .o_exp
        .iter()
        .map(|o| {
            o.as_ref()
                .map(|p| {
                    table
                        .expansion_id(p)
                        .ok_or_else(|| NeuralError::VocabMismatch(p.render()))
                })
                .transpose()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TrainExample { input: EncodedSeq { ids, head_rows, placeholder }, targets: Targets { tok, exp } })
}

/// Epoch-level training log entry.
#[derive(Debug, Clone, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    /// Called once per epoch with the running log (CLI progress output).
    pub quiet: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { epochs: 200, batch_size: 16, quiet: true }
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Adam {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let bc2 = 1.0 - Self::BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + Self::EPS);
        }
    }
}

/// Trains a fresh model on the transitions: Adam on the dual
/// cross-entropy with gold expansions teacher-forced, batches shuffled
/// per epoch with the config seed. Deterministic; bit-identical
/// checkpoints for identical inputs and seed.
pub fn train(
    sentences: &[Vec<LevelTransition>],
    table: &SymbolTable,
    config: ModelConfig,
    opts: &TrainOptions,
) -> Result<(Model, Vec<EpochLog>), NeuralError> {
    let examples = encode_transitions(sentences, table, &config)?;
    let mut model = Model::new(config)?;
    let mut adam = Adam::new(model.layout.total(), model.config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut log = Vec::with_capacity(opts.epochs);
    for epoch in 1..=opts.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(opts.batch_size.max(1)) {
            let batch: Vec<&TrainExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let loss = model.batch_loss(&batch)?;
            if !loss.is_finite() {
                return Err(NeuralError::Diverged(epoch));
            }
            if model.config.learning_rate != 0.0 {
                let grads = model.batch_grads(&batch);
                adam.step(&mut model.params, &grads);
            }
            epoch_loss += loss;
            batches += 1;
        }
        let mean_loss = epoch_loss / batches.max(1) as f64;
        if !opts.quiet {
            eprintln!("epoch {epoch:4}  loss {mean_loss:.6}");
        }
        log.push(EpochLog { epoch, loss: mean_loss });
    }
    Ok((model, log))
}

// ---------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_abs_diff: f64,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_error: f64,
}

/// Compares the analytic gradient of the batch loss against central
/// finite differences for every parameter array. Relative error is
/// normalized by the array's largest gradient magnitude so near-zero
/// entries do not blow up the ratio.
pub fn grad_check(config: ModelConfig, step: f64) -> Result<GradCheckReport, NeuralError> {
    let mut model = Model::new(config)?;
    // The zero output projections of a fresh model would hide half the
    // paths, and near-zero weights leave the attention score gradients so
    // small that finite-difference noise dominates the comparison; give
    // every parameter a healthy nonzero value for the check.
    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed.wrapping_add(7));
    let normal = Normal::new(0.0, 0.4).expect("valid normal");
    for slot in model.params.iter_mut() {
        *slot += normal.sample(&mut rng);
    }
    let batch_owned = synthetic_batch(&model.config, &mut rng);
    let batch: Vec<&TrainExample> = batch_owned.iter().collect();

    let analytic = model.batch_grads(&batch);
    let mut entries = Vec::new();
    let mut overall = 0.0f64;
    let layout = model.layout.clone();
    for entry in layout.entries() {
        let range = layout.range(&entry.name);
        let mut max_abs_diff = 0.0f64;
        let mut max_mag = 0.0f64;
        for i in range.clone() {
            let saved = model.params[i];
            model.params[i] = saved + step;
            let up = model.batch_loss(&batch)?;
            model.params[i] = saved - step;
            let down = model.batch_loss(&batch)?;
            model.params[i] = saved;
            let numeric = (up - down) / (2.0 * step);
            max_abs_diff = max_abs_diff.max((analytic[i] - numeric).abs());
            max_mag = max_mag.max(analytic[i].abs()).max(numeric.abs());
        }
        let rel = max_abs_diff / max_mag.max(1e-8);
        overall = overall.max(rel);
        entries.push(GradCheckEntry { name: entry.name.clone(), max_abs_diff, max_rel_error: rel });
    }
    Ok(GradCheckReport { entries, max_rel_error: overall })
}

/// A tiny random but self-consistent batch for gradient probing: mixed
/// placeholder/terminal positions, supervised exactly at placeholders.
fn synthetic_batch(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Vec<TrainExample> {
    let seq_len = config.max_seq_len.min(5);
    let mut out = Vec::new();
    for _ in 0..2 {
        let mut ids = Vec::new();
        let mut placeholder = Vec::new();
        let mut tok = Vec::new();
        let mut exp = Vec::new();
        for i in 0..seq_len {
            let is_ph = i % 2 == 0;
            placeholder.push(is_ph);
            if is_ph {
                ids.push(rng.gen_range(config.placeholder_start..config.token_vocab));
                tok.push(Some(rng.gen_range(3..config.placeholder_start)));
                exp.push(Some(rng.gen_range(1..config.exp_vocab)));
            } else {
                ids.push(rng.gen_range(3..config.placeholder_start));
                tok.push(None);
                exp.push(None);
            }
        }
        let head_rows = (0..seq_len).map(|_| rng.gen_range(0..seq_len + 1)).collect();
        out.push(TrainExample {
            input: EncodedSeq { ids, head_rows, placeholder },
            targets: Targets { tok, exp },
        });
    }
    out
}

// ---------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------

const CKPT_FORMAT: &str = "itexp-ckpt";
const CKPT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CkptHeader {
    format: String,
    version: u32,
    config: ModelConfig,
}

impl Model {
    /// Header line (JSON) followed by named arrays: `u32` name length,
    /// name bytes, `u32` rank, `u64` dims, then row-major little-endian
    /// f32 values.
    pub fn save<W: Write>(&self, mut w: W) -> Result<(), NeuralError> {
        let header = CkptHeader {
            format: CKPT_FORMAT.to_string(),
            version: CKPT_VERSION,
            config: self.config.clone(),
        };
        let line = serde_json::to_string(&header)
            .map_err(|e| NeuralError::BadCheckpoint(e.to_string()))?;
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
        for entry in self.layout.entries() {
            let name = entry.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(entry.shape.len() as u32).to_le_bytes())?;
            for &dim in &entry.shape {
                w.write_all(&(dim as u64).to_le_bytes())?;
            }
            for &value in &self.params[self.layout.range(&entry.name)] {
                w.write_all(&(value as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load<R: BufRead>(mut r: R) -> Result<Model, NeuralError> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: CkptHeader = serde_json::from_str(line.trim_end())
            .map_err(|e| NeuralError::BadCheckpoint(format!("bad header: {e}")))?;
        if header.format != CKPT_FORMAT || header.version != CKPT_VERSION {
            return Err(NeuralError::BadCheckpoint(format!(
                "expected {CKPT_FORMAT} v{CKPT_VERSION}, found {} v{}",
                header.format, header.version
            )));
        }
        header.config.validate()?;
        let layout = Layout::build(&header.config);
        let mut params = vec![0.0f64; layout.total()];
        for entry in layout.entries() {
            let mut len_buf = [0u8; 4];
            r.read_exact(&mut len_buf)?;
            let name_len = u32::from_le_bytes(len_buf) as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| NeuralError::BadCheckpoint("non-utf8 array name".into()))?;
            if name != entry.name {
                return Err(NeuralError::BadCheckpoint(format!(
                    "expected array {:?}, found {:?}",
                    entry.name, name
                )));
            }
            r.read_exact(&mut len_buf)?;
            let rank = u32::from_le_bytes(len_buf) as usize;
            if rank != entry.shape.len() {
                return Err(NeuralError::BadCheckpoint(format!("array {name}: rank mismatch")));
            }
            let mut dim_buf = [0u8; 8];
            for &expected in &entry.shape {
                r.read_exact(&mut dim_buf)?;
                if u64::from_le_bytes(dim_buf) as usize != expected {
                    return Err(NeuralError::BadCheckpoint(format!("array {name}: shape mismatch")));
                }
            }
            let mut val_buf = [0u8; 4];
            for slot in &mut params[layout.range(&name)] {
                r.read_exact(&mut val_buf)?;
                *slot = f32::from_le_bytes(val_buf) as f64;
            }
        }
        let masked_token_ids = masked_ids(&header.config);
        Ok(Model { config: header.config, layout, params, masked_token_ids })
    }

    pub fn save_file(&self, path: &Path) -> Result<(), NeuralError> {
        let file = std::fs::File::create(path)?;
        self.save(std::io::BufWriter::new(file))
    }

    pub fn load_file(path: &Path) -> Result<Model, NeuralError> {
        let file = std::fs::File::open(path)?;
        Model::load(std::io::BufReader::new(file))
    }
}

/// A trained model bound to the symbol table it answers in.
pub struct NeuralPredictor<'a> {
    pub model: &'a Model,
    pub table: &'a SymbolTable,
}

impl Predictor for NeuralPredictor<'_> {
    fn predict(
        &self,
        i_tok: &[InputSymbol],
        heads: &[Option<usize>],
    ) -> Result<Vec<PositionPrediction>, PredictError> {
        if i_tok.len() > self.model.config.max_seq_len {
            return Err(PredictError::SequenceTooLong(i_tok.len(), self.model.config.max_seq_len));
        }
        let mut ids = Vec::with_capacity(i_tok.len());
        let mut placeholder = Vec::with_capacity(i_tok.len());
        for sym in i_tok {
            match sym {
                InputSymbol::Terminal(form) => {
                    ids.push(self.table.terminal_id(form));
                    placeholder.push(false);
                }
                InputSymbol::Placeholder(label) => {
                    let id = self.table.placeholder_id(label).ok_or_else(|| {
                        PredictError::InvalidDistribution(format!("unknown placeholder [{label}]"))
                    })?;
                    ids.push(id);
                    placeholder.push(true);
                }
            }
        }
        let head_rows = heads.iter().map(|h| h.map_or(0, |p| p + 1)).collect();
        let input = EncodedSeq { ids, head_rows, placeholder };
        let cache = self.model.forward_cached(&input, None).1;
        Ok(cache_to_predictions(&cache))
    }
}

fn cache_to_predictions(cache: &net::Cache) -> Vec<PositionPrediction> {
    let n = cache.tok_probs().nrows();
    (0..n)
        .map(|i| PositionPrediction {
            token_dist: cache.tok_probs().row(i).to_vec(),
            exp_dist: cache.exp_probs().row(i).to_vec(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::leveler::levelize;
    use crate::synth::example_tree;
    use crate::treebank::Corpus;
    use approx::assert_abs_diff_eq;

    fn example_setup() -> (SymbolTable, Vec<Vec<LevelTransition>>, ModelConfig) {
        let corpus = Corpus::from_trees(vec![example_tree()]);
        let table = SymbolTable::induce(&corpus, 1);
        let transitions = vec![levelize(&example_tree()).unwrap()];
        let mut config = ModelConfig::for_table(&table);
        config.max_seq_len = 16;
        config.embed_size = 16;
        config.ff_size = 32;
        (table, transitions, config)
    }

    #[test]
    fn logits_have_contract_shapes_and_masking() {
        let (table, transitions, config) = example_setup();
        let model = Model::new(config.clone()).unwrap();
        let examples = encode_transitions(&transitions, &table, &config).unwrap();
        for ex in &examples {
            let fwd = model.forward(&ex.input, None).unwrap();
            assert_eq!(fwd.tok_logits.nrows(), ex.input.ids.len());
            assert_eq!(fwd.tok_logits.ncols(), config.token_vocab);
            assert_eq!(fwd.exp_logits.nrows(), ex.input.ids.len());
            assert_eq!(fwd.exp_logits.ncols(), config.exp_vocab);
            for row in fwd.tok_logits.rows() {
                assert_eq!(row[ROOT_ID], f64::NEG_INFINITY);
                for id in config.placeholder_start..config.token_vocab {
                    assert_eq!(row[id], f64::NEG_INFINITY);
                }
            }
        }
    }

    #[test]
    fn initial_loss_is_uniform_cross_entropy() {
        let (table, transitions, config) = example_setup();
        let model = Model::new(config.clone()).unwrap();
        let examples = encode_transitions(&transitions, &table, &config).unwrap();
        let refs: Vec<&TrainExample> = examples.iter().collect();
        let loss = model.batch_loss(&refs).unwrap();
        let expected =
            (table.unmasked_token_count() as f64).ln() + (table.exp_vocab_size() as f64).ln();
        assert_abs_diff_eq!(loss, expected, epsilon = 1e-9);
    }

    #[test]
    fn doubling_a_batch_keeps_the_mean_loss() {
        let (table, transitions, config) = example_setup();
        let model = Model::new(config.clone()).unwrap();
        let examples = encode_transitions(&transitions, &table, &config).unwrap();
        let single: Vec<&TrainExample> = examples.iter().collect();
        let doubled: Vec<&TrainExample> = examples.iter().chain(examples.iter()).collect();
        assert_abs_diff_eq!(
            model.batch_loss(&single).unwrap(),
            model.batch_loss(&doubled).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn all_pad_batch_scores_zero() {
        let (_, _, config) = example_setup();
        let model = Model::new(config.clone()).unwrap();
        let ex = TrainExample {
            input: EncodedSeq { ids: vec![3, 4], head_rows: vec![0, 1], placeholder: vec![false, false] },
            targets: Targets { tok: vec![None, None], exp: vec![None, None] },
        };
        assert_eq!(model.batch_loss(&[&ex]).unwrap(), 0.0);
    }

    #[test]
    fn heads_input_changes_the_output() {
        let (table, transitions, config) = example_setup();
        let (model, _) =
            train(&transitions, &table, config.clone(), &TrainOptions { epochs: 5, ..Default::default() })
                .unwrap();
        let examples = encode_transitions(&transitions, &table, &config).unwrap();
        let mut other = examples[1].input.clone();
        other.head_rows[0] = other.head_rows[0] % 2 + 1;
        let a = model.forward(&examples[1].input, None).unwrap();
        let b = model.forward(&other, None).unwrap();
        assert_ne!(a.tok_logits, b.tok_logits);
    }

    #[test]
    fn gold_and_matching_sampled_expansions_agree() {
        let (table, transitions, config) = example_setup();
        let (model, _) =
            train(&transitions, &table, config.clone(), &TrainOptions { epochs: 60, ..Default::default() })
                .unwrap();
        let examples = encode_transitions(&transitions, &table, &config).unwrap();
        for ex in &examples {
            let gold = gold_conditioning(ex);
            let forced = model.forward(&ex.input, Some(&gold)).unwrap();
            let free = model.forward(&ex.input, None).unwrap();
            if free.exp_ids == gold {
                assert_eq!(forced.tok_logits, free.tok_logits);
            }
        }
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let (table, transitions, mut config) = example_setup();
        config.learning_rate = 0.0;
        let fresh = Model::new(config.clone()).unwrap();
        let (model, log) =
            train(&transitions, &table, config, &TrainOptions { epochs: 4, ..Default::default() }).unwrap();
        assert_eq!(model.params(), fresh.params());
        for pair in log.windows(2) {
            assert_abs_diff_eq!(pair[0].loss, pair[1].loss, epsilon = 1e-12);
        }
    }

    #[test]
    fn same_seed_gives_bit_identical_checkpoints() {
        let (table, transitions, config) = example_setup();
        let opts = TrainOptions { epochs: 8, ..Default::default() };
        let (a, _) = train(&transitions, &table, config.clone(), &opts).unwrap();
        let (b, _) = train(&transitions, &table, config, &opts).unwrap();
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        a.save(&mut buf_a).unwrap();
        b.save(&mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);
    }

    #[test]
    fn checkpoint_round_trip() {
        let (table, transitions, config) = example_setup();
        let (model, _) =
            train(&transitions, &table, config, &TrainOptions { epochs: 3, ..Default::default() }).unwrap();
        let mut buf = Vec::new();
        model.save(&mut buf).unwrap();
        let loaded = Model::load(buf.as_slice()).unwrap();
        assert_eq!(loaded.config, model.config);
        for (a, b) in loaded.params().iter().zip(model.params()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6); // f32 storage
        }
        // Corrupting the header version must fail loudly.
        let text = String::from_utf8_lossy(&buf).into_owned();
        let bad = text.replacen("\"version\":1", "\"version\":9", 1);
        assert!(matches!(Model::load(bad.as_bytes()), Err(NeuralError::BadCheckpoint(_))));
    }

    #[test]
    fn head_position_embedding_receives_gradient() {
        let (table, transitions, config) = example_setup();
        let mut model = Model::new(config.clone()).unwrap();
        // A fresh model's zero output projections block gradient flow into
        // the embeddings, so probe at a perturbed point. The head-position
        // rows themselves stay zero: the point is that they still learn.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let normal = Normal::new(0.0, 0.1).unwrap();
        let head_range = model.layout().range("head_emb");
        for (i, slot) in model.params_mut().iter_mut().enumerate() {
            let noise = normal.sample(&mut rng);
            if !head_range.contains(&i) {
                *slot += noise;
            }
        }
        let examples = encode_transitions(&transitions, &table, &config).unwrap();
        // Later transitions have varied head positions.
        let refs: Vec<&TrainExample> = examples.iter().collect();
        let grads = model.batch_grads(&refs);
        let range = model.layout().range("head_emb");
        let total: f64 = grads[range].iter().map(|g| g.abs()).sum();
        assert!(total > 0.0, "head-position embedding gradient is dead");
    }

    #[test]
    fn gradient_check_on_tiny_config() {
        let report = grad_check(ModelConfig::tiny(), 1e-5).unwrap();
        assert!(
            report.max_rel_error < 1e-6,
            "max relative error {} at 64-bit precision",
            report.max_rel_error
        );
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let config = ModelConfig::tiny();
        let mut model = Model::new(config.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let normal = Normal::new(0.0, 0.05).unwrap();
        for slot in model.params_mut() {
            *slot += normal.sample(&mut rng);
        }
        let batch_owned = synthetic_batch(&model.config, &mut rng);
        let batch: Vec<&TrainExample> = batch_owned.iter().collect();
        let mut analytic = model.batch_grads(&batch);
        let range = model.layout().range("layer0.ff.w1");
        analytic[range.start] += 1.0; // deliberate corruption
        // Recompute one numeric gradient at the corrupted slot.
        let step = 1e-5;
        let saved = model.params()[range.start];
        model.params_mut()[range.start] = saved + step;
        let up = model.batch_loss(&batch).unwrap();
        model.params_mut()[range.start] = saved - step;
        let down = model.batch_loss(&batch).unwrap();
        model.params_mut()[range.start] = saved;
        let numeric = (up - down) / (2.0 * step);
        let err = (analytic[range.start] - numeric).abs();
        assert!(err > 0.5, "corruption not detected: {err}");
    }

    #[test]
    fn loss_decreases_monotonically_over_windows_on_fixture() {
        let corpus = crate::synth::memorization_corpus();
        let table = SymbolTable::induce(&corpus, 1);
        let transitions: Vec<_> =
            corpus.sentences.iter().map(|t| levelize(t).unwrap()).collect();
        let mut config = ModelConfig::for_table(&table);
        config.max_seq_len = 32;
        let opts = TrainOptions { epochs: 120, batch_size: 16, quiet: true };
        let (_, log) = train(&transitions, &table, config, &opts).unwrap();
        let means: Vec<f64> = log
            .chunks(10)
            .map(|w| w.iter().map(|e| e.loss).sum::<f64>() / w.len() as f64)
            .collect();
        let noise = 0.01 * means[0];
        for pair in means.windows(2) {
            assert!(pair[1] <= pair[0] + noise, "loss trend reversed: {means:?}");
        }
    }

    #[test]
    fn memorizes_a_single_sentence_quickly() {
        let (table, transitions, config) = example_setup();
        let (model, log) =
            train(&transitions, &table, config, &TrainOptions { epochs: 150, ..Default::default() })
                .unwrap();
        let examples = encode_transitions(&transitions, &table, &model.config).unwrap();
        let (tok_acc, exp_acc) = model.teacher_forced_accuracy(&examples);
        assert_eq!(tok_acc, 1.0);
        assert_eq!(exp_acc, 1.0);
        assert!(log.last().unwrap().loss < log.first().unwrap().loss);
    }
}
