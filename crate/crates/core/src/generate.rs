//! The iterative decoding engine: temperature scaling, nucleus filtering,
//! symbol masking, expansion-level style reweighting, and the
//! expand-until-done loop.
//!
//! Each sentence starts from a lone `[ROOT]` placeholder. Every iteration
//! queries the predictor once, samples a terminal and an expansion for
//! each open placeholder, and expands. Generation stops when no
//! placeholders remain; a tree of depth d therefore costs exactly d
//! predictor calls.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::leveler::{expand, replay, InputSymbol, LevelError, LevelTransition};
use crate::predictor::{PredictError, Predictor};
use crate::treebank::DepTree;
use crate::vocab::{ExpansionPattern, SymbolTable, EXP_PAD_ID, PAD_ID, UNK_ID};

/// Everything that parameterizes one generation run.
#[derive(Debug, Clone)]
pub struct GenerationSettings {
    /// Softmax temperature, > 0.
    pub temperature: f64,
    /// Nucleus mass in (0, 1].
    pub top_p: f64,
    /// Expansion-symbol reweighting rules applied before sampling.
    pub style_rules: Vec<StyleRule>,
    pub seed: u64,
    /// Hard cap on iterations; the final one forces every expansion choice
    /// to the branch-terminating empty pattern.
    pub max_iterations: usize,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        GenerationSettings {
            temperature: 1.0,
            top_p: 0.9,
            style_rules: Vec::new(),
            seed: 0,
            max_iterations: 64,
        }
    }
}

/// Multiplies the probability of every expansion symbol whose rendered
/// pattern contains `label_substring`, then renormalizes.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleRule {
    pub label_substring: String,
    pub factor: f64,
}

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("nucleus mass must be in (0, 1], got {0}")]
    BadTopP(f64),
    #[error("style factor must be positive, got {0}")]
    BadStyleFactor(f64),
    #[error("max_iterations must be at least 1")]
    BadIterationCap,
    #[error("predictor failure: {0}")]
    Predictor(#[from] PredictError),
    #[error("sampled symbol table entry {0} is not usable here")]
    BadSample(usize),
    #[error("no probability mass left after masking at position {0}")]
    ZeroMassAfterMasking(usize),
    #[error("expansion failed: {0}")]
    Level(#[from] LevelError),
}

impl GenerationSettings {
    pub fn validate(&self) -> Result<(), GenerateError> {
        if !(self.temperature > 0.0) {
            return Err(GenerateError::BadTemperature(self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GenerateError::BadTopP(self.top_p));
        }
        for rule in &self.style_rules {
            if !(rule.factor > 0.0) {
                return Err(GenerateError::BadStyleFactor(rule.factor));
            }
        }
        if self.max_iterations == 0 {
            return Err(GenerateError::BadIterationCap);
        }
        Ok(())
    }
}

/// Sharpens or flattens a distribution: p_i^(1/tau), renormalized. tau = 1
/// returns the input unchanged; tau -> 0 concentrates on the argmax.
pub fn temperature_scale(dist: &[f64], tau: f64) -> Result<Vec<f64>, GenerateError> {
    if !(tau > 0.0) {
        return Err(GenerateError::BadTemperature(tau));
    }
    if tau == 1.0 {
        return Ok(dist.to_vec());
    }
    // Work in log space relative to the maximum so tiny temperatures do
    // not underflow everything to zero.
    let max = dist.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max <= 0.0 {
        return Ok(dist.to_vec());
    }
    let mut out: Vec<f64> = dist
        .iter()
        .map(|&p| if p > 0.0 { ((p.ln() - max.ln()) / tau).exp() } else { 0.0 })
        .collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    Ok(out)
}

/// Keeps the smallest prefix of the descending-sorted entries whose
/// cumulative mass reaches `p`, zeroes the rest, renormalizes. Probability
/// ties break toward the lower index.
pub fn nucleus_filter(dist: &[f64], p: f64) -> Result<Vec<f64>, GenerateError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(GenerateError::BadTopP(p));
    }
    if p == 1.0 {
        return Ok(dist.to_vec());
    }
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[b].partial_cmp(&dist[a]).expect("finite").then(a.cmp(&b)));
    let mut keep = vec![false; dist.len()];
    let mut cum = 0.0;
    for &i in &order {
        keep[i] = true;
        cum += dist[i];
        if cum >= p {
            break;
        }
    }
    let mut out: Vec<f64> = dist.iter().zip(&keep).map(|(&v, &k)| if k { v } else { 0.0 }).collect();
    let sum: f64 = out.iter().sum();
    if sum > 0.0 {
        for v in &mut out {
            *v /= sum;
        }
    }
    Ok(out)
}

/// Applies the style rules to an expansion distribution: matching symbols
/// have their probability multiplied by the rule factor, then the whole
/// vector is divided by its sum.
pub fn style_reweight(exp_dist: &[f64], rules: &[StyleRule], table: &SymbolTable) -> Vec<f64> {
    if rules.is_empty() {
        return exp_dist.to_vec();
    }
    let mut out = exp_dist.to_vec();
    let mut changed = false;
    for (id, p) in out.iter_mut().enumerate() {
        let symbol = table.exp_symbol(id);
        for rule in rules {
            if symbol.contains(&rule.label_substring) {
                *p *= rule.factor;
                changed = true;
            }
        }
    }
    if !changed {
        return out;
    }
    let sum: f64 = out.iter().sum();
    if sum > 0.0 {
        for p in &mut out {
            *p /= sum;
        }
    }
    out
}

/// One generated sentence with the tree the expansion process implies.
#[derive(Debug, Clone)]
pub struct Generated {
    pub forms: Vec<String>,
    pub tree: DepTree,
    pub iterations: usize,
}

/// Generates `count` independent sentences. Sentences use derived seeds
/// (`seed + index`), so results do not depend on whether they are
/// produced sequentially or on parallel workers.
pub fn generate(
    predictor: &dyn Predictor,
    table: &SymbolTable,
    settings: &GenerationSettings,
    count: usize,
) -> Result<Vec<Generated>, GenerateError> {
    settings.validate()?;
    (0..count).map(|idx| generate_one(predictor, table, settings, idx)).collect()
}

/// Parallel variant of [`generate`]; `workers` caps the thread count.
/// Output is identical to the sequential path.
pub fn generate_parallel(
    predictor: &dyn Predictor,
    table: &SymbolTable,
    settings: &GenerationSettings,
    count: usize,
    workers: usize,
) -> Result<Vec<Generated>, GenerateError> {
    settings.validate()?;
    if workers <= 1 {
        return generate(predictor, table, settings, count);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool construction");
    pool.install(|| {
        (0..count)
            .into_par_iter()
            .map(|idx| generate_one(predictor, table, settings, idx))
            .collect()
    })
}

fn generate_one(
    predictor: &dyn Predictor,
    table: &SymbolTable,
    settings: &GenerationSettings,
    index: usize,
) -> Result<Generated, GenerateError> {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed.wrapping_add(index as u64));
    let mut i_tok = vec![InputSymbol::root()];
    let mut heads: Vec<Option<usize>> = vec![None];
    let mut transitions: Vec<LevelTransition> = Vec::new();

    while i_tok.iter().any(InputSymbol::is_placeholder) {
        let iteration = transitions.len() + 1;
        let force_termination = iteration >= settings.max_iterations;
        let preds = predictor.predict(&i_tok, &heads)?;
        let mut o_tok = vec![None; i_tok.len()];
        let mut o_exp = vec![None; i_tok.len()];
        for (i, sym) in i_tok.iter().enumerate() {
            if !sym.is_placeholder() {
                continue;
            }
            let pred = &preds[i];

            // Terminal channel: never emit <unk>, [pad], or placeholders.
            let mut token_dist = pred.token_dist.clone();
            for (id, p) in token_dist.iter_mut().enumerate() {
                if id == UNK_ID || id == PAD_ID || table.is_placeholder_id(id) {
                    *p = 0.0;
                }
            }
            let token_dist = renorm(token_dist, i)?;
            let token_dist = temperature_scale(&token_dist, settings.temperature)?;
            let token_dist = nucleus_filter(&token_dist, settings.top_p)?;
            let token_id = sample(&token_dist, &mut rng);
            o_tok[i] = Some(table.token_symbol(token_id).to_string());

            // Expansion channel: mask [pad], reweight, scale, filter.
            let pattern = if force_termination {
                ExpansionPattern::head_only()
            } else {
                let mut exp_dist = pred.exp_dist.clone();
                exp_dist[EXP_PAD_ID] = 0.0;
                let exp_dist = renorm(exp_dist, i)?;
                let exp_dist = style_reweight(&exp_dist, &settings.style_rules, table);
                let exp_dist = temperature_scale(&exp_dist, settings.temperature)?;
                let exp_dist = nucleus_filter(&exp_dist, settings.top_p)?;
                let exp_id = sample(&exp_dist, &mut rng);
                table
                    .exp_symbol(exp_id)
                    .parse()
                    .map_err(|_| GenerateError::BadSample(exp_id))?
            };
            o_exp[i] = Some(pattern);
        }
        let t = LevelTransition { i_tok, heads, o_tok, o_exp };
        let next = expand(&t)?;
        transitions.push(t);
        i_tok = next.i_tok;
        heads = next.heads;
    }

    let (forms, tree) = replay(&transitions)?;
    Ok(Generated { forms, tree, iterations: transitions.len() })
}

fn renorm(mut dist: Vec<f64>, position: usize) -> Result<Vec<f64>, GenerateError> {
    let sum: f64 = dist.iter().sum();
    if sum <= 0.0 {
        return Err(GenerateError::ZeroMassAfterMasking(position));
    }
    for p in &mut dist {
        *p /= sum;
    }
    Ok(dist)
}

fn sample(dist: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let draw: f64 = rng.gen();
    let mut cum = 0.0;
    let mut last_nonzero = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > 0.0 {
            last_nonzero = i;
            cum += p;
            if draw < cum {
                return i;
            }
        }
    }
    last_nonzero
}
