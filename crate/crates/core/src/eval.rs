//! Quality-diversity measurement (BLEU / self-BLEU), temperature sweeps,
//! decoding-step speedup analysis, and adjective-rate counting.

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::generate::{generate, GenerateError, GenerationSettings};
use crate::predictor::Predictor;
use crate::transform::{binarize, TransformError};
use crate::treebank::{Corpus, DepTree};
use crate::vocab::SymbolTable;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty candidate set")]
    EmptyCandidates,
    #[error("self-BLEU needs at least two candidates")]
    TooFewCandidates,
    #[error("max_n must be at least 1")]
    BadOrder,
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error(transparent)]
    Transform(#[from] TransformError),
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts: HashMap<&[String], u64> = HashMap::new();
    if tokens.len() >= n {
        for i in 0..=tokens.len() - n {
            *counts.entry(&tokens[i..i + n]).or_default() += 1;
        }
    }
    counts
}

/// Corpus BLEU without smoothing: modified n-gram precision with
/// reference-count clipping, geometric mean over orders 1..=max_n, and the
/// brevity penalty exp(1 - r/c) when candidates are shorter than their
/// closest references. Every candidate is scored against the whole
/// reference corpus. A zero precision at any order yields 0.
pub fn bleu(
    candidates: &[Vec<String>],
    references: &[Vec<String>],
    max_n: usize,
) -> Result<f64, EvalError> {
    if candidates.is_empty() {
        return Err(EvalError::EmptyCandidates);
    }
    if max_n == 0 {
        return Err(EvalError::BadOrder);
    }

    let mut log_precision_sum = 0.0;
    for n in 1..=max_n {
        // Clip counts against the maximum count of each n-gram over all
        // references.
        let mut max_ref: HashMap<&[String], u64> = HashMap::new();
        for reference in references {
            for (gram, count) in ngram_counts(reference, n) {
                let entry = max_ref.entry(gram).or_default();
                *entry = (*entry).max(count);
            }
        }
        let mut matched = 0u64;
        let mut total = 0u64;
        for candidate in candidates {
            for (gram, count) in ngram_counts(candidate, n) {
                total += count;
                matched += count.min(max_ref.get(gram).copied().unwrap_or(0));
            }
        }
        if matched == 0 {
            return Ok(0.0);
        }
        log_precision_sum += (matched as f64 / total.max(1) as f64).ln();
    }

    let c: usize = candidates.iter().map(Vec::len).sum();
    let r: usize = candidates
        .iter()
        .map(|candidate| {
            references
                .iter()
                .map(Vec::len)
                .min_by_key(|&len| (len.abs_diff(candidate.len()), len))
                .unwrap_or(0)
        })
        .sum();
    let brevity = if c == 0 {
        return Ok(0.0);
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    Ok(brevity * (log_precision_sum / max_n as f64).exp())
}

/// Mean over sentences of BLEU against the rest of the set; lower means
/// more diverse output.
pub fn self_bleu(candidates: &[Vec<String>], max_n: usize) -> Result<f64, EvalError> {
    if candidates.len() < 2 {
        return Err(EvalError::TooFewCandidates);
    }
    let mut total = 0.0;
    for i in 0..candidates.len() {
        let rest: Vec<Vec<String>> = candidates
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, s)| s.clone())
            .collect();
        total += bleu(&candidates[i..=i], &rest, max_n)?;
    }
    Ok(total / candidates.len() as f64)
}

/// One row of a temperature sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub tau: f64,
    pub valid_mean: f64,
    pub valid_std: f64,
    pub self_mean: f64,
    pub self_std: f64,
}

/// Per-temperature quality/diversity statistics over repeated samples.
#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub max_n: usize,
    pub samples_per_tau: usize,
    pub sentences_per_sample: usize,
    pub rows: Vec<SweepRow>,
}

/// For each temperature, generates `samples_per_tau` samples of
/// `sentences_per_sample` sentences and reports mean and standard
/// deviation of validation BLEU and self BLEU. Sample s reuses the base
/// settings with an offset seed, so the report is reproducible.
pub fn sweep(
    predictor: &dyn Predictor,
    table: &SymbolTable,
    base: &GenerationSettings,
    taus: &[f64],
    samples_per_tau: usize,
    sentences_per_sample: usize,
    validation: &[Vec<String>],
    max_n: usize,
) -> Result<SweepReport, EvalError> {
    let mut rows = Vec::with_capacity(taus.len());
    for &tau in taus {
        let mut valid_scores = Vec::with_capacity(samples_per_tau);
        let mut self_scores = Vec::with_capacity(samples_per_tau);
        for s in 0..samples_per_tau {
            let settings = GenerationSettings {
                temperature: tau,
                seed: base.seed.wrapping_add((s as u64 + 1) * 0x9E37_79B9),
                ..base.clone()
            };
            let generated = generate(predictor, table, &settings, sentences_per_sample)?;
            let sentences: Vec<Vec<String>> = generated.into_iter().map(|g| g.forms).collect();
            valid_scores.push(bleu(&sentences, validation, max_n)?);
            self_scores.push(self_bleu(&sentences, max_n)?);
        }
        rows.push(SweepRow {
            tau,
            valid_mean: mean(&valid_scores),
            valid_std: std_dev(&valid_scores),
            self_mean: mean(&self_scores),
            self_std: std_dev(&self_scores),
        });
    }
    Ok(SweepReport { max_n, samples_per_tau, sentences_per_sample, rows })
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Per-sentence decoding-step ratios for one decoding regime.
#[derive(Debug, Clone, Serialize)]
pub struct RatioStats {
    pub ratios: Vec<f64>,
    pub mean: f64,
    /// `(bin_low, bin_high, count)` rows over [0, 1].
    pub histogram: Vec<(f64, f64, usize)>,
}

impl RatioStats {
    fn from_ratios(ratios: Vec<f64>, bins: usize) -> RatioStats {
        let mut histogram: Vec<(f64, f64, usize)> = (0..bins)
            .map(|b| (b as f64 / bins as f64, (b + 1) as f64 / bins as f64, 0))
            .collect();
        for &r in &ratios {
            let b = ((r * bins as f64) as usize).min(bins - 1);
            histogram[b].2 += 1;
        }
        let mean = mean(&ratios);
        RatioStats { ratios, mean, histogram }
    }
}

/// Decoding-steps-over-length statistics: natural trees, binarized trees
/// (the regime iterative expansion actually decodes in), and idealized
/// balanced binary trees as the floor.
#[derive(Debug, Clone, Serialize)]
pub struct SpeedupReport {
    pub natural: RatioStats,
    pub binarized: RatioStats,
    pub ideal: RatioStats,
}

/// Computes per-sentence step ratios: natural steps = tree depth,
/// binarized steps = depth after binarization, ideal steps =
/// ceil(log2(n + 1)); all divided by sentence length n.
pub fn speedup_stats(corpus: &Corpus) -> Result<SpeedupReport, EvalError> {
    let mut natural = Vec::with_capacity(corpus.len());
    let mut binarized = Vec::with_capacity(corpus.len());
    let mut ideal = Vec::with_capacity(corpus.len());
    for tree in &corpus.sentences {
        let n = tree.len() as f64;
        natural.push(tree.depth() as f64 / n);
        binarized.push(binarize(tree)?.depth() as f64 / n);
        ideal.push(((n + 1.0).log2().ceil()) / n);
    }
    let bins = 20;
    Ok(SpeedupReport {
        natural: RatioStats::from_ratios(natural, bins),
        binarized: RatioStats::from_ratios(binarized, bins),
        ideal: RatioStats::from_ratios(ideal, bins),
    })
}

/// Mean number of tokens attached through a relation containing "amod",
/// per sentence. Generated trees carry their own arcs, so adjectives are
/// identified structurally.
pub fn adjective_rate(trees: &[DepTree]) -> f64 {
    if trees.is_empty() {
        return 0.0;
    }
    let total: usize = trees
        .iter()
        .map(|t| t.tokens().iter().filter(|tok| tok.deprel.contains("amod")).count())
        .sum();
    total as f64 / trees.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{example_tree, long_example_tree, news_corpus};
    use crate::treebank::{Corpus, Token, ROOT_LABEL};
    use approx::assert_abs_diff_eq;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn bleu_identical_corpora() {
        let sents = vec![toks("the cat sat on the mat"), toks("a dog ran in the park")];
        assert_abs_diff_eq!(bleu(&sents, &sents, 5).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn bleu_clipping_worked_example() {
        let candidates = vec![toks("the the the")];
        let references = vec![toks("the cat")];
        assert_abs_diff_eq!(bleu(&candidates, &references, 1).unwrap(), 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn bleu_disjoint_vocabulary_is_zero() {
        let candidates = vec![toks("alpha beta gamma")];
        let references = vec![toks("one two three")];
        assert_eq!(bleu(&candidates, &references, 2).unwrap(), 0.0);
    }

    #[test]
    fn bleu_brevity_penalty() {
        // Candidate shorter than reference: p1 = 1, BP = exp(1 - 4/2).
        let candidates = vec![toks("the cat")];
        let references = vec![toks("the cat sat down")];
        let expected = (1.0f64 - 4.0 / 2.0).exp();
        assert_abs_diff_eq!(bleu(&candidates, &references, 1).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn bleu_is_order_invariant() {
        let mut candidates =
            vec![toks("the cat sat"), toks("a dog ran fast"), toks("the mat was warm")];
        let references = vec![toks("the cat sat on a mat"), toks("a dog ran fast today")];
        let a = bleu(&candidates, &references, 3).unwrap();
        candidates.reverse();
        let b = bleu(&candidates, &references, 3).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn bleu_empty_candidates_is_an_error() {
        assert!(matches!(bleu(&[], &[toks("x")], 1), Err(EvalError::EmptyCandidates)));
    }

    #[test]
    fn self_bleu_extremes_and_bounds() {
        let same = vec![toks("the cat sat"); 4];
        assert_abs_diff_eq!(self_bleu(&same, 3).unwrap(), 1.0, epsilon = 1e-12);

        let disjoint = vec![toks("aa bb cc"), toks("dd ee ff"), toks("gg hh ii")];
        assert_eq!(self_bleu(&disjoint, 2).unwrap(), 0.0);

        let mixed = vec![toks("the cat sat on the mat"), toks("the cat sat by a door"), toks("dogs bark")];
        let per_sentence: Vec<f64> = (0..mixed.len())
            .map(|i| {
                let rest: Vec<Vec<String>> = mixed
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, s)| s.clone())
                    .collect();
                bleu(&mixed[i..=i], &rest, 2).unwrap()
            })
            .collect();
        let score = self_bleu(&mixed, 2).unwrap();
        let min = per_sentence.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = per_sentence.iter().cloned().fold(0.0, f64::max);
        assert!(score >= min && score <= max);

        assert!(matches!(self_bleu(&mixed[..1], 2), Err(EvalError::TooFewCandidates)));
    }

    #[test]
    fn speedup_on_demo_sentences() {
        let corpus = Corpus::from_trees(vec![example_tree()]);
        let report = speedup_stats(&corpus).unwrap();
        assert_abs_diff_eq!(report.natural.ratios[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(report.ideal.ratios[0], 0.5, epsilon = 1e-12);

        let corpus = Corpus::from_trees(vec![long_example_tree()]);
        let report = speedup_stats(&corpus).unwrap();
        assert_abs_diff_eq!(report.binarized.ratios[0], 10.0 / 21.0, epsilon = 1e-12);

        let single =
            Corpus::from_trees(vec![DepTree::new(vec![Token::new("Go", None, ROOT_LABEL)]).unwrap()]);
        let report = speedup_stats(&single).unwrap();
        assert_abs_diff_eq!(report.natural.ratios[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(report.binarized.ratios[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(report.ideal.ratios[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn speedup_bounds_hold_corpus_wide() {
        let corpus = news_corpus(300, 9);
        let report = speedup_stats(&corpus).unwrap();
        for i in 0..corpus.len() {
            assert!(report.ideal.ratios[i] <= report.binarized.ratios[i] + 1e-12);
            assert!(report.binarized.ratios[i] <= 1.0 + 1e-12);
            assert!(report.natural.ratios[i] <= report.binarized.ratios[i] + 1e-12);
        }
        let hist_total: usize = report.binarized.histogram.iter().map(|(_, _, c)| c).sum();
        assert_eq!(hist_total, corpus.len());
    }

    #[test]
    fn adjective_rate_counting() {
        let one_amod = DepTree::new(vec![
            Token::new("red", Some(1), "amod"),
            Token::new("car", None, ROOT_LABEL),
        ])
        .unwrap();
        let none = DepTree::new(vec![
            Token::new("it", Some(1), "nsubj"),
            Token::new("ran", None, ROOT_LABEL),
        ])
        .unwrap();
        assert_abs_diff_eq!(adjective_rate(&[one_amod.clone()]), 1.0);
        assert_abs_diff_eq!(adjective_rate(&[none.clone()]), 0.0);
        assert_abs_diff_eq!(adjective_rate(&[one_amod, none]), 0.5);
        assert_abs_diff_eq!(adjective_rate(&[]), 0.0);
    }
}
