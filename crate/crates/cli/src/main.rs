//! `itexp` — command-line front end for the iterative-expansion pipeline.
//!
//! Subcommands mirror the pipeline stages: ingest CoNLL-U, transform
//! trees, induce vocabularies, extract level transitions, fit/train
//! predictors, generate, and evaluate. Every run prints its resolved
//! configuration and seed so results can be reproduced exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use itexp::eval;
use itexp::generate::{generate_parallel, GenerationSettings, StyleRule};
use itexp::leveler;
use itexp::neural::{self, Model, ModelConfig, TrainOptions};
use itexp::predictor::{EmpiricalModel, EmpiricalPredictor, Predictor};
use itexp::transform::{apply_subword, binarize, detokenize, learn_bpe, BpeMerges};
use itexp::treebank::{self, Corpus};
use itexp::vocab::SymbolTable;

#[derive(Parser)]
#[command(name = "itexp", version, about = "Iterative-expansion language modeling toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest CoNLL-U into the itexp-trees format, dropping malformed and
    /// non-projective sentences (with counts).
    Ingest {
        #[arg(long)]
        conllu: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rewrite trees so every node has at most one dependent per side.
    Binarize {
        #[arg(long)]
        trees: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn BPE merge rules from the corpus word forms.
    BpeLearn {
        #[arg(long)]
        trees: PathBuf,
        /// Number of merge operations.
        #[arg(long)]
        merges: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decompose word nodes into subword chains using learned merges.
    BpeApply {
        #[arg(long)]
        trees: PathBuf,
        #[arg(long)]
        merges_file: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Induce terminal / placeholder / expansion symbol tables.
    Vocab {
        #[arg(long)]
        trees: PathBuf,
        /// Terminals below this frequency encode as <unk>.
        #[arg(long, default_value_t = 1)]
        min_freq: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decompose trees into per-iteration level transitions.
    Levelize {
        #[arg(long)]
        trees: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the count-based predictor on level transitions.
    FitEmpirical {
        #[arg(long)]
        levels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the transformer predictor on level transitions.
    Train(TrainArgs),
    /// Verify analytic gradients against central finite differences.
    GradCheck {
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
    /// Generate sentences with a trained or empirical predictor.
    Generate(GenerateArgs),
    /// Corpus BLEU of candidate sentences against reference sentences.
    EvalBleu {
        /// Plain text, one sentence per line, whitespace tokenized.
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        references: PathBuf,
        #[arg(long, default_value_t = 5)]
        max_n: usize,
    },
    /// Quality/diversity sweep over softmax temperatures.
    Sweep(SweepArgs),
    /// Decoding-step ratios for natural, binarized, and ideal trees.
    Speedup {
        #[arg(long)]
        trees: PathBuf,
        /// Optional line-delimited report (histogram rows and means).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Adjective rate across expansion-reweighting factors.
    StyleEval(StyleEvalArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    levels: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 32)]
    embed: usize,
    #[arg(long, default_value_t = 64)]
    ff: usize,
    /// 1-based layer whose hidden state feeds the expansion projection.
    #[arg(long, default_value_t = 1)]
    exp_layer: usize,
    #[arg(long, default_value_t = 128)]
    max_seq_len: usize,
    #[arg(long, default_value_t = 5e-3)]
    lr: f64,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct PredictorArgs {
    /// Transformer checkpoint produced by `itexp train`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Empirical count model produced by `itexp fit-empirical`.
    #[arg(long)]
    empirical: Option<PathBuf>,
    #[arg(long)]
    vocab: PathBuf,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    predictor: PredictorArgs,
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 0.9)]
    top_p: f64,
    /// Style rules like `amod:10`; repeatable or comma separated.
    #[arg(long, value_delimiter = ',')]
    style: Vec<String>,
    #[arg(long, default_value_t = 64)]
    max_iterations: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Sentences, one per line, subwords re-joined.
    #[arg(long)]
    out: PathBuf,
    /// Optional tree sidecar in the itexp-trees format.
    #[arg(long)]
    trees_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    predictor: PredictorArgs,
    /// Validation corpus in the itexp-trees format.
    #[arg(long)]
    validation: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.7, 1.0, 1.2])]
    taus: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    samples: usize,
    #[arg(long, default_value_t = 100)]
    sentences: usize,
    #[arg(long, default_value_t = 5)]
    max_n: usize,
    #[arg(long, default_value_t = 0.9)]
    top_p: f64,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct StyleEvalArgs {
    #[command(flatten)]
    predictor: PredictorArgs,
    #[arg(long, default_value = "amod")]
    label: String,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 10.0, 20.0, 50.0])]
    factors: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 0.9)]
    top_p: f64,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli.command) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

/// --seed flag, then ITEXP_SEED, then 0.
fn resolve_seed(flag: Option<u64>) -> u64 {
    flag.or_else(|| std::env::var("ITEXP_SEED").ok().and_then(|s| s.parse().ok())).unwrap_or(0)
}

fn read_corpus(path: &Path) -> Result<Corpus> {
    treebank::read_trees_file(path).with_context(|| format!("reading trees from {}", path.display()))
}

fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    treebank::write_trees_file(path, corpus)
        .with_context(|| format!("writing trees to {}", path.display()))
}

fn parse_style_rules(specs: &[String]) -> Result<Vec<StyleRule>> {
    specs
        .iter()
        .filter(|s| !s.is_empty())
        .map(|spec| {
            let (label, factor) = spec
                .split_once(':')
                .with_context(|| format!("style rule {spec:?} is not label:factor"))?;
            let factor: f64 =
                factor.parse().with_context(|| format!("style factor in {spec:?} is not a number"))?;
            if factor <= 0.0 {
                bail!("style factor in {spec:?} must be positive");
            }
            Ok(StyleRule { label_substring: label.to_string(), factor })
        })
        .collect()
}

enum LoadedPredictor {
    Neural(Model),
    Empirical(EmpiricalModel),
}

fn load_predictor(args: &PredictorArgs) -> Result<(LoadedPredictor, SymbolTable)> {
    let table = SymbolTable::read_file(&args.vocab)
        .with_context(|| format!("reading vocab from {}", args.vocab.display()))?;
    match (&args.model, &args.empirical) {
        (Some(path), None) => {
            let model = Model::load_file(path)
                .with_context(|| format!("loading checkpoint {}", path.display()))?;
            if model.config.token_vocab != table.token_vocab_size()
                || model.config.exp_vocab != table.exp_vocab_size()
            {
                bail!(
                    "checkpoint vocab sizes ({}, {}) do not match vocab file ({}, {})",
                    model.config.token_vocab,
                    model.config.exp_vocab,
                    table.token_vocab_size(),
                    table.exp_vocab_size()
                );
            }
            Ok((LoadedPredictor::Neural(model), table))
        }
        (None, Some(path)) => {
            let model = EmpiricalModel::read_file(path)
                .with_context(|| format!("loading empirical model {}", path.display()))?;
            Ok((LoadedPredictor::Empirical(model), table))
        }
        _ => bail!("exactly one of --model or --empirical is required"),
    }
}

impl LoadedPredictor {
    fn as_predictor<'a>(&'a self, table: &'a SymbolTable) -> Box<dyn Predictor + 'a> {
        match self {
            LoadedPredictor::Neural(model) => Box::new(neural::NeuralPredictor { model, table }),
            LoadedPredictor::Empirical(model) => Box::new(EmpiricalPredictor { model, table }),
        }
    }
}

fn read_sentences_file(path: &Path) -> Result<Vec<Vec<String>>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(line.split_whitespace().map(str::to_string).collect());
        }
    }
    Ok(out)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest { conllu, out } => {
            println!("config: ingest conllu={} out={}", conllu.display(), out.display());
            let file = File::open(&conllu).with_context(|| format!("opening {}", conllu.display()))?;
            let corpus = treebank::parse_conllu(BufReader::new(file), &conllu.display().to_string())
                .context("parsing CoNLL-U")?;
            write_corpus(&out, &corpus)?;
            let p = &corpus.provenance;
            println!(
                "kept {} sentences (dropped {} non-projective, {} malformed)",
                p.kept, p.dropped_nonprojective, p.dropped_malformed
            );
        }
        Command::Binarize { trees, out } => {
            println!("config: binarize trees={} out={}", trees.display(), out.display());
            let corpus = read_corpus(&trees)?;
            let sentences = corpus
                .sentences
                .iter()
                .map(binarize)
                .collect::<Result<Vec<_>, _>>()
                .context("binarizing")?;
            let binarized = Corpus { sentences, provenance: corpus.provenance.clone() };
            write_corpus(&out, &binarized)?;
            println!("binarized {} sentences", binarized.len());
        }
        Command::BpeLearn { trees, merges, out } => {
            println!("config: bpe-learn trees={} merges={merges} out={}", trees.display(), out.display());
            let corpus = read_corpus(&trees)?;
            if corpus.is_empty() {
                bail!("cannot learn BPE merges from an empty corpus");
            }
            let rules = learn_bpe(&corpus, merges);
            rules.write_file(&out).context("writing merges")?;
            println!("learned {} merge rules", rules.len());
        }
        Command::BpeApply { trees, merges_file, out } => {
            println!(
                "config: bpe-apply trees={} merges-file={} out={}",
                trees.display(),
                merges_file.display(),
                out.display()
            );
            let corpus = read_corpus(&trees)?;
            let merges = BpeMerges::read_file(&merges_file).context("reading merges")?;
            let sentences = corpus.sentences.iter().map(|t| apply_subword(t, &merges)).collect();
            let subworded = Corpus { sentences, provenance: corpus.provenance.clone() };
            write_corpus(&out, &subworded)?;
            println!("decomposed {} sentences", subworded.len());
        }
        Command::Vocab { trees, min_freq, out } => {
            println!("config: vocab trees={} min-freq={min_freq} out={}", trees.display(), out.display());
            let corpus = read_corpus(&trees)?;
            let table = SymbolTable::induce(&corpus, min_freq);
            table.write_file(&out).context("writing vocab")?;
            println!(
                "tokens {} (terminals {}), expansions {}",
                table.token_vocab_size(),
                table.unmasked_token_count() - 2,
                table.exp_vocab_size() - 1
            );
        }
        Command::Levelize { trees, out } => {
            println!("config: levelize trees={} out={}", trees.display(), out.display());
            let corpus = read_corpus(&trees)?;
            let sentences = corpus
                .sentences
                .iter()
                .map(leveler::levelize)
                .collect::<Result<Vec<_>, _>>()
                .context("levelizing")?;
            leveler::write_transitions_file(&out, &sentences).context("writing transitions")?;
            let total: usize = sentences.iter().map(Vec::len).sum();
            println!("wrote {} transitions for {} sentences", total, sentences.len());
        }
        Command::FitEmpirical { levels, out } => {
            println!("config: fit-empirical levels={} out={}", levels.display(), out.display());
            let sentences = leveler::read_transitions_file(&levels).context("reading transitions")?;
            let model = EmpiricalModel::fit(&sentences).context("fitting empirical model")?;
            model.write_file(&out).context("writing empirical model")?;
            println!("fit on {} sentences", sentences.len());
        }
        Command::Train(args) => {
            let seed = resolve_seed(args.seed);
            println!("config: {args:?} seed={seed}");
            let sentences = leveler::read_transitions_file(&args.levels).context("reading transitions")?;
            let table = SymbolTable::read_file(&args.vocab).context("reading vocab")?;
            let config = ModelConfig {
                num_layers: args.layers,
                num_heads: args.heads,
                embed_size: args.embed,
                ff_size: args.ff,
                exp_layer: args.exp_layer,
                max_seq_len: args.max_seq_len,
                learning_rate: args.lr,
                seed,
                ..ModelConfig::for_table(&table)
            };
            let opts = TrainOptions { epochs: args.epochs, batch_size: args.batch_size, quiet: false };
            let (model, log) = neural::train(&sentences, &table, config, &opts).context("training")?;
            model.save_file(&args.out).context("writing checkpoint")?;
            let examples =
                neural::encode_transitions(&sentences, &table, &model.config).context("encoding")?;
            let (tok_acc, exp_acc) = model.teacher_forced_accuracy(&examples);
            println!(
                "final loss {:.6}, teacher-forced accuracy: tokens {:.2}%, expansions {:.2}%",
                log.last().map_or(f64::NAN, |e| e.loss),
                100.0 * tok_acc,
                100.0 * exp_acc
            );
        }
        Command::GradCheck { step, tolerance } => {
            println!("config: grad-check step={step} tolerance={tolerance}");
            let report = neural::grad_check(ModelConfig::tiny(), step).context("gradient check")?;
            for entry in &report.entries {
                println!(
                    "{:24} max|Δ| {:>12.3e}  rel {:>12.3e}",
                    entry.name, entry.max_abs_diff, entry.max_rel_error
                );
            }
            println!("max relative error: {:.3e}", report.max_rel_error);
            if report.max_rel_error >= tolerance {
                bail!("gradient check failed: {:.3e} >= {tolerance:.3e}", report.max_rel_error);
            }
            println!("gradient check passed");
        }
        Command::Generate(args) => {
            let seed = resolve_seed(args.seed);
            println!("config: {args:?} seed={seed}");
            let (loaded, table) = load_predictor(&args.predictor)?;
            let predictor = loaded.as_predictor(&table);
            let settings = GenerationSettings {
                temperature: args.temperature,
                top_p: args.top_p,
                style_rules: parse_style_rules(&args.style)?,
                seed,
                max_iterations: args.max_iterations,
            };
            let generated =
                generate_parallel(predictor.as_ref(), &table, &settings, args.count, args.workers)
                    .context("generating")?;
            let mut out = BufWriter::new(
                File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?,
            );
            for g in &generated {
                writeln!(out, "{}", detokenize(&g.forms))?;
            }
            out.flush()?;
            if let Some(trees_out) = &args.trees_out {
                let corpus = Corpus::from_trees(generated.iter().map(|g| g.tree.clone()).collect());
                write_corpus(trees_out, &corpus)?;
            }
            let mean_iters = generated.iter().map(|g| g.iterations as f64).sum::<f64>()
                / generated.len().max(1) as f64;
            println!("generated {} sentences, mean iterations {:.2}", generated.len(), mean_iters);
        }
        Command::EvalBleu { candidates, references, max_n } => {
            println!(
                "config: eval-bleu candidates={} references={} max-n={max_n}",
                candidates.display(),
                references.display()
            );
            let cands = read_sentences_file(&candidates)?;
            let refs = read_sentences_file(&references)?;
            let score = eval::bleu(&cands, &refs, max_n).context("scoring")?;
            let self_score = if cands.len() >= 2 {
                Some(eval::self_bleu(&cands, max_n).context("self-scoring")?)
            } else {
                None
            };
            println!("BLEU-{max_n}: {:.4}", score);
            if let Some(s) = self_score {
                println!("self-BLEU-{max_n}: {s:.4}");
            }
        }
        Command::Sweep(args) => {
            let seed = resolve_seed(args.seed);
            println!("config: {args:?} seed={seed}");
            let (loaded, table) = load_predictor(&args.predictor)?;
            let predictor = loaded.as_predictor(&table);
            let validation: Vec<Vec<String>> =
                read_corpus(&args.validation)?.sentences.iter().map(|t| t.forms()).collect();
            let base = GenerationSettings { top_p: args.top_p, seed, ..Default::default() };
            let report = eval::sweep(
                predictor.as_ref(),
                &table,
                &base,
                &args.taus,
                args.samples,
                args.sentences,
                &validation,
                args.max_n,
            )
            .context("sweeping")?;
            println!("tau     valid-BLEU{0} (std)   self-BLEU{0} (std)", args.max_n);
            for row in &report.rows {
                println!(
                    "{:<7.2} {:>7.4} ({:.4})   {:>7.4} ({:.4})",
                    row.tau, row.valid_mean, row.valid_std, row.self_mean, row.self_std
                );
            }
        }
        Command::Speedup { trees, out } => {
            println!("config: speedup trees={}", trees.display());
            let corpus = read_corpus(&trees)?;
            if corpus.is_empty() {
                bail!("speedup needs a non-empty corpus");
            }
            let report = eval::speedup_stats(&corpus).context("computing speedup stats")?;
            println!("decoding-step ratios (steps / sentence length):");
            println!("  natural trees:   mean {:.4}", report.natural.mean);
            println!("  binarized trees: mean {:.4}", report.binarized.mean);
            println!("  ideal trees:     mean {:.4}", report.ideal.mean);
            if let Some(path) = out {
                let mut w = BufWriter::new(File::create(&path)?);
                for (kind, stats) in [
                    ("natural", &report.natural),
                    ("binarized", &report.binarized),
                    ("ideal", &report.ideal),
                ] {
                    for (lo, hi, count) in &stats.histogram {
                        writeln!(
                            w,
                            "{}",
                            serde_record(kind, *lo, *hi, *count, stats.mean)
                        )?;
                    }
                }
                println!("wrote histogram records to {}", path.display());
            }
        }
        Command::StyleEval(args) => {
            let seed = resolve_seed(args.seed);
            println!("config: {args:?} seed={seed}");
            let (loaded, table) = load_predictor(&args.predictor)?;
            let predictor = loaded.as_predictor(&table);
            println!("factor  adjs/sentence");
            for &factor in &args.factors {
                let settings = GenerationSettings {
                    temperature: args.temperature,
                    top_p: args.top_p,
                    style_rules: vec![StyleRule { label_substring: args.label.clone(), factor }],
                    seed,
                    max_iterations: 64,
                };
                let generated = generate_parallel(predictor.as_ref(), &table, &settings, args.count, 1)
                    .context("generating")?;
                let trees: Vec<_> = generated.iter().map(|g| g.tree.clone()).collect();
                let rate = eval::adjective_rate(&trees);
                println!("x{:<6} {:.3}", factor, rate);
            }
        }
    }
    Ok(())
}

fn serde_record(kind: &str, lo: f64, hi: f64, count: usize, mean: f64) -> String {
    format!(
        "{{\"kind\":\"{kind}\",\"bin_low\":{lo},\"bin_high\":{hi},\"count\":{count},\"mean\":{mean}}}"
    )
}
