//! End-to-end pipeline: ingest -> transform -> vocab -> levelize ->
//! predictors -> generate -> evaluate, with every file format exercised
//! on disk along the way.

use std::io::Write;

use itexp::eval::{self_bleu, sweep};
use itexp::generate::{generate, GenerationSettings};
use itexp::leveler::{levelize, read_transitions_file, replay, write_transitions_file};
use itexp::neural::{self, train, Model, ModelConfig, NeuralPredictor, TrainOptions};
use itexp::predictor::{EmpiricalModel, EmpiricalPredictor, OraclePredictor};
use itexp::synth::news_corpus;
use itexp::transform::{apply_subword, binarize, learn_bpe, BpeMerges};
use itexp::treebank::{parse_conllu, read_trees_file, write_trees_file, Corpus};
use itexp::vocab::SymbolTable;

fn to_conllu(corpus: &Corpus) -> String {
    let mut out = String::new();
    for tree in &corpus.sentences {
        for (i, tok) in tree.tokens().iter().enumerate() {
            let head = tok.head.map_or(0, |h| h + 1);
            let deprel = if tok.head.is_none() { "root" } else { tok.deprel.as_str() };
            out.push_str(&format!("{}\t{}\t_\t_\t_\t_\t{}\t{}\t_\t_\n", i + 1, tok.form, head, deprel));
        }
        out.push('\n');
    }
    out
}

#[test]
fn full_pipeline_on_synthetic_news() {
    let dir = tempfile::tempdir().unwrap();
    let source = news_corpus(120, 99);

    // CoNLL-U ingestion.
    let conllu = to_conllu(&source);
    let corpus = parse_conllu(conllu.as_bytes(), "synthetic").unwrap();
    assert_eq!(corpus.len(), source.len());
    assert_eq!(corpus.provenance.dropped_malformed, 0);

    // Tree persistence.
    let trees_path = dir.path().join("corpus.trees");
    write_trees_file(&trees_path, &corpus).unwrap();
    let corpus = read_trees_file(&trees_path).unwrap();

    // Subword then binarize (the recommended order; both compose).
    let merges = learn_bpe(&corpus, 60);
    let merges_path = dir.path().join("merges.txt");
    merges.write_file(&merges_path).unwrap();
    let merges = BpeMerges::read_file(&merges_path).unwrap();
    let transformed: Vec<_> = corpus
        .sentences
        .iter()
        .map(|t| binarize(&apply_subword(t, &merges)).unwrap())
        .collect();
    let transformed = Corpus::from_trees(transformed);

    // Vocabulary.
    let table = SymbolTable::induce(&transformed, 1);
    let vocab_path = dir.path().join("vocab.txt");
    table.write_file(&vocab_path).unwrap();
    let table = SymbolTable::read_file(&vocab_path).unwrap();

    // Level transitions, persisted and reloaded.
    let transitions: Vec<_> = transformed.sentences.iter().map(|t| levelize(t).unwrap()).collect();
    let levels_path = dir.path().join("levels.jsonl");
    write_transitions_file(&levels_path, &transitions).unwrap();
    let transitions = read_transitions_file(&levels_path).unwrap();
    for (chain, tree) in transitions.iter().zip(&transformed.sentences) {
        let (_, rebuilt) = replay(chain).unwrap();
        assert_eq!(&rebuilt, tree);
    }

    // Empirical predictor: fit, persist, reload, generate deterministically.
    let empirical = EmpiricalModel::fit(&transitions).unwrap();
    let emp_path = dir.path().join("empirical.jsonl");
    empirical.write_file(&emp_path).unwrap();
    let empirical = EmpiricalModel::read_file(&emp_path).unwrap();
    let predictor = EmpiricalPredictor { model: &empirical, table: &table };
    let settings = GenerationSettings { seed: 11, ..Default::default() };
    let a = generate(&predictor, &table, &settings, 8).unwrap();
    let b = generate(&predictor, &table, &settings, 8).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.forms, y.forms);
        assert!(x.tree.is_projective());
    }

    // Oracle predictor drives the engine back to a held-out sentence.
    let held_out = &transformed.sentences[7];
    let oracle = OraclePredictor::new(held_out, &table).unwrap();
    let out = generate(&oracle, &table, &GenerationSettings::default(), 1).unwrap();
    assert_eq!(out[0].tree, *held_out);

    // Small sweep smoke check over the reloaded empirical model.
    let validation: Vec<Vec<String>> = corpus.sentences.iter().map(|t| t.forms()).collect();
    let report =
        sweep(&predictor, &table, &settings, &[0.8, 1.2], 2, 20, &validation, 3).unwrap();
    assert_eq!(report.rows.len(), 2);
    let sample: Vec<Vec<String>> = a.iter().map(|g| g.forms.clone()).collect();
    assert!(self_bleu(&sample, 3).unwrap() <= 1.0);
}

#[test]
fn neural_checkpoint_drives_generation() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = news_corpus(24, 5);
    let table = SymbolTable::induce(&corpus, 1);
    let transitions: Vec<_> = corpus.sentences.iter().map(|t| levelize(t).unwrap()).collect();
    let mut config = ModelConfig::for_table(&table);
    config.max_seq_len = 64;
    config.embed_size = 16;
    config.ff_size = 32;
    let opts = TrainOptions { epochs: 120, batch_size: 8, quiet: true };
    let (model, log) = train(&transitions, &table, config, &opts).unwrap();
    assert!(log.last().unwrap().loss < 0.5 * log.first().unwrap().loss);

    let ckpt_path = dir.path().join("model.ckpt");
    model.save_file(&ckpt_path).unwrap();
    let model = Model::load_file(&ckpt_path).unwrap();
    let predictor = NeuralPredictor { model: &model, table: &table };
    let settings = GenerationSettings { temperature: 0.8, seed: 3, max_iterations: 24, ..Default::default() };
    let out = generate(&predictor, &table, &settings, 6).unwrap();
    for g in &out {
        assert!(!g.forms.is_empty());
        assert!(g.tree.is_projective());
        assert_eq!(g.iterations, g.tree.depth());
    }

    // The trained model reproduces training transitions well under
    // teacher forcing.
    let examples = neural::encode_transitions(&transitions, &table, &model.config).unwrap();
    let (tok_acc, exp_acc) = model.teacher_forced_accuracy(&examples);
    assert!(tok_acc > 0.6, "token accuracy {tok_acc}");
    assert!(exp_acc > 0.6, "expansion accuracy {exp_acc}");
}
