//! End-to-end checks of the `itexp` binary: every subcommand runs against
//! a small synthetic corpus, and the determinism contract is verified on
//! the actual output files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use itexp::synth::news_corpus;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_itexp"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn itexp");
    assert!(
        out.status.success(),
        "itexp {:?} failed:\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_conllu(path: &Path, sentences: usize, seed: u64) {
    let corpus = news_corpus(sentences, seed);
    let mut text = String::new();
    for tree in &corpus.sentences {
        for (i, tok) in tree.tokens().iter().enumerate() {
            let head = tok.head.map_or(0, |h| h + 1);
            let deprel = if tok.head.is_none() { "root" } else { tok.deprel.as_str() };
            text.push_str(&format!("{}\t{}\t_\t_\t_\t_\t{}\t{}\t_\t_\n", i + 1, tok.form, head, deprel));
        }
        text.push('\n');
    }
    fs::write(path, text).unwrap();
}

struct Artifacts {
    dir: tempfile::TempDir,
    trees: PathBuf,
    vocab: PathBuf,
    levels: PathBuf,
    empirical: PathBuf,
}

fn prepare_pipeline() -> Artifacts {
    let dir = tempfile::tempdir().unwrap();
    let conllu = dir.path().join("input.conllu");
    write_conllu(&conllu, 80, 31);
    let trees = dir.path().join("corpus.trees");
    let out = run_ok(&["ingest", "--conllu", conllu.to_str().unwrap(), "--out", trees.to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(stdout.contains("kept 80 sentences"), "{stdout}");

    let vocab = dir.path().join("vocab.txt");
    run_ok(&["vocab", "--trees", trees.to_str().unwrap(), "--out", vocab.to_str().unwrap()]);
    let levels = dir.path().join("levels.jsonl");
    run_ok(&["levelize", "--trees", trees.to_str().unwrap(), "--out", levels.to_str().unwrap()]);
    let empirical = dir.path().join("empirical.jsonl");
    run_ok(&[
        "fit-empirical",
        "--levels",
        levels.to_str().unwrap(),
        "--out",
        empirical.to_str().unwrap(),
    ]);
    Artifacts { dir, trees, vocab, levels, empirical }
}

#[test]
fn transform_subcommands_compose() {
    let a = prepare_pipeline();
    let binarized = a.dir.path().join("binarized.trees");
    run_ok(&["binarize", "--trees", a.trees.to_str().unwrap(), "--out", binarized.to_str().unwrap()]);
    let merges = a.dir.path().join("merges.txt");
    run_ok(&[
        "bpe-learn",
        "--trees",
        a.trees.to_str().unwrap(),
        "--merges",
        "40",
        "--out",
        merges.to_str().unwrap(),
    ]);
    let subworded = a.dir.path().join("subworded.trees");
    run_ok(&[
        "bpe-apply",
        "--trees",
        a.trees.to_str().unwrap(),
        "--merges-file",
        merges.to_str().unwrap(),
        "--out",
        subworded.to_str().unwrap(),
    ]);
    // Either transform order levelizes cleanly.
    let sub_bin = a.dir.path().join("sub_bin.trees");
    run_ok(&["binarize", "--trees", subworded.to_str().unwrap(), "--out", sub_bin.to_str().unwrap()]);
    let levels = a.dir.path().join("levels2.jsonl");
    run_ok(&["levelize", "--trees", sub_bin.to_str().unwrap(), "--out", levels.to_str().unwrap()]);

    let out = run_ok(&["speedup", "--trees", a.trees.to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(stdout.contains("binarized trees: mean"), "{stdout}");
}

#[test]
fn generate_is_deterministic_and_styled() {
    let a = prepare_pipeline();
    let out1 = a.dir.path().join("sample1.txt");
    let out2 = a.dir.path().join("sample2.txt");
    let trees1 = a.dir.path().join("gen1.trees");
    let base_args = |out: &Path, trees: &Path| {
        vec![
            "generate".to_string(),
            "--empirical".into(),
            a.empirical.to_str().unwrap().into(),
            "--vocab".into(),
            a.vocab.to_str().unwrap().into(),
            "--count".into(),
            "25".into(),
            "--temperature".into(),
            "1.0".into(),
            "--top-p".into(),
            "0.9".into(),
            "--seed".into(),
            "7".into(),
            "--out".into(),
            out.to_str().unwrap().into(),
            "--trees-out".into(),
            trees.to_str().unwrap().into(),
        ]
    };
    let args1: Vec<String> = base_args(&out1, &trees1);
    run_ok(&args1.iter().map(String::as_str).collect::<Vec<_>>());
    let trees2 = a.dir.path().join("gen2.trees");
    let args2: Vec<String> = base_args(&out2, &trees2);
    run_ok(&args2.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(fs::read(&out1).unwrap(), fs::read(&out2).unwrap(), "same flags, different output");

    // Style flag raises the adjective rate at the same seed.
    let styled_out = a.dir.path().join("styled.txt");
    let styled_trees = a.dir.path().join("styled.trees");
    let mut styled_args = base_args(&styled_out, &styled_trees);
    styled_args.push("--style".into());
    styled_args.push("amod:10".into());
    run_ok(&styled_args.iter().map(String::as_str).collect::<Vec<_>>());
    let plain = itexp::treebank::read_trees_file(&trees1).unwrap();
    let styled = itexp::treebank::read_trees_file(&styled_trees).unwrap();
    let rate = |c: &itexp::treebank::Corpus| itexp::eval::adjective_rate(&c.sentences);
    assert!(
        rate(&styled) >= rate(&plain),
        "styled rate {} < plain rate {}",
        rate(&styled),
        rate(&plain)
    );
}

#[test]
fn eval_and_style_eval_report() {
    let a = prepare_pipeline();
    let sample = a.dir.path().join("sample.txt");
    run_ok(&[
        "generate",
        "--empirical",
        a.empirical.to_str().unwrap(),
        "--vocab",
        a.vocab.to_str().unwrap(),
        "--count",
        "10",
        "--seed",
        "3",
        "--out",
        sample.to_str().unwrap(),
    ]);
    let out = run_ok(&[
        "eval-bleu",
        "--candidates",
        sample.to_str().unwrap(),
        "--references",
        sample.to_str().unwrap(),
        "--max-n",
        "3",
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(stdout.contains("BLEU-3: 1.0000"), "{stdout}");

    let out = run_ok(&[
        "style-eval",
        "--empirical",
        a.empirical.to_str().unwrap(),
        "--vocab",
        a.vocab.to_str().unwrap(),
        "--factors",
        "1,20",
        "--count",
        "60",
        "--seed",
        "5",
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    let rates: Vec<f64> = stdout
        .lines()
        .filter(|l| l.starts_with('x'))
        .filter_map(|l| l.split_whitespace().nth(1).and_then(|v| v.parse().ok()))
        .collect();
    assert_eq!(rates.len(), 2, "{stdout}");
    assert!(rates[1] >= rates[0], "{stdout}");
}

#[test]
fn sweep_reports_rows() {
    let a = prepare_pipeline();
    let out = run_ok(&[
        "sweep",
        "--empirical",
        a.empirical.to_str().unwrap(),
        "--vocab",
        a.vocab.to_str().unwrap(),
        "--validation",
        a.trees.to_str().unwrap(),
        "--taus",
        "0.8,1.2",
        "--samples",
        "2",
        "--sentences",
        "15",
        "--max-n",
        "3",
        "--seed",
        "2",
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert_eq!(stdout.lines().filter(|l| l.starts_with("0.8") || l.starts_with("1.2")).count(), 2, "{stdout}");
}

#[test]
fn train_checkpoint_generates() {
    let a = prepare_pipeline();
    let ckpt = a.dir.path().join("model.ckpt");
    let out = run_ok(&[
        "train",
        "--levels",
        a.levels.to_str().unwrap(),
        "--vocab",
        a.vocab.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
        "--epochs",
        "40",
        "--embed",
        "16",
        "--ff",
        "32",
        "--seed",
        "1",
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(stdout.contains("teacher-forced accuracy"), "{stdout}");
    let sample = a.dir.path().join("neural.txt");
    run_ok(&[
        "generate",
        "--model",
        ckpt.to_str().unwrap(),
        "--vocab",
        a.vocab.to_str().unwrap(),
        "--count",
        "5",
        "--temperature",
        "0.8",
        "--max-iterations",
        "24",
        "--seed",
        "9",
        "--out",
        sample.to_str().unwrap(),
    ]);
    assert!(fs::read_to_string(&sample).unwrap().lines().count() == 5);
}

#[test]
fn grad_check_subcommand_passes() {
    let out = run_ok(&["grad-check"]);
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(stdout.contains("gradient check passed"), "{stdout}");
}

#[test]
fn failures_are_distinct_and_nonzero() {
    let missing = bin().args(["speedup", "--trees", "/nonexistent/path.trees"]).output().unwrap();
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("error:"));

    let a = prepare_pipeline();
    let both = bin()
        .args([
            "generate",
            "--model",
            "x",
            "--empirical",
            "y",
            "--vocab",
            a.vocab.to_str().unwrap(),
            "--out",
            "z",
        ])
        .output()
        .unwrap();
    assert!(!both.status.success());
    assert!(String::from_utf8_lossy(&both.stderr).contains("exactly one of"));

    // A trees file with a wrong version is a schema mismatch, not a parse.
    let bad = a.dir.path().join("bad.trees");
    fs::write(&bad, "{\"format\":\"itexp-trees\",\"version\":9}\n").unwrap();
    let mismatch = bin().args(["speedup", "--trees", bad.to_str().unwrap()]).output().unwrap();
    assert!(!mismatch.status.success());
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains("unsupported format/version"));
}

#[test]
fn seed_env_fallback_applies() {
    let a = prepare_pipeline();
    let out_env = a.dir.path().join("env.txt");
    let out_flag = a.dir.path().join("flag.txt");
    let mut cmd = bin();
    cmd.env("ITEXP_SEED", "123").args([
        "generate",
        "--empirical",
        a.empirical.to_str().unwrap(),
        "--vocab",
        a.vocab.to_str().unwrap(),
        "--count",
        "8",
        "--out",
        out_env.to_str().unwrap(),
    ]);
    assert!(cmd.output().unwrap().status.success());
    run_ok(&[
        "generate",
        "--empirical",
        a.empirical.to_str().unwrap(),
        "--vocab",
        a.vocab.to_str().unwrap(),
        "--count",
        "8",
        "--seed",
        "123",
        "--out",
        out_flag.to_str().unwrap(),
    ]);
    assert_eq!(fs::read(&out_env).unwrap(), fs::read(&out_flag).unwrap());
}
