use itexp::eval::{adjective_rate, sweep};
use itexp::generate::{generate, GenerationSettings, StyleRule};
use itexp::leveler::levelize;
use itexp::predictor::{EmpiricalModel, EmpiricalPredictor};
use itexp::synth::news_corpus;
use itexp::vocab::SymbolTable;

fn main() {
    let train_corpus = news_corpus(1500, 42);
    let valid_corpus = news_corpus(500, 1042);
    let table = SymbolTable::induce(&train_corpus, 1);
    let transitions: Vec<_> = train_corpus.sentences.iter().map(|t| levelize(t).unwrap()).collect();
    let model = EmpiricalModel::fit(&transitions).unwrap();
    let predictor = EmpiricalPredictor { model: &model, table: &table };
    let validation: Vec<Vec<String>> = valid_corpus.sentences.iter().map(|t| t.forms()).collect();

    let base = GenerationSettings { seed: 7, ..Default::default() };
    let report = sweep(&predictor, &table, &base, &[0.7, 1.0, 1.2], 5, 100, &validation, 5).unwrap();
    for row in &report.rows {
        println!(
            "tau {:.1}: valid {:.4} ({:.4})  self {:.4} ({:.4})",
            row.tau, row.valid_mean, row.valid_std, row.self_mean, row.self_std
        );
    }

    println!("style:");
    for factor in [1.0, 10.0, 20.0, 50.0] {
        let settings = GenerationSettings {
            style_rules: vec![StyleRule { label_substring: "amod".into(), factor }],
            seed: 7,
            ..Default::default()
        };
        let out = generate(&predictor, &table, &settings, 200).unwrap();
        let trees: Vec<_> = out.iter().map(|g| g.tree.clone()).collect();
        let lens: f64 = out.iter().map(|g| g.forms.len() as f64).sum::<f64>() / out.len() as f64;
        println!("x{factor}: adjs/sentence {:.3} (mean len {:.1})", adjective_rate(&trees), lens);
    }
}
