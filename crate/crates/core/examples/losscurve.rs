use itexp::leveler::levelize;
use itexp::neural::{train, ModelConfig, TrainOptions};
use itexp::synth::memorization_corpus;
use itexp::vocab::SymbolTable;

fn main() {
    let corpus = memorization_corpus();
    let table = SymbolTable::induce(&corpus, 1);
    let transitions: Vec<_> = corpus.sentences.iter().map(|t| levelize(t).unwrap()).collect();
    let mut config = ModelConfig::for_table(&table);
    config.max_seq_len = 32;
    let opts = TrainOptions { epochs: 200, batch_size: 16, quiet: true };
    let (_, log) = train(&transitions, &table, config, &opts).unwrap();
    let means: Vec<f64> = log.chunks(10).map(|w| w.iter().map(|e| e.loss).sum::<f64>() / w.len() as f64).collect();
    for (i, m) in means.iter().enumerate() {
        print!("{}:{:.4} ", i, m);
    }
    println!();
    let mut worst: f64 = 0.0;
    for pair in means.windows(2) {
        worst = worst.max(pair[1] - pair[0]);
    }
    println!("worst window-to-window increase: {worst:.5}");
}
