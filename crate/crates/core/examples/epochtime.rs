use itexp::leveler::levelize;
use itexp::neural::{train, ModelConfig, TrainOptions};
use itexp::synth::memorization_corpus;
use itexp::vocab::SymbolTable;
use std::time::Instant;

fn main() {
    let corpus = memorization_corpus();
    let table = SymbolTable::induce(&corpus, 1);
    let transitions: Vec<_> = corpus.sentences.iter().map(|t| levelize(t).unwrap()).collect();
    let mut config = ModelConfig::for_table(&table);
    config.max_seq_len = 32;
    let t0 = Instant::now();
    let opts = TrainOptions { epochs: 10, batch_size: 16, quiet: true };
    let _ = train(&transitions, &table, config, &opts).unwrap();
    println!("10 epochs: {:.2}s", t0.elapsed().as_secs_f64());
}
