use itexp::leveler::levelize;
use itexp::neural::{encode_transitions, train, ModelConfig, TrainOptions};
use itexp::synth::memorization_corpus;
use itexp::vocab::SymbolTable;
use std::time::Instant;

fn main() {
    let corpus = memorization_corpus();
    let table = SymbolTable::induce(&corpus, 1);
    let transitions: Vec<_> = corpus.sentences.iter().map(|t| levelize(t).unwrap()).collect();
    let mut config = ModelConfig::for_table(&table);
    config.max_seq_len = 32;
    println!("token vocab {}, exp vocab {}", table.token_vocab_size(), table.exp_vocab_size());
    let total_transitions: usize = transitions.iter().map(Vec::len).sum();
    println!("transitions {total_transitions}");
    let start = Instant::now();
    for epochs in [100, 300, 500] {
        let opts = TrainOptions { epochs, batch_size: 16, quiet: true };
        let t0 = Instant::now();
        let (model, log) = train(&transitions, &table, config.clone(), &opts).unwrap();
        let examples = encode_transitions(&transitions, &table, &model.config).unwrap();
        let (tok, exp) = model.teacher_forced_accuracy(&examples);
        println!(
            "epochs {epochs}: loss {:.4}, tok acc {:.4}, exp acc {:.4}, took {:.1}s",
            log.last().unwrap().loss, tok, exp, t0.elapsed().as_secs_f64()
        );
    }
    println!("total {:.1}s", start.elapsed().as_secs_f64());
}
