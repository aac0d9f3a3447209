use itexp::eval::speedup_stats;
use itexp::synth::news_corpus;

fn main() {
    for seed in [42u64, 7, 2024] {
        let corpus = news_corpus(2000, seed);
        let lens: Vec<usize> = corpus.sentences.iter().map(|t| t.len()).collect();
        let mean_len = lens.iter().sum::<usize>() as f64 / lens.len() as f64;
        let max_len = lens.iter().max().unwrap();
        let report = speedup_stats(&corpus).unwrap();
        let depths: Vec<usize> = corpus.sentences.iter().map(|t| t.depth()).collect();
        println!(
            "seed {seed}: mean len {mean_len:.1} (max {max_len}), natural {:.3}, binarized {:.3}, ideal {:.3}",
            report.natural.mean, report.binarized.mean, report.ideal.mean
        );
        let _ = depths;
    }
}
