use mlmlab::corpus::*;
use mlmlab::pretrain::build_examples;
use mlmlab::tokenizer::*;
use std::path::Path;

fn main() {
    let raw = load_corpus(
        Path::new("/tmp/lab/sample.txt"),
        Split::Train,
        &SplitRule::default(),
    )
    .unwrap();
    for target in [512usize, 640, 768, 896, 1024] {
        let mono = train_wordpiece(&raw, target).unwrap();
        let vocab = extend_shifted(&mono, false);
        let eng: Vec<Vec<u32>> = raw
            .sentences
            .iter()
            .map(|s| tokenize(s, &vocab, vocab.language(Lang::Eng)).ids)
            .collect();
        let total_pieces: usize = eng.iter().map(|s| s.len()).sum();
        let total_words: usize = raw.sentences.iter().map(|s| s.len()).sum();
        let pc = ParallelCorpus::from_tokenized(eng, vocab.language(Lang::Fake), false).unwrap();
        let ex = build_examples(&pc, &vocab, 128);
        let mut lens: Vec<usize> = ex.iter().map(|e| e.ids.len()).collect();
        lens.sort_unstable();
        let n = lens.len();
        let unused = (0..vocab.mono_size)
            .filter(|&i| vocab.token(i).starts_with("[unused"))
            .count();
        println!(
            "target {target}: pieces/word {:.2} p50 {} p99 {} max {} unused {}",
            total_pieces as f64 / total_words as f64,
            lens[n / 2],
            lens[n * 99 / 100],
            lens[n - 1],
            unused
        );
    }
}
