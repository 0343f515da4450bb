use mlmlab::corpus::read_archive;
use mlmlab::eval::{evaluate_model, EvalOptions};
use mlmlab::model::load_checkpoint;
use mlmlab::tokenizer::load_vocabulary;
use std::path::Path;

fn main() {
    let vocab = load_vocabulary(Path::new("/tmp/lab/vlexz.txt")).unwrap();
    let dev = read_archive(Path::new("/tmp/lab/scrollz.bin")).unwrap();
    let model = load_checkpoint(Path::new("/tmp/lab/cal_lexz/pretrain/model.ckpt")).unwrap();
    let opts = EvalOptions {
        max_pairs: 300,
        ..EvalOptions::default()
    };
    let rep = evaluate_model(&model, &dev, &vocab, &opts).unwrap();
    println!("{rep:#?}");
}
