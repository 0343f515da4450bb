use mlmlab::corpus::read_archive;
use mlmlab::model::{backward, forward, EncoderModel};
use mlmlab::pretrain::*;
use mlmlab::rng::Rng;
use mlmlab::tensor::cross_entropy;
use mlmlab::tokenizer::load_vocabulary;
use std::path::Path;
use std::time::Instant;

fn main() {
    let vocab = load_vocabulary(Path::new("/tmp/lab/v896.txt")).unwrap();
    let corpus = read_archive(Path::new("/tmp/lab/sample.bin")).unwrap();
    let examples = build_examples(&corpus, &vocab, 128);
    let cfg = TrainConfig {
        batch_size: 256,
        epochs: 1,
        warmup_steps: 5,
        ..TrainConfig::default()
    };
    let mcfg = mlmlab::model::ModelConfig::small(vocab.total_size() as usize);
    let mut model = EncoderModel::<f32>::new(mcfg, 1);
    let masker = Masker::new(MaskingPolicy::original(), &vocab).unwrap();

    // sorted sub-batch of 64 like the train loop
    let mut rows: Vec<&Example> = examples.iter().take(256).collect();
    rows.sort_by_key(|e| std::cmp::Reverse(e.ids.len()));
    let subs: Vec<Vec<&Example>> = rows.chunks(64).map(|c| c.to_vec()).collect();

    let (mut t_fwd, mut t_ce, mut t_bwd, mut t_opt) = (0.0, 0.0, 0.0, 0.0);
    let mut tokens = 0usize;
    for step in 1..=5u64 {
        let mut mrng = Rng::for_stream(5, 1, step);
        model.zero_grads();
        for sub in &subs {
            let batch = assemble_batch(sub, &vocab);
            tokens += batch.rows * batch.seq;
            let masked = masker.mask_batch(&batch, &mut mrng).unwrap();
            let t0 = Instant::now();
            let (out, caches) = forward(&model, &masked.batch, true, step).unwrap();
            t_fwd += t0.elapsed().as_secs_f64();
            let t0 = Instant::now();
            let (_l, dl) = cross_entropy(&out.logits, &masked.labels).unwrap();
            t_ce += t0.elapsed().as_secs_f64();
            let t0 = Instant::now();
            backward(
                &mut model,
                &masked.batch,
                &out,
                caches.as_ref().unwrap(),
                &dl,
            );
            t_bwd += t0.elapsed().as_secs_f64();
        }
        let t0 = Instant::now();
        adamw_step(&mut model, &cfg, step as usize, 100).unwrap();
        t_opt += t0.elapsed().as_secs_f64();
    }
    println!(
        "5 steps: fwd {t_fwd:.2} ce {t_ce:.2} bwd {t_bwd:.2} opt {t_opt:.2}; padded tokens/step {}",
        tokens / 5
    );
}
