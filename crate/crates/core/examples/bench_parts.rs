use mlmlab::corpus::Lang;
use mlmlab::model::{forward, Batch, EncoderModel, ModelConfig};
use std::time::Instant;

fn main() {
    // isolate: eval forward (no dropout masks, no caches) vs train forward
    let v = 1792usize;
    let cfg = ModelConfig::small(v);
    let model = EncoderModel::<f32>::new(cfg, 1);
    let (rows, seq) = (64usize, 15usize);
    let ids: Vec<u32> = (0..rows * seq).map(|i| (i % 800) as u32 + 5).collect();
    let batch = Batch {
        ids,
        lang_of: vec![Lang::Eng; rows * seq],
        mask: vec![true; rows * seq],
        rows,
        seq,
    };
    for mode in [false, true] {
        let t = Instant::now();
        for i in 0..20 {
            let _ = forward(&model, &batch, mode, i).unwrap();
        }
        let ms = t.elapsed().as_secs_f64() * 50.0;
        let gflop =
            (rows * seq) as f64 * (12.0 * 49152.0 * 2.0 + (v as f64 * 64.0 + 4096.0) * 2.0) / 1e9;
        println!(
            "train_mode={mode}: {ms:.1} ms/fwd ({:.1} GF/s)",
            gflop / (ms / 1000.0)
        );
    }
    // single-thread comparison
    mlmlab::tensor::set_single_thread(true);
    let t = Instant::now();
    for i in 0..20 {
        let _ = forward(&model, &batch, false, i).unwrap();
    }
    println!(
        "eval single-thread: {:.1} ms/fwd",
        t.elapsed().as_secs_f64() * 50.0
    );
}
