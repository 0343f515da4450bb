use mlmlab::corpus::Lang;
use mlmlab::model::{backward, forward, Batch, EncoderModel, ModelConfig};
use mlmlab::tensor::cross_entropy;
use std::time::Instant;

fn main() {
    let v = 512usize;
    let cfg = ModelConfig::small(v);
    let model = EncoderModel::<f32>::new(cfg.clone(), 1);
    let (rows, seq) = (64usize, 12usize);
    let ids: Vec<u32> = (0..rows * seq).map(|i| (i % 500) as u32 + 5).collect();
    let batch = Batch {
        ids: ids.clone(),
        lang_of: vec![Lang::Eng; rows * seq],
        mask: vec![true; rows * seq],
        rows,
        seq,
    };
    let targets: Vec<u32> = ids
        .iter()
        .enumerate()
        .map(|(i, &t)| if i % 7 == 0 { t } else { u32::MAX })
        .collect();

    let t = Instant::now();
    for _ in 0..10 {
        let (_out, _) = forward(&model, &batch, false, 0).unwrap();
    }
    println!("fwd eval: {:.0} ms/it", t.elapsed().as_secs_f64() * 100.0);

    let t = Instant::now();
    for _ in 0..10 {
        let (_out, _c) = forward(&model, &batch, true, 0).unwrap();
    }
    println!(
        "fwd train (caches+dropout): {:.0} ms/it",
        t.elapsed().as_secs_f64() * 100.0
    );

    let mut model2 = model.clone();
    let t = Instant::now();
    for _ in 0..10 {
        let (out, c) = forward(&model2, &batch, true, 0).unwrap();
        let (_l, dl) = cross_entropy(&out.logits, &targets).unwrap();
        model2.zero_grads();
        backward(&mut model2, &batch, &out, &c.unwrap(), &dl);
    }
    println!("fwd+bwd: {:.0} ms/it", t.elapsed().as_secs_f64() * 100.0);
}
