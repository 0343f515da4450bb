//! MLM pretraining: masking policies (including the crosslingual
//! knn-replace option), AdamW with linear warmup/decay, batching, and the
//! periodic hook mechanism that produces training-dynamics curves.

use std::sync::Arc;

use crate::corpus::{Lang, ParallelCorpus};
use crate::model::{backward, forward, Batch, EncoderModel};
use crate::rng::Rng;
use crate::staticemb::KnnTable;
use crate::tensor::{cross_entropy_scaled, nll_at_targets, Scalar, IGNORE};
use crate::tokenizer::Vocabulary;
use crate::{Error, Result};

const STREAM_MASK: u64 = 0x6d61736b; // per-step masking
const STREAM_EPOCH: u64 = 0x65706f63; // per-epoch shuffling
const STREAM_DROP: u64 = 0x64726f70; // per-step dropout
const STREAM_PPL: u64 = 0x70706c00; // per-example perplexity masking

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RandPool {
    AllLanguages,
    SameLanguage,
}

/// The replacement probability quadruple plus the knn machinery.
#[derive(Clone)]
pub struct MaskingPolicy {
    pub p_mask: f64,
    pub p_id: f64,
    pub p_rand: f64,
    pub p_knn: f64,
    pub select_rate: f64,
    pub rand_pool: RandPool,
    pub knn_table: Option<Arc<KnnTable>>,
    pub knn_k: usize,
}

impl std::fmt::Debug for MaskingPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "MaskingPolicy(p=({}, {}, {}, {}), select={}, knn_k={})",
            self.p_mask, self.p_id, self.p_rand, self.p_knn, self.select_rate, self.knn_k
        )
    }
}

impl MaskingPolicy {
    /// The standard MLM recipe: (0.8, 0.1, 0.1).
    pub fn original() -> Self {
        MaskingPolicy {
            p_mask: 0.8,
            p_id: 0.1,
            p_rand: 0.1,
            p_knn: 0.0,
            select_rate: 0.15,
            rand_pool: RandPool::AllLanguages,
            knn_table: None,
            knn_k: 1,
        }
    }

    /// no-random: (0.8, 0.2, 0.0).
    pub fn no_random() -> Self {
        MaskingPolicy {
            p_mask: 0.8,
            p_id: 0.2,
            p_rand: 0.0,
            ..MaskingPolicy::original()
        }
    }

    /// knn-replace: (0.5, 0.1, 0.1, 0.3) with crosslingual neighbors.
    pub fn knn_replace(table: Arc<KnnTable>, k: usize) -> Self {
        MaskingPolicy {
            p_mask: 0.5,
            p_id: 0.1,
            p_rand: 0.1,
            p_knn: 0.3,
            knn_table: Some(table),
            knn_k: k,
            ..MaskingPolicy::original()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sum = self.p_mask + self.p_id + self.p_rand + self.p_knn;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("masking probabilities sum to {sum}")));
        }
        for p in [self.p_mask, self.p_id, self.p_rand, self.p_knn] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("masking probability {p}")));
            }
        }
        if !(self.select_rate > 0.0 && self.select_rate <= 1.0) {
            return Err(Error::Config(format!("select_rate {}", self.select_rate)));
        }
        if self.p_knn > 0.0 && self.knn_table.is_none() {
            return Err(Error::Config("p_knn > 0 requires a knn table".into()));
        }
        if self.knn_k == 0 {
            return Err(Error::Config("knn_k must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrDecay {
    /// Linear decay to zero at the final step (reference default).
    Linear,
    /// Hold the peak rate after warmup.
    Constant,
}

impl std::str::FromStr for LrDecay {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "linear" => Ok(LrDecay::Linear),
            "constant" => Ok(LrDecay::Constant),
            other => Err(format!("unknown lr decay '{other}' (linear|constant)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub adam_eps: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Run the hook every this many steps (0 = only after the last step).
    pub eval_every: usize,
    pub max_len: usize,
    /// Global gradient-norm clip; 0 disables.
    pub max_grad_norm: f64,
    pub lr_decay: LrDecay,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-3,
            weight_decay: 0.01,
            adam_eps: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            warmup_steps: 50,
            batch_size: 256,
            epochs: 100,
            seed: 42,
            eval_every: 0,
            max_len: 128,
            max_grad_norm: 1.0,
            lr_decay: LrDecay::Linear,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, total_steps: usize) -> Result<()> {
        if self.lr <= 0.0 || self.batch_size == 0 || self.epochs == 0 || self.max_len < 3 {
            return Err(Error::Config("non-positive training parameter".into()));
        }
        if self.warmup_steps > total_steps {
            return Err(Error::Config(format!(
                "warmup {} exceeds total steps {total_steps}",
                self.warmup_steps
            )));
        }
        Ok(())
    }
}

/// Learning rate at 1-based `step` of `total`: linear warmup to the peak at
/// `warmup`, then linear decay to 0 at `total`.
pub fn lr_at(cfg: &TrainConfig, step: usize, total: usize) -> f64 {
    let w = cfg.warmup_steps.max(1);
    if step <= cfg.warmup_steps || total <= cfg.warmup_steps {
        cfg.lr * step.min(w) as f64 / w as f64
    } else {
        match cfg.lr_decay {
            LrDecay::Linear => cfg.lr * (total - step) as f64 / (total - cfg.warmup_steps) as f64,
            LrDecay::Constant => cfg.lr,
        }
    }
}

/// One sentence, wrapped as [CLS] tokens [SEP] (already truncated).
#[derive(Debug, Clone)]
pub struct Example {
    pub ids: Vec<u32>,
    pub lang: Lang,
}

/// Wrap every sentence of both sides with its language's CLS/SEP, truncating
/// the payload to max_len - 2 tokens.
pub fn build_examples(corpus: &ParallelCorpus, vocab: &Vocabulary, max_len: usize) -> Vec<Example> {
    let mut out = Vec::with_capacity(corpus.eng.len() + corpus.fake.len());
    for (side, lang) in [(&corpus.eng, Lang::Eng), (&corpus.fake, Lang::Fake)] {
        let sp = vocab.specials(lang);
        for sent in side.iter() {
            let body = &sent[..sent.len().min(max_len - 2)];
            let mut ids = Vec::with_capacity(body.len() + 2);
            ids.push(sp.cls);
            ids.extend_from_slice(body);
            ids.push(sp.sep);
            out.push(Example { ids, lang });
        }
    }
    out
}

/// Pad a set of examples to a rectangular batch (per-row language PAD).
pub fn assemble_batch(rows: &[&Example], vocab: &Vocabulary) -> Batch {
    let seq = rows.iter().map(|e| e.ids.len()).max().unwrap_or(2);
    let n = rows.len();
    let mut ids = Vec::with_capacity(n * seq);
    let mut lang_of = Vec::with_capacity(n * seq);
    let mut mask = Vec::with_capacity(n * seq);
    for e in rows {
        let pad = vocab.specials(e.lang).pad;
        for j in 0..seq {
            if j < e.ids.len() {
                ids.push(e.ids[j]);
                mask.push(true);
            } else {
                ids.push(pad);
                mask.push(false);
            }
            lang_of.push(e.lang);
        }
    }
    Batch {
        ids,
        lang_of,
        mask,
        rows: n,
        seq,
    }
}

/// A batch with MLM corruption applied and the original ids as labels.
#[derive(Debug, Clone)]
pub struct MaskedBatch {
    pub batch: Batch,
    /// Original token id at selected positions, IGNORE elsewhere.
    pub labels: Vec<u32>,
    pub selected: usize,
}

/// Prepared masking state (replacement pools resolved against a vocabulary).
pub struct Masker {
    pub policy: MaskingPolicy,
    eng_pool: Vec<u32>,
    fake_pool: Vec<u32>,
    all_pool: Vec<u32>,
    eng_specials: crate::tokenizer::SpecialIds,
    fake_specials: crate::tokenizer::SpecialIds,
}

impl Masker {
    pub fn new(policy: MaskingPolicy, vocab: &Vocabulary) -> Result<Self> {
        policy.validate()?;
        let eng_pool = vocab.regular_ids(Lang::Eng);
        let fake_pool = vocab.regular_ids(Lang::Fake);
        let mut all_pool = eng_pool.clone();
        all_pool.extend_from_slice(&fake_pool);
        Ok(Masker {
            policy,
            eng_pool,
            fake_pool,
            all_pool,
            eng_specials: vocab.specials(Lang::Eng),
            fake_specials: vocab.specials(Lang::Fake),
        })
    }

    fn is_special(&self, id: u32) -> bool {
        self.eng_specials.contains(id) || self.fake_specials.contains(id)
    }

    /// Independently select ~select_rate of the maskable positions and
    /// corrupt each one per the policy. Special and pad positions are never
    /// selectable. A degenerate batch with zero selections gets one forced
    /// so the loss exists.
    pub fn mask_batch(&self, batch: &Batch, rng: &mut Rng) -> Result<MaskedBatch> {
        let mut masked = self.mask_batch_allow_empty(batch, rng)?;
        if masked.selected == 0 {
            self.force_one(&mut masked, rng)?;
        }
        Ok(masked)
    }

    /// Like [`Masker::mask_batch`] but a zero-selection result is returned
    /// as-is (used when a batch is processed as several sub-batches whose
    /// selections are pooled).
    pub fn mask_batch_allow_empty(&self, batch: &Batch, rng: &mut Rng) -> Result<MaskedBatch> {
        let mut out = batch.clone();
        let mut labels = vec![IGNORE; batch.ids.len()];
        let mut selected = 0usize;
        for idx in 0..batch.ids.len() {
            if !batch.mask[idx] {
                continue;
            }
            let orig = batch.ids[idx];
            if self.is_special(orig) {
                continue;
            }
            if rng.uniform() >= self.policy.select_rate {
                continue;
            }
            selected += 1;
            labels[idx] = orig;
            self.corrupt(&mut out, idx, orig, rng)?;
        }
        Ok(MaskedBatch {
            batch: out,
            labels,
            selected,
        })
    }

    /// Select the first maskable position of a zero-selection batch.
    pub fn force_one(&self, masked: &mut MaskedBatch, rng: &mut Rng) -> Result<()> {
        for idx in 0..masked.batch.ids.len() {
            let orig = masked.batch.ids[idx];
            if !masked.batch.mask[idx] || self.is_special(orig) {
                continue;
            }
            masked.labels[idx] = orig;
            masked.selected = 1;
            self.corrupt(&mut masked.batch, idx, orig, rng)?;
            return Ok(());
        }
        Err(Error::data("mask_batch: no maskable positions"))
    }

    fn corrupt(&self, out: &mut Batch, idx: usize, orig: u32, rng: &mut Rng) -> Result<()> {
        let lang = out.lang_of[idx];
        let r = rng.uniform();
        let p = &self.policy;
        if r < p.p_mask {
            out.ids[idx] = self.mask_id(lang);
        } else if r < p.p_mask + p.p_id {
            // keep
        } else if r < p.p_mask + p.p_id + p.p_rand {
            let pool = match p.rand_pool {
                RandPool::AllLanguages => &self.all_pool,
                RandPool::SameLanguage => match lang {
                    Lang::Eng => &self.eng_pool,
                    Lang::Fake => &self.fake_pool,
                },
            };
            out.ids[idx] = pool[rng.below(pool.len())];
        } else {
            let table = p.knn_table.as_ref().expect("validated");
            let neighbors = table
                .neighbors(orig)
                .ok_or_else(|| Error::data(format!("knn table has no entry for token {orig}")))?;
            let k = p.knn_k.min(neighbors.len());
            out.ids[idx] = neighbors[rng.below(k)];
        }
        Ok(())
    }

    fn mask_id(&self, lang: Lang) -> u32 {
        match lang {
            Lang::Eng => self.eng_specials.mask,
            Lang::Fake => self.fake_specials.mask,
        }
    }
}

/// AdamW with decoupled weight decay and bias correction. Skips the update
/// (and reports) if any gradient is non-finite.
pub fn adamw_step<S: Scalar>(
    model: &mut EncoderModel<S>,
    cfg: &TrainConfig,
    step: usize,
    total_steps: usize,
) -> Result<()> {
    let lr = lr_at(cfg, step, total_steps);
    let mut bad = false;
    model.for_each_param_mut(|_, p| {
        if !p.grad.all_finite() {
            bad = true;
        }
    });
    if bad {
        return Err(Error::data(format!("non-finite gradient at step {step}")));
    }
    model.for_each_param_mut(|_, p| adamw_update_param(p, lr, cfg));
    Ok(())
}

/// One AdamW update for a single parameter tensor at its own step count:
/// biased moments, bias correction, then
/// value -= lr * (m_hat / (sqrt(v_hat) + eps)) + lr * weight_decay * value
/// (the decay term only where the parameter opts in).
pub fn adamw_update_param<S: Scalar>(
    p: &mut crate::tensor::Parameter<S>,
    lr: f64,
    cfg: &TrainConfig,
) {
    p.step_count += 1;
    let t = p.step_count as i32;
    let b1 = S::from_f64(cfg.beta1);
    let b2 = S::from_f64(cfg.beta2);
    let one_m_b1 = S::from_f64(1.0 - cfg.beta1);
    let one_m_b2 = S::from_f64(1.0 - cfg.beta2);
    let eps = S::from_f64(cfg.adam_eps);
    let bc1 = S::from_f64(1.0 - cfg.beta1.powi(t));
    let bc2 = S::from_f64(1.0 - cfg.beta2.powi(t));
    let wd = if p.decay {
        S::from_f64(lr * cfg.weight_decay)
    } else {
        S::ZERO
    };
    let lr_s = S::from_f64(lr);
    for i in 0..p.value.data.len() {
        let g = p.grad.data[i];
        let m = b1 * p.m.data[i] + one_m_b1 * g;
        let v = b2 * p.v.data[i] + one_m_b2 * g * g;
        p.m.data[i] = m;
        p.v.data[i] = v;
        let mhat = m / bc1;
        let vhat = v / bc2;
        let upd = lr_s * (mhat / (vhat.sqrt() + eps)) + wd * p.value.data[i];
        p.value.data[i] -= upd;
    }
}

/// Scale all gradients so their global L2 norm is at most `max_norm`.
fn clip_gradients<S: Scalar>(model: &mut EncoderModel<S>, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let mut sq = 0.0f64;
    model.for_each_param_mut(|_, p| {
        for g in &p.grad.data {
            let g = g.to_f64();
            sq += g * g;
        }
    });
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = S::from_f64(max_norm / norm);
        model.for_each_param_mut(|_, p| {
            for g in &mut p.grad.data {
                *g *= scale;
            }
        });
    }
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub skipped_steps: usize,
}

/// Run the MLM training loop. The hook is called with (step, model) every
/// `eval_every` steps and once after the final step; a non-finite loss aborts
/// with [`Error::Diverged`] (the caller holds the last hook checkpoint).
pub fn train(
    model: &mut EncoderModel<f32>,
    examples: &[Example],
    masker: &Masker,
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    mut hook: impl FnMut(usize, &mut EncoderModel<f32>) -> Result<()>,
) -> Result<TrainSummary> {
    if examples.is_empty() {
        return Err(Error::data("train: no examples"));
    }
    let steps_per_epoch = examples.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    cfg.validate(total_steps)?;

    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut step = 0usize;
    let mut initial_loss = f64::NAN;
    let mut final_loss = f64::NAN;
    let mut skipped = 0usize;
    // Within one batch, rows are length-sorted and run as sub-batches of
    // near-uniform length; losses are pooled over the whole batch, so the
    // gradient step is identical to padding the full batch at once (up to
    // float summation order) at a fraction of the padding cost.
    const SUB_ROWS: usize = 64;
    for epoch in 0..cfg.epochs {
        let mut erng = Rng::for_stream(cfg.seed, STREAM_EPOCH, epoch as u64);
        erng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let mut rows: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            rows.sort_by_key(|e| std::cmp::Reverse(e.ids.len()));
            let mut mrng = Rng::for_stream(cfg.seed, STREAM_MASK, step as u64);
            let mut subs: Vec<MaskedBatch> = Vec::new();
            let mut total_selected = 0usize;
            for sub_rows in rows.chunks(SUB_ROWS) {
                let batch = assemble_batch(sub_rows, vocab);
                let masked = masker.mask_batch_allow_empty(&batch, &mut mrng)?;
                total_selected += masked.selected;
                subs.push(masked);
            }
            if total_selected == 0 {
                masker.force_one(&mut subs[0], &mut mrng)?;
                total_selected = 1;
            }
            model.zero_grads();
            let mut loss = 0.0f64;
            for (sub_idx, masked) in subs.iter().enumerate() {
                if masked.selected == 0 {
                    continue;
                }
                let drop_seed =
                    Rng::for_stream(cfg.seed, STREAM_DROP, (step * 1024 + sub_idx) as u64)
                        .next_u64();
                let (out, caches) = forward(model, &masked.batch, true, drop_seed)?;
                let (sub_loss, dlogits) =
                    cross_entropy_scaled(&out.logits, &masked.labels, total_selected)?;
                loss += sub_loss;
                backward(
                    model,
                    &masked.batch,
                    &out,
                    caches.as_ref().unwrap(),
                    &dlogits,
                );
            }
            if !loss.is_finite() {
                return Err(Error::Diverged { step });
            }
            if initial_loss.is_nan() {
                initial_loss = loss;
            }
            final_loss = loss;
            clip_gradients(model, cfg.max_grad_norm);
            match adamw_step(model, cfg, step, total_steps) {
                Ok(()) => {}
                Err(_) => {
                    skipped += 1;
                    if skipped > 10 {
                        return Err(Error::Diverged { step });
                    }
                }
            }
            if cfg.eval_every > 0 && step % cfg.eval_every == 0 && step != total_steps {
                hook(step, model)?;
            }
        }
    }
    hook(step, model)?;
    Ok(TrainSummary {
        steps: step,
        initial_loss,
        final_loss,
        skipped_steps: skipped,
    })
}

/// MLM perplexity: mask 15% of maskable positions (always replaced by the
/// MASK token for this measurement), then exp(mean NLL) over them.
/// Selection is seeded per example, so the value is independent of batching.
pub fn mlm_perplexity(
    model: &EncoderModel<f32>,
    examples: &[Example],
    vocab: &Vocabulary,
    seed: u64,
    batch_size: usize,
) -> Result<f64> {
    let mut nll_sum = 0.0f64;
    let mut count = 0usize;
    for (chunk_idx, chunk) in examples.chunks(batch_size).enumerate() {
        let rows: Vec<&Example> = chunk.iter().collect();
        let batch = assemble_batch(&rows, vocab);
        let mut labels = vec![IGNORE; batch.ids.len()];
        let mut corrupted = batch.clone();
        let mut any = false;
        for (r, ex) in chunk.iter().enumerate() {
            let mut rng = Rng::for_stream(seed, STREAM_PPL, (chunk_idx * batch_size + r) as u64);
            let sp = vocab.specials(ex.lang);
            for j in 0..ex.ids.len() {
                let idx = r * batch.seq + j;
                let id = batch.ids[idx];
                if vocab.is_special(id) {
                    continue;
                }
                if rng.uniform() < 0.15 {
                    labels[idx] = id;
                    corrupted.ids[idx] = sp.mask;
                    any = true;
                }
            }
        }
        if !any {
            continue;
        }
        let (out, _) = forward(model, &corrupted, false, 0)?;
        let nlls = nll_at_targets(&out.logits, &labels);
        nll_sum += nlls.iter().sum::<f64>();
        count += nlls.len();
    }
    if count == 0 {
        return Err(Error::data("mlm_perplexity: empty selection"));
    }
    Ok((nll_sum / count as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{corpus_from_text, ParallelCorpus, Split, SplitRule};
    use crate::model::ModelConfig;
    use crate::tensor::Parameter;
    use crate::textgen::{generate_text, GenConfig, Style};
    use crate::tokenizer::{extend_shifted, tokenize, train_wordpiece, Vocabulary};

    fn toy_vocab(shift_special: bool) -> (Vocabulary, ParallelCorpus) {
        let text = generate_text(&GenConfig {
            style: Style::Plain,
            lines: 120,
            seed: 3,
        });
        let raw = corpus_from_text(&text, Split::Train, &SplitRule::default(), "t").unwrap();
        let mono = train_wordpiece(&raw, 160).unwrap();
        let vocab = extend_shifted(&mono, shift_special);
        let eng: Vec<Vec<u32>> = raw
            .sentences
            .iter()
            .map(|s| tokenize(s, &vocab, vocab.language(Lang::Eng)).ids)
            .collect();
        let pc = ParallelCorpus::from_tokenized(eng, vocab.language(Lang::Fake), false).unwrap();
        (vocab, pc)
    }

    fn identity_knn(vocab: &Vocabulary) -> Arc<KnnTable> {
        let shift = vocab.shift();
        let mut entries = std::collections::HashMap::new();
        for id in vocab.regular_ids(Lang::Eng) {
            entries.insert(id, vec![id + shift]);
        }
        for id in vocab.regular_ids(Lang::Fake) {
            entries.insert(id, vec![id - shift]);
        }
        Arc::new(KnnTable { k: 1, entries })
    }

    #[test]
    fn policy_validation() {
        let mut p = MaskingPolicy::original();
        assert!(p.validate().is_ok());
        p.p_rand = 0.2;
        assert!(p.validate().is_err()); // sums to 1.1
        let mut p = MaskingPolicy::original();
        p.p_mask = 0.5;
        p.p_knn = 0.3;
        assert!(p.validate().is_err()); // knn without table
    }

    #[test]
    fn degenerate_policy_all_mask() {
        let (vocab, pc) = toy_vocab(false);
        let examples = build_examples(&pc, &vocab, 32);
        let policy = MaskingPolicy {
            p_mask: 1.0,
            p_id: 0.0,
            p_rand: 0.0,
            ..MaskingPolicy::original()
        };
        let masker = Masker::new(policy, &vocab).unwrap();
        let rows: Vec<&Example> = examples.iter().take(16).collect();
        let batch = assemble_batch(&rows, &vocab);
        let mut rng = Rng::new(1);
        let masked = masker.mask_batch(&batch, &mut rng).unwrap();
        for (idx, &label) in masked.labels.iter().enumerate() {
            if label != IGNORE {
                let lang = masked.batch.lang_of[idx];
                assert_eq!(masked.batch.ids[idx], vocab.specials(lang).mask);
            }
        }
    }

    #[test]
    fn no_random_policy_never_inserts_random_tokens() {
        let (vocab, pc) = toy_vocab(false);
        let examples = build_examples(&pc, &vocab, 32);
        let masker = Masker::new(MaskingPolicy::no_random(), &vocab).unwrap();
        let mut seen = 0usize;
        let mut step = 0u64;
        while seen < 10_000 {
            step += 1;
            let rows: Vec<&Example> = examples.iter().take(64).collect();
            let batch = assemble_batch(&rows, &vocab);
            let mut rng = Rng::for_stream(7, 1, step);
            let masked = masker.mask_batch(&batch, &mut rng).unwrap();
            for (idx, &label) in masked.labels.iter().enumerate() {
                if label == IGNORE {
                    continue;
                }
                seen += 1;
                let lang = masked.batch.lang_of[idx];
                let now = masked.batch.ids[idx];
                assert!(
                    now == label || now == vocab.specials(lang).mask,
                    "random replacement appeared under no-random"
                );
            }
        }
    }

    #[test]
    fn knn_policy_statistics() {
        let (vocab, pc) = toy_vocab(false);
        let examples = build_examples(&pc, &vocab, 32);
        let table = identity_knn(&vocab);
        let masker = Masker::new(MaskingPolicy::knn_replace(table, 1), &vocab).unwrap();
        let shift = vocab.shift();
        let (mut n_sel, mut n_mask, mut n_keep, mut n_knn, mut n_rand) =
            (0u64, 0u64, 0u64, 0u64, 0u64);
        let mut maskable = 0u64;
        let mut positions = 0u64;
        let mut step = 0u64;
        while n_sel < 20_000 {
            step += 1;
            let rows: Vec<&Example> = examples.iter().take(64).collect();
            let batch = assemble_batch(&rows, &vocab);
            let mut rng = Rng::for_stream(11, 2, step);
            let masked = masker.mask_batch(&batch, &mut rng).unwrap();
            for (idx, &label) in masked.labels.iter().enumerate() {
                if masked.batch.mask[idx] && !vocab.is_special(batch.ids[idx]) {
                    maskable += 1;
                }
                positions += 1;
                if label == IGNORE {
                    continue;
                }
                n_sel += 1;
                let lang = masked.batch.lang_of[idx];
                let now = masked.batch.ids[idx];
                let counterpart = if lang == Lang::Eng {
                    label + shift
                } else {
                    label - shift
                };
                if now == vocab.specials(lang).mask {
                    n_mask += 1;
                } else if now == counterpart {
                    n_knn += 1;
                } else if now == label {
                    n_keep += 1;
                } else {
                    n_rand += 1;
                }
            }
        }
        let _ = positions;
        let sel_frac = n_sel as f64 / maskable as f64;
        assert!((sel_frac - 0.15).abs() < 0.02, "select rate {sel_frac}");
        let frac = |n: u64| n as f64 / n_sel as f64;
        assert!((frac(n_mask) - 0.5).abs() < 0.02, "mask {}", frac(n_mask));
        assert!((frac(n_knn) - 0.3).abs() < 0.03, "knn {}", frac(n_knn));
        // keep and random are both ~0.1; a random draw can coincide with the
        // original or the counterpart, so allow the same 2-3pp slack
        assert!((frac(n_keep) - 0.1).abs() < 0.02, "keep {}", frac(n_keep));
        assert!((frac(n_rand) - 0.1).abs() < 0.03, "rand {}", frac(n_rand));
    }

    #[test]
    fn specials_never_selected() {
        let (vocab, pc) = toy_vocab(true);
        let examples = build_examples(&pc, &vocab, 32);
        let masker = Masker::new(MaskingPolicy::original(), &vocab).unwrap();
        for step in 0..50u64 {
            let rows: Vec<&Example> = examples.iter().skip(step as usize % 10).take(32).collect();
            let batch = assemble_batch(&rows, &vocab);
            let mut rng = Rng::for_stream(3, 4, step);
            let masked = masker.mask_batch(&batch, &mut rng).unwrap();
            for (idx, &label) in masked.labels.iter().enumerate() {
                if label != IGNORE {
                    assert!(!vocab.is_special(label));
                    assert!(batch.mask[idx]);
                }
            }
        }
    }

    /// Hand-computed single-scalar AdamW step:
    /// theta=0.5, g=0.2, lr=0.1, wd=0.01, b1=0.9, b2=0.999, eps=1e-6.
    /// m = 0.1*0.2 = 0.02, v = 0.001*0.04 = 4e-5,
    /// m_hat = 0.02/0.1 = 0.2, v_hat = 4e-5/0.001 = 0.04,
    /// update = 0.1*(0.2/(sqrt(0.04)+1e-6)) + 0.1*0.01*0.5
    ///        = 0.0999995000025 + 0.0005 = 0.1004995000025
    /// theta' = 0.5 - 0.1004995000025 = 0.3995004999975.
    #[test]
    fn adamw_matches_hand_computation() {
        let mut p = Parameter::new(crate::tensor::Tensor::from_vec(&[1], vec![0.5f64]), true);
        p.grad.data[0] = 0.2;
        let cfg = TrainConfig {
            lr: 0.1,
            weight_decay: 0.01,
            adam_eps: 1e-6,
            ..TrainConfig::default()
        };
        adamw_update_param(&mut p, 0.1, &cfg);
        assert!(
            (p.value.data[0] - 0.3995004999975).abs() < 1e-7,
            "{}",
            p.value.data[0]
        );
        assert_eq!(p.step_count, 1);
    }

    /// With weight_decay = 0 the update must equal plain Adam exactly.
    #[test]
    fn zero_weight_decay_reduces_to_adam() {
        let mut p = Parameter::new(crate::tensor::Tensor::from_vec(&[1], vec![0.7f64]), true);
        p.grad.data[0] = -0.3;
        let cfg = TrainConfig {
            lr: 0.05,
            weight_decay: 0.0,
            adam_eps: 1e-8,
            ..TrainConfig::default()
        };
        adamw_update_param(&mut p, 0.05, &cfg);
        // plain Adam by hand
        let m = 0.1 * -0.3f64;
        let v = 0.001 * 0.09f64;
        let mhat = m / 0.1;
        let vhat = v / 0.001;
        let expect = 0.7 - 0.05 * (mhat / (vhat.sqrt() + 1e-8));
        assert!((p.value.data[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn schedule_shape() {
        let cfg = TrainConfig {
            lr: 1.0,
            warmup_steps: 50,
            ..TrainConfig::default()
        };
        let total = 200;
        // linear rise to the peak at warmup
        assert!((lr_at(&cfg, 1, total) - 0.02).abs() < 1e-12);
        assert!((lr_at(&cfg, 25, total) - 0.5).abs() < 1e-12);
        assert!((lr_at(&cfg, 50, total) - 1.0).abs() < 1e-12);
        // linear decay to zero at T
        assert!((lr_at(&cfg, 125, total) - 0.5).abs() < 1e-12);
        assert!(lr_at(&cfg, 200, total) == 0.0);
        // continuity at the peak
        let before = lr_at(&cfg, 49, total);
        let after = lr_at(&cfg, 51, total);
        assert!(before < 1.0 && after < 1.0);
        assert!((before - (1.0 - 0.02)).abs() < 1e-12);
        assert!((after - (1.0 - 1.0 / 150.0)).abs() < 1e-12);
    }

    #[test]
    fn build_examples_wraps_and_truncates() {
        let (vocab, pc) = toy_vocab(false);
        let examples = build_examples(&pc, &vocab, 8);
        assert_eq!(examples.len(), pc.eng.len() + pc.fake.len());
        for e in &examples {
            let sp = vocab.specials(e.lang);
            assert!(e.ids.len() <= 8);
            assert_eq!(e.ids[0], sp.cls);
            assert_eq!(*e.ids.last().unwrap(), sp.sep);
        }
    }

    #[test]
    fn train_is_deterministic_and_thread_invariant() {
        let (vocab, pc) = toy_vocab(false);
        let examples: Vec<Example> = build_examples(&pc, &vocab, 16)
            .into_iter()
            .take(24)
            .collect();
        let mcfg = ModelConfig {
            hidden: 16,
            intermediate: 32,
            heads: 2,
            layers: 2,
            max_len: 16,
            vocab_size: vocab.total_size() as usize,
            lang_pos: false,
            dropout: 0.1,
        };
        let tcfg = TrainConfig {
            batch_size: 8,
            epochs: 2,
            warmup_steps: 2,
            eval_every: 0,
            max_len: 16,
            seed: 5,
            ..TrainConfig::default()
        };
        let masker = Masker::new(MaskingPolicy::original(), &vocab).unwrap();
        let run = |single: bool| {
            crate::tensor::set_single_thread(single);
            let mut model = crate::model::EncoderModel::<f32>::new(mcfg.clone(), 99);
            train(&mut model, &examples, &masker, &vocab, &tcfg, |_, _| Ok(())).unwrap();
            crate::tensor::set_single_thread(false);
            let mut bits: Vec<u32> = Vec::new();
            model.for_each_param_mut(|_, p| bits.extend(p.value.data.iter().map(|v| v.to_bits())));
            bits
        };
        let a = run(true);
        let b = run(true);
        assert_eq!(a, b, "same-seed single-thread runs differ");
        let c = run(false);
        assert_eq!(a, c, "thread count changed the result");
    }

    #[test]
    fn uniform_model_perplexity_is_vocab_size() {
        let (vocab, pc) = toy_vocab(false);
        let examples: Vec<Example> = build_examples(&pc, &vocab, 16)
            .into_iter()
            .take(32)
            .collect();
        let mcfg = ModelConfig {
            hidden: 16,
            intermediate: 32,
            heads: 1,
            layers: 2,
            max_len: 16,
            vocab_size: vocab.total_size() as usize,
            lang_pos: false,
            dropout: 0.0,
        };
        let mut model = crate::model::EncoderModel::<f32>::new(mcfg, 1);
        // zero the token table and output bias: logits all zero -> uniform
        model.tok.value.fill(0.0);
        model.out_bias.value.fill(0.0);
        let ppl = mlm_perplexity(&model, &examples, &vocab, 17, 16).unwrap();
        let v = vocab.total_size() as f64;
        assert!((ppl - v).abs() / v < 1e-4, "ppl {ppl} vs vocab {v}");
    }

    #[test]
    fn perplexity_independent_of_batch_size() {
        let (vocab, pc) = toy_vocab(false);
        let examples: Vec<Example> = build_examples(&pc, &vocab, 16)
            .into_iter()
            .take(40)
            .collect();
        let mcfg = ModelConfig {
            hidden: 16,
            intermediate: 32,
            heads: 1,
            layers: 2,
            max_len: 16,
            vocab_size: vocab.total_size() as usize,
            lang_pos: false,
            dropout: 0.1,
        };
        let model = crate::model::EncoderModel::<f32>::new(mcfg, 2);
        let a = mlm_perplexity(&model, &examples, &vocab, 9, 7).unwrap();
        let b = mlm_perplexity(&model, &examples, &vocab, 9, 40).unwrap();
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn untrained_loss_is_near_log_vocab() {
        let (vocab, pc) = toy_vocab(false);
        let examples: Vec<&Example> = Vec::new();
        let _ = examples;
        let all = build_examples(&pc, &vocab, 16);
        let rows: Vec<&Example> = all.iter().take(32).collect();
        let mcfg = ModelConfig {
            hidden: 16,
            intermediate: 32,
            heads: 1,
            layers: 2,
            max_len: 16,
            vocab_size: vocab.total_size() as usize,
            lang_pos: false,
            dropout: 0.0,
        };
        let model = crate::model::EncoderModel::<f32>::new(mcfg, 3);
        let masker = Masker::new(MaskingPolicy::original(), &vocab).unwrap();
        let batch = assemble_batch(&rows, &vocab);
        let mut rng = Rng::new(4);
        let masked = masker.mask_batch(&batch, &mut rng).unwrap();
        let (out, _) = crate::model::forward(&model, &masked.batch, false, 0).unwrap();
        let (loss, _) = crate::tensor::cross_entropy(&out.logits, &masked.labels).unwrap();
        let expect = (vocab.total_size() as f64).ln();
        assert!((loss - expect).abs() < 0.1, "loss {loss} vs ln V {expect}");
    }
}
