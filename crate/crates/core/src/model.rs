//! The small BERT-style encoder: embedding tables (with the language-specific
//! position/segment variant), a stack of post-layernorm transformer layers,
//! and an MLM head whose decoder is tied to the token table.
//!
//! Forward and backward are hand-written; the composition in this file is the
//! authoritative computation graph. Generic over `f32`/`f64` so gradient
//! checks can rerun the exact same code at 64-bit.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Lang;
use crate::rng::Rng;
use crate::tensor::{
    self, add_bias, axpy, bias_grad, dot, for_each_row, gelu, gelu_backward, layernorm,
    layernorm_backward, matmul_nt_into, matmul_tn_into, softmax_backward_rows, LayerNormCache,
    Parameter, Scalar, Tensor,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub intermediate: usize,
    pub heads: usize,
    pub layers: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    /// Language-specific position and segment embeddings: fake-language
    /// tokens use position rows max_len..2*max_len and segment row 1.
    pub lang_pos: bool,
    pub dropout: f32,
}

impl ModelConfig {
    /// Reference configuration: BERT architecture at 1/12 width.
    pub fn small(vocab_size: usize) -> Self {
        ModelConfig {
            hidden: 64,
            intermediate: 256,
            heads: 1,
            layers: 12,
            max_len: 128,
            vocab_size,
            lang_pos: false,
            dropout: 0.1,
        }
    }

    /// Overparameterized preset: full BERT-base width.
    /// Only the three size fields change relative to [`ModelConfig::small`].
    pub fn overparam(vocab_size: usize) -> Self {
        ModelConfig {
            hidden: 768,
            intermediate: 3072,
            heads: 12,
            ..ModelConfig::small(vocab_size)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden {} not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        if self.layers < 9 {
            return Err(Error::Config(format!(
                "need at least 9 layers for layer-8 extraction, got {}",
                self.layers
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {}", self.dropout)));
        }
        Ok(())
    }

    pub fn position_rows(&self) -> usize {
        if self.lang_pos {
            2 * self.max_len
        } else {
            self.max_len
        }
    }

    pub fn segment_rows(&self) -> usize {
        if self.lang_pos {
            2
        } else {
            1
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerParams<S = f32> {
    pub wq: Parameter<S>,
    pub bq: Parameter<S>,
    pub wk: Parameter<S>,
    pub bk: Parameter<S>,
    pub wv: Parameter<S>,
    pub bv: Parameter<S>,
    pub wo: Parameter<S>,
    pub bo: Parameter<S>,
    pub ln1_g: Parameter<S>,
    pub ln1_b: Parameter<S>,
    pub w1: Parameter<S>,
    pub b1: Parameter<S>,
    pub w2: Parameter<S>,
    pub b2: Parameter<S>,
    pub ln2_g: Parameter<S>,
    pub ln2_b: Parameter<S>,
}

#[derive(Debug, Clone)]
pub struct EncoderModel<S = f32> {
    pub config: ModelConfig,
    /// Token table; also the (tied) MLM decoder weight.
    pub tok: Parameter<S>,
    pub pos: Parameter<S>,
    pub seg: Parameter<S>,
    pub emb_ln_g: Parameter<S>,
    pub emb_ln_b: Parameter<S>,
    pub layers: Vec<LayerParams<S>>,
    pub head_w: Parameter<S>,
    pub head_b: Parameter<S>,
    pub head_ln_g: Parameter<S>,
    pub head_ln_b: Parameter<S>,
    pub out_bias: Parameter<S>,
}

const LN_EPS: f64 = 1e-12;
const INIT_STD: f64 = 0.02;
const MASKED_SCORE: f64 = -1e9;

fn init_normal<S: Scalar>(shape: &[usize], rng: &mut Rng) -> Tensor<S> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| S::from_f64(rng.normal() * INIT_STD))
        .collect();
    Tensor::from_vec(shape, data)
}

fn ones<S: Scalar>(n: usize) -> Tensor<S> {
    Tensor::from_vec(&[n], vec![S::ONE; n])
}

impl<S: Scalar> EncoderModel<S> {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut rng = Rng::for_stream(seed, 0x6d6f64, 0); // model init stream
        let h = config.hidden;
        let i = config.intermediate;
        let v = config.vocab_size;
        let w = |rng: &mut Rng, shape: &[usize]| Parameter::new(init_normal(shape, rng), true);
        let b = |n: usize| Parameter::new(Tensor::zeros(&[n]), false);
        let g = |n: usize| Parameter::new(ones(n), false);

        let tok = w(&mut rng, &[v, h]);
        let pos = w(&mut rng, &[config.position_rows(), h]);
        let seg = w(&mut rng, &[config.segment_rows(), h]);
        let emb_ln_g = g(h);
        let emb_ln_b = b(h);
        let layers = (0..config.layers)
            .map(|_| LayerParams {
                wq: w(&mut rng, &[h, h]),
                bq: b(h),
                wk: w(&mut rng, &[h, h]),
                bk: b(h),
                wv: w(&mut rng, &[h, h]),
                bv: b(h),
                wo: w(&mut rng, &[h, h]),
                bo: b(h),
                ln1_g: g(h),
                ln1_b: b(h),
                w1: w(&mut rng, &[h, i]),
                b1: b(i),
                w2: w(&mut rng, &[i, h]),
                b2: b(h),
                ln2_g: g(h),
                ln2_b: b(h),
            })
            .collect();
        EncoderModel {
            head_w: w(&mut rng, &[h, h]),
            head_b: b(h),
            head_ln_g: g(h),
            head_ln_b: b(h),
            out_bias: b(v),
            config,
            tok,
            pos,
            seg,
            emb_ln_g,
            emb_ln_b,
            layers,
        }
    }

    /// Visit every parameter with a stable name, in manifest order.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&str, &mut Parameter<S>)) {
        f("tok", &mut self.tok);
        f("pos", &mut self.pos);
        f("seg", &mut self.seg);
        f("emb_ln_g", &mut self.emb_ln_g);
        f("emb_ln_b", &mut self.emb_ln_b);
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let names = [
                "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln1_g", "ln1_b", "w1", "b1", "w2",
                "b2", "ln2_g", "ln2_b",
            ];
            let params: [&mut Parameter<S>; 16] = [
                &mut layer.wq,
                &mut layer.bq,
                &mut layer.wk,
                &mut layer.bk,
                &mut layer.wv,
                &mut layer.bv,
                &mut layer.wo,
                &mut layer.bo,
                &mut layer.ln1_g,
                &mut layer.ln1_b,
                &mut layer.w1,
                &mut layer.b1,
                &mut layer.w2,
                &mut layer.b2,
                &mut layer.ln2_g,
                &mut layer.ln2_b,
            ];
            for (n, p) in names.into_iter().zip(params) {
                f(&format!("layer{l}.{n}"), p);
            }
        }
        f("head_w", &mut self.head_w);
        f("head_b", &mut self.head_b);
        f("head_ln_g", &mut self.head_ln_g);
        f("head_ln_b", &mut self.head_ln_b);
        f("out_bias", &mut self.out_bias);
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.for_each_param_mut(|_, p| n += p.value.len());
        n
    }

    pub fn zero_grads(&mut self) {
        self.for_each_param_mut(|_, p| p.zero_grad());
    }

    pub fn all_finite(&mut self) -> bool {
        let mut ok = true;
        self.for_each_param_mut(|_, p| ok &= p.value.all_finite());
        ok
    }

    pub fn to_f64(&mut self) -> EncoderModel<f64> {
        let mut out = EncoderModel::<f64>::new(self.config.clone(), 0);
        let mut values = Vec::new();
        self.for_each_param_mut(|_, p| values.push(p.value.to_f64()));
        let mut it = values.into_iter();
        out.for_each_param_mut(|_, p| p.value = it.next().unwrap());
        out
    }
}

/// One padded batch of token rows.
#[derive(Debug, Clone)]
pub struct Batch {
    /// Token ids, row-major [rows * seq].
    pub ids: Vec<u32>,
    /// Per-position language tags (drives position/segment indexing).
    pub lang_of: Vec<Lang>,
    /// True at real positions, false at padding.
    pub mask: Vec<bool>,
    pub rows: usize,
    pub seq: usize,
}

impl Batch {
    pub fn token_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// All layer activations plus MLM logits.
#[derive(Debug)]
pub struct EncoderOutput<S = f32> {
    /// layers+1 tensors of shape [rows*seq, hidden]; index 0 is the
    /// post-embedding-layernorm representation.
    pub hidden_states: Vec<Tensor<S>>,
    pub logits: Tensor<S>,
}

/// Return the requested layer's token vectors ([rows*seq, hidden]).
pub fn extract_layer<S: Scalar>(out: &EncoderOutput<S>, layer: usize) -> Result<&Tensor<S>> {
    out.hidden_states
        .get(layer)
        .ok_or_else(|| Error::Config(format!("layer {layer} does not exist")))
}

struct DropMask<S> {
    mask: Option<Tensor<S>>,
}

impl<S: Scalar> DropMask<S> {
    /// Inverted dropout mask: entries are 0 or 1/(1-p).
    fn new(shape: &[usize], p: f32, train: bool, rng: &mut Rng) -> Self {
        if !train || p <= 0.0 {
            return DropMask { mask: None };
        }
        let keep = 1.0 - p as f64;
        let scale = S::from_f64(1.0 / keep);
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| if rng.uniform() < keep { scale } else { S::ZERO })
            .collect();
        DropMask {
            mask: Some(Tensor::from_vec(shape, data)),
        }
    }

    fn apply(&self, x: &mut Tensor<S>) {
        if let Some(m) = &self.mask {
            for (v, k) in x.data.iter_mut().zip(&m.data) {
                *v *= *k;
            }
        }
    }

    fn backward(&self, dy: &mut Tensor<S>) {
        if let Some(m) = &self.mask {
            for (v, k) in dy.data.iter_mut().zip(&m.data) {
                *v *= *k;
            }
        }
    }
}

struct LayerCache<S> {
    q: Tensor<S>,
    k: Tensor<S>,
    v: Tensor<S>,
    /// Softmax probabilities, pre-dropout, [rows*heads*seq, seq].
    probs: Tensor<S>,
    /// Present only when attention-prob dropout was active.
    probs_dropped: Option<Tensor<S>>,
    probs_drop: DropMask<S>,
    ctx: Tensor<S>,
    attn_drop: DropMask<S>,
    res1: Tensor<S>,
    ln1: LayerNormCache<S>,
    ln1_out: Tensor<S>,
    ffn_pre: Tensor<S>,
    ffn_act: Tensor<S>,
    ffn_drop: DropMask<S>,
    res2: Tensor<S>,
    ln2: LayerNormCache<S>,
}

pub struct Caches<S> {
    emb_sum: Tensor<S>,
    emb_ln: LayerNormCache<S>,
    emb_drop: DropMask<S>,
    layers: Vec<LayerCache<S>>,
    head_pre: Tensor<S>,
    head_act: Tensor<S>,
    head_ln: LayerNormCache<S>,
    head_ln_out: Tensor<S>,
}

/// Position/segment row indices for one batch position.
fn pos_seg_index(config: &ModelConfig, lang: Lang, j: usize) -> (usize, usize) {
    if config.lang_pos && lang == Lang::Fake {
        (j + config.max_len, 1)
    } else {
        (j, 0)
    }
}

/// Forward pass. In train mode dropout is active and the caches needed by
/// [`backward`] are produced; in eval mode the caches are skipped.
pub fn forward<S: Scalar>(
    model: &EncoderModel<S>,
    batch: &Batch,
    train_mode: bool,
    dropout_seed: u64,
) -> Result<(EncoderOutput<S>, Option<Caches<S>>)> {
    let cfg = &model.config;
    let (rows, seq) = (batch.rows, batch.seq);
    let h = cfg.hidden;
    if seq > cfg.max_len {
        return Err(Error::Data(format!(
            "sequence length {seq} exceeds max_len {}",
            cfg.max_len
        )));
    }
    for &id in &batch.ids {
        if id as usize >= cfg.vocab_size {
            return Err(Error::Data(format!(
                "token id {id} out of vocabulary ({})",
                cfg.vocab_size
            )));
        }
    }

    let n = rows * seq;
    let mut drop_rng = Rng::for_stream(dropout_seed, 0x64726f70, 0);

    // embeddings: token + position + segment, then layernorm (+ dropout)
    let mut emb_sum = Tensor::zeros(&[n, h]);
    {
        let tok = &model.tok.value;
        let pos = &model.pos.value;
        let seg = &model.seg.value;
        let ids = &batch.ids;
        let lang_of = &batch.lang_of;
        for_each_row(&mut emb_sum.data, h, false, |idx, row| {
            let j = idx % seq;
            let (p, g) = pos_seg_index(cfg, lang_of[idx], j);
            let t = ids[idx] as usize;
            for c in 0..h {
                row[c] = tok.data[t * h + c] + pos.data[p * h + c] + seg.data[g * h + c];
            }
        });
    }
    let (mut x, emb_ln) = layernorm(
        &emb_sum,
        &model.emb_ln_g.value.data,
        &model.emb_ln_b.value.data,
        LN_EPS,
    )?;
    let emb_drop = DropMask::new(&[n, h], cfg.dropout, train_mode, &mut drop_rng);
    emb_drop.apply(&mut x);

    let mut hidden_states = Vec::with_capacity(cfg.layers + 1);
    hidden_states.push(x);

    let mut layer_caches = Vec::new();
    let heads = cfg.heads;
    let dh = h / heads;
    let scale = S::from_f64(1.0 / (dh as f64).sqrt());

    for (l, layer) in model.layers.iter().enumerate() {
        let x_in = hidden_states.last().unwrap();
        // projections
        let mut q = Tensor::zeros(&[n, h]);
        matmul_nt_into(
            &mut q.data,
            &x_in.data,
            &layer.wq.value.data,
            n,
            h,
            h,
            false,
        );
        add_bias(&mut q, &layer.bq.value.data);
        let mut k = Tensor::zeros(&[n, h]);
        matmul_nt_into(
            &mut k.data,
            &x_in.data,
            &layer.wk.value.data,
            n,
            h,
            h,
            false,
        );
        add_bias(&mut k, &layer.bk.value.data);
        let mut v = Tensor::zeros(&[n, h]);
        matmul_nt_into(
            &mut v.data,
            &x_in.data,
            &layer.wv.value.data,
            n,
            h,
            h,
            false,
        );
        add_bias(&mut v, &layer.bv.value.data);

        // attention scores + softmax, rows of [rows*heads*seq, seq]
        let mut probs = Tensor::zeros(&[rows * heads * seq, seq]);
        {
            let (qd, kd) = (&q.data, &k.data);
            let mask = &batch.mask;
            let parallel = rows * heads * seq * seq * dh >= tensor::PAR_WORK_THRESHOLD;
            for_each_row(&mut probs.data, seq, parallel, |ridx, prow| {
                let i = ridx % seq;
                let hh = (ridx / seq) % heads;
                let b = ridx / (seq * heads);
                let qrow = &qd[(b * seq + i) * h + hh * dh..][..dh];
                let mut mx = S::from_f64(f64::NEG_INFINITY);
                for (j, p) in prow.iter_mut().enumerate() {
                    if mask[b * seq + j] {
                        let krow = &kd[(b * seq + j) * h + hh * dh..][..dh];
                        *p = dot(qrow, krow) * scale;
                    } else {
                        *p = S::from_f64(MASKED_SCORE);
                    }
                    if *p > mx {
                        mx = *p;
                    }
                }
                // softmax in place
                let mut sum = S::ZERO;
                for p in prow.iter_mut() {
                    *p = (*p - mx).exp();
                    sum += *p;
                }
                let inv = S::ONE / sum;
                for p in prow.iter_mut() {
                    *p *= inv;
                }
            });
        }
        let probs_drop = DropMask::new(&probs.shape, cfg.dropout, train_mode, &mut drop_rng);
        let probs_dropped = if probs_drop.mask.is_some() {
            let mut pd = probs.clone();
            probs_drop.apply(&mut pd);
            Some(pd)
        } else {
            None
        };

        // context: ctx[b,i] = sum_j probs[b,h,i,j] v[b,j]
        let mut ctx = Tensor::zeros(&[n, h]);
        {
            let pd = &probs_dropped.as_ref().unwrap_or(&probs).data;
            let vd = &v.data;
            let parallel = n * seq * h >= tensor::PAR_WORK_THRESHOLD;
            for_each_row(&mut ctx.data, h, parallel, |idx, crow| {
                let i = idx % seq;
                let b = idx / seq;
                for hh in 0..heads {
                    let prow = &pd[((b * heads + hh) * seq + i) * seq..][..seq];
                    let cslice = &mut crow[hh * dh..(hh + 1) * dh];
                    for (j, &p) in prow.iter().enumerate() {
                        if p != S::ZERO {
                            axpy(cslice, p, &vd[(b * seq + j) * h + hh * dh..][..dh]);
                        }
                    }
                }
            });
        }

        // output projection + dropout + residual + layernorm
        let mut attn_out = Tensor::zeros(&[n, h]);
        matmul_nt_into(
            &mut attn_out.data,
            &ctx.data,
            &layer.wo.value.data,
            n,
            h,
            h,
            false,
        );
        add_bias(&mut attn_out, &layer.bo.value.data);
        let attn_drop = DropMask::new(&[n, h], cfg.dropout, train_mode, &mut drop_rng);
        attn_drop.apply(&mut attn_out);
        let mut res1 = attn_out;
        for (r, xi) in res1.data.iter_mut().zip(&x_in.data) {
            *r += *xi;
        }
        let (ln1_out, ln1) = layernorm(
            &res1,
            &layer.ln1_g.value.data,
            &layer.ln1_b.value.data,
            LN_EPS,
        )?;

        // feed-forward
        let mut ffn_pre = Tensor::zeros(&[n, cfg.intermediate]);
        tensor::matmul_into(
            &mut ffn_pre.data,
            &ln1_out.data,
            &layer.w1.value.data,
            n,
            h,
            cfg.intermediate,
            false,
        );
        add_bias(&mut ffn_pre, &layer.b1.value.data);
        let ffn_act = gelu(&ffn_pre);
        let mut ffn_out = Tensor::zeros(&[n, h]);
        tensor::matmul_into(
            &mut ffn_out.data,
            &ffn_act.data,
            &layer.w2.value.data,
            n,
            cfg.intermediate,
            h,
            false,
        );
        add_bias(&mut ffn_out, &layer.b2.value.data);
        let ffn_drop = DropMask::new(&[n, h], cfg.dropout, train_mode, &mut drop_rng);
        ffn_drop.apply(&mut ffn_out);
        let mut res2 = ffn_out;
        for (r, xi) in res2.data.iter_mut().zip(&ln1_out.data) {
            *r += *xi;
        }
        let (ln2_out, ln2) = layernorm(
            &res2,
            &layer.ln2_g.value.data,
            &layer.ln2_b.value.data,
            LN_EPS,
        )?;

        if train_mode {
            layer_caches.push(LayerCache {
                q,
                k,
                v,
                probs,
                probs_dropped,
                probs_drop,
                ctx,
                attn_drop,
                res1,
                ln1,
                ln1_out,
                ffn_pre,
                ffn_act,
                ffn_drop,
                res2,
                ln2,
            });
        }
        hidden_states.push(ln2_out);
        let _ = l;
    }

    // MLM head: transform + layernorm + tied decoder
    let x_top = hidden_states.last().unwrap();
    let mut head_pre = Tensor::zeros(&[n, h]);
    matmul_nt_into(
        &mut head_pre.data,
        &x_top.data,
        &model.head_w.value.data,
        n,
        h,
        h,
        false,
    );
    add_bias(&mut head_pre, &model.head_b.value.data);
    let head_act = gelu(&head_pre);
    let (head_ln_out, head_ln) = layernorm(
        &head_act,
        &model.head_ln_g.value.data,
        &model.head_ln_b.value.data,
        LN_EPS,
    )?;
    let vsize = cfg.vocab_size;
    let mut logits = Tensor::zeros(&[n, vsize]);
    matmul_nt_into(
        &mut logits.data,
        &head_ln_out.data,
        &model.tok.value.data,
        n,
        h,
        vsize,
        false,
    );
    add_bias(&mut logits, &model.out_bias.value.data);

    let caches = if train_mode {
        Some(Caches {
            emb_sum,
            emb_ln,
            emb_drop,
            layers: layer_caches,
            head_pre,
            head_act,
            head_ln,
            head_ln_out,
        })
    } else {
        None
    };
    Ok((
        EncoderOutput {
            hidden_states,
            logits,
        },
        caches,
    ))
}

/// Backward pass: accumulate gradients of the scalar loss whose
/// logit-gradient is `dlogits` into every parameter.
pub fn backward<S: Scalar>(
    model: &mut EncoderModel<S>,
    batch: &Batch,
    out: &EncoderOutput<S>,
    caches: &Caches<S>,
    dlogits: &Tensor<S>,
) {
    let cfg = model.config.clone();
    let (rows, seq) = (batch.rows, batch.seq);
    let n = rows * seq;
    let h = cfg.hidden;
    let heads = cfg.heads;
    let dh = h / heads;
    let vsize = cfg.vocab_size;

    // decoder (tied): logits = head_ln_out . tok^T + out_bias
    bias_grad(dlogits, &mut model.out_bias.grad.data);
    // d tok += dlogits^T . head_ln_out
    matmul_tn_into(
        &mut model.tok.grad.data,
        &dlogits.data,
        &caches.head_ln_out.data,
        vsize,
        n,
        h,
        true,
    );
    // d head_ln_out = dlogits . tok
    let mut d_head_ln_out = Tensor::zeros(&[n, h]);
    tensor::matmul_into(
        &mut d_head_ln_out.data,
        &dlogits.data,
        &model.tok.value.data,
        n,
        vsize,
        h,
        false,
    );

    let d_head_act = layernorm_backward(
        &d_head_ln_out,
        &caches.head_act,
        &model.head_ln_g.value.data,
        &caches.head_ln,
        &mut model.head_ln_g.grad.data,
        &mut model.head_ln_b.grad.data,
    );
    let d_head_pre = gelu_backward(&d_head_act, &caches.head_pre);
    bias_grad(&d_head_pre, &mut model.head_b.grad.data);
    let x_top = out.hidden_states.last().unwrap();
    // head_pre = x_top . head_w^T  => d head_w += d_head_pre^T . x_top
    matmul_tn_into(
        &mut model.head_w.grad.data,
        &d_head_pre.data,
        &x_top.data,
        h,
        n,
        h,
        true,
    );
    let mut dx = Tensor::zeros(&[n, h]);
    tensor::matmul_into(
        &mut dx.data,
        &d_head_pre.data,
        &model.head_w.value.data,
        n,
        h,
        h,
        false,
    );

    // transformer layers in reverse
    for l in (0..cfg.layers).rev() {
        let cache = &caches.layers[l];
        let x_in = &out.hidden_states[l];
        let layer = &mut model.layers[l];

        // layernorm 2
        let d_res2 = layernorm_backward(
            &dx,
            &cache.res2,
            &layer.ln2_g.value.data,
            &cache.ln2,
            &mut layer.ln2_g.grad.data,
            &mut layer.ln2_b.grad.data,
        );
        // res2 = ln1_out + drop(ffn_out)
        let mut d_ffn_out = d_res2.clone();
        cache.ffn_drop.backward(&mut d_ffn_out);
        bias_grad(&d_ffn_out, &mut layer.b2.grad.data);
        // ffn_out = ffn_act . w2
        matmul_tn_into(
            &mut layer.w2.grad.data,
            &cache.ffn_act.data,
            &d_ffn_out.data,
            cfg.intermediate,
            n,
            h,
            true,
        );
        let mut d_ffn_act = Tensor::zeros(&[n, cfg.intermediate]);
        matmul_nt_into(
            &mut d_ffn_act.data,
            &d_ffn_out.data,
            &layer.w2.value.data,
            n,
            h,
            cfg.intermediate,
            false,
        );
        let d_ffn_pre = gelu_backward(&d_ffn_act, &cache.ffn_pre);
        bias_grad(&d_ffn_pre, &mut layer.b1.grad.data);
        matmul_tn_into(
            &mut layer.w1.grad.data,
            &cache.ln1_out.data,
            &d_ffn_pre.data,
            h,
            n,
            cfg.intermediate,
            true,
        );
        // d ln1_out = residual path + ffn path
        let mut d_ln1_out = d_res2;
        matmul_nt_into(
            &mut d_ln1_out.data,
            &d_ffn_pre.data,
            &layer.w1.value.data,
            n,
            cfg.intermediate,
            h,
            true,
        );

        // layernorm 1
        let d_res1 = layernorm_backward(
            &d_ln1_out,
            &cache.res1,
            &layer.ln1_g.value.data,
            &cache.ln1,
            &mut layer.ln1_g.grad.data,
            &mut layer.ln1_b.grad.data,
        );
        // res1 = x_in + drop(attn_out)
        let mut d_attn_out = d_res1.clone();
        cache.attn_drop.backward(&mut d_attn_out);
        bias_grad(&d_attn_out, &mut layer.bo.grad.data);
        // attn_out = ctx . wo^T  (nt form): d wo += d_attn_out^T . ctx
        matmul_tn_into(
            &mut layer.wo.grad.data,
            &d_attn_out.data,
            &cache.ctx.data,
            h,
            n,
            h,
            true,
        );
        let mut d_ctx = Tensor::zeros(&[n, h]);
        tensor::matmul_into(
            &mut d_ctx.data,
            &d_attn_out.data,
            &layer.wo.value.data,
            n,
            h,
            h,
            false,
        );

        // attention core backward
        // d probs_dropped[b,h,i,j] = dot(d_ctx[b,i,hh], v[b,j,hh])
        let mut d_probs = Tensor::zeros(&[rows * heads * seq, seq]);
        {
            let dctx = &d_ctx.data;
            let vd = &cache.v.data;
            let parallel = rows * heads * seq * seq * dh >= tensor::PAR_WORK_THRESHOLD;
            for_each_row(&mut d_probs.data, seq, parallel, |ridx, dprow| {
                let i = ridx % seq;
                let hh = (ridx / seq) % heads;
                let b = ridx / (seq * heads);
                let drow = &dctx[(b * seq + i) * h + hh * dh..][..dh];
                for (j, dp) in dprow.iter_mut().enumerate() {
                    *dp = dot(drow, &vd[(b * seq + j) * h + hh * dh..][..dh]);
                }
            });
        }
        // dv[b,j,hh] += sum_i probs_dropped[b,h,i,j] * d_ctx[b,i,hh]
        let mut dv = Tensor::zeros(&[n, h]);
        {
            let pd = &cache.probs_dropped.as_ref().unwrap_or(&cache.probs).data;
            let dctx = &d_ctx.data;
            let parallel = n * seq * h >= tensor::PAR_WORK_THRESHOLD;
            for_each_row(&mut dv.data, h, parallel, |idx, dvrow| {
                let j = idx % seq;
                let b = idx / seq;
                for hh in 0..heads {
                    let dslice = &mut dvrow[hh * dh..(hh + 1) * dh];
                    for i in 0..seq {
                        let p = pd[((b * heads + hh) * seq + i) * seq + j];
                        if p != S::ZERO {
                            axpy(dslice, p, &dctx[(b * seq + i) * h + hh * dh..][..dh]);
                        }
                    }
                }
            });
        }
        // through attention-prob dropout, then softmax
        cache.probs_drop.backward(&mut d_probs);
        softmax_backward_rows(&mut d_probs.data, &cache.probs.data, seq);
        // scores = (q . k^T) * scale; masked entries saw a constant, their
        // probability is ~0 and the softmax backward already zeroed them
        let scale = S::from_f64(1.0 / (dh as f64).sqrt());
        let mut dq = Tensor::zeros(&[n, h]);
        {
            let ds = &d_probs.data;
            let kd = &cache.k.data;
            let parallel = n * seq * h >= tensor::PAR_WORK_THRESHOLD;
            for_each_row(&mut dq.data, h, parallel, |idx, dqrow| {
                let i = idx % seq;
                let b = idx / seq;
                for hh in 0..heads {
                    let dsrow = &ds[((b * heads + hh) * seq + i) * seq..][..seq];
                    let dslice = &mut dqrow[hh * dh..(hh + 1) * dh];
                    for (j, &d) in dsrow.iter().enumerate() {
                        if d != S::ZERO {
                            axpy(dslice, d * scale, &kd[(b * seq + j) * h + hh * dh..][..dh]);
                        }
                    }
                }
            });
        }
        let mut dk = Tensor::zeros(&[n, h]);
        {
            let ds = &d_probs.data;
            let qd = &cache.q.data;
            let parallel = n * seq * h >= tensor::PAR_WORK_THRESHOLD;
            for_each_row(&mut dk.data, h, parallel, |idx, dkrow| {
                let j = idx % seq;
                let b = idx / seq;
                for hh in 0..heads {
                    let dslice = &mut dkrow[hh * dh..(hh + 1) * dh];
                    for i in 0..seq {
                        let d = ds[((b * heads + hh) * seq + i) * seq + j];
                        if d != S::ZERO {
                            axpy(dslice, d * scale, &qd[(b * seq + i) * h + hh * dh..][..dh]);
                        }
                    }
                }
            });
        }

        // back through the q/k/v projections (nt form: y = x . w^T)
        let mut d_x_in = d_res1; // residual path
        for (dt, w, bgrad) in [
            (&dq, &mut layer.wq, &mut layer.bq),
            (&dk, &mut layer.wk, &mut layer.bk),
            (&dv, &mut layer.wv, &mut layer.bv),
        ] {
            bias_grad(dt, &mut bgrad.grad.data);
            matmul_tn_into(&mut w.grad.data, &dt.data, &x_in.data, h, n, h, true);
            tensor::matmul_into(&mut d_x_in.data, &dt.data, &w.value.data, n, h, h, true);
        }
        dx = d_x_in;
    }

    // embeddings
    caches.emb_drop.backward(&mut dx);
    let d_emb_sum = layernorm_backward(
        &dx,
        &caches.emb_sum,
        &model.emb_ln_g.value.data,
        &caches.emb_ln,
        &mut model.emb_ln_g.grad.data,
        &mut model.emb_ln_b.grad.data,
    );
    // scatter into the three tables (serial: overlapping target rows)
    for idx in 0..n {
        let j = idx % seq;
        let (p, g) = pos_seg_index(&cfg, batch.lang_of[idx], j);
        let t = batch.ids[idx] as usize;
        let drow = d_emb_sum.row(idx);
        axpy(&mut model.tok.grad.data[t * h..(t + 1) * h], S::ONE, drow);
        axpy(&mut model.pos.grad.data[p * h..(p + 1) * h], S::ONE, drow);
        axpy(&mut model.seg.grad.data[g * h..(g + 1) * h], S::ONE, drow);
    }
}

// ---------------------------------------------------------------------------
// analysis utilities
// ---------------------------------------------------------------------------

/// Cosine-similarity matrix of the position table. Entries involving a
/// zero-norm row are reported as 0 (undefined), never NaN.
pub fn position_similarity(model: &EncoderModel<f32>) -> Tensor<f32> {
    let p = model.pos.value.rows();
    let norms: Vec<f32> = (0..p)
        .map(|i| dot(model.pos.value.row(i), model.pos.value.row(i)).sqrt())
        .collect();
    let mut sim = Tensor::zeros(&[p, p]);
    for i in 0..p {
        for j in 0..=i {
            let val = if norms[i] > 0.0 && norms[j] > 0.0 {
                dot(model.pos.value.row(i), model.pos.value.row(j)) / (norms[i] * norms[j])
            } else {
                0.0
            };
            sim.data[i * p + j] = val;
            sim.data[j * p + i] = val;
        }
    }
    for i in 0..p {
        if norms[i] > 0.0 {
            sim.data[i * p + i] = 1.0;
        }
    }
    sim
}

/// Project mean-centered rows onto the top-k principal components.
/// Returns (n x k' coordinates, explained-variance ratio per component);
/// k' < k happens only for rank-deficient input.
pub fn pca_project(vectors: &Tensor<f32>, k: usize) -> Result<(Tensor<f32>, Vec<f32>)> {
    let n = vectors.rows();
    let d = vectors.cols();
    if n <= k {
        return Err(Error::Data(format!(
            "pca: need more than {k} rows, got {n}"
        )));
    }
    let mut centered = vectors.to_f64();
    let mut mean = vec![0.0f64; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(centered.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    for i in 0..n {
        let row = centered.row_mut(i);
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let (_, s, vt) = svd_f64_of(&centered)?;
    let total_var: f64 = s.iter().map(|x| x * x).sum();
    let rank_tol = s.first().copied().unwrap_or(0.0) * 1e-9;
    let keep: usize = s.iter().take(k).filter(|&&x| x > rank_tol).count();
    // sign convention: the largest-magnitude loading of each component is positive
    let mut comps = vec![0.0f64; keep * d];
    for c in 0..keep {
        let row = &vt[c * d..(c + 1) * d];
        let mut max_idx = 0;
        for (j, v) in row.iter().enumerate() {
            if v.abs() > row[max_idx].abs() {
                max_idx = j;
            }
        }
        let sign = if row[max_idx] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            comps[c * d + j] = row[j] * sign;
        }
    }
    let mut coords = Tensor::<f32>::zeros(&[n, keep]);
    for i in 0..n {
        for c in 0..keep {
            coords.data[i * keep + c] = dot(centered.row(i), &comps[c * d..(c + 1) * d]) as f32;
        }
    }
    let ratios: Vec<f32> = (0..keep)
        .map(|c| (s[c] * s[c] / total_var.max(1e-300)) as f32)
        .collect();
    Ok((coords, ratios))
}

fn svd_f64_of(t: &Tensor<f64>) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    crate::tensor::svd::svd_f64(&t.data, t.rows(), t.cols())
}

// ---------------------------------------------------------------------------
// checkpoints: header (config + manifest) + raw little-endian f32 arrays
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 8] = b"MLCKPT01";

#[derive(Serialize, Deserialize)]
struct CkptHeader {
    config: ModelConfig,
    manifest: Vec<(String, Vec<usize>)>,
}

pub fn save_checkpoint(model: &mut EncoderModel<f32>, path: &Path) -> Result<()> {
    let mut manifest = Vec::new();
    let mut blobs: Vec<Vec<u8>> = Vec::new();
    model.for_each_param_mut(|name, p| {
        manifest.push((name.to_string(), p.value.shape.clone()));
        let mut bytes = Vec::with_capacity(p.value.data.len() * 4);
        for v in &p.value.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        blobs.push(bytes);
    });
    let header = serde_json::to_vec(&CkptHeader {
        config: model.config.clone(),
        manifest,
    })
    .expect("header serialization");
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path.to_path_buf(), e);
    w.write_all(CKPT_MAGIC).map_err(io_err)?;
    w.write_all(&(header.len() as u32).to_le_bytes())
        .map_err(io_err)?;
    w.write_all(&header).map_err(io_err)?;
    for blob in blobs {
        w.write_all(&blob).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn load_checkpoint(path: &Path) -> Result<EncoderModel<f32>> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf)
        .map_err(|e| Error::io(path.to_path_buf(), e))?;
    if buf.len() < 12 || &buf[..8] != CKPT_MAGIC {
        return Err(Error::data(format!("bad checkpoint {}", path.display())));
    }
    let hlen = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let header: CkptHeader = serde_json::from_slice(&buf[12..12 + hlen])
        .map_err(|e| Error::data(format!("bad checkpoint header: {e}")))?;
    let mut model = EncoderModel::<f32>::new(header.config, 0);
    let mut offset = 12 + hlen;
    let mut manifest = header.manifest.into_iter();
    let mut failure: Option<Error> = None;
    model.for_each_param_mut(|name, p| {
        if failure.is_some() {
            return;
        }
        let Some((mname, shape)) = manifest.next() else {
            failure = Some(Error::data("checkpoint manifest too short"));
            return;
        };
        if mname != name || shape != p.value.shape {
            failure = Some(Error::data(format!(
                "checkpoint mismatch at {name}: got {mname} {shape:?}"
            )));
            return;
        }
        let nbytes = p.value.data.len() * 4;
        if offset + nbytes > buf.len() {
            failure = Some(Error::data("checkpoint truncated"));
            return;
        }
        for (i, chunk) in buf[offset..offset + nbytes].chunks_exact(4).enumerate() {
            p.value.data[i] = f32::from_le_bytes(chunk.try_into().unwrap());
        }
        offset += nbytes;
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(model),
    }
}

// ---------------------------------------------------------------------------
