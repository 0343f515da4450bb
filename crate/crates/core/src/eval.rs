//! Multilinguality measurements: mutual-argmax word alignment with F1,
//! sentence retrieval, vocabulary-level word translation, the aggregate
//! multilinguality score, and a Kendall's-tau word-order score.
//!
//! Everything here is deterministic: cosine ties break toward the lowest
//! index, and all scores are computed with fixed iteration order over a
//! frozen model.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Lang, ParallelCorpus};
use crate::model::{extract_layer, forward, Batch, EncoderModel, EncoderOutput};
use crate::tensor::{dot, Tensor};
use crate::tokenizer::Vocabulary;
use crate::{Error, Result};

/// Cosine similarities between two sets of vectors, with provenance indices.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    /// n x m values in [-1, 1].
    pub values: Tensor<f32>,
    pub row_ids: Vec<usize>,
    pub col_ids: Vec<usize>,
}

fn unit_rows(rows: &[Vec<f32>]) -> Vec<Vec<f32>> {
    rows.iter()
        .map(|r| {
            let n = dot(r, r).sqrt();
            if n > 0.0 {
                r.iter().map(|v| v / n).collect()
            } else {
                r.clone()
            }
        })
        .collect()
}

/// Cosine-similarity matrix between two vector sets.
pub fn cosine_matrix(a: &[Vec<f32>], b: &[Vec<f32>]) -> SimilarityMatrix {
    let ua = unit_rows(a);
    let ub = unit_rows(b);
    let (n, m) = (ua.len(), ub.len());
    let mut values = Tensor::zeros(&[n.max(1), m.max(1)]);
    for i in 0..n {
        for j in 0..m {
            values.data[i * m + j] = dot(&ua[i], &ub[j]);
        }
    }
    values.shape = vec![n, m];
    values.data.truncate(n * m);
    SimilarityMatrix {
        values,
        row_ids: (0..n).collect(),
        col_ids: (0..m).collect(),
    }
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0usize;
    for (j, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = j;
        }
    }
    best
}

/// Mutual-argmax alignment: edge (i, j) is kept iff i is the argmax of
/// column j and j is the argmax of row i (ties toward the lowest index).
pub fn argmax_align(s: &SimilarityMatrix) -> Vec<(usize, usize)> {
    let (n, m) = (s.values.shape[0], s.values.shape[1]);
    if n == 0 || m == 0 {
        return Vec::new();
    }
    let row_arg: Vec<usize> = (0..n).map(|i| argmax(s.values.row(i))).collect();
    let mut col_arg = vec![0usize; m];
    for j in 0..m {
        let mut best = 0usize;
        for i in 1..n {
            if s.values.data[i * m + j] > s.values.data[best * m + j] {
                best = i;
            }
        }
        col_arg[j] = best;
    }
    let mut edges = Vec::new();
    for i in 0..n {
        let j = row_arg[i];
        if col_arg[j] == i {
            edges.push((i, j));
        }
    }
    edges
}

/// Precision, recall, F1 of predicted vs gold edge sets.
/// An empty prediction set scores precision 1.0 by convention.
pub fn alignment_f1(
    predicted: &HashSet<(usize, usize)>,
    gold: &HashSet<(usize, usize)>,
) -> (f64, f64, f64) {
    assert!(!gold.is_empty(), "alignment_f1: empty gold set");
    let inter = predicted.intersection(gold).count() as f64;
    let p = if predicted.is_empty() {
        1.0
    } else {
        inter / predicted.len() as f64
    };
    let r = inter / gold.len() as f64;
    let f1 = if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    };
    (p, r, f1)
}

/// Mean token vector of one sentence at a given layer, skipping special
/// tokens and padding. `row` selects the batch row.
pub fn sentence_embed(
    out: &EncoderOutput<f32>,
    layer: usize,
    batch: &Batch,
    row: usize,
    vocab: &Vocabulary,
) -> Result<Vec<f32>> {
    let hs = extract_layer(out, layer)?;
    let h = hs.cols();
    let mut acc = vec![0.0f32; h];
    let mut count = 0usize;
    for j in 0..batch.seq {
        let idx = row * batch.seq + j;
        if !batch.mask[idx] || vocab.is_special(batch.ids[idx]) {
            continue;
        }
        for (a, v) in acc.iter_mut().zip(hs.row(idx)) {
            *a += v;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::data("sentence_embed: only special tokens"));
    }
    let inv = 1.0 / count as f32;
    acc.iter_mut().for_each(|v| *v *= inv);
    Ok(acc)
}

/// Mean precision@1 of both retrieval directions over paired vector sets.
pub fn retrieval_score(e_eng: &[Vec<f32>], e_fake: &[Vec<f32>]) -> Result<f64> {
    if e_eng.len() != e_fake.len() {
        return Err(Error::data("retrieval: unequal counts"));
    }
    let m = e_eng.len();
    if m == 0 {
        return Err(Error::data("retrieval: empty sets"));
    }
    let sim = cosine_matrix(e_eng, e_fake);
    let mut hits = 0usize;
    for i in 0..m {
        if argmax(sim.values.row(i)) == i {
            hits += 1;
        }
    }
    for j in 0..m {
        let mut best = 0usize;
        for i in 1..m {
            if sim.values.data[i * m + j] > sim.values.data[best * m + j] {
                best = i;
            }
        }
        if best == j {
            hits += 1;
        }
    }
    Ok(hits as f64 / (2 * m) as f64)
}

/// mu = (tau_0 + tau_8 + rho_0 + rho_8) / 4.
pub fn multilinguality_score(tau0: f64, tau8: f64, rho0: f64, rho8: f64) -> f64 {
    (tau0 + tau8 + rho0 + rho8) / 4.0
}

/// Word-order score of a permutation: 1 - discordant / (n choose 2).
/// The identity scores 1.0, the full reversal 0.0.
pub fn kendall_tau_distance(perm: &[usize]) -> Result<f64> {
    let n = perm.len();
    if n == 0 {
        return Err(Error::data("kendall: empty permutation"));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::data(format!("kendall: not a permutation: {perm:?}")));
        }
        seen[p] = true;
    }
    if n == 1 {
        return Ok(1.0);
    }
    let mut discordant = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            if perm[i] > perm[j] {
                discordant += 1;
            }
        }
    }
    let total = n * (n - 1) / 2;
    Ok(1.0 - discordant as f64 / total as f64)
}

/// Per-layer F1/rho/tau, the aggregate score, and model-fit perplexities.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub f1_0: f64,
    pub rho_0: f64,
    pub tau_0: f64,
    pub f1_8: f64,
    pub rho_8: f64,
    pub tau_8: f64,
    pub mu: f64,
    pub train_ppl: f64,
    pub dev_ppl: f64,
    pub seed: u64,
}

impl EvalReport {
    /// mu recomputed from the stored fields (invariant: equals `mu`).
    pub fn recompute_mu(&self) -> f64 {
        multilinguality_score(self.tau_0, self.tau_8, self.rho_0, self.rho_8)
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Cap on dev sentence pairs used for alignment/retrieval.
    pub max_pairs: usize,
    pub batch_size: usize,
    /// The two extraction layers (uncontextualized, contextualized).
    pub layer_lo: usize,
    pub layer_hi: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            max_pairs: 1000,
            batch_size: 256,
            layer_lo: 0,
            layer_hi: 8,
        }
    }
}

struct SideVectors {
    /// per sentence: per layer-slot: token vectors of regular positions
    tokens: Vec<[Vec<Vec<f32>>; 2]>,
    /// per sentence: per layer-slot: mean sentence vector
    sents: Vec<[Vec<f32>; 2]>,
}

/// Run one language side of the dev corpus through the model.
fn embed_side(
    model: &EncoderModel<f32>,
    sentences: &[Vec<u32>],
    lang: Lang,
    vocab: &Vocabulary,
    opts: &EvalOptions,
) -> Result<SideVectors> {
    let sp = vocab.specials(lang);
    let max_len = model.config.max_len;
    let mut tokens = Vec::with_capacity(sentences.len());
    let mut sents = Vec::with_capacity(sentences.len());
    for chunk in sentences.chunks(opts.batch_size) {
        let examples: Vec<crate::pretrain::Example> = chunk
            .iter()
            .map(|s| {
                let body = &s[..s.len().min(max_len - 2)];
                let mut ids = Vec::with_capacity(body.len() + 2);
                ids.push(sp.cls);
                ids.extend_from_slice(body);
                ids.push(sp.sep);
                crate::pretrain::Example { ids, lang }
            })
            .collect();
        let refs: Vec<&crate::pretrain::Example> = examples.iter().collect();
        let batch = crate::pretrain::assemble_batch(&refs, vocab);
        let (out, _) = forward(model, &batch, false, 0)?;
        for (r, _) in chunk.iter().enumerate() {
            let mut tok_slot: [Vec<Vec<f32>>; 2] = [Vec::new(), Vec::new()];
            let mut sent_slot: [Vec<f32>; 2] = [Vec::new(), Vec::new()];
            for (slot, layer) in [(0usize, opts.layer_lo), (1, opts.layer_hi)] {
                let hs = extract_layer(&out, layer)?;
                let mut vecs = Vec::new();
                for j in 0..batch.seq {
                    let idx = r * batch.seq + j;
                    if !batch.mask[idx] || vocab.is_special(batch.ids[idx]) {
                        continue;
                    }
                    vecs.push(hs.row(idx).to_vec());
                }
                sent_slot[slot] = sentence_embed(&out, layer, &batch, r, vocab)?;
                tok_slot[slot] = vecs;
            }
            tokens.push(tok_slot);
            sents.push(sent_slot);
        }
    }
    Ok(SideVectors { tokens, sents })
}

/// Alignment F1 + retrieval rho at both layers over the dev corpus, plus
/// word translation tau and the aggregate score. Perplexities and seed are
/// left zeroed for the caller to fill in.
pub fn evaluate_model(
    model: &EncoderModel<f32>,
    dev: &ParallelCorpus,
    vocab: &Vocabulary,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if !dev.parallel {
        return Err(Error::data("evaluate_model: dev corpus must be parallel"));
    }
    let n_pairs = dev.eng.len().min(dev.fake.len()).min(opts.max_pairs);
    if n_pairs == 0 {
        return Err(Error::data("evaluate_model: empty dev corpus"));
    }
    let eng = embed_side(model, &dev.eng[..n_pairs], Lang::Eng, vocab, opts)?;
    let fake = embed_side(model, &dev.fake[..n_pairs], Lang::Fake, vocab, opts)?;

    let mut f1 = [0.0f64; 2];
    let mut rho = [0.0f64; 2];
    for slot in 0..2 {
        // micro-averaged alignment over all sentence pairs
        let (mut inter, mut n_pred, mut n_gold) = (0usize, 0usize, 0usize);
        for k in 0..n_pairs {
            let ev = &eng.tokens[k][slot];
            let fv = &fake.tokens[k][slot];
            let len = ev.len().min(fv.len());
            if len == 0 {
                continue;
            }
            let gold: HashSet<(usize, usize)> = (0..len)
                .map(|i| {
                    if dev.inverted {
                        (i, len - 1 - i)
                    } else {
                        (i, i)
                    }
                })
                .collect();
            let sim = cosine_matrix(ev, fv);
            let pred: HashSet<(usize, usize)> = argmax_align(&sim).into_iter().collect();
            inter += pred.intersection(&gold).count();
            n_pred += pred.len();
            n_gold += gold.len();
        }
        let p = if n_pred == 0 {
            1.0
        } else {
            inter as f64 / n_pred as f64
        };
        let r = inter as f64 / n_gold as f64;
        f1[slot] = if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        };

        let e: Vec<Vec<f32>> = eng.sents.iter().map(|s| s[slot].clone()).collect();
        let f: Vec<Vec<f32>> = fake.sents.iter().map(|s| s[slot].clone()).collect();
        rho[slot] = retrieval_score(&e, &f)?;
    }

    let tau = translation_score(model, vocab, opts)?;
    let mu = multilinguality_score(tau[0], tau[1], rho[0], rho[1]);
    Ok(EvalReport {
        f1_0: f1[0],
        rho_0: rho[0],
        tau_0: tau[0],
        f1_8: f1[1],
        rho_8: rho[1],
        tau_8: tau[1],
        mu,
        train_ppl: 0.0,
        dev_ppl: 0.0,
        seed: 0,
    })
}

/// Word translation: every regular token is embedded as "[CLS] token [SEP]",
/// the middle vector is taken at each layer, and both-direction precision@1
/// is scored against the shift dictionary. Returns [tau_lo, tau_hi].
pub fn translation_score(
    model: &EncoderModel<f32>,
    vocab: &Vocabulary,
    opts: &EvalOptions,
) -> Result<[f64; 2]> {
    let dict = vocab.gold_dictionary();
    if dict.is_empty() {
        return Err(Error::data("translation: empty gold dictionary"));
    }
    let embed_tokens = |ids: &[u32], lang: Lang| -> Result<[Vec<Vec<f32>>; 2]> {
        let sp = vocab.specials(lang);
        let mut out0 = Vec::with_capacity(ids.len());
        let mut out1 = Vec::with_capacity(ids.len());
        for chunk in ids.chunks(opts.batch_size) {
            let rows = chunk.len();
            let mut flat = Vec::with_capacity(rows * 3);
            for &id in chunk {
                flat.extend_from_slice(&[sp.cls, id, sp.sep]);
            }
            let batch = Batch {
                ids: flat,
                lang_of: vec![lang; rows * 3],
                mask: vec![true; rows * 3],
                rows,
                seq: 3,
            };
            let (out, _) = forward(model, &batch, false, 0)?;
            for slot in 0..2 {
                let layer = if slot == 0 {
                    opts.layer_lo
                } else {
                    opts.layer_hi
                };
                let hs = extract_layer(&out, layer)?;
                for r in 0..rows {
                    let v = hs.row(r * 3 + 1).to_vec();
                    if slot == 0 {
                        out0.push(v);
                    } else {
                        out1.push(v);
                    }
                }
            }
        }
        Ok([out0, out1])
    };
    let eng_ids: Vec<u32> = dict.iter().map(|&(e, _)| e).collect();
    let fake_ids: Vec<u32> = dict.iter().map(|&(_, f)| f).collect();
    let eng = embed_tokens(&eng_ids, Lang::Eng)?;
    let fake = embed_tokens(&fake_ids, Lang::Fake)?;
    let mut tau = [0.0f64; 2];
    for slot in 0..2 {
        tau[slot] = retrieval_score(&eng[slot], &fake[slot])?;
    }
    Ok(tau)
}

/// Write a matrix as CSV for external plotting.
pub fn write_matrix_csv(m: &Tensor<f32>, path: &Path) -> Result<()> {
    let cols = m.cols();
    let mut out = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
        let _ = cols;
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.to_path_buf(), e))
}

/// Report JSON with a config fingerprint alongside the metric fields.
pub fn write_report_json(
    report: &EvalReport,
    fingerprint: &serde_json::Value,
    path: &Path,
) -> Result<()> {
    let doc = serde_json::json!({
        "report": report,
        "config": fingerprint,
    });
    std::fs::write(path, serde_json::to_string_pretty(&doc).unwrap())
        .map_err(|e| Error::io(path.to_path_buf(), e))
}
