//! Static wordpiece embeddings and unsupervised crosslingual alignment.
//!
//! Skip-gram with negative sampling is trained per language on the tokenized
//! corpus. The two spaces are then aligned without any supervision:
//! normalize, seed a dictionary from each word's sorted intra-language
//! similarity distribution, and iterate orthogonal Procrustes with CSLS
//! mutual-nearest-neighbor dictionary induction. The aligned space powers the
//! knn-replace masking option.

use std::collections::HashMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::corpus::Lang;
use crate::rng::Rng;
use crate::tensor::svd::svd_f64;
use crate::tensor::{dot, Scalar, Tensor};
use crate::{Error, Result};

/// Static embeddings for one language's regular wordpieces.
#[derive(Debug, Clone)]
pub struct StaticEmbedding {
    /// rows x dim, row r belongs to token `ids[r]`.
    pub matrix: Tensor<f32>,
    pub lang: Lang,
    pub dim: usize,
    /// Global token id of each row.
    pub ids: Vec<u32>,
    /// Training-corpus occurrence count per row; zero-count rows are
    /// excluded from alignment and neighbor tables.
    pub occurs: Vec<u64>,
}

impl StaticEmbedding {
    pub fn row_of(&self, id: u32) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }
}

#[derive(Debug, Clone)]
pub struct StaticTrainConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for StaticTrainConfig {
    fn default() -> Self {
        StaticTrainConfig {
            dim: 100,
            window: 5,
            negatives: 5,
            epochs: 15,
            lr: 0.025,
        }
    }
}

/// Sigmoid in f64 for the SGNS updates.
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Negative-sampling loss for one (center, positive, negatives) triple and
/// its analytic gradients: returns (loss, d_center, d_pos, d_negs).
/// The trainer applies exactly these gradients; the tests check them against
/// finite differences.
pub fn sgns_loss_and_grads<S: Scalar>(
    center: &[S],
    positive: &[S],
    negatives: &[&[S]],
) -> (f64, Vec<S>, Vec<S>, Vec<Vec<S>>) {
    let d = center.len();
    let mut d_center = vec![S::ZERO; d];
    let mut loss = 0.0f64;
    let s_pos = sigmoid(dot(center, positive).to_f64());
    loss -= s_pos.max(1e-300).ln();
    // d/dx of -ln sigmoid(c.u) = (sigmoid - 1) * u
    let coef = S::from_f64(s_pos - 1.0);
    let mut d_pos = vec![S::ZERO; d];
    for i in 0..d {
        d_center[i] += coef * positive[i];
        d_pos[i] = coef * center[i];
    }
    let mut d_negs = Vec::with_capacity(negatives.len());
    for neg in negatives {
        let s_neg = sigmoid(dot(center, neg).to_f64());
        loss -= (1.0 - s_neg).max(1e-300).ln();
        let coef = S::from_f64(s_neg);
        let mut d_neg = vec![S::ZERO; d];
        for i in 0..d {
            d_center[i] += coef * neg[i];
            d_neg[i] = coef * center[i];
        }
        d_negs.push(d_neg);
    }
    (loss, d_center, d_pos, d_negs)
}

/// Train skip-gram-with-negative-sampling embeddings on one language's
/// tokenized sentences. `regular_ids` fixes the row order (sorted global
/// ids), which makes runs on shift-identical corpora produce identical
/// matrices up to that reindexing.
pub fn train_static(
    sentences: &[Vec<u32>],
    regular_ids: &[u32],
    lang: Lang,
    cfg: &StaticTrainConfig,
    rng: &mut Rng,
) -> Result<StaticEmbedding> {
    if sentences.is_empty() {
        return Err(Error::data("train_static: empty corpus"));
    }
    let rows = regular_ids.len();
    let row_of: HashMap<u32, usize> = regular_ids
        .iter()
        .enumerate()
        .map(|(r, &id)| (id, r))
        .collect();
    // map sentences to row indices, dropping anything non-regular
    let corpus: Vec<Vec<usize>> = sentences
        .iter()
        .map(|s| s.iter().filter_map(|id| row_of.get(id).copied()).collect())
        .collect();
    let mut occurs = vec![0u64; rows];
    for s in &corpus {
        for &r in s {
            occurs[r] += 1;
        }
    }
    // unigram^0.75 negative-sampling table
    let mut cum = Vec::with_capacity(rows);
    let mut acc = 0.0f64;
    for &c in &occurs {
        acc += (c as f64).powf(0.75);
        cum.push(acc);
    }
    if acc <= 0.0 {
        return Err(Error::data("train_static: no regular tokens in corpus"));
    }

    let d = cfg.dim;
    let mut input: Vec<f32> = (0..rows * d)
        .map(|_| ((rng.uniform() - 0.5) / d as f64) as f32)
        .collect();
    let mut output: Vec<f32> = vec![0.0; rows * d];

    let total_pairs_est: u64 =
        corpus.iter().map(|s| s.len() as u64).sum::<u64>() * cfg.epochs as u64;
    let mut seen = 0u64;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for _epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for &sidx in &order {
            let sent = &corpus[sidx];
            for (t, &center_row) in sent.iter().enumerate() {
                seen += 1;
                let lr = (cfg.lr * (1.0 - seen as f64 / (total_pairs_est + 1) as f64))
                    .max(cfg.lr * 1e-4);
                let w = rng.below(cfg.window) + 1;
                let lo = t.saturating_sub(w);
                let hi = (t + w + 1).min(sent.len());
                for c in lo..hi {
                    if c == t {
                        continue;
                    }
                    let ctx_row = sent[c];
                    // positive update + negatives, f32 in place
                    let mut d_center = vec![0.0f32; d];
                    {
                        let vrow = &input[center_row * d..(center_row + 1) * d];
                        let urow = &output[ctx_row * d..(ctx_row + 1) * d];
                        let coef = (sigmoid(dot(vrow, urow) as f64) - 1.0) * lr;
                        let coef = coef as f32;
                        for i in 0..d {
                            d_center[i] += coef * urow[i];
                        }
                        let grad_u: Vec<f32> = vrow.iter().map(|&v| coef * v).collect();
                        let urow = &mut output[ctx_row * d..(ctx_row + 1) * d];
                        for i in 0..d {
                            urow[i] -= grad_u[i];
                        }
                    }
                    for _ in 0..cfg.negatives {
                        let neg_row = rng.from_cumulative(&cum);
                        if neg_row == ctx_row {
                            continue;
                        }
                        let vrow = &input[center_row * d..(center_row + 1) * d];
                        let urow = &output[neg_row * d..(neg_row + 1) * d];
                        let coef = (sigmoid(dot(vrow, urow) as f64) * lr) as f32;
                        for i in 0..d {
                            d_center[i] += coef * urow[i];
                        }
                        let grad_u: Vec<f32> = vrow.iter().map(|&v| coef * v).collect();
                        let urow = &mut output[neg_row * d..(neg_row + 1) * d];
                        for i in 0..d {
                            urow[i] -= grad_u[i];
                        }
                    }
                    let vrow = &mut input[center_row * d..(center_row + 1) * d];
                    for i in 0..d {
                        vrow[i] -= d_center[i];
                    }
                }
            }
        }
    }
    Ok(StaticEmbedding {
        matrix: Tensor::from_vec(&[rows, d], input),
        lang,
        dim: d,
        ids: regular_ids.to_vec(),
        occurs,
    })
}

/// An orthogonal linear map between two embedding spaces.
#[derive(Debug, Clone)]
pub struct OrthogonalMap {
    pub w: Tensor<f32>,
}

impl OrthogonalMap {
    /// Frobenius distance of w^T w from the identity.
    pub fn orthogonality_error(&self) -> f64 {
        let d = self.w.cols();
        let mut err = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0f64;
                for k in 0..d {
                    acc += self.w.data[k * d + i] as f64 * self.w.data[k * d + j] as f64;
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                err += (acc - expect) * (acc - expect);
            }
        }
        err.sqrt()
    }

    pub fn apply(&self, x: &Tensor<f32>) -> Tensor<f32> {
        crate::tensor::matmul(x, &self.w).expect("dim match")
    }
}

#[derive(Debug, Clone)]
pub struct AlignOptions {
    pub csls_k: usize,
    pub max_iters: usize,
    pub tol: f64,
    /// Stochastic dictionary dropout (keep-probability annealed 0.9 -> 1.0).
    /// Disable for strictly monotone objective (test mode).
    pub stochastic: bool,
    pub seed: u64,
}

impl Default for AlignOptions {
    fn default() -> Self {
        AlignOptions {
            csls_k: 10,
            max_iters: 50,
            tol: 1e-6,
            stochastic: true,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AlignStats {
    pub iterations: usize,
    pub objective: f64,
    pub objective_trace: Vec<f64>,
    pub dict_size: usize,
    /// Row indices (into the occurring-row subsets) of the final dictionary.
    pub dictionary: Vec<(usize, usize)>,
    /// Occurring-row index -> source row in the full matrix.
    pub x_rows: Vec<usize>,
    pub y_rows: Vec<usize>,
}

/// length-normalize rows, mean-center, length-normalize again
fn normalize_rows(m: &mut [f64], rows: usize, d: usize) {
    let unit = |m: &mut [f64]| {
        for r in 0..rows {
            let row = &mut m[r * d..(r + 1) * d];
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|x| *x /= n);
            }
        }
    };
    unit(m);
    let mut mean = vec![0.0f64; d];
    for r in 0..rows {
        for (mu, v) in mean.iter_mut().zip(&m[r * d..(r + 1) * d]) {
            *mu += v;
        }
    }
    mean.iter_mut().for_each(|mu| *mu /= rows as f64);
    for r in 0..rows {
        for (v, mu) in m[r * d..(r + 1) * d].iter_mut().zip(&mean) {
            *v -= mu;
        }
    }
    unit(m);
}

/// Orthogonal Procrustes: W = U V^T from svd(X_d^T Y_d), minimizing
/// ||X_d W - Y_d||_F over orthogonal W.
fn procrustes(xd: &[f64], yd: &[f64], pairs: &[(usize, usize)], d: usize) -> Result<Vec<f64>> {
    let mut cross = vec![0.0f64; d * d];
    for &(i, j) in pairs {
        let x = &xd[i * d..(i + 1) * d];
        let y = &yd[j * d..(j + 1) * d];
        for a in 0..d {
            for b in 0..d {
                cross[a * d + b] += x[a] * y[b];
            }
        }
    }
    let (u, _s, vt) = svd_f64(&cross, d, d)?;
    let mut w = vec![0.0f64; d * d];
    for a in 0..d {
        for b in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                acc += u[a * d + k] * vt[k * d + b];
            }
            w[a * d + b] = acc;
        }
    }
    Ok(w)
}

fn matmul_f64(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0f64; m * n];
    for i in 0..m {
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik != 0.0 {
                for j in 0..n {
                    c[i * n + j] += aik * b[kk * n + j];
                }
            }
        }
    }
    c
}

/// Mean cosine of each row's top-k neighbors, per row (CSLS penalty).
fn mean_topk(sims: &[f64], rows: usize, cols: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; rows];
    let k = k.min(cols).max(1);
    let mut buf = Vec::with_capacity(cols);
    for r in 0..rows {
        buf.clear();
        buf.extend_from_slice(&sims[r * cols..(r + 1) * cols]);
        buf.sort_by(|a, b| b.partial_cmp(a).unwrap());
        out[r] = buf[..k].iter().sum::<f64>() / k as f64;
    }
    out
}

/// CSLS score matrix entry: 2*cos(i,j) - r_x(i) - r_y(j).
/// Exposed for the symmetry property test.
pub fn csls_scores(sims: &[f64], rows: usize, cols: usize, k: usize) -> Vec<f64> {
    let rx = mean_topk(sims, rows, cols, k);
    // column-wise top-k: transpose view
    let mut simst = vec![0.0f64; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            simst[c * rows + r] = sims[r * cols + c];
        }
    }
    let ry = mean_topk(&simst, cols, rows, k);
    let mut out = vec![0.0f64; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = 2.0 * sims[r * cols + c] - rx[r] - ry[c];
        }
    }
    out
}

fn argmax_rows(m: &[f64], rows: usize, cols: usize) -> Vec<usize> {
    (0..rows)
        .map(|r| {
            let row = &m[r * cols..(r + 1) * cols];
            let mut best = 0usize;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Self-learning unsupervised alignment: seed from similarity-distribution
/// matching, then iterate Procrustes + two-direction CSLS mutual matches.
pub fn self_learning_align(
    x: &StaticEmbedding,
    y: &StaticEmbedding,
    opts: &AlignOptions,
) -> Result<(OrthogonalMap, AlignStats)> {
    if x.dim != y.dim {
        return Err(Error::data("align: dimension mismatch"));
    }
    let d = x.dim;
    let x_rows: Vec<usize> = (0..x.ids.len()).filter(|&r| x.occurs[r] > 0).collect();
    let y_rows: Vec<usize> = (0..y.ids.len()).filter(|&r| y.occurs[r] > 0).collect();
    let (nx, ny) = (x_rows.len(), y_rows.len());
    if nx < d || ny < d {
        return Err(Error::data(format!(
            "align: degenerate seed dictionary ({nx}x{ny} occurring rows for dim {d}); \
             use a larger corpus or smaller dim"
        )));
    }
    let gather = |emb: &StaticEmbedding, rows: &[usize]| -> Vec<f64> {
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            out.extend(emb.matrix.row(r).iter().map(|&v| v as f64));
        }
        out
    };
    let mut xd = gather(x, &x_rows);
    let mut yd = gather(y, &y_rows);
    normalize_rows(&mut xd, nx, d);
    normalize_rows(&mut yd, ny, d);

    // seed dictionary: match sorted intra-language similarity vectors
    let seed_dict: Vec<(usize, usize)> = {
        let sig = |m: &[f64], n: usize| -> Vec<f64> {
            let sims = matmul_f64_nt(m, m, n, d, n);
            let keep = nx.min(ny);
            let mut out = vec![0.0f64; n * keep];
            let mut buf = Vec::with_capacity(n);
            for r in 0..n {
                buf.clear();
                buf.extend_from_slice(&sims[r * n..(r + 1) * n]);
                buf.sort_by(|a, b| b.partial_cmp(a).unwrap());
                let row = &mut out[r * keep..(r + 1) * keep];
                row.copy_from_slice(&buf[..keep]);
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    row.iter_mut().for_each(|v| *v /= norm);
                }
            }
            out
        };
        let keep = nx.min(ny);
        let sx = sig(&xd, nx);
        let sy = sig(&yd, ny);
        let cross = matmul_f64_nt(&sx, &sy, nx, keep, ny);
        argmax_rows(&cross, nx, ny)
            .into_iter()
            .enumerate()
            .collect()
    };

    let mut dict = seed_dict;
    let mut w = procrustes(&xd, &yd, &dict, d)?;
    let mut best_objective = f64::NEG_INFINITY;
    let mut trace = Vec::new();
    let mut rng = Rng::for_stream(opts.seed, 0x616c6967, 0);
    let mut iters = 0usize;
    for it in 0..opts.max_iters {
        iters = it + 1;
        // induce dictionary in the mapped space
        let xw = matmul_f64(&xd, &w, nx, d, d);
        let sims = matmul_f64_nt(&xw, &yd, nx, d, ny);
        let csls = csls_scores(&sims, nx, ny, opts.csls_k);
        let fwd = argmax_rows(&csls, nx, ny);
        let cslst = transpose(&csls, nx, ny);
        let bwd = argmax_rows(&cslst, ny, nx);
        let mut new_dict: Vec<(usize, usize)> = Vec::new();
        let mut obj_acc = 0.0f64;
        for (i, &j) in fwd.iter().enumerate() {
            if bwd[j] == i {
                new_dict.push((i, j));
                obj_acc += sims[i * ny + j];
            }
        }
        if new_dict.len() < 3 {
            break; // induction collapsed; keep previous mapping
        }
        let objective = obj_acc / new_dict.len() as f64;
        let improved = objective > best_objective + opts.tol;
        if !improved {
            // allow stochastic mode a grace period to escape a plateau
            if !opts.stochastic || it > opts.max_iters / 2 {
                break;
            }
        } else {
            best_objective = objective;
            trace.push(objective);
            dict = new_dict.clone();
        }
        // optional stochastic dropout of dictionary entries
        let kept: Vec<(usize, usize)> = if opts.stochastic {
            let keep_p = 0.9 + 0.1 * (it as f64 / opts.max_iters.max(1) as f64);
            let kept: Vec<(usize, usize)> = new_dict
                .iter()
                .copied()
                .filter(|_| rng.bernoulli(keep_p))
                .collect();
            if kept.len() >= 3 {
                kept
            } else {
                new_dict
            }
        } else {
            new_dict
        };
        w = procrustes(&xd, &yd, &kept, d)?;
    }

    let map = OrthogonalMap {
        w: Tensor::from_vec(&[d, d], w.iter().map(|&v| v as f32).collect()),
    };
    let err = map.orthogonality_error();
    if err > 1e-4 {
        return Err(Error::NoConvergence(format!(
            "procrustes map not orthogonal: {err}"
        )));
    }
    Ok((
        map,
        AlignStats {
            iterations: iters,
            objective: best_objective,
            objective_trace: trace,
            dict_size: dict.len(),
            dictionary: dict,
            x_rows,
            y_rows,
        },
    ))
}

fn transpose(m: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = m[r * cols + c];
        }
    }
    out
}

/// a (m x k) . b(n x k)^T -> m x n
fn matmul_f64_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0f64; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for l in 0..k {
                acc += arow[l] * brow[l];
            }
            c[i * n + j] = acc;
        }
    }
    c
}

/// Crosslingual nearest-neighbor table: global source id -> ranked global
/// target ids from the other language.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnTable {
    pub k: usize,
    pub entries: HashMap<u32, Vec<u32>>,
}

impl KnnTable {
    pub fn neighbors(&self, id: u32) -> Option<&[u32]> {
        self.entries.get(&id).map(|v| v.as_slice())
    }

    /// Merge two direction tables into one lookup.
    pub fn merge(mut self, other: KnnTable) -> KnnTable {
        for (k, v) in other.entries {
            self.entries.entry(k).or_insert(v);
        }
        self
    }
}

/// Top-k cosine (or CSLS) neighbors of every occurring source row among the
/// occurring target rows, in the mapped space.
pub fn build_knn_table(
    x: &StaticEmbedding,
    map: &OrthogonalMap,
    y: &StaticEmbedding,
    k: usize,
    use_csls: bool,
) -> Result<KnnTable> {
    let d = x.dim;
    if k == 0 {
        return Err(Error::Config("knn: k must be >= 1".into()));
    }
    let y_rows: Vec<usize> = (0..y.ids.len()).filter(|&r| y.occurs[r] > 0).collect();
    if k > y_rows.len() {
        return Err(Error::Config(format!(
            "knn: k {k} exceeds target vocabulary {}",
            y_rows.len()
        )));
    }
    let x_rows: Vec<usize> = (0..x.ids.len()).filter(|&r| x.occurs[r] > 0).collect();
    let (nx, ny) = (x_rows.len(), y_rows.len());
    let gather_unit = |emb: &StaticEmbedding, rows: &[usize], mapped: bool| -> Vec<f64> {
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            let row: Vec<f64> = if mapped {
                let mut t = vec![0.0f64; d];
                for (a, &v) in emb.matrix.row(r).iter().enumerate() {
                    for b in 0..d {
                        t[b] += v as f64 * map.w.data[a * d + b] as f64;
                    }
                }
                t
            } else {
                emb.matrix.row(r).iter().map(|&v| v as f64).collect()
            };
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            out.extend(row.iter().map(|v| if n > 0.0 { v / n } else { 0.0 }));
        }
        out
    };
    let xu = gather_unit(x, &x_rows, true);
    let yu = gather_unit(y, &y_rows, false);
    let sims = matmul_f64_nt(&xu, &yu, nx, d, ny);
    let scores = if use_csls {
        csls_scores(&sims, nx, ny, 10)
    } else {
        sims
    };
    let mut entries = HashMap::with_capacity(nx);
    let mut idx: Vec<usize> = Vec::new();
    for (xi, &xr) in x_rows.iter().enumerate() {
        idx.clear();
        idx.extend(0..ny);
        let row = &scores[xi * ny..(xi + 1) * ny];
        idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
        let neighbors: Vec<u32> = idx[..k].iter().map(|&j| y.ids[y_rows[j]]).collect();
        entries.insert(x.ids[xr], neighbors);
    }
    Ok(KnnTable { k, entries })
}

// ---------------------------------------------------------------------------
// file formats
// ---------------------------------------------------------------------------

const EMB_MAGIC: &[u8; 8] = b"MLEMB001";

/// Embedding file: magic, u32 rows, u32 dim, then per row a u32 token id,
/// a u64 occurrence count and dim little-endian f32 values.
pub fn save_embedding(emb: &StaticEmbedding, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
    let mut w = BufWriter::new(f);
    let io_err = |e| Error::io(path.to_path_buf(), e);
    w.write_all(EMB_MAGIC).map_err(io_err)?;
    w.write_all(&(emb.ids.len() as u32).to_le_bytes())
        .map_err(io_err)?;
    w.write_all(&(emb.dim as u32).to_le_bytes())
        .map_err(io_err)?;
    w.write_all(&[match emb.lang {
        Lang::Eng => 0u8,
        Lang::Fake => 1,
    }])
    .map_err(io_err)?;
    for r in 0..emb.ids.len() {
        w.write_all(&emb.ids[r].to_le_bytes()).map_err(io_err)?;
        w.write_all(&emb.occurs[r].to_le_bytes()).map_err(io_err)?;
        for v in emb.matrix.row(r) {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn load_embedding(path: &Path) -> Result<StaticEmbedding> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
    let fail = || Error::data(format!("bad embedding file {}", path.display()));
    if buf.len() < 17 || &buf[..8] != EMB_MAGIC {
        return Err(fail());
    }
    let rows = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(buf[12..16].try_into().unwrap()) as usize;
    let lang = if buf[16] == 0 { Lang::Eng } else { Lang::Fake };
    let mut pos = 17usize;
    let mut ids = Vec::with_capacity(rows);
    let mut occurs = Vec::with_capacity(rows);
    let mut data = Vec::with_capacity(rows * dim);
    for _ in 0..rows {
        if pos + 12 + dim * 4 > buf.len() {
            return Err(fail());
        }
        ids.push(u32::from_le_bytes(buf[pos..pos + 4].try_into().unwrap()));
        occurs.push(u64::from_le_bytes(
            buf[pos + 4..pos + 12].try_into().unwrap(),
        ));
        pos += 12;
        for _ in 0..dim {
            data.push(f32::from_le_bytes(buf[pos..pos + 4].try_into().unwrap()));
            pos += 4;
        }
    }
    Ok(StaticEmbedding {
        matrix: Tensor::from_vec(&[rows, dim], data),
        lang,
        dim,
        ids,
        occurs,
    })
}

/// Text format, versioned: first line "MLKNN01 k=<k>", then per source id a
/// line "<src>: <t1> <t2> ...".
pub fn save_knn_table(table: &KnnTable, path: &Path) -> Result<()> {
    let mut out = format!("MLKNN01 k={}\n", table.k);
    let mut keys: Vec<u32> = table.entries.keys().copied().collect();
    keys.sort_unstable();
    for k in keys {
        let targets: Vec<String> = table.entries[&k].iter().map(|t| t.to_string()).collect();
        out.push_str(&format!("{k}: {}\n", targets.join(" ")));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.to_path_buf(), e))
}

pub fn load_knn_table(path: &Path) -> Result<KnnTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.to_path_buf(), e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::data("empty knn file"))?;
    let k: usize = header
        .strip_prefix("MLKNN01 k=")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::data(format!("bad knn header: {header}")))?;
    let mut entries = HashMap::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (src, rest) = line
            .split_once(':')
            .ok_or_else(|| Error::data(format!("bad knn line: {line}")))?;
        let src: u32 = src
            .trim()
            .parse()
            .map_err(|_| Error::data(format!("bad knn source id: {line}")))?;
        let targets: std::result::Result<Vec<u32>, _> =
            rest.split_whitespace().map(|t| t.parse()).collect();
        entries.insert(
            src,
            targets.map_err(|_| Error::data(format!("bad knn targets: {line}")))?,
        );
    }
    Ok(KnnTable { k, entries })
}
