//! Minimal dense numeric core: row-major tensors, the forward/backward
//! primitives the encoder needs, and an SVD for alignment and PCA.
//!
//! Kernels are generic over `f32`/`f64` so the exact code path used in
//! training can be re-instantiated at 64-bit for finite-difference checks.
//! All reductions use a fixed summation order and parallel loops only ever
//! split disjoint output rows, so results are bit-identical for any thread
//! count, including single-thread mode.

use std::fmt::Debug;
use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;

use crate::{Error, Result};

pub mod check;
pub mod svd;

static SINGLE_THREAD: AtomicBool = AtomicBool::new(false);

/// Force all kernels onto the calling thread (exact-reproducibility mode;
/// results are identical either way, this just removes the thread pool).
pub fn set_single_thread(on: bool) {
    SINGLE_THREAD.store(on, Ordering::SeqCst);
}

pub fn single_thread() -> bool {
    SINGLE_THREAD.load(Ordering::SeqCst)
}

/// Element type for the numeric kernels.
pub trait Scalar:
    Copy
    + PartialOrd
    + Debug
    + Send
    + Sync
    + 'static
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn abs(self) -> Self;
    fn mul_add(self, a: Self, b: Self) -> Self;
    fn maximum(self, other: Self) -> Self;
    fn is_finite(self) -> bool;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            #[inline(always)]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline(always)]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline(always)]
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            #[inline(always)]
            fn exp(self) -> Self {
                self.exp()
            }
            #[inline(always)]
            fn ln(self) -> Self {
                self.ln()
            }
            #[inline(always)]
            fn tanh(self) -> Self {
                self.tanh()
            }
            #[inline(always)]
            fn abs(self) -> Self {
                self.abs()
            }
            #[inline(always)]
            fn mul_add(self, a: Self, b: Self) -> Self {
                self.mul_add(a, b)
            }
            #[inline(always)]
            fn maximum(self, other: Self) -> Self {
                if self > other {
                    self
                } else {
                    other
                }
            }
            #[inline(always)]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S = f32> {
    pub shape: Vec<usize>,
    pub data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::ZERO; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape/data length mismatch"
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows when the tensor is viewed as 2-D over its last axis.
    pub fn rows(&self) -> usize {
        let c = self.cols();
        if c == 0 {
            0
        } else {
            self.data.len() / c
        }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn row(&self, i: usize) -> &[S] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn fill(&mut self, v: S) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| x.to_f64()).collect(),
        }
    }
}

impl Tensor<f64> {
    pub fn to_f32(&self) -> Tensor<f32> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| x as f32).collect(),
        }
    }
}

/// A trainable tensor with its gradient and AdamW moment accumulators.
#[derive(Debug, Clone)]
pub struct Parameter<S = f32> {
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
    pub m: Tensor<S>,
    pub v: Tensor<S>,
    pub step_count: usize,
    /// Weight decay applies only where the reference training recipe does
    /// (not on biases or layernorm parameters).
    pub decay: bool,
}

impl<S: Scalar> Parameter<S> {
    pub fn new(value: Tensor<S>, decay: bool) -> Self {
        let grad = Tensor::zeros(&value.shape);
        Parameter {
            m: grad.clone(),
            v: grad.clone(),
            grad,
            value,
            step_count: 0,
            decay,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(S::ZERO);
    }
}

// ---------------------------------------------------------------------------
// parallel helper
// ---------------------------------------------------------------------------

/// Work threshold below which forking to the thread pool costs more than
/// it saves (tuned for few-core machines).
pub const PAR_WORK_THRESHOLD: usize = 4_000_000;

/// Run `f(row_index, row)` over disjoint rows, in parallel when `parallel`
/// is set (and single-thread mode is not). Each row has a fixed accumulation
/// order, so the output is independent of the thread count.
pub fn for_each_row<S: Send, F>(data: &mut [S], row_len: usize, parallel: bool, f: F)
where
    F: Fn(usize, &mut [S]) + Sync + Send,
{
    assert!(row_len > 0 && data.len() % row_len == 0);
    if single_thread() || !parallel {
        for (i, chunk) in data.chunks_mut(row_len).enumerate() {
            f(i, chunk);
        }
    } else {
        let rows = data.len() / row_len;
        let per_task = rows.div_ceil(2 * rayon::current_num_threads()).max(1);
        data.par_chunks_mut(row_len * per_task)
            .enumerate()
            .for_each(|(t, slab)| {
                for (i, chunk) in slab.chunks_mut(row_len).enumerate() {
                    f(t * per_task + i, chunk);
                }
            });
    }
}

// ---------------------------------------------------------------------------
// primitives
// ---------------------------------------------------------------------------

/// Dot product with 8 partial accumulators (fixed reduction tree).
#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [S::ZERO; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            acc[l] = x[l].mul_add(y[l], acc[l]);
        }
    }
    for (l, (x, y)) in ca.remainder().iter().zip(cb.remainder()).enumerate() {
        acc[l] = x.mul_add(*y, acc[l]);
    }
    let s01 = acc[0] + acc[1];
    let s23 = acc[2] + acc[3];
    let s45 = acc[4] + acc[5];
    let s67 = acc[6] + acc[7];
    (s01 + s23) + (s45 + s67)
}

/// `y += a * x`
#[inline]
pub fn axpy<S: Scalar>(y: &mut [S], a: S, x: &[S]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = a.mul_add(*xi, *yi);
    }
}

fn check_dims(name: &str, ok: bool, detail: String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Shape(format!("{name}: {detail}")))
    }
}

/// C = A(.. x k) . B(k x n); leading axes of A are preserved.
pub fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (m, k) = (a.rows(), a.cols());
    let (kb, n) = (b.rows(), b.cols());
    check_dims("matmul", k == kb, format!("{m}x{k} . {kb}x{n}"))?;
    let mut out_shape = a.shape.clone();
    *out_shape.last_mut().unwrap() = n;
    let mut c = Tensor::zeros(&out_shape);
    matmul_into(&mut c.data, &a.data, &b.data, m, k, n, false);
    Ok(c)
}

/// c (+)= a(m x k) . b(k x n), row-parallel, axpy-major inner loop.
pub fn matmul_into<S: Scalar>(
    c: &mut [S],
    a: &[S],
    b: &[S],
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let parallel = m * k * n >= PAR_WORK_THRESHOLD;
    for_each_row(c, n, parallel, |i, c_row| {
        if !accumulate {
            c_row.iter_mut().for_each(|x| *x = S::ZERO);
        }
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &aik) in a_row.iter().enumerate() {
            axpy(c_row, aik, &b[kk * n..(kk + 1) * n]);
        }
    });
}

/// c (+)= a(m x k) . b(n x k)^T  -> m x n  (dot-product form)
pub fn matmul_nt_into<S: Scalar>(
    c: &mut [S],
    a: &[S],
    b: &[S],
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), n * k);
    assert_eq!(c.len(), m * n);
    let parallel = m * k * n >= PAR_WORK_THRESHOLD;
    for_each_row(c, n, parallel, |i, c_row| {
        let a_row = &a[i * k..(i + 1) * k];
        for (j, cj) in c_row.iter_mut().enumerate() {
            let d = dot(a_row, &b[j * k..(j + 1) * k]);
            if accumulate {
                *cj += d;
            } else {
                *cj = d;
            }
        }
    });
}

/// c (+)= a(k x m)^T . b(k x n) -> m x n, parallel over output rows.
pub fn matmul_tn_into<S: Scalar>(
    c: &mut [S],
    a: &[S],
    b: &[S],
    m: usize,
    k: usize,
    n: usize,
    accumulate: bool,
) {
    assert_eq!(a.len(), k * m);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let parallel = m * k * n >= PAR_WORK_THRESHOLD;
    for_each_row(c, n, parallel, |i, c_row| {
        if !accumulate {
            c_row.iter_mut().for_each(|x| *x = S::ZERO);
        }
        // row i of C gathers column i of A across all k rows
        for kk in 0..k {
            axpy(c_row, a[kk * m + i], &b[kk * n..(kk + 1) * n]);
        }
    });
}

/// Backward of C = A.B: returns (dA, dB) given dC.
pub fn matmul_backward<S: Scalar>(
    a: &Tensor<S>,
    b: &Tensor<S>,
    dc: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>) {
    let (m, k) = (a.rows(), a.cols());
    let n = b.cols();
    let mut da = Tensor::zeros(&a.shape);
    let mut db = Tensor::zeros(&b.shape);
    // dA = dC . B^T
    matmul_nt_into(&mut da.data, &dc.data, &b.data, m, n, k, false);
    // dB = A^T . dC
    matmul_tn_into(&mut db.data, &a.data, &dc.data, k, m, n, false);
    (da, db)
}

/// y = x + b broadcast over rows (in place).
pub fn add_bias<S: Scalar>(x: &mut Tensor<S>, b: &[S]) {
    let n = x.cols();
    assert_eq!(b.len(), n);
    for_each_row(&mut x.data, n, false, |_, row| {
        for (r, bi) in row.iter_mut().zip(b) {
            *r += *bi;
        }
    });
}

/// Gradient of a broadcast bias: column sums of dy (fixed row order).
pub fn bias_grad<S: Scalar>(dy: &Tensor<S>, db: &mut [S]) {
    let n = dy.cols();
    assert_eq!(db.len(), n);
    for i in 0..dy.data.len() / n {
        for (d, g) in db.iter_mut().zip(dy.row(i)) {
            *d += *g;
        }
    }
}

/// Elementwise sum: a + b.
pub fn add<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    check_dims(
        "add",
        a.shape == b.shape,
        format!("{:?} vs {:?}", a.shape, b.shape),
    )?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| *x + *y).collect();
    Ok(Tensor {
        shape: a.shape.clone(),
        data,
    })
}

/// Per-row layernorm state saved for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache<S> {
    pub mean: Vec<S>,
    pub rstd: Vec<S>,
}

/// y = (x - mean)/std * gamma + beta, normalizing over the last axis.
pub fn layernorm<S: Scalar>(
    x: &Tensor<S>,
    gamma: &[S],
    beta: &[S],
    eps: f64,
) -> Result<(Tensor<S>, LayerNormCache<S>)> {
    let n = x.cols();
    check_dims("layernorm", n > 0, "zero-length axis".into())?;
    check_dims(
        "layernorm",
        gamma.len() == n && beta.len() == n,
        format!("gamma/beta len vs axis {n}"),
    )?;
    let rows = x.data.len() / n;
    let mut y = x.clone();
    let mut mean = vec![S::ZERO; rows];
    let mut rstd = vec![S::ZERO; rows];
    let inv_n = S::from_f64(1.0 / n as f64);
    let eps = S::from_f64(eps);
    // serial stats pass (cheap), parallel normalize pass
    for i in 0..rows {
        let row = x.row(i);
        let mut s = S::ZERO;
        for v in row {
            s += *v;
        }
        let mu = s * inv_n;
        let mut var = S::ZERO;
        for v in row {
            let d = *v - mu;
            var = d.mul_add(d, var);
        }
        var *= inv_n;
        mean[i] = mu;
        rstd[i] = S::ONE / (var + eps).sqrt();
    }
    {
        let mean = &mean;
        let rstd = &rstd;
        let parallel = y.data.len() >= PAR_WORK_THRESHOLD / 8;
        for_each_row(&mut y.data, n, parallel, |i, row| {
            let (mu, rs) = (mean[i], rstd[i]);
            for (j, v) in row.iter_mut().enumerate() {
                let xhat = (*v - mu) * rs;
                *v = xhat.mul_add(gamma[j], beta[j]);
            }
        });
    }
    Ok((y, LayerNormCache { mean, rstd }))
}

/// Backward of layernorm. Returns dx; accumulates dgamma/dbeta.
pub fn layernorm_backward<S: Scalar>(
    dy: &Tensor<S>,
    x: &Tensor<S>,
    gamma: &[S],
    cache: &LayerNormCache<S>,
    dgamma: &mut [S],
    dbeta: &mut [S],
) -> Tensor<S> {
    let n = x.cols();
    let rows = x.data.len() / n;
    let mut dx = Tensor::zeros(&x.shape);
    let inv_n = S::from_f64(1.0 / n as f64);
    // parameter grads: fixed serial row order
    for i in 0..rows {
        let (mu, rs) = (cache.mean[i], cache.rstd[i]);
        let xr = x.row(i);
        let dyr = dy.row(i);
        for j in 0..n {
            let xhat = (xr[j] - mu) * rs;
            dgamma[j] = dyr[j].mul_add(xhat, dgamma[j]);
            dbeta[j] += dyr[j];
        }
    }
    {
        let (xd, dyd) = (&x.data, &dy.data);
        let cache = &cache;
        let parallel = dx.data.len() >= PAR_WORK_THRESHOLD / 16;
        for_each_row(&mut dx.data, n, parallel, |i, dxr| {
            let (mu, rs) = (cache.mean[i], cache.rstd[i]);
            let xr = &xd[i * n..(i + 1) * n];
            let dyr = &dyd[i * n..(i + 1) * n];
            let mut sum_dxhat = S::ZERO;
            let mut sum_dxhat_xhat = S::ZERO;
            for j in 0..n {
                let xhat = (xr[j] - mu) * rs;
                let dxhat = dyr[j] * gamma[j];
                sum_dxhat += dxhat;
                sum_dxhat_xhat = dxhat.mul_add(xhat, sum_dxhat_xhat);
            }
            let m1 = sum_dxhat * inv_n;
            let m2 = sum_dxhat_xhat * inv_n;
            for j in 0..n {
                let xhat = (xr[j] - mu) * rs;
                let dxhat = dyr[j] * gamma[j];
                dxr[j] = rs * (dxhat - m1 - xhat * m2);
            }
        });
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Rational tanh approximation (relative error ~1e-7, saturating beyond
/// |x| ~ 7.9). Branch-light so the autovectorizer can keep GELU out of
/// libm; forward and backward use the same function, so gradient checks
/// see a consistent surface.
#[inline(always)]
pub fn tanh_fast<S: Scalar>(x: S) -> S {
    let clamp = S::from_f64(7.905_311_107_635_498);
    let neg_clamp = S::from_f64(-7.905_311_107_635_498);
    let x = if x > clamp {
        clamp
    } else if x < neg_clamp {
        neg_clamp
    } else {
        x
    };
    let x2 = x * x;
    let a1 = S::from_f64(4.893_524_558_917_86e-3);
    let a3 = S::from_f64(6.372_619_288_754_36e-4);
    let a5 = S::from_f64(1.485_722_357_179_79e-5);
    let a7 = S::from_f64(5.122_297_090_371_14e-8);
    let a9 = S::from_f64(-8.604_671_522_137_35e-11);
    let a11 = S::from_f64(2.000_187_904_824_77e-13);
    let a13 = S::from_f64(-2.760_768_477_423_55e-16);
    let b0 = S::from_f64(4.893_525_185_543_85e-3);
    let b2 = S::from_f64(2.268_434_632_439e-3);
    let b4 = S::from_f64(1.185_347_056_866_54e-4);
    let b6 = S::from_f64(1.198_258_394_667_02e-6);
    let p = x2.mul_add(a13, a11);
    let p = x2.mul_add(p, a9);
    let p = x2.mul_add(p, a7);
    let p = x2.mul_add(p, a5);
    let p = x2.mul_add(p, a3);
    let p = x2.mul_add(p, a1);
    let q = x2.mul_add(b6, b4);
    let q = x2.mul_add(q, b2);
    let q = x2.mul_add(q, b0);
    x * p / q
}

/// GELU, tanh approximation (reference encoder behavior).
pub fn gelu<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let c = S::from_f64(GELU_C);
    let a = S::from_f64(GELU_A);
    let half = S::from_f64(0.5);
    let mut y = x.clone();
    let cols = y.cols();
    let parallel = y.data.len() >= 262_144;
    for_each_row(&mut y.data, cols, parallel, |_, row| {
        for v in row.iter_mut() {
            let x = *v;
            let inner = c * (x + a * x * x * x);
            *v = half * x * (S::ONE + tanh_fast(inner));
        }
    });
    y
}

/// dx = dy * gelu'(x)
pub fn gelu_backward<S: Scalar>(dy: &Tensor<S>, x: &Tensor<S>) -> Tensor<S> {
    let c = S::from_f64(GELU_C);
    let a = S::from_f64(GELU_A);
    let half = S::from_f64(0.5);
    let three_a = S::from_f64(3.0 * GELU_A);
    let mut dx = dy.clone();
    let cols = dx.cols();
    let xd = &x.data;
    let parallel = dx.data.len() >= 262_144;
    for_each_row(&mut dx.data, cols, parallel, |i, row| {
        for (j, g) in row.iter_mut().enumerate() {
            let x = xd[i * cols + j];
            let inner = c * (x + a * x * x * x);
            let t = tanh_fast(inner);
            let sech2 = S::ONE - t * t;
            let d_inner = c * (S::ONE + three_a * x * x);
            let deriv = half * (S::ONE + t) + half * x * sech2 * d_inner;
            *g *= deriv;
        }
    });
    dx
}

/// Row-wise softmax in place (rows of length `cols`).
pub fn softmax_rows<S: Scalar>(x: &mut [S], cols: usize) {
    let parallel = x.len() >= PAR_WORK_THRESHOLD / 16;
    for_each_row(x, cols, parallel, |_, row| {
        let mut mx = row[0];
        for v in row.iter().skip(1) {
            mx = mx.maximum(*v);
        }
        let mut sum = S::ZERO;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            sum += *v;
        }
        let inv = S::ONE / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    });
}

/// Backward of row softmax: dx = p * (dy - sum(dy * p)).
pub fn softmax_backward_rows<S: Scalar>(dy: &mut [S], p: &[S], cols: usize) {
    assert_eq!(dy.len(), p.len());
    let parallel = dy.len() >= PAR_WORK_THRESHOLD / 16;
    for_each_row(dy, cols, parallel, |i, dyr| {
        let pr = &p[i * cols..(i + 1) * cols];
        let mut s = S::ZERO;
        for j in 0..cols {
            s = dyr[j].mul_add(pr[j], s);
        }
        for j in 0..cols {
            dyr[j] = pr[j] * (dyr[j] - s);
        }
    });
}

/// Sentinel target id meaning "position not scored".
pub const IGNORE: u32 = u32::MAX;

/// Mean cross entropy over scored rows, plus dlogits.
/// Loss accumulates in f64 regardless of S.
pub fn cross_entropy<S: Scalar>(logits: &Tensor<S>, targets: &[u32]) -> Result<(f64, Tensor<S>)> {
    let count = targets.iter().filter(|&&t| t != IGNORE).count();
    cross_entropy_scaled(logits, targets, count)
}

/// Cross entropy normalized by an external `total` count, so the loss and
/// gradient of a batch can be accumulated over length-sorted sub-batches:
/// summing the results over sub-batches whose scored rows partition the
/// batch reproduces the batch-mean loss and its gradient exactly.
pub fn cross_entropy_scaled<S: Scalar>(
    logits: &Tensor<S>,
    targets: &[u32],
    total: usize,
) -> Result<(f64, Tensor<S>)> {
    let v = logits.cols();
    let rows = logits.data.len() / v;
    check_dims(
        "cross_entropy",
        targets.len() == rows,
        "targets/rows".into(),
    )?;
    let count = total;
    check_dims("cross_entropy", count > 0, "no scored positions".into())?;
    let mut dlogits = Tensor::zeros(&logits.shape);
    let inv_count = S::from_f64(1.0 / count as f64);
    {
        // parallel pass: drow = softmax(logit row) / count for scored rows
        let ld = &logits.data;
        let parallel = dlogits.data.len() >= PAR_WORK_THRESHOLD / 16;
        for_each_row(&mut dlogits.data, v, parallel, |i, drow| {
            if targets[i] == IGNORE {
                return;
            }
            let row = &ld[i * v..(i + 1) * v];
            let mut mx = row[0];
            for x in row.iter().skip(1) {
                mx = mx.maximum(*x);
            }
            let mut sum = S::ZERO;
            for (j, x) in row.iter().enumerate() {
                let e = (*x - mx).exp();
                drow[j] = e;
                sum += e;
            }
            let scale = inv_count / sum;
            for d in drow.iter_mut() {
                *d *= scale;
            }
        });
    }
    // serial pass: read p_t back out, accumulate loss, subtract the one-hot
    let mut total = 0.0f64;
    for (i, &t) in targets.iter().enumerate() {
        if t == IGNORE {
            continue;
        }
        let cell = &mut dlogits.data[i * v + t as usize];
        let p_t = (*cell * S::from_f64(count as f64)).to_f64();
        total += -(p_t.max(1e-300).ln());
        *cell -= inv_count;
    }
    Ok((total / count as f64, dlogits))
}

/// Negative log-likelihood of each scored row's target (for perplexity).
pub fn nll_at_targets<S: Scalar>(logits: &Tensor<S>, targets: &[u32]) -> Vec<f64> {
    let v = logits.cols();
    let rows = logits.data.len() / v;
    assert_eq!(targets.len(), rows);
    let one_row = |i: usize| -> f64 {
        let row = logits.row(i);
        let mut mx = row[0];
        for x in row.iter().skip(1) {
            mx = mx.maximum(*x);
        }
        let mut sum = 0.0f64;
        for x in row {
            sum += (*x - mx).to_f64().exp();
        }
        -((row[targets[i] as usize] - mx).to_f64() - sum.ln())
    };
    let scored: Vec<usize> = (0..rows).filter(|&i| targets[i] != IGNORE).collect();
    if single_thread() || scored.len() * v < PAR_WORK_THRESHOLD / 8 {
        scored.iter().map(|&i| one_row(i)).collect()
    } else {
        scored.par_iter().map(|&i| one_row(i)).collect()
    }
}
