//! Thin SVD via one-sided (Hestenes) Jacobi rotations.
//!
//! Works in f64 internally regardless of the caller's element type; the
//! matrices here are small (a few hundred columns at most), where Jacobi is
//! simple and robust. Returns U (r x p), S (p), Vt (p x c) with p = min(r, c),
//! singular values non-negative and descending.

use super::Tensor;
use crate::{Error, Result};

const MAX_SWEEPS: usize = 60;
const CONV_TOL: f64 = 1e-13;

/// Thin SVD of an f32 tensor (internally f64).
pub fn svd(m: &Tensor<f32>) -> Result<(Tensor<f32>, Vec<f32>, Tensor<f32>)> {
    let (r, c) = (m.rows(), m.cols());
    let a: Vec<f64> = m.data.iter().map(|&x| x as f64).collect();
    let (u, s, vt) = svd_f64(&a, r, c)?;
    let p = s.len();
    Ok((
        Tensor::from_vec(&[r, p], u.iter().map(|&x| x as f32).collect()),
        s.iter().map(|&x| x as f32).collect(),
        Tensor::from_vec(&[p, c], vt.iter().map(|&x| x as f32).collect()),
    ))
}

/// Thin SVD of a row-major r x c matrix.
pub fn svd_f64(a: &[f64], r: usize, c: usize) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    assert_eq!(a.len(), r * c);
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Data("svd: non-finite input".into()));
    }
    if r >= c {
        svd_tall(a, r, c)
    } else {
        // A = (A^T)^T: svd_tall(A^T) = U2 S V2t with A^T (c x r)
        let mut at = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                at[j * r + i] = a[i * c + j];
            }
        }
        let (u2, s, v2t) = svd_tall(&at, c, r)?;
        // A = V2 S U2^T; U = V2 (r x r), Vt = U2^T (r x c)
        let p = s.len();
        let mut u = vec![0.0; r * p];
        for i in 0..r {
            for j in 0..p {
                u[i * p + j] = v2t[j * r + i];
            }
        }
        let mut vt = vec![0.0; p * c];
        for i in 0..p {
            for j in 0..c {
                vt[i * c + j] = u2[j * p + i];
            }
        }
        Ok((u, s, vt))
    }
}

/// One-sided Jacobi on a tall matrix (r >= c): orthogonalize columns.
fn svd_tall(a: &[f64], r: usize, c: usize) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    // column-major working copy for cache-friendly column rotations
    let mut w = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            w[j * r + i] = a[i * c + j];
        }
    }
    let mut v = vec![0.0; c * c]; // column-major accumulated rotations
    for j in 0..c {
        v[j * c + j] = 1.0;
    }

    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..c {
            for q in (p + 1)..c {
                let (wp, wq) = split_cols(&mut w, r, p, q);
                let app = dot64(wp, wp);
                let aqq = dot64(wq, wq);
                let apq = dot64(wp, wq);
                if apq.abs() <= CONV_TOL * (app * aqq).sqrt() || apq == 0.0 {
                    continue;
                }
                rotated = true;
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                rotate(wp, wq, cs, sn);
                let (vp, vq) = split_cols(&mut v, c, p, q);
                rotate(vp, vq, cs, sn);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence(format!(
            "jacobi svd: {MAX_SWEEPS} sweeps exhausted"
        )));
    }

    // singular values = column norms; sort descending
    let mut order: Vec<usize> = (0..c).collect();
    let norms: Vec<f64> = (0..c)
        .map(|j| dot64(col(&w, r, j), col(&w, r, j)).sqrt())
        .collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).unwrap());

    let mut s = vec![0.0; c];
    let mut u = vec![0.0; r * c]; // row-major r x c
    let mut vt = vec![0.0; c * c]; // row-major c x c
    let smax = norms[order[0]].max(f64::MIN_POSITIVE);
    let mut null_cols = Vec::new();
    for (rank, &j) in order.iter().enumerate() {
        s[rank] = norms[j];
        if norms[j] > smax * 1e-300 && norms[j] > 0.0 {
            let inv = 1.0 / norms[j];
            for i in 0..r {
                u[i * c + rank] = w[j * r + i] * inv;
            }
        } else {
            null_cols.push(rank);
        }
        for i in 0..c {
            vt[rank * c + i] = v[j * c + i];
        }
    }
    // complete U's null columns to an orthonormal basis
    for rank in null_cols {
        complete_column(&mut u, r, c, rank);
    }
    Ok((u, s, vt))
}

fn col(w: &[f64], r: usize, j: usize) -> &[f64] {
    &w[j * r..(j + 1) * r]
}

fn split_cols(w: &mut [f64], r: usize, p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(p < q);
    let (head, tail) = w.split_at_mut(q * r);
    (&mut head[p * r..(p + 1) * r], &mut tail[..r])
}

fn dot64(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

fn rotate(wp: &mut [f64], wq: &mut [f64], cs: f64, sn: f64) {
    for (x, y) in wp.iter_mut().zip(wq.iter_mut()) {
        let xp = cs * *x - sn * *y;
        let yq = sn * *x + cs * *y;
        *x = xp;
        *y = yq;
    }
}

/// Fill U column `rank` with a unit vector orthogonal to all other columns.
fn complete_column(u: &mut [f64], r: usize, c: usize, rank: usize) {
    for trial in 0..r {
        let mut cand = vec![0.0; r];
        cand[trial] = 1.0;
        for j in 0..c {
            if j == rank {
                continue;
            }
            let mut proj = 0.0;
            for i in 0..r {
                proj += cand[i] * u[i * c + j];
            }
            for i in 0..r {
                cand[i] -= proj * u[i * c + j];
            }
        }
        let norm = dot64(&cand, &cand).sqrt();
        if norm > 1e-6 {
            for i in 0..r {
                u[i * c + rank] = cand[i] / norm;
            }
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn reconstruct(u: &[f64], s: &[f64], vt: &[f64], r: usize, c: usize) -> Vec<f64> {
        let p = s.len();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                let mut acc = 0.0;
                for k in 0..p {
                    acc += u[i * p + k] * s[k] * vt[k * c + j];
                }
                out[i * c + j] = acc;
            }
        }
        out
    }

    fn rel_fro_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        let den: f64 = a.iter().map(|x| x * x).sum::<f64>();
        (num / den.max(1e-30)).sqrt()
    }

    #[test]
    fn identity_singular_values() {
        let m = Tensor::from_vec(&[3, 3], vec![1.0f32, 0., 0., 0., 1., 0., 0., 0., 1.]);
        let (_, s, _) = svd(&m).unwrap();
        for v in s {
            assert!((v - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn diagonal_descending() {
        let m = Tensor::from_vec(&[3, 3], vec![1.0f32, 0., 0., 0., 3., 0., 0., 0., 2.]);
        let (_, s, _) = svd(&m).unwrap();
        assert!((s[0] - 3.0).abs() < 1e-5);
        assert!((s[1] - 2.0).abs() < 1e-5);
        assert!((s[2] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn random_reconstruction_tall_and_wide() {
        let mut rng = Rng::new(9);
        for &(r, c) in &[(20usize, 10usize), (7, 12), (5, 5)] {
            let a: Vec<f64> = (0..r * c).map(|_| rng.normal()).collect();
            let (u, s, vt) = svd_f64(&a, r, c).unwrap();
            let p = r.min(c);
            assert_eq!(s.len(), p);
            // descending, non-negative
            for k in 1..p {
                assert!(s[k] <= s[k - 1] + 1e-12);
                assert!(s[k] >= 0.0);
            }
            let back = reconstruct(&u, &s, &vt, r, c);
            assert!(rel_fro_err(&a, &back) < 1e-10, "({r},{c})");
            // orthonormal columns of U and rows of Vt
            for j1 in 0..p {
                for j2 in j1..p {
                    let mut du = 0.0;
                    for i in 0..r {
                        du += u[i * p + j1] * u[i * p + j2];
                    }
                    let expect = if j1 == j2 { 1.0 } else { 0.0 };
                    assert!((du - expect).abs() < 1e-10);
                    let dv = dot64(&vt[j1 * c..(j1 + 1) * c], &vt[j2 * c..(j2 + 1) * c]);
                    assert!((dv - expect).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn rank_deficient_completes_basis() {
        // two identical columns -> one zero singular value
        let a = vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0];
        let (u, s, _vt) = svd_f64(&a, 3, 2).unwrap();
        assert!(s[1].abs() < 1e-10);
        let mut n0 = 0.0;
        let mut n1 = 0.0;
        let mut cross = 0.0;
        for i in 0..3 {
            n0 += u[i * 2] * u[i * 2];
            n1 += u[i * 2 + 1] * u[i * 2 + 1];
            cross += u[i * 2] * u[i * 2 + 1];
        }
        assert!((n0 - 1.0).abs() < 1e-9);
        assert!((n1 - 1.0).abs() < 1e-9);
        assert!(cross.abs() < 1e-9);
    }

    #[test]
    fn non_finite_input_errors() {
        let a = vec![1.0, f64::NAN, 0.0, 1.0];
        assert!(svd_f64(&a, 2, 2).is_err());
    }
}
