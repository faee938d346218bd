//! One-sided (Hestenes) Jacobi SVD. It is the only decomposition in the
//! crate: PCA uses it on a covariance matrix, ITQ uses it for the orthogonal
//! Procrustes step and for drawing a random rotation.

use crate::error::{Error, Result};
use crate::numerics::Mat;

const MAX_SWEEPS: usize = 60;
const ORTH_TOL: f64 = 1e-15;
const BLOCK: usize = 32;

/// `a = u * diag(s) * vᵀ` with singular values sorted in descending order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Mat,
    pub s: Vec<f64>,
    pub v: Mat,
}

/// Thin SVD of a matrix with `rows >= cols`. `u` is `rows x cols` with
/// orthonormal columns (completed to an orthonormal set where singular values
/// vanish), `v` is `cols x cols` orthogonal.
pub fn svd(a: &Mat) -> Result<Svd> {
    let (rows, n) = a.shape();
    if rows < n {
        return Err(Error::shape("svd (needs rows >= cols)", a.shape(), (n, n)));
    }
    // Work on columns as contiguous rows.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.col(j)).collect();
    let mut vt: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let norms = orthogonalize(&mut cols, Some(&mut vt))?;
    let (order, s, u) = left_vectors(&cols, &norms);
    let mut v = Mat::zeros(n, n);
    for (k, &j) in order.iter().enumerate() {
        for r in 0..n {
            v.set(r, k, vt[j][r]);
        }
    }
    Ok(Svd { u, s, v })
}

/// Sorts the orthogonalized columns by norm and normalizes them, completing
/// the basis where a column has (numerically) vanished.
fn left_vectors(cols: &[Vec<f64>], norms: &[f64]) -> (Vec<usize>, Vec<f64>, Mat) {
    let n = cols.len();
    let rows = cols.first().map_or(0, Vec::len);
    let sing: Vec<f64> = norms.iter().map(|v| v.sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sing[j].total_cmp(&sing[i]).then(i.cmp(&j)));

    let smax = sing.iter().cloned().fold(0.0, f64::max);
    let floor = smax * (rows as f64) * f64::EPSILON;
    let s: Vec<f64> = order.iter().map(|&j| sing[j]).collect();
    let mut basis: Vec<Vec<f64>> = order
        .iter()
        .take_while(|&&j| sing[j] > floor)
        .map(|&j| cols[j].iter().map(|x| x / sing[j]).collect())
        .collect();
    complete_basis(&mut basis, rows, n);
    let mut u = Mat::zeros(rows, n);
    for (k, col) in basis.iter().enumerate() {
        for r in 0..rows {
            u.set(r, k, col[r]);
        }
    }
    (order, s, u)
}

/// Rotates column pairs until every pair is orthogonal to `ORTH_TOL`
/// relative precision, applying the same rotations to `vt` when given.
/// Returns the squared column norms.
fn orthogonalize(cols: &mut [Vec<f64>], mut vt: Option<&mut Vec<Vec<f64>>>) -> Result<Vec<f64>> {
    let n = cols.len();
    let mut norms: Vec<f64> = cols.iter().map(|c| dot(c, c)).collect();
    if n < 2 {
        return Ok(norms);
    }
    let tol = ORTH_TOL;
    let rows = cols[0].len();
    // columns at or below this squared norm count as zero; they are
    // replaced by basis completion afterwards anyway
    let negligible = |norms: &[f64]| {
        let smax = norms.iter().cloned().fold(0.0, f64::max).sqrt();
        let f = smax * rows as f64 * f64::EPSILON;
        f * f
    };
    let mut tiny = negligible(&norms);
    for sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        // block-cyclic ordering keeps the active columns in cache
        for bp in (0..n).step_by(BLOCK) {
            for bq in (bp..n).step_by(BLOCK) {
                for p in bp..(bp + BLOCK).min(n) {
                    let q0 = if bq == bp { p + 1 } else { bq };
                    for q in q0..(bq + BLOCK).min(n) {
                        let alpha = norms[p];
                        let beta = norms[q];
                        if alpha <= tiny || beta <= tiny {
                            continue;
                        }
                        let gamma = dot(&cols[p], &cols[q]);
                        if gamma.abs() <= tol * (alpha * beta).sqrt() {
                            continue;
                        }
                        rotated = true;
                        let zeta = (beta - alpha) / (2.0 * gamma);
                        let t = if zeta == 0.0 {
                            1.0
                        } else {
                            zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                        };
                        let c = 1.0 / (1.0 + t * t).sqrt();
                        let s = c * t;
                        let (lo, hi) = cols.split_at_mut(q);
                        rotate(&mut lo[p], &mut hi[0], c, s);
                        if let Some(vt) = vt.as_deref_mut() {
                            let (lo, hi) = vt.split_at_mut(q);
                            rotate(&mut lo[p], &mut hi[0], c, s);
                        }
                        norms[p] = (alpha - t * gamma).max(0.0);
                        norms[q] = beta + t * gamma;
                    }
                }
            }
        }
        // refresh to keep the running updates from drifting
        for (nrm, c) in norms.iter_mut().zip(cols.iter()) {
            *nrm = dot(c, c);
        }
        tiny = negligible(&norms);
        if !rotated {
            log::debug!("Jacobi converged after {} sweeps (n = {n})", sweep + 1);
            return Ok(norms);
        }
    }
    Err(Error::Numeric(format!(
        "Jacobi SVD did not converge in {MAX_SWEEPS} sweeps"
    )))
}

/// Eigen-decomposition of a symmetric positive semidefinite matrix.
/// Returns eigenvalues in descending order and eigenvectors as the columns of
/// the returned matrix, each signed so its largest-magnitude entry is positive.
pub fn psd_eigen(a: &Mat) -> Result<(Vec<f64>, Mat)> {
    let (r, c) = a.shape();
    if r != c {
        return Err(Error::shape("psd_eigen (needs a square matrix)", a.shape(), (c, c)));
    }
    // For a symmetric PSD matrix the left singular vectors are eigenvectors,
    // so the right-hand rotations need not be accumulated.
    let mut cols: Vec<Vec<f64>> = (0..c).map(|j| a.col(j)).collect();
    let norms = orthogonalize(&mut cols, None)?;
    let (_, s, mut v) = left_vectors(&cols, &norms);
    for k in 0..c {
        let mut best = 0;
        for i in 1..r {
            if v.get(i, k).abs() > v.get(best, k).abs() {
                best = i;
            }
        }
        if v.get(best, k) < 0.0 {
            for i in 0..r {
                v.set(i, k, -v.get(i, k));
            }
        }
    }
    Ok((s, v))
}

/// Extends the orthonormal set `basis` to `target` vectors in `dim`
/// dimensions. Each new vector is the standard basis vector with the largest
/// component outside the current span (lowest index on ties), orthonormalized
/// by two Gram-Schmidt passes.
fn complete_basis(basis: &mut Vec<Vec<f64>>, dim: usize, target: usize) {
    if basis.len() >= target {
        return;
    }
    // squared distance of each e_i from the span
    let mut residual = vec![1.0; dim];
    for b in basis.iter() {
        for (r, x) in residual.iter_mut().zip(b) {
            *r -= x * x;
        }
    }
    while basis.len() < target {
        let mut pick = 0;
        for i in 1..dim {
            if residual[i] > residual[pick] {
                pick = i;
            }
        }
        let mut cand = vec![0.0; dim];
        cand[pick] = 1.0;
        for _ in 0..2 {
            for b in basis.iter() {
                let proj = dot(&cand, b);
                for (x, y) in cand.iter_mut().zip(b) {
                    *x -= proj * y;
                }
            }
        }
        let norm = dot(&cand, &cand).sqrt();
        for x in &mut cand {
            *x /= norm;
        }
        for (r, x) in residual.iter_mut().zip(&cand) {
            *r -= x * x;
        }
        basis.push(cand);
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    acc.iter().sum::<f64>() + tail
}

#[inline]
fn rotate(p: &mut [f64], q: &mut [f64], c: f64, s: f64) {
    for (x, y) in p.iter_mut().zip(q.iter_mut()) {
        let a = *x;
        let b = *y;
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{matmul, matmul_nt, matmul_tn};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reconstruct(d: &Svd) -> Mat {
        let mut us = d.u.clone();
        for r in 0..us.rows() {
            for (k, s) in d.s.iter().enumerate() {
                us.set(r, k, us.get(r, k) * s);
            }
        }
        matmul_nt(&us, &d.v).unwrap()
    }

    #[test]
    fn svd_reconstructs_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(r, c) in &[(1, 1), (3, 3), (7, 4), (12, 12)] {
            let a = Mat::from_fn(r, c, |_, _| rng.random_range(-2.0..2.0));
            let d = svd(&a).unwrap();
            assert!(reconstruct(&d).max_abs_diff(&a) < 1e-12);
            assert!(matmul_tn(&d.v, &d.v).unwrap().max_abs_diff(&Mat::identity(c)) < 1e-12);
            assert!(matmul_tn(&d.u, &d.u).unwrap().max_abs_diff(&Mat::identity(c)) < 1e-12);
            assert!(d.s.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn svd_completes_u_for_rank_deficient_input() {
        let a = Mat::from_rows(&[[1.0, 2.0, 0.0], [2.0, 4.0, 0.0], [0.0, 0.0, 0.0]]);
        let d = svd(&a).unwrap();
        assert!(d.s[1].abs() < 1e-12 && d.s[2].abs() < 1e-12);
        assert!(matmul_tn(&d.u, &d.u).unwrap().max_abs_diff(&Mat::identity(3)) < 1e-12);
        assert!(reconstruct(&d).max_abs_diff(&a) < 1e-12);
    }

    #[test]
    fn psd_eigen_of_axis_aligned_covariance() {
        let a = Mat::from_rows(&[[1.0, 0.0], [0.0, 4.0]]);
        let (vals, vecs) = psd_eigen(&a).unwrap();
        assert_eq!(vals, vec![4.0, 1.0]);
        assert_eq!(vecs.col(0), vec![0.0, 1.0]);
        assert_eq!(vecs.col(1), vec![1.0, 0.0]);
    }

    #[test]
    fn psd_eigen_pairs_satisfy_av_equals_lambda_v() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = Mat::from_fn(6, 10, |_, _| rng.random_range(-1.0..1.0));
        let a = matmul_nt(&g, &g).unwrap();
        let (vals, vecs) = psd_eigen(&a).unwrap();
        let av = matmul(&a, &vecs).unwrap();
        for k in 0..6 {
            for i in 0..6 {
                assert!((av.get(i, k) - vals[k] * vecs.get(i, k)).abs() < 1e-11);
            }
        }
    }
}
