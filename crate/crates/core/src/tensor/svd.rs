//! Thin SVD by one-sided (Hestenes) Jacobi rotations.
//!
//! Rotations run over the rows of the wide orientation of the input in a fixed
//! cyclic order, so results are bit-for-bit reproducible. After sorting, each
//! left singular vector is flipped so that its largest-magnitude entry (lowest
//! row on ties) is non-negative.

use alloc::vec::Vec;

use super::Matrix;
use crate::{Error, Result};

const MAX_SWEEPS: usize = 80;
const ORTHO_TOL: f64 = 1e-15;

/// `m ≈ u · diag(s) · vt` with `k = min(rows, cols)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    /// rows × k, orthonormal columns.
    pub u: Matrix,
    /// Non-increasing, non-negative.
    pub s: Vec<f64>,
    /// k × cols, orthonormal rows.
    pub vt: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (v, &s) in us.row_mut(i).iter_mut().zip(&self.s) {
                *v *= s;
            }
        }
        us.matmul(&self.vt).expect("consistent svd factors")
    }
}

pub fn svd(m: &Matrix) -> Result<SvdResult> {
    if !m.is_finite() {
        return Err(Error::NonFinite);
    }
    let mut out = if m.rows() <= m.cols() {
        wide_svd(m)
    } else {
        // mᵀ = u' s vt'  =>  m = vt'ᵀ s u'ᵀ
        let t = wide_svd(&m.transpose());
        SvdResult {
            u: t.vt.transpose(),
            s: t.s,
            vt: t.u.transpose(),
        }
    };
    fix_signs(&mut out);
    Ok(out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rotate(a: &mut [f64], b: &mut [f64], c: f64, s: f64) {
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let (xa, yb) = (*x, *y);
        *x = c * xa - s * yb;
        *y = s * xa + c * yb;
    }
}

fn two_rows(m: &mut Matrix, p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(p < q);
    let cols = m.cols();
    let (head, tail) = m.data_mut().split_at_mut(q * cols);
    (&mut head[p * cols..][..cols], &mut tail[..cols])
}

/// SVD for `rows <= cols`. Orthogonalises the rows of `a`; the accumulated
/// rotation `q` satisfies `q · a = b` with mutually orthogonal rows of `b`.
fn wide_svd(a: &Matrix) -> SvdResult {
    let k = a.rows();
    let n = a.cols();
    let mut b = a.clone();
    let mut q = Matrix::identity(k);

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..k {
            for r in p + 1..k {
                let alpha = dot(b.row(p), b.row(p));
                let beta = dot(b.row(r), b.row(r));
                let gamma = dot(b.row(p), b.row(r));
                if gamma == 0.0 || libm::fabs(gamma) <= ORTHO_TOL * libm::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = libm::copysign(1.0, zeta) / (libm::fabs(zeta) + libm::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                let (bp, br) = two_rows(&mut b, p, r);
                rotate(bp, br, c, s);
                let (qp, qr) = two_rows(&mut q, p, r);
                rotate(qp, qr, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = (0..k).map(|i| libm::sqrt(dot(b.row(i), b.row(i)))).collect();
    let mut order: Vec<usize> = (0..k).collect();
    // stable: equal values keep their index order
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).expect("finite norms"));

    let smax = norms.iter().cloned().fold(0.0, f64::max);
    let zero_cut = smax * f64::EPSILON * (n as f64);

    let mut s = Vec::with_capacity(k);
    let mut u = Matrix::zeros(k, k);
    let mut vt = Matrix::zeros(k, n);
    let mut missing = Vec::new();
    for (slot, &src) in order.iter().enumerate() {
        let sigma = norms[src];
        for i in 0..k {
            u.set(i, slot, q.get(src, i));
        }
        if sigma > zero_cut && sigma > 0.0 {
            for (d, &x) in vt.row_mut(slot).iter_mut().zip(b.row(src)) {
                *d = x / sigma;
            }
            s.push(sigma);
        } else {
            s.push(0.0);
            missing.push(slot);
        }
    }
    complete_rows(&mut vt, &missing);
    SvdResult { u, s, vt }
}

/// Fills the listed rows of `m` with unit vectors orthogonal to every other row.
pub(crate) fn complete_rows(m: &mut Matrix, missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let n = m.cols();
    let mut filled: Vec<usize> = (0..m.rows()).filter(|r| !missing.contains(r)).collect();
    let mut candidate = 0usize;
    for &slot in missing {
        loop {
            assert!(candidate < n, "orthonormal completion ran out of basis vectors");
            let mut v = alloc::vec![0.0; n];
            v[candidate] = 1.0;
            candidate += 1;
            // two passes of Gram–Schmidt
            for _ in 0..2 {
                for &r in &filled {
                    let proj = dot(&v, m.row(r));
                    for (x, &y) in v.iter_mut().zip(m.row(r)) {
                        *x -= proj * y;
                    }
                }
            }
            let norm = libm::sqrt(dot(&v, &v));
            if norm > 1e-6 {
                for (d, x) in m.row_mut(slot).iter_mut().zip(&v) {
                    *d = x / norm;
                }
                filled.push(slot);
                break;
            }
        }
    }
}

fn fix_signs(r: &mut SvdResult) {
    let k = r.s.len();
    for j in 0..k {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for i in 0..r.u.rows() {
            let a = libm::fabs(r.u.get(i, j));
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if r.u.get(best, j) < 0.0 {
            for i in 0..r.u.rows() {
                let v = r.u.get(i, j);
                r.u.set(i, j, -v);
            }
            for v in r.vt.row_mut(j) {
                *v = -*v;
            }
        }
    }
}
