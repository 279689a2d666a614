//! Singular value decomposition by one-sided Jacobi rotations.
//!
//! Accuracy beats speed here: inputs are at most a few hundred entries wide
//! (the coefficient matrices of the low-rank sampler are `(r+1) x (r+1)` with
//! small `r`), and one-sided Jacobi computes small singular values to high
//! relative accuracy without any bidiagonalization bookkeeping.

use super::{dot, Mat};
use crate::{Error, Result};

/// Sweep cap. Jacobi converges in well under 20 sweeps for the sizes this
/// module handles; hitting the cap signals a numerically pathological input.
const MAX_SWEEPS: usize = 100;
/// Relative off-diagonal convergence threshold.
const CONV_EPS: f64 = 1e-12;

/// Result of [`svd`]: `u * diag(d) * v^T` reconstructs the input.
///
/// `u` is `m x m` orthogonal, `v` is `n x n` orthogonal and `d` holds the
/// `min(m, n)` singular values, non-negative and non-increasing.
#[derive(Clone, Debug)]
pub struct SvdResult {
    pub u: Mat,
    pub d: Vec<f64>,
    pub v: Mat,
}

impl SvdResult {
    /// `u * diag(d) * v^T`.
    pub fn reconstruct(&self) -> Mat {
        let m = self.u.rows();
        let n = self.v.rows();
        let mut scaled = Mat::zeros(m, n);
        for (k, &dk) in self.d.iter().enumerate() {
            for i in 0..m {
                scaled.set(i, k, self.u.at(i, k) * dk);
            }
        }
        scaled.matmul(&self.v.transpose())
    }
}

/// Deterministic SVD of an arbitrary rectangular matrix.
pub fn svd(c: &Mat) -> Result<SvdResult> {
    if c.rows() == 0 || c.cols() == 0 {
        return Err(Error::EmptyInput);
    }
    if c.rows() < c.cols() {
        // One-sided Jacobi wants at least as many rows as columns.
        let r = svd(&c.transpose())?;
        return Ok(SvdResult { u: r.v, d: r.d, v: r.u });
    }

    let m = c.rows();
    let n = c.cols();
    let norm_c = c.frob_norm();

    // Work on columns of a copy; accumulate right rotations into V.
    let mut a = c.clone();
    let mut v = Mat::identity(n);

    // Columns this small are numerically zero: their inner products with
    // anything are rounding noise, so rotating them can only cycle.
    let zero_floor = norm_c * 1e-14;

    let mut converged = false;
    let mut sweeps = 0;
    while !converged && sweeps < MAX_SWEEPS {
        converged = true;
        sweeps += 1;
        for j in 0..n.saturating_sub(1) {
            for l in j + 1..n {
                let (alpha, beta, gamma) = column_moments(&a, j, l);
                let nj = alpha.sqrt();
                let nl = beta.sqrt();
                if nj <= zero_floor || nl <= zero_floor || gamma.abs() <= CONV_EPS * nj * nl {
                    continue;
                }
                converged = false;
                // Jacobi rotation zeroing the (j, l) column inner product.
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                rotate_cols(&mut a, j, l, cs, sn);
                rotate_cols(&mut v, j, l, cs, sn);
            }
        }
    }
    if !converged {
        return Err(Error::SvdNoConvergence { sweeps });
    }

    // Singular values are the column norms; sort them non-increasing.
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n).map(|j| norm_col(&a, j)).collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).unwrap());

    let mut d = Vec::with_capacity(n);
    let mut u = Mat::zeros(m, m);
    let mut v_sorted = Mat::zeros(n, n);
    let zero_tol = norm_c * 1e-13;
    let mut filled = 0usize;
    for (dst, &src) in order.iter().enumerate() {
        let nrm = norms[src];
        d.push(nrm);
        for i in 0..n {
            v_sorted.set(i, dst, v.at(i, src));
        }
        if nrm > zero_tol {
            for i in 0..m {
                u.set(i, dst, a.at(i, src) / nrm);
            }
            filled = dst + 1;
        }
    }
    complete_orthogonal(&mut u, filled);

    Ok(SvdResult { u, d, v: v_sorted })
}

fn column_moments(a: &Mat, j: usize, l: usize) -> (f64, f64, f64) {
    let mut alpha = 0.0;
    let mut beta = 0.0;
    let mut gamma = 0.0;
    for i in 0..a.rows() {
        let x = a.at(i, j);
        let y = a.at(i, l);
        alpha += x * x;
        beta += y * y;
        gamma += x * y;
    }
    (alpha, beta, gamma)
}

fn rotate_cols(a: &mut Mat, j: usize, l: usize, cs: f64, sn: f64) {
    for i in 0..a.rows() {
        let x = a.at(i, j);
        let y = a.at(i, l);
        a.set(i, j, cs * x - sn * y);
        a.set(i, l, sn * x + cs * y);
    }
}

fn norm_col(a: &Mat, j: usize) -> f64 {
    (0..a.rows()).map(|i| a.at(i, j) * a.at(i, j)).sum::<f64>().sqrt()
}

/// Fill columns `filled..` of `u` with an orthonormal completion of the
/// (already orthonormal) leading columns, sweeping the standard basis.
fn complete_orthogonal(u: &mut Mat, filled: usize) {
    let m = u.rows();
    let mut have = filled;
    let mut cand = 0usize;
    while have < m {
        assert!(cand < m, "basis completion ran out of candidates");
        let mut w: Vec<f64> = vec![0.0; m];
        w[cand] = 1.0;
        cand += 1;
        let project = |w: &mut Vec<f64>, have: usize, u: &Mat| {
            for k in 0..have {
                let col: Vec<f64> = (0..m).map(|i| u.at(i, k)).collect();
                let proj = dot(w, &col);
                for i in 0..m {
                    w[i] -= proj * col[i];
                }
            }
        };
        project(&mut w, have, u);
        project(&mut w, have, u);
        let nrm = dot(&w, &w).sqrt();
        // A candidate this close to the span adds nothing; any direction
        // missed by the full sweep would have norm at most sqrt(m) * 1e-6.
        if nrm <= 1e-6 {
            continue;
        }
        for x in &mut w {
            *x /= nrm;
        }
        // Re-orthogonalize once more after normalization so small residuals
        // do not amplify rounding.
        project(&mut w, have, u);
        let nrm = dot(&w, &w).sqrt();
        for i in 0..m {
            u.set(i, have, w[i] / nrm);
        }
        have += 1;
    }
}
