//! Minimum-variance unbiased low-rank approximation of matrices, its biased
//! (truncation) counterpart, and the idempotent-diagonal construction the
//! sampler is built on.
//!
//! The sampler splits a non-increasing diagonal at the smallest index `m`
//! where `(r - m + 1) * d_m` no longer exceeds the remaining mass: entries
//! before the split are kept deterministically, the rest are compressed into
//! `k = r - m + 1` sign-randomized columns whose expected outer product is
//! exactly the discarded diagonal. The achieved variance is `s1^2/k - s2`
//! (`s1`, `s2` the suffix sum and suffix square sum), which is also the lower
//! bound for any unbiased rank-`r` approximator.

use crate::rng::SignSource;
use crate::smalllin::{complete_onb, norm, svd, Mat};
use crate::{Error, Result};

/// Where a non-increasing diagonal splits into deterministically kept entries
/// and sign-randomized ones, plus the variance this split achieves.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagSplit {
    /// 1-based index of the first mixed entry.
    pub m: usize,
    /// Number of random columns: `r - m + 1`.
    pub k: usize,
    /// Suffix sum of the mixed entries.
    pub s1: f64,
    /// Suffix sum of squares of the mixed entries.
    pub s2: f64,
    /// `s1^2 / k - s2`, the exact variance of the optimal sampler.
    pub variance_bound: f64,
}

/// A sampled factor pair whose product `l * r_mat^T` is an unbiased rank-`r`
/// approximation of the target matrix.
#[derive(Clone, Debug)]
pub struct LowRankSample {
    pub l: Mat,
    pub r_mat: Mat,
    /// The +-1 draws consumed, in order (empty for deterministic outputs).
    pub sign_draw: Vec<f64>,
}

impl LowRankSample {
    pub fn product(&self) -> Mat {
        self.l.matmul(&self.r_mat.transpose())
    }
}

fn validate_diag(d: &[f64], r: usize) -> Result<()> {
    if d.is_empty() {
        return Err(Error::EmptyInput);
    }
    if r == 0 {
        return Err(Error::RankOutOfRange { rank: r, why: "rank must be at least 1".into() });
    }
    if d.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("diagonal".into()));
    }
    if d.iter().any(|&x| x < 0.0) {
        return Err(Error::BadDiagonal(format!("negative entry in {d:?}")));
    }
    if d.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::BadDiagonal(format!("not non-increasing: {d:?}")));
    }
    if d.len() < r + 1 {
        return Err(Error::RankOutOfRange {
            rank: r,
            why: format!("need at least r + 1 = {} entries, got {}", r + 1, d.len()),
        });
    }
    Ok(())
}

/// Split a non-increasing, non-negative diagonal for rank-`r` approximation:
/// `m` is the minimum index with `(r - i + 1) * d_i <= sum_{j=i..n} d_j`,
/// the suffix running over all remaining entries.
pub fn split_index(d: &[f64], r: usize) -> Result<DiagSplit> {
    validate_diag(d, r)?;
    let n = d.len();
    let mut suffix = vec![0.0; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] + d[i];
    }
    // i = r always qualifies (d_r <= its own suffix), so the scan terminates.
    let mut m = r;
    for i in 1..=r {
        if (r - i + 1) as f64 * d[i - 1] <= suffix[i - 1] {
            m = i;
            break;
        }
    }
    let k = r - m + 1;
    let s1 = suffix[m - 1];
    let s2: f64 = d[m - 1..].iter().map(|x| x * x).sum();
    // Non-negative analytically; clamp float slack.
    let variance_bound = (s1 * s1 / k as f64 - s2).max(0.0);
    Ok(DiagSplit { m, k, s1, s2, variance_bound })
}

/// Sample the optimal unbiased rank-`r` approximator of `diag(d)`.
///
/// Returns block-diagonal `L = R` with `sqrt(d_i)` on the kept block and the
/// sign-randomized columns `sqrt(s1/k) * (s ⊙ z_i)` on the mixed block,
/// where the `z_i` complete an orthonormal family whose summed outer product
/// has diagonal `d_i k / s1`. Over the sign distribution,
/// `E[L R^T] = diag(d)` and `E‖L R^T - diag(d)‖^2 = variance_bound` exactly.
pub fn sample_opt_diag(d: &[f64], r: usize, signs: &mut dyn SignSource) -> Result<LowRankSample> {
    let split = split_index(d, r)?;
    let n = d.len();
    let (m, k) = (split.m, split.k);
    let q = n - (m - 1);

    let mut l = Mat::zeros(n, r);
    for i in 0..m - 1 {
        l.set(i, i, d[i].sqrt());
    }

    let mut sign_draw = Vec::new();
    if split.s1 > 0.0 {
        // Rescaled tail lies in [0, 1] and sums to k by the split condition.
        let delta: Vec<f64> = d[m - 1..]
            .iter()
            .map(|&x| (x * k as f64 / split.s1).clamp(0.0, 1.0))
            .collect();
        let z: Vec<Vec<f64>> = if q == k + 1 {
            // One spare dimension: the z_i complete the unit vector with
            // entries sqrt(1 - delta_i), so sum z_i z_i^T = I - z0 z0^T.
            let mut z0: Vec<f64> = delta.iter().map(|&x| (1.0 - x).max(0.0).sqrt()).collect();
            let nz = norm(&z0);
            for x in &mut z0 {
                *x /= nz;
            }
            complete_onb(&z0)?
        } else {
            idempotent_with_diagonal(&delta)?
        };
        debug_assert_eq!(z.len(), k);

        sign_draw = (0..q).map(|_| signs.sign()).collect();
        let scale = (split.s1 / k as f64).sqrt();
        for (col, zi) in z.iter().enumerate() {
            for row in 0..q {
                l.set(m - 1 + row, m - 1 + col, scale * sign_draw[row] * zi[row]);
            }
        }
    }

    Ok(LowRankSample { r_mat: l.clone(), l, sign_draw })
}

/// Optimal unbiased rank-`r` approximator of an arbitrary matrix:
/// `E[L R^T] = c`, every sample has rank at most `r`, and the variance equals
/// `split_index(singular values, r).variance_bound`.
///
/// When `c` has at most `r` nonzero singular values the truncation is already
/// exact, so the output is deterministic with variance 0.
pub fn opt(c: &Mat, r: usize, signs: &mut dyn SignSource) -> Result<LowRankSample> {
    if r == 0 {
        return Err(Error::RankOutOfRange { rank: r, why: "rank must be at least 1".into() });
    }
    let dec = svd(c)?;
    let p = dec.d.len();
    let dmax = dec.d[0];
    let nonzero = dec.d.iter().filter(|&&x| x > dmax * 1e-12).count();
    if nonzero <= r {
        return Ok(truncate_from_svd(&dec, r, c.rows(), c.cols()));
    }

    let ds = sample_opt_diag(&dec.d, r, signs)?;
    Ok(LowRankSample {
        l: mul_leading_cols(&dec.u, &ds.l, p),
        r_mat: mul_leading_cols(&dec.v, &ds.r_mat, p),
        sign_draw: ds.sign_draw,
    })
}

/// Deterministic best rank-`r` approximation (singular value truncation):
/// the product equals `U diag(d_1..d_r, 0..) V^T` and the squared error is
/// the sum of the squared discarded singular values.
pub fn opt_bias(c: &Mat, r: usize) -> Result<(Mat, Mat)> {
    if r == 0 {
        return Err(Error::RankOutOfRange { rank: r, why: "rank must be at least 1".into() });
    }
    let dec = svd(c)?;
    let s = truncate_from_svd(&dec, r, c.rows(), c.cols());
    Ok((s.l, s.r_mat))
}

fn truncate_from_svd(dec: &crate::smalllin::SvdResult, r: usize, rows: usize, cols: usize) -> LowRankSample {
    let p = dec.d.len();
    let keep = r.min(p);
    let mut l = Mat::zeros(rows, r);
    let mut rm = Mat::zeros(cols, r);
    for j in 0..keep {
        let s = dec.d[j].sqrt();
        for i in 0..rows {
            l.set(i, j, dec.u.at(i, j) * s);
        }
        for i in 0..cols {
            rm.set(i, j, dec.v.at(i, j) * s);
        }
    }
    LowRankSample { l, r_mat: rm, sign_draw: Vec::new() }
}

/// `full[:, 0..p] * block` where `block` is `p x r`.
fn mul_leading_cols(full: &Mat, block: &Mat, p: usize) -> Mat {
    let rows = full.rows();
    let r = block.cols();
    let mut out = Mat::zeros(rows, r);
    for i in 0..rows {
        for k in 0..p {
            let f = full.at(i, k);
            if f == 0.0 {
                continue;
            }
            for j in 0..r {
                let v = out.at(i, j) + f * block.at(k, j);
                out.set(i, j, v);
            }
        }
    }
    out
}

/// Given `d` with entries in `[0, 1]` summing to a positive integer `r`,
/// build `r` orthonormal vectors whose summed outer product `Z` has diagonal
/// exactly `d` (so `Z` is symmetric idempotent with trace `r`).
///
/// Recursive construction: sort non-increasing, split where the running sum
/// reaches 1, shift the boundary mass onto one entry, recurse on the tail
/// with rank `r - 1`, then undo the shift with a Givens rotation and the sort
/// with the inverse permutation.
pub fn idempotent_with_diagonal(d: &[f64]) -> Result<Vec<Vec<f64>>> {
    let n = d.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if d.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("diagonal".into()));
    }
    if d.iter().any(|&x| !(-1e-9..=1.0 + 1e-9).contains(&x)) {
        return Err(Error::BadDiagonal(format!("entries outside [0, 1]: {d:?}")));
    }
    let sum: f64 = d.iter().sum();
    let r = sum.round();
    if (sum - r).abs() > 1e-6 || r < 1.0 || r as usize > n {
        return Err(Error::SumNotInteger { sum, tol: 1e-6 });
    }
    let r = r as usize;

    let clamped: Vec<f64> = d.iter().map(|&x| x.clamp(0.0, 1.0)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| clamped[b].partial_cmp(&clamped[a]).unwrap());
    let sorted: Vec<f64> = order.iter().map(|&i| clamped[i]).collect();

    let z_sorted = build_sorted(&sorted, r);

    // Undo the sort permutation on the coordinates.
    let mut z = vec![vec![0.0; n]; r];
    for (zi, zs) in z.iter_mut().zip(&z_sorted) {
        for (pos, &orig) in order.iter().enumerate() {
            zi[orig] = zs[pos];
        }
    }
    Ok(z)
}

/// Core recursion on a sorted (non-increasing) diagonal.
fn build_sorted(d: &[f64], r: usize) -> Vec<Vec<f64>> {
    let n = d.len();
    debug_assert!(r >= 1 && r <= n);
    if r == 1 {
        return vec![d.iter().map(|&x| x.sqrt()).collect()];
    }

    // Largest prefix with sum at most 1; alpha is the gap to exactly 1.
    let mut acc = 0.0;
    let mut m = 0;
    for (i, &x) in d.iter().enumerate() {
        if acc + x <= 1.0 + 1e-12 {
            acc += x;
            m = i + 1;
        } else {
            break;
        }
    }
    m = m.clamp(1, n - 1);
    let alpha = (1.0 - acc).max(0.0);

    let mut head: Vec<f64> = d[..m].to_vec();
    head[m - 1] = (d[m - 1] + alpha).min(1.0);
    let mut tail: Vec<f64> = d[m..].to_vec();
    tail[0] = (d[m] - alpha).max(0.0);

    // Tail sums to r - 1; recurse (it may need re-sorting, which the
    // public entry point of the recursion handles).
    let sub = build_sorted_unsorted(&tail, r - 1);

    let q: Vec<f64> = head.iter().map(|&x| x.sqrt()).collect();
    let mut z: Vec<Vec<f64>> = Vec::with_capacity(r);
    for y in sub {
        let mut v = vec![0.0; n];
        v[m..].copy_from_slice(&y);
        z.push(v);
    }
    let mut v = vec![0.0; n];
    v[..m].copy_from_slice(&q);
    z.push(v);

    // Givens rotation on coordinates (m-1, m) restoring the original
    // entries d_m, d_{m+1} from the shifted ones.
    if alpha > 1e-15 {
        let denom = 2.0 * alpha + d[m - 1] - d[m];
        let sin2 = (alpha / denom).clamp(0.0, 1.0);
        let sn = sin2.sqrt();
        let cs = (1.0 - sin2).max(0.0).sqrt();
        for zi in &mut z {
            let a = zi[m - 1];
            let b = zi[m];
            zi[m - 1] = cs * a + sn * b;
            zi[m] = -sn * a + cs * b;
        }
    }
    z
}

/// Recursion helper: the shifted tail may lose the sorted order, so sort,
/// build, and unpermute.
fn build_sorted_unsorted(d: &[f64], r: usize) -> Vec<Vec<f64>> {
    let n = d.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[b].partial_cmp(&d[a]).unwrap());
    let sorted: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    let zs = build_sorted(&sorted, r);
    zs.into_iter()
        .map(|v| {
            let mut out = vec![0.0; n];
            for (pos, &orig) in order.iter().enumerate() {
                out[orig] = v[pos];
            }
            out
        })
        .collect()
}
