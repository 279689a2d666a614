//! Kronecker-sum representation of large structured matrices and the
//! compression/mixing procedures that keep the term count bounded: optimal
//! compression of an `(r+1)`-term sum to `r` terms, the classic sign-trick
//! merge of two terms, and the triple-product merge.

use crate::lowrank::{opt, opt_bias};
use crate::rng::SignSource;
use crate::smalllin::{gram_schmidt, Mat};
use crate::{Error, Result};

/// Default cap on dense materialization, in entries.
pub const DENSE_CAP: usize = 10_000_000;

/// Shared shape of every term in a [`KroneckerSum`]: each term is the
/// Kronecker product of an `a x b` factor and a `c x d` factor, so the
/// represented matrix is `(a c) x (b d)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KronFormat {
    pub a: usize,
    pub b: usize,
    pub c: usize,
    pub d: usize,
}

impl KronFormat {
    pub fn new(a: usize, b: usize, c: usize, d: usize) -> Result<Self> {
        if a == 0 || b == 0 || c == 0 || d == 0 {
            return Err(Error::ShapeMismatch("kronecker format with zero dimension".into()));
        }
        Ok(KronFormat { a, b, c, d })
    }

    pub fn dense_rows(&self) -> usize {
        self.a * self.c
    }

    pub fn dense_cols(&self) -> usize {
        self.b * self.d
    }
}

/// A matrix stored as a sum of Kronecker products with a shared format.
#[derive(Clone, Debug)]
pub struct KroneckerSum {
    format: KronFormat,
    terms: Vec<(Mat, Mat)>,
}

impl KroneckerSum {
    pub fn new(format: KronFormat) -> Self {
        KroneckerSum { format, terms: Vec::new() }
    }

    /// Sum of `r` zero terms in the given format.
    pub fn zeros(format: KronFormat, r: usize) -> Self {
        let terms = (0..r)
            .map(|_| (Mat::zeros(format.a, format.b), Mat::zeros(format.c, format.d)))
            .collect();
        KroneckerSum { format, terms }
    }

    pub fn push_term(&mut self, u: Mat, a: Mat) -> Result<()> {
        let f = &self.format;
        if u.rows() != f.a || u.cols() != f.b || a.rows() != f.c || a.cols() != f.d {
            return Err(Error::ShapeMismatch(format!(
                "term ({}x{}, {}x{}) does not match format ({}, {}, {}, {})",
                u.rows(),
                u.cols(),
                a.rows(),
                a.cols(),
                f.a,
                f.b,
                f.c,
                f.d
            )));
        }
        self.terms.push((u, a));
        Ok(())
    }

    pub fn format(&self) -> KronFormat {
        self.format
    }

    pub fn terms(&self) -> &[(Mat, Mat)] {
        &self.terms
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    /// Exact dense expansion, refusing to materialize more than `cap`
    /// entries.
    pub fn dense_with_cap(&self, cap: usize) -> Result<Mat> {
        let rows = self.format.dense_rows();
        let cols = self.format.dense_cols();
        if rows * cols > cap {
            return Err(Error::DenseCapExceeded { entries: rows * cols, cap });
        }
        let mut out = Mat::zeros(rows, cols);
        for (u, a) in &self.terms {
            add_kron_term(&mut out, u, a);
        }
        Ok(out)
    }

    pub fn dense(&self) -> Result<Mat> {
        self.dense_with_cap(DENSE_CAP)
    }
}

/// `out += u ⊗ a`.
fn add_kron_term(out: &mut Mat, u: &Mat, a: &Mat) {
    let (ar, ac) = (a.rows(), a.cols());
    for iu in 0..u.rows() {
        for ju in 0..u.cols() {
            let coeff = u.at(iu, ju);
            if coeff == 0.0 {
                continue;
            }
            for ia in 0..ar {
                let dst = (iu * ar + ia) * out.cols() + ju * ac;
                let row = a.row(ia);
                let span = &mut out.data_mut()[dst..dst + ac];
                for (o, &v) in span.iter_mut().zip(row) {
                    *o += coeff * v;
                }
            }
        }
    }
}

/// One term of a [`TripleSum`]: `a ⊗ b ⊗ c` with `a` a row, `b` a column and
/// `c` a row, representing a `len(b) x (len(a) len(c))` matrix.
#[derive(Clone, Debug)]
pub struct TripleTerm {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

/// A matrix stored as a sum of three-way outer products.
#[derive(Clone, Debug)]
pub struct TripleSum {
    terms: Vec<TripleTerm>,
}

impl TripleSum {
    pub fn new(terms: Vec<TripleTerm>) -> Result<Self> {
        if let Some(first) = terms.first() {
            let dims = (first.a.len(), first.b.len(), first.c.len());
            if terms.iter().any(|t| (t.a.len(), t.b.len(), t.c.len()) != dims) {
                return Err(Error::ShapeMismatch("triple terms differ in shape".into()));
            }
        }
        Ok(TripleSum { terms })
    }

    pub fn terms(&self) -> &[TripleTerm] {
        &self.terms
    }

    pub fn dense_with_cap(&self, cap: usize) -> Result<Mat> {
        let Some(first) = self.terms.first() else {
            return Err(Error::EmptyInput);
        };
        let rows = first.b.len();
        let cols = first.a.len() * first.c.len();
        if rows * cols > cap {
            return Err(Error::DenseCapExceeded { entries: rows * cols, cap });
        }
        let mut out = Mat::zeros(rows, cols);
        for t in &self.terms {
            add_triple_term(&mut out, t);
        }
        Ok(out)
    }

    pub fn dense(&self) -> Result<Mat> {
        self.dense_with_cap(DENSE_CAP)
    }
}

/// `out += a ⊗ b ⊗ c`, entry `(j, ia * len(c) + ic) += b_j a_ia c_ic`.
fn add_triple_term(out: &mut Mat, t: &TripleTerm) {
    let nc = t.c.len();
    for (j, &bj) in t.b.iter().enumerate() {
        if bj == 0.0 {
            continue;
        }
        let row = out.row_mut(j);
        for (ia, &aa) in t.a.iter().enumerate() {
            let coeff = bj * aa;
            if coeff == 0.0 {
                continue;
            }
            for (ic, &cc) in t.c.iter().enumerate() {
                row[ia * nc + ic] += coeff * cc;
            }
        }
    }
}

/// Compress an `(r+1)`-term Kronecker sum to `r` terms with the
/// minimum-variance unbiased sampler.
///
/// Both factor lists are rewritten over orthonormal bases of their spans;
/// the resulting coefficient matrix (rectangular when a span is
/// rank-deficient) is approximated by [`opt`], and the sampled factors are
/// mapped back. The expected dense value equals the input's and the output
/// factors stay inside the input spans.
pub fn ok_compress(g: &KroneckerSum, r: usize, signs: &mut dyn SignSource) -> Result<KroneckerSum> {
    compress_with(g, r, |c| {
        let s = opt(c, r, signs)?;
        Ok((s.l, s.r_mat))
    })
}

/// Deterministic counterpart of [`ok_compress`]: the output is the closest
/// `r`-term sum (singular value truncation of the coefficient matrix),
/// trading bias for zero variance.
pub fn ok_compress_biased(g: &KroneckerSum, r: usize) -> Result<KroneckerSum> {
    compress_with(g, r, |c| opt_bias(c, r))
}

fn compress_with(
    g: &KroneckerSum,
    r: usize,
    factorize: impl FnOnce(&Mat) -> Result<(Mat, Mat)>,
) -> Result<KroneckerSum> {
    if r == 0 {
        return Err(Error::RankOutOfRange { rank: r, why: "need at least one output term".into() });
    }
    if g.term_count() <= r {
        return Ok(g.clone());
    }
    let fmt = g.format();
    let us: Vec<&[f64]> = g.terms().iter().map(|(u, _)| u.data()).collect();
    let avs: Vec<&[f64]> = g.terms().iter().map(|(_, a)| a.data()).collect();
    let gs_u = gram_schmidt(&us)?;
    let gs_a = gram_schmidt(&avs)?;
    if gs_u.effective_rank == 0 || gs_a.effective_rank == 0 {
        return Ok(KroneckerSum::zeros(fmt, r));
    }

    // Coefficients of the input over the basis pair: the dense value is
    // sum_{i,j} C[i][j] (v_i ⊗ B_j).
    let coeff = gs_u.coeffs.matmul(&gs_a.coeffs.transpose());
    let (l, rm) = factorize(&coeff)?;

    let mut out = KroneckerSum::new(fmt);
    for j in 0..r {
        let mut u = vec![0.0; fmt.a * fmt.b];
        for (i, basis) in gs_u.onb.iter().enumerate() {
            let w = l.at(i, j);
            if w == 0.0 {
                continue;
            }
            for (x, &bv) in u.iter_mut().zip(basis) {
                *x += w * bv;
            }
        }
        let mut a = vec![0.0; fmt.c * fmt.d];
        for (i, basis) in gs_a.onb.iter().enumerate() {
            let w = rm.at(i, j);
            if w == 0.0 {
                continue;
            }
            for (x, &bv) in a.iter_mut().zip(basis) {
                *x += w * bv;
            }
        }
        out.push_term(Mat::from_raw(fmt.a, fmt.b, u), Mat::from_raw(fmt.c, fmt.d, a))?;
    }
    Ok(out)
}

/// Merge two Kronecker terms into one with a shared random sign:
/// `(u + c h, A + c D)` after rescaling each pair so its two factors carry
/// equal norm (the rescaling leaves the products unchanged and shrinks the
/// cross-term noise). Averaging the dense product over both signs gives
/// `u ⊗ A + h ⊗ D` exactly.
pub fn sign_trick_mix(
    t1: (&Mat, &Mat),
    t2: (&Mat, &Mat),
    signs: &mut dyn SignSource,
) -> Result<(Mat, Mat)> {
    let shapes_match = t1.0.rows() == t2.0.rows()
        && t1.0.cols() == t2.0.cols()
        && t1.1.rows() == t2.1.rows()
        && t1.1.cols() == t2.1.cols();
    if !shapes_match {
        return Err(Error::ShapeMismatch("sign_trick_mix term shapes differ".into()));
    }
    let (u, a) = balance(t1.0, t1.1);
    let (h, d) = balance(t2.0, t2.1);
    let c = signs.sign();
    let mut mu = u;
    mu.axpy(c, &h);
    let mut ma = a;
    ma.axpy(c, &d);
    Ok((mu, ma))
}

/// Rescale `(u, a)` so both factors have the same Frobenius norm. A pair
/// with a zero factor is returned unscaled; it contributes nothing and the
/// ratio is undefined.
fn balance(u: &Mat, a: &Mat) -> (Mat, Mat) {
    let nu = u.frob_norm();
    let na = a.frob_norm();
    if nu <= 0.0 || na <= 0.0 {
        return (u.clone(), a.clone());
    }
    let rho = (na / nu).sqrt();
    (u.scale(rho), a.scale(1.0 / rho))
}

/// Merge two triple-product terms with the two-sign generalization of the
/// sign trick: `(a + s1 h, b + s2 d, c + s1 s2 e)`. The pairwise independent
/// zero-mean coefficients `(s1, s2, s1 s2)` cancel every cross term, so the
/// four-point average is exactly the sum of the inputs.
pub fn ktp_mix(
    t1: (&[f64], &[f64], &[f64]),
    t2: (&[f64], &[f64], &[f64]),
    signs: &mut dyn SignSource,
) -> Result<TripleTerm> {
    if t1.0.len() != t2.0.len() || t1.1.len() != t2.1.len() || t1.2.len() != t2.2.len() {
        return Err(Error::ShapeMismatch("ktp_mix term shapes differ".into()));
    }
    let s1 = signs.sign();
    let s2 = signs.sign();
    let s12 = s1 * s2;
    let a = t1.0.iter().zip(t2.0).map(|(x, y)| x + s1 * y).collect();
    let b = t1.1.iter().zip(t2.1).map(|(x, y)| x + s2 * y).collect();
    let c = t1.2.iter().zip(t2.2).map(|(x, y)| x + s12 * y).collect();
    Ok(TripleTerm { a, b, c })
}
