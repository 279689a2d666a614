//! Stateful gradient algorithms behind one interface. Each consumes one
//! forward step at a time and can emit an estimate of the current-step
//! parameter gradient `dL_t/dtheta` for the recurrent block; the output head
//! is handled exactly by the caller.
//!
//! Selection grammar:
//! `exact | tbptt:<T> | uoro | kf | kfavg:<r> | ok:<r> | bok:<r> |
//! kfapprox:<r> | ktp:<r>`.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use crate::kronsum::{ktp_mix, ok_compress, ok_compress_biased, sign_trick_mix, KronFormat,
    KroneckerSum, TripleTerm};
use crate::lowrank::sample_opt_diag;
use crate::rng::{CounterRng, SignSource};
use crate::rnn::{bptt_dlh, directional_derivative_step, immediate_factor, jacobian_h, rtrl_step,
    RhnParams, RhnStep, RtrlState};
use crate::smalllin::{dot, Mat};
use crate::{Error, Result};

/// Which gradient algorithm to run, with its rank or horizon parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlgoSpec {
    Exact,
    Tbptt(usize),
    Uoro,
    Kf,
    KfAvg(usize),
    Ok(usize),
    BOk(usize),
    KfApprox(usize),
    Ktp(usize),
}

impl AlgoSpec {
    /// Online algorithms can update parameters every step; the windowed one
    /// cannot.
    pub fn is_online(&self) -> bool {
        !matches!(self, AlgoSpec::Tbptt(_))
    }

    pub fn build(&self, params: &RhnParams, rng: CounterRng) -> Box<dyn GradAlgo> {
        let n = params.n();
        let p = params.p();
        match *self {
            AlgoSpec::Exact => Box::new(ExactRtrl { state: RtrlState::zeros(params) }),
            AlgoSpec::Tbptt(horizon) => Box::new(Tbptt {
                horizon,
                window: VecDeque::new(),
                pending_reset: false,
            }),
            AlgoSpec::Uoro => Box::new(Uoro {
                u: vec![0.0; n],
                v: vec![0.0; params.rec_len()],
                rng,
                step_idx: 0,
            }),
            AlgoSpec::Kf => Box::new(KfRtrl::fresh(p, n, rng)),
            AlgoSpec::KfAvg(r) => Box::new(KfAvg {
                copies: (0..r).map(|i| KfRtrl::fresh(p, n, rng.derive(&[i as u64]))).collect(),
            }),
            AlgoSpec::Ok(r) => Box::new(OkSum::fresh(p, n, r, rng, false)),
            AlgoSpec::BOk(r) => Box::new(OkSum::fresh(p, n, r, rng, true)),
            AlgoSpec::KfApprox(r) => Box::new(KfApprox {
                inner: KfRtrl::fresh(p, n, rng),
                rank: r,
            }),
            AlgoSpec::Ktp(r) => Box::new(Ktp {
                terms: (0..r)
                    .map(|_| TripleTerm {
                        a: vec![0.0; p],
                        b: vec![0.0; n],
                        c: vec![0.0; 2 * n],
                    })
                    .collect(),
                rank: r,
                rng,
                step_idx: 0,
            }),
        }
    }
}

impl FromStr for AlgoSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!(
            "unknown algorithm {s:?}; expected exact | tbptt:<T> | uoro | kf | kfavg:<r> | ok:<r> | bok:<r> | kfapprox:<r> | ktp:<r>"
        ));
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let num = |a: Option<&str>| -> Result<usize> {
            let v: usize = a.ok_or_else(bad)?.parse().map_err(|_| bad())?;
            if v == 0 {
                return Err(bad());
            }
            Ok(v)
        };
        match (head, arg) {
            ("exact", None) => Ok(AlgoSpec::Exact),
            ("uoro", None) => Ok(AlgoSpec::Uoro),
            ("kf", None) => Ok(AlgoSpec::Kf),
            ("tbptt", a) => Ok(AlgoSpec::Tbptt(num(a)?)),
            ("kfavg", a) => Ok(AlgoSpec::KfAvg(num(a)?)),
            ("ok", a) => Ok(AlgoSpec::Ok(num(a)?)),
            ("bok", a) => Ok(AlgoSpec::BOk(num(a)?)),
            ("kfapprox", a) => Ok(AlgoSpec::KfApprox(num(a)?)),
            ("ktp", a) => Ok(AlgoSpec::Ktp(num(a)?)),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for AlgoSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlgoSpec::Exact => write!(f, "exact"),
            AlgoSpec::Tbptt(t) => write!(f, "tbptt:{t}"),
            AlgoSpec::Uoro => write!(f, "uoro"),
            AlgoSpec::Kf => write!(f, "kf"),
            AlgoSpec::KfAvg(r) => write!(f, "kfavg:{r}"),
            AlgoSpec::Ok(r) => write!(f, "ok:{r}"),
            AlgoSpec::BOk(r) => write!(f, "bok:{r}"),
            AlgoSpec::KfApprox(r) => write!(f, "kfapprox:{r}"),
            AlgoSpec::Ktp(r) => write!(f, "ktp:{r}"),
        }
    }
}

/// A per-batch-element gradient estimator. `advance` consumes the step that
/// just happened; `estimate_into` contracts the stored sensitivity against
/// `dL_t/dh_t`. Both must be callable at every time step.
pub trait GradAlgo: Send {
    fn advance(&mut self, params: &RhnParams, step: &RhnStep);

    /// Accumulate the flat recurrent-parameter gradient estimate into `out`
    /// (not cleared first).
    fn estimate_into(&self, params: &RhnParams, dl_dh: &[f64], out: &mut [f64]);

    /// Zero all stored factors. The random stream position is kept.
    fn reset(&mut self);

    /// Number of f64 values currently held for this batch element.
    fn state_reals(&self) -> usize;

    fn estimate(&self, params: &RhnParams, dl_dh: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; params.rec_len()];
        self.estimate_into(params, dl_dh, &mut out);
        out
    }
}

/// `out += u ⊗ (dl_dh A)` for a term in format `(1, p, n, 2n)`.
fn contract_kron_term(u: &Mat, a: &Mat, dl_dh: &[f64], out: &mut [f64]) {
    let cols = a.cols();
    let mut row = vec![0.0; cols];
    for (j, &d) in dl_dh.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        for (r, &v) in row.iter_mut().zip(a.row(j)) {
            *r += d * v;
        }
    }
    for (i, &ui) in u.data().iter().enumerate() {
        if ui == 0.0 {
            continue;
        }
        for (o, &r) in out[i * cols..(i + 1) * cols].iter_mut().zip(&row) {
            *o += ui * r;
        }
    }
}

// ---------------------------------------------------------------------------
// Exact forward sensitivity.
// ---------------------------------------------------------------------------

struct ExactRtrl {
    state: RtrlState,
}

impl GradAlgo for ExactRtrl {
    fn advance(&mut self, params: &RhnParams, step: &RhnStep) {
        let h_jac = jacobian_h(params, step);
        let f = immediate_factor(step);
        rtrl_step(&mut self.state, &h_jac, &f);
    }

    fn estimate_into(&self, _params: &RhnParams, dl_dh: &[f64], out: &mut [f64]) {
        for (j, &d) in dl_dh.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (o, &g) in out.iter_mut().zip(self.state.g_mat.row(j)) {
                *o += d * g;
            }
        }
    }

    fn reset(&mut self) {
        self.state.reset();
    }

    fn state_reals(&self) -> usize {
        self.state.g_mat.data().len()
    }
}

// ---------------------------------------------------------------------------
// Sliding-window backpropagation.
// ---------------------------------------------------------------------------

struct Tbptt {
    horizon: usize,
    window: VecDeque<(RhnStep, bool)>,
    pending_reset: bool,
}

impl GradAlgo for Tbptt {
    fn advance(&mut self, _params: &RhnParams, step: &RhnStep) {
        let reset_before = std::mem::take(&mut self.pending_reset);
        self.window.push_back((step.clone(), reset_before));
        while self.window.len() > self.horizon {
            self.window.pop_front();
        }
    }

    fn estimate_into(&self, params: &RhnParams, dl_dh: &[f64], out: &mut [f64]) {
        let window: Vec<(RhnStep, bool)> = self.window.iter().cloned().collect();
        let rec = bptt_dlh(params, &window, dl_dh);
        for (o, r) in out.iter_mut().zip(rec) {
            *o += r;
        }
    }

    fn reset(&mut self) {
        self.window.clear();
        self.pending_reset = false;
    }

    fn state_reals(&self) -> usize {
        self.window
            .iter()
            .map(|(s, _)| s.h_prev.len() + s.h_hat.len() + s.g.len() + s.t_gate.len() + s.h_next.len())
            .sum()
    }
}

// ---------------------------------------------------------------------------
// Rank-one probe estimator.
// ---------------------------------------------------------------------------

struct Uoro {
    /// Hidden-side factor, length n.
    u: Vec<f64>,
    /// Parameter-side factor, length p * 2n.
    v: Vec<f64>,
    rng: CounterRng,
    step_idx: u64,
}

impl GradAlgo for Uoro {
    fn advance(&mut self, params: &RhnParams, step: &RhnStep) {
        let n = params.n();
        let mut signs = self.rng.derive(&[self.step_idx]);
        self.step_idx += 1;

        let h_jac = jacobian_h(params, step);
        let u_bar = h_jac.mul_col(&self.u);
        let f = immediate_factor(step);

        // Probe the rows of the immediate factor with a sign vector; thanks
        // to the h_hat ⊗ (D1|D2) structure the probed row costs O(p n), and
        // the same probe acts as the mixing noise.
        let nu: Vec<f64> = (0..n).map(|_| signs.sign()).collect();
        let mut f_row = vec![0.0; params.rec_len()];
        for (a, &ha) in f.h_hat.iter().enumerate() {
            if ha == 0.0 {
                continue;
            }
            let row = &mut f_row[a * 2 * n..(a + 1) * 2 * n];
            for j in 0..n {
                row[j] += ha * nu[j] * f.d1[j];
                row[n + j] += ha * nu[j] * f.d2[j];
            }
        }

        // Variance-reduction rescaling; a zero factor skips its ratio.
        let norm_v = crate::smalllin::norm(&self.v);
        let norm_ub = crate::smalllin::norm(&u_bar);
        let rho0 = if norm_v > 0.0 && norm_ub > 0.0 { (norm_v / norm_ub).sqrt() } else { 1.0 };
        let norm_f = crate::smalllin::norm(&f_row);
        let rho1 = if norm_f > 0.0 { (norm_f / (n as f64).sqrt()).sqrt() } else { 1.0 };

        for j in 0..n {
            self.u[j] = rho0 * u_bar[j] + rho1 * nu[j];
        }
        for (v, &fr) in self.v.iter_mut().zip(&f_row) {
            *v = *v / rho0 + fr / rho1;
        }
    }

    fn estimate_into(&self, _params: &RhnParams, dl_dh: &[f64], out: &mut [f64]) {
        let s = dot(dl_dh, &self.u);
        if s == 0.0 {
            return;
        }
        for (o, &v) in out.iter_mut().zip(&self.v) {
            *o += s * v;
        }
    }

    fn reset(&mut self) {
        self.u.fill(0.0);
        self.v.fill(0.0);
    }

    fn state_reals(&self) -> usize {
        self.u.len() + self.v.len()
    }
}

// ---------------------------------------------------------------------------
// Single Kronecker factor with the sign trick.
// ---------------------------------------------------------------------------

struct KfRtrl {
    u: Mat,
    a: Mat,
    rng: CounterRng,
    step_idx: u64,
}

impl KfRtrl {
    fn fresh(p: usize, n: usize, rng: CounterRng) -> Self {
        KfRtrl { u: Mat::zeros(1, p), a: Mat::zeros(n, 2 * n), rng, step_idx: 0 }
    }

    /// Shared update path: push the stored factor through the step, then
    /// sign-mix with `(h_hat, d_block)`.
    fn advance_with(&mut self, params: &RhnParams, step: &RhnStep, d_block: Mat) {
        let mut signs = self.rng.derive(&[self.step_idx]);
        self.step_idx += 1;
        let h_jac = jacobian_h(params, step);
        let a_bar = h_jac.matmul(&self.a);
        let h_row = Mat::row_vec(step.h_hat.clone());
        let (u, a) = sign_trick_mix((&self.u, &a_bar), (&h_row, &d_block), &mut signs)
            .expect("shapes fixed by construction");
        self.u = u;
        self.a = a;
    }
}

impl GradAlgo for KfRtrl {
    fn advance(&mut self, params: &RhnParams, step: &RhnStep) {
        let d_block = immediate_factor(step).d_block();
        self.advance_with(params, step, d_block);
    }

    fn estimate_into(&self, _params: &RhnParams, dl_dh: &[f64], out: &mut [f64]) {
        contract_kron_term(&self.u, &self.a, dl_dh, out);
    }

    fn reset(&mut self) {
        self.u.data_mut().fill(0.0);
        self.a.data_mut().fill(0.0);
    }

    fn state_reals(&self) -> usize {
        self.u.data().len() + self.a.data().len()
    }
}

/// Independent copies of the single-factor estimator, averaged with equal
/// weights.
struct KfAvg {
    copies: Vec<KfRtrl>,
}

impl GradAlgo for KfAvg {
    fn advance(&mut self, params: &RhnParams, step: &RhnStep) {
        for c in &mut self.copies {
            c.advance(params, step);
        }
    }

    fn estimate_into(&self, params: &RhnParams, dl_dh: &[f64], out: &mut [f64]) {
        let mut scratch = vec![0.0; out.len()];
        for c in &self.copies {
            c.estimate_into(params, dl_dh, &mut scratch);
        }
        let w = 1.0 / self.copies.len() as f64;
        for (o, s) in out.iter_mut().zip(&scratch) {
            *o += w * s;
        }
    }

    fn reset(&mut self) {
        for c in &mut self.copies {
            c.reset();
        }
    }

    fn state_reals(&self) -> usize {
        self.copies.iter().map(|c| c.state_reals()).sum()
    }
}

// ---------------------------------------------------------------------------
// Kronecker sum with optimal (or truncation) compression.
// ---------------------------------------------------------------------------

struct OkSum {
    sum: KroneckerSum,
    rank: usize,
    biased: bool,
    rng: CounterRng,
    step_idx: u64,
}

impl OkSum {
    fn fresh(p: usize, n: usize, rank: usize, rng: CounterRng, biased: bool) -> Self {
        let format = KronFormat::new(1, p, n, 2 * n).expect("nonzero dims");
        OkSum { sum: KroneckerSum::zeros(format, rank), rank, biased, rng, step_idx: 0 }
    }

    /// The `(r+1)`-term sum for this step: every stored right factor pushed
    /// through the Jacobian, plus the fresh immediate factor.
    fn grow(&self, params: &RhnParams, step: &RhnStep) -> KroneckerSum {
        let h_jac = jacobian_h(params, step);
        let f = immediate_factor(step);
        let mut grown = KroneckerSum::new(self.sum.format());
        for (u, a) in self.sum.terms() {
            grown.push_term(u.clone(), h_jac.matmul(a)).expect("format preserved");
        }
        grown
            .push_term(Mat::row_vec(step.h_hat.clone()), f.d_block())
            .expect("fresh term matches format");
        grown
    }
}

impl GradAlgo for OkSum {
    fn advance(&mut self, params: &RhnParams, step: &RhnStep) {
        let mut signs = self.rng.derive(&[self.step_idx]);
        self.step_idx += 1;
        let grown = self.grow(params, step);
        self.sum = if self.biased {
            ok_compress_biased(&grown, self.rank).expect("valid state compresses")
        } else {
            ok_compress(&grown, self.rank, &mut signs).expect("valid state compresses")
        };
    }

    fn estimate_into(&self, _params: &RhnParams, dl_dh: &[f64], out: &mut [f64]) {
        for (u, a) in self.sum.terms() {
            contract_kron_term(u, a, dl_dh, out);
        }
    }

    fn reset(&mut self) {
        self.sum = KroneckerSum::zeros(self.sum.format(), self.rank);
    }

    fn state_reals(&self) -> usize {
        self.sum.terms().iter().map(|(u, a)| u.data().len() + a.data().len()).sum()
    }
}

// ---------------------------------------------------------------------------
// Optimal low-rank replacement of the immediate factor's diagonal block.
// ---------------------------------------------------------------------------

/// Optimal unbiased rank-`r` approximation of the paired-diagonal block
/// `(D1 | D2)`, exploiting that its SVD is analytic: singular values are
/// `hypot(d1_j, d2_j)` with axis-aligned left singular vectors.
/// Returns `(L, R)` with `E[L R^T] = (D1 | D2)`, `L` being `n x r` and `R`
/// being `2n x r`.
fn opt_of_diag_pair(d1: &[f64], d2: &[f64], r: usize, signs: &mut dyn SignSource) -> (Mat, Mat) {
    let n = d1.len();
    let sigma: Vec<f64> = d1.iter().zip(d2).map(|(&a, &b)| a.hypot(b)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| sigma[y].partial_cmp(&sigma[x]).unwrap());
    let sorted: Vec<f64> = order.iter().map(|&j| sigma[j]).collect();

    let smax = sorted[0];
    let nonzero = sorted.iter().filter(|&&x| x > smax * 1e-12).count();
    let mut l = Mat::zeros(n, r);
    let mut rm = Mat::zeros(2 * n, r);
    if nonzero <= r || n < r + 1 {
        // Already at most rank r: return it exactly, no randomness.
        for (c, &j) in order.iter().take(r.min(n)).enumerate() {
            if sigma[j] <= 0.0 {
                continue;
            }
            let s = sigma[j].sqrt();
            l.set(j, c, s);
            rm.set(j, c, s * d1[j] / sigma[j]);
            rm.set(n + j, c, s * d2[j] / sigma[j]);
        }
        return (l, rm);
    }

    let ds = sample_opt_diag(&sorted, r, signs).expect("sorted singular values are valid");
    for (pos, &j) in order.iter().enumerate() {
        if sigma[j] <= 0.0 {
            // The sampled rows vanish for zero singular values and the right
            // singular vector is undefined there; leave those rows zero.
            continue;
        }
        for c in 0..r {
            l.set(j, c, ds.l.at(pos, c));
            let rv = ds.r_mat.at(pos, c);
            rm.set(j, c, rv * d1[j] / sigma[j]);
            rm.set(n + j, c, rv * d2[j] / sigma[j]);
        }
    }
    (l, rm)
}

/// Single Kronecker factor whose fresh term first replaces the diagonal
/// block by its optimal unbiased rank-`r` approximation.
struct KfApprox {
    inner: KfRtrl,
    rank: usize,
}

impl GradAlgo for KfApprox {
    fn advance(&mut self, params: &RhnParams, step: &RhnStep) {
        let f = immediate_factor(step);
        let mut signs = self.inner.rng.derive(&[0x0d1a, self.inner.step_idx]);
        let (l, rm) = opt_of_diag_pair(&f.d1, &f.d2, self.rank, &mut signs);
        let d_approx = l.matmul(&rm.transpose());
        self.inner.advance_with(params, step, d_approx);
    }

    fn estimate_into(&self, params: &RhnParams, dl_dh: &[f64], out: &mut [f64]) {
        self.inner.estimate_into(params, dl_dh, out);
    }

    fn reset(&mut self) {
        self.inner.reset();
    }

    fn state_reals(&self) -> usize {
        self.inner.state_reals()
    }
}

// ---------------------------------------------------------------------------
// Triple-product estimator.
// ---------------------------------------------------------------------------

struct Ktp {
    terms: Vec<TripleTerm>,
    rank: usize,
    rng: CounterRng,
    step_idx: u64,
}

impl GradAlgo for Ktp {
    fn advance(&mut self, params: &RhnParams, step: &RhnStep) {
        let mut signs = self.rng.derive(&[self.step_idx]);
        self.step_idx += 1;
        let f = immediate_factor(step);
        let (l, rm) = opt_of_diag_pair(&f.d1, &f.d2, self.rank, &mut signs);

        let n = params.n();
        for (i, term) in self.terms.iter_mut().enumerate() {
            // Push the middle factor through the step without materializing
            // the Jacobian, then merge with the i-th column pair of the
            // fresh factor's approximation.
            let b_bar = directional_derivative_step(params, step, &term.b);
            let d_col: Vec<f64> = (0..n).map(|row| l.at(row, i)).collect();
            let d_row: Vec<f64> = (0..2 * n).map(|row| rm.at(row, i)).collect();
            *term = ktp_mix((&term.a, &b_bar, &term.c), (&step.h_hat, &d_col, &d_row), &mut signs)
                .expect("shapes fixed by construction");
        }
    }

    fn estimate_into(&self, _params: &RhnParams, dl_dh: &[f64], out: &mut [f64]) {
        let two_n = self.terms.first().map_or(0, |t| t.c.len());
        for term in &self.terms {
            let s = dot(dl_dh, &term.b);
            if s == 0.0 {
                continue;
            }
            for (ia, &av) in term.a.iter().enumerate() {
                let coeff = s * av;
                if coeff == 0.0 {
                    continue;
                }
                for (o, &cv) in out[ia * two_n..(ia + 1) * two_n].iter_mut().zip(&term.c) {
                    *o += coeff * cv;
                }
            }
        }
    }

    fn reset(&mut self) {
        for t in &mut self.terms {
            t.a.fill(0.0);
            t.b.fill(0.0);
            t.c.fill(0.0);
        }
    }

    fn state_reals(&self) -> usize {
        self.terms.iter().map(|t| t.a.len() + t.b.len() + t.c.len()).sum()
    }
}
