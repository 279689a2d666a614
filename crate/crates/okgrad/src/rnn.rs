//! Single-layer recurrent highway cell and its derivative machinery: exact
//! Jacobians, the Kronecker factorization of the immediate parameter
//! Jacobian, the dense forward-sensitivity recursion, windowed
//! backpropagation, and a matrix-free directional derivative.
//!
//! Cell: with `h_hat = (h_prev | onehot(x) | 1)` and the two weight
//! matrices, `g = 2 sigmoid(h_hat w_g) - 1`, `t = sigmoid(h_hat w_t)` and
//! `h_next = t .* g + (1 - t) .* h_prev`. Inputs are fixed one-hot rows, not
//! learned. The output head `(h | 1) w_out` carries its own bias row and is
//! trained with its exact local gradient under every algorithm.
//!
//! Recurrent gradients are stored flat with layout `a * 2n + j` for
//! `w_g[a][j]` and `a * 2n + n + j` for `w_t[a][j]`; this matches the
//! Kronecker factorization `h_hat ⊗ (D1 | D2)` of the immediate Jacobian,
//! so a Kronecker term contracts into the flat layout without reshuffling.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use crate::rng::CounterRng;
use crate::smalllin::{norm, Mat};
use crate::{Error, Result};

const INIT_STREAM: u64 = 0x9e11;
/// Gate clamp keeping `t` strictly inside (0, 1).
const GATE_EPS: f64 = 1e-12;

/// Parameters of the cell plus output head.
#[derive(Clone, Debug)]
pub struct RhnParams {
    n: usize,
    n_in: usize,
    vocab: usize,
    /// Candidate weights, `p x n` with `p = n + n_in + 1`.
    pub w_g: Mat,
    /// Transform-gate weights, `p x n`.
    pub w_t: Mat,
    /// Output head including a bias row, `(n + 1) x vocab`.
    pub w_out: Mat,
}

impl RhnParams {
    pub fn new(n: usize, n_in: usize, vocab: usize, w_g: Mat, w_t: Mat, w_out: Mat) -> Result<Self> {
        let p = n + n_in + 1;
        if w_g.rows() != p || w_g.cols() != n || w_t.rows() != p || w_t.cols() != n {
            return Err(Error::ShapeMismatch(format!(
                "recurrent weights must be {p}x{n}, got {}x{} and {}x{}",
                w_g.rows(),
                w_g.cols(),
                w_t.rows(),
                w_t.cols()
            )));
        }
        if w_out.rows() != n + 1 || w_out.cols() != vocab {
            return Err(Error::ShapeMismatch(format!(
                "output head must be {}x{vocab}, got {}x{}",
                n + 1,
                w_out.rows(),
                w_out.cols()
            )));
        }
        Ok(RhnParams { n, n_in, vocab, w_g, w_t, w_out })
    }

    /// Default initialization: half-glorot normal recurrent weights (the
    /// untrained cell stays strongly contractive), glorot output head, zero
    /// bias rows. Deterministic in `seed`.
    pub fn glorot(n: usize, n_in: usize, vocab: usize, seed: u64) -> Self {
        let p = n + n_in + 1;
        let mut rng = CounterRng::new(seed).derive(&[INIT_STREAM]);
        let std_rec = 0.5 * (2.0 / (p + n) as f64).sqrt();
        let std_out = (2.0 / (n + 1 + vocab) as f64).sqrt();
        let mut fill = |rows: usize, cols: usize, std: f64| {
            let mut m = Mat::from_fn(rows, cols, |_, _| rng.normal() * std);
            for x in m.row_mut(rows - 1) {
                *x = 0.0;
            }
            m
        };
        let w_g = fill(p, n, std_rec);
        let w_t = fill(p, n, std_rec);
        let w_out = fill(n + 1, vocab, std_out);
        RhnParams { n, n_in, vocab, w_g, w_t, w_out }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    /// Width of `h_hat`: hidden + input one-hot + bias unit.
    pub fn p(&self) -> usize {
        self.n + self.n_in + 1
    }

    /// Length of the flat recurrent gradient block.
    pub fn rec_len(&self) -> usize {
        self.p() * 2 * self.n
    }
}

/// One forward step: everything the derivative computations need.
#[derive(Clone, Debug)]
pub struct RhnStep {
    pub h_prev: Vec<f64>,
    /// `(h_prev | onehot(x) | 1)`, length `p`.
    pub h_hat: Vec<f64>,
    /// Candidate, in (-1, 1).
    pub g: Vec<f64>,
    /// Transform gate, strictly in (0, 1).
    pub t_gate: Vec<f64>,
    pub h_next: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Advance the cell by one step.
pub fn forward(params: &RhnParams, h_prev: &[f64], input: usize) -> Result<RhnStep> {
    let n = params.n;
    assert_eq!(h_prev.len(), n, "hidden state length");
    assert!(input < params.n_in, "input id {input} out of range {}", params.n_in);
    let mut h_hat = vec![0.0; params.p()];
    h_hat[..n].copy_from_slice(h_prev);
    h_hat[n + input] = 1.0;
    h_hat[params.p() - 1] = 1.0;

    let z_g = params.w_g.row_mul(&h_hat);
    let z_t = params.w_t.row_mul(&h_hat);
    let g: Vec<f64> = z_g.iter().map(|&z| 2.0 * sigmoid(z) - 1.0).collect();
    let t_gate: Vec<f64> =
        z_t.iter().map(|&z| sigmoid(z).clamp(GATE_EPS, 1.0 - GATE_EPS)).collect();
    let h_next: Vec<f64> = (0..n)
        .map(|j| t_gate[j] * g[j] + (1.0 - t_gate[j]) * h_prev[j])
        .collect();
    if !h_next.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("rhn activations".into()));
    }
    Ok(RhnStep { h_prev: h_prev.to_vec(), h_hat, g, t_gate, h_next })
}

/// Lean forward evaluation of the next hidden state only, with a caller-built
/// `h_hat`. Used by the directional derivative, which perturbs the hidden
/// block of `h_hat` in place.
fn forward_h_only(params: &RhnParams, h_hat: &[f64], out: &mut [f64]) {
    let n = params.n;
    let z_g = params.w_g.row_mul(h_hat);
    let z_t = params.w_t.row_mul(h_hat);
    for j in 0..n {
        let g = 2.0 * sigmoid(z_g[j]) - 1.0;
        let t = sigmoid(z_t[j]).clamp(GATE_EPS, 1.0 - GATE_EPS);
        out[j] = t * g + (1.0 - t) * h_hat[j];
    }
}

/// The two diagonals of the immediate parameter Jacobian, evaluated from a
/// completed step: `d1[j] = t_j (1 - g_j^2) / 2` (candidate path) and
/// `d2[j] = (g_j - h_prev_j) t_j (1 - t_j)` (gate path).
pub fn gate_diagonals(step: &RhnStep) -> (Vec<f64>, Vec<f64>) {
    let n = step.g.len();
    let mut d1 = Vec::with_capacity(n);
    let mut d2 = Vec::with_capacity(n);
    for j in 0..n {
        let g = step.g[j];
        let t = step.t_gate[j];
        d1.push(t * (1.0 - g * g) / 2.0);
        d2.push((g - step.h_prev[j]) * t * (1.0 - t));
    }
    (d1, d2)
}

/// Jacobian of the new hidden state with respect to the previous one.
pub fn jacobian_h(params: &RhnParams, step: &RhnStep) -> Mat {
    let n = params.n;
    let (d1, d2) = gate_diagonals(step);
    let mut h = Mat::zeros(n, n);
    for l in 0..n {
        let wg_row = params.w_g.row(l);
        let wt_row = params.w_t.row(l);
        for j in 0..n {
            h.set(j, l, d1[j] * wg_row[j] + d2[j] * wt_row[j]);
        }
    }
    for j in 0..n {
        let v = h.at(j, j) + 1.0 - step.t_gate[j];
        h.set(j, j, v);
    }
    h
}

/// The immediate parameter Jacobian in factored form: its dense value is
/// `h_hat ⊗ (D1 | D2)` where both blocks are diagonal.
#[derive(Clone, Debug)]
pub struct ImmediateFactor {
    pub h_hat: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

impl ImmediateFactor {
    /// The `n x 2n` right factor `(D1 | D2)`.
    pub fn d_block(&self) -> Mat {
        let n = self.d1.len();
        let mut m = Mat::zeros(n, 2 * n);
        for j in 0..n {
            m.set(j, j, self.d1[j]);
            m.set(j, n + j, self.d2[j]);
        }
        m
    }

    /// Dense `n x (p * 2n)` expansion.
    pub fn dense(&self) -> Mat {
        let n = self.d1.len();
        let p = self.h_hat.len();
        let mut m = Mat::zeros(n, p * 2 * n);
        for j in 0..n {
            let row = m.row_mut(j);
            for (a, &ha) in self.h_hat.iter().enumerate() {
                if ha == 0.0 {
                    continue;
                }
                row[a * 2 * n + j] += ha * self.d1[j];
                row[a * 2 * n + n + j] += ha * self.d2[j];
            }
        }
        m
    }
}

pub fn immediate_factor(step: &RhnStep) -> ImmediateFactor {
    let (d1, d2) = gate_diagonals(step);
    ImmediateFactor { h_hat: step.h_hat.clone(), d1, d2 }
}

/// Full dense sensitivity matrix `d h_t / d theta`, `n x (p * 2n)`.
#[derive(Clone, Debug)]
pub struct RtrlState {
    pub g_mat: Mat,
}

impl RtrlState {
    pub fn zeros(params: &RhnParams) -> Self {
        RtrlState { g_mat: Mat::zeros(params.n, params.rec_len()) }
    }

    pub fn reset(&mut self) {
        self.g_mat.data_mut().fill(0.0);
    }
}

/// One step of the forward sensitivity recursion:
/// `G <- H G + dense(f)`.
pub fn rtrl_step(state: &mut RtrlState, h_jac: &Mat, f: &ImmediateFactor) {
    let n = f.d1.len();
    let mut g = h_jac.matmul(&state.g_mat);
    for j in 0..n {
        let row = g.row_mut(j);
        for (a, &ha) in f.h_hat.iter().enumerate() {
            if ha == 0.0 {
                continue;
            }
            row[a * 2 * n + j] += ha * f.d1[j];
            row[a * 2 * n + n + j] += ha * f.d2[j];
        }
    }
    state.g_mat = g;
}

/// `H_t b` without materializing `H_t`, by central differences along `b`
/// evaluated inside the step that produced `step`.
pub fn directional_derivative_step(params: &RhnParams, step: &RhnStep, b: &[f64]) -> Vec<f64> {
    let n = params.n;
    assert_eq!(b.len(), n);
    let nb = norm(b);
    if nb == 0.0 {
        return vec![0.0; n];
    }
    let eps = 1e-5 * norm(&step.h_prev).max(1.0);
    let mut h_hat = step.h_hat.clone();
    let mut plus = vec![0.0; n];
    let mut minus = vec![0.0; n];
    for j in 0..n {
        h_hat[j] = step.h_prev[j] + eps * b[j] / nb;
    }
    forward_h_only(params, &h_hat, &mut plus);
    for j in 0..n {
        h_hat[j] = step.h_prev[j] - eps * b[j] / nb;
    }
    forward_h_only(params, &h_hat, &mut minus);
    (0..n).map(|j| (plus[j] - minus[j]) * nb / (2.0 * eps)).collect()
}

/// Spec-shaped entry point: runs the forward step itself.
pub fn directional_derivative(
    params: &RhnParams,
    h_prev: &[f64],
    input: usize,
    b: &[f64],
) -> Result<Vec<f64>> {
    let step = forward(params, h_prev, input)?;
    Ok(directional_derivative_step(params, &step, b))
}

/// Gradient of the loss with respect to all parameters, recurrent block flat
/// plus the output head.
#[derive(Clone, Debug)]
pub struct ParamGrads {
    pub rec: Vec<f64>,
    pub out: Mat,
}

impl ParamGrads {
    pub fn zeros(params: &RhnParams) -> Self {
        ParamGrads {
            rec: vec![0.0; params.rec_len()],
            out: Mat::zeros(params.n + 1, params.vocab),
        }
    }

    pub fn clear(&mut self) {
        self.rec.fill(0.0);
        self.out.data_mut().fill(0.0);
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.rec.iter_mut().zip(&other.rec) {
            *a += b;
        }
        self.out.axpy(1.0, &other.out);
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.rec {
            *a *= s;
        }
        let scaled = self.out.scale(s);
        self.out = scaled;
    }

    pub fn is_finite(&self) -> bool {
        self.rec.iter().all(|x| x.is_finite()) && self.out.is_finite()
    }
}

/// Logits of the output head: `(h | 1) w_out`.
pub fn logits(params: &RhnParams, h: &[f64]) -> Vec<f64> {
    let n = params.n;
    assert_eq!(h.len(), n);
    let mut out = params.w_out.row(n).to_vec();
    for (l, &hl) in h.iter().enumerate() {
        for (o, &w) in out.iter_mut().zip(params.w_out.row(l)) {
            *o += hl * w;
        }
    }
    out
}

/// Cross-entropy loss in nats and its gradient with respect to the logits.
pub fn softmax_loss(params: &RhnParams, h: &[f64], target: usize) -> (f64, Vec<f64>) {
    let z = logits(params, h);
    let zmax = z.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut dlogits: Vec<f64> = z.iter().map(|&x| (x - zmax).exp()).collect();
    let total: f64 = dlogits.iter().sum();
    let loss = total.ln() + zmax - z[target];
    for d in &mut dlogits {
        *d /= total;
    }
    dlogits[target] -= 1.0;
    (loss, dlogits)
}

/// Pull the logit gradient back onto the hidden state (output bias row
/// excluded; it does not depend on `h`).
pub fn dl_dh(params: &RhnParams, dlogits: &[f64]) -> Vec<f64> {
    (0..params.n)
        .map(|l| crate::smalllin::dot(params.w_out.row(l), dlogits))
        .collect()
}

/// `out_grad += scale * (h | 1)^T dlogits`.
pub fn accumulate_out_grad(out_grad: &mut Mat, h: &[f64], dlogits: &[f64], scale: f64) {
    let n = h.len();
    for l in 0..n {
        let c = scale * h[l];
        if c == 0.0 {
            continue;
        }
        for (o, &d) in out_grad.row_mut(l).iter_mut().zip(dlogits) {
            *o += c * d;
        }
    }
    for (o, &d) in out_grad.row_mut(n).iter_mut().zip(dlogits) {
        *o += scale * d;
    }
}

/// One buffered step of a backpropagation window.
#[derive(Clone, Debug)]
pub struct WindowStep {
    pub step: RhnStep,
    pub target: Option<usize>,
    /// True when the hidden state was reset to zero immediately before this
    /// step; backpropagation must not flow across it.
    pub reset_before: bool,
}

/// Backpropagate one cell step: accumulates the recurrent gradient
/// contribution of `dh` into `rec` and returns `d loss / d h_prev`.
fn backward_cell(params: &RhnParams, step: &RhnStep, dh: &[f64], rec: &mut [f64]) -> Vec<f64> {
    let n = params.n;
    let (d1, d2) = gate_diagonals(step);
    let dz1: Vec<f64> = (0..n).map(|j| dh[j] * d1[j]).collect();
    let dz2: Vec<f64> = (0..n).map(|j| dh[j] * d2[j]).collect();
    for (a, &ha) in step.h_hat.iter().enumerate() {
        if ha == 0.0 {
            continue;
        }
        let row = &mut rec[a * 2 * n..(a + 1) * 2 * n];
        for j in 0..n {
            row[j] += ha * dz1[j];
            row[n + j] += ha * dz2[j];
        }
    }
    (0..n)
        .map(|l| {
            crate::smalllin::dot(params.w_g.row(l), &dz1)
                + crate::smalllin::dot(params.w_t.row(l), &dz2)
                + dh[l] * (1.0 - step.t_gate[l])
        })
        .collect()
}

/// Exact gradient of the summed window loss, with `dL/dh` truncated to zero
/// at the window start (and at every in-window reset). Returns the gradient,
/// the summed loss in nats, and the number of evaluated positions.
pub fn bptt_window(params: &RhnParams, window: &[WindowStep]) -> (ParamGrads, f64, usize) {
    let mut grads = ParamGrads::zeros(params);
    let mut dh = vec![0.0; params.n];
    let mut loss_sum = 0.0;
    let mut evals = 0usize;
    for ws in window.iter().rev() {
        if let Some(target) = ws.target {
            let (loss, dlogits) = softmax_loss(params, &ws.step.h_next, target);
            loss_sum += loss;
            evals += 1;
            accumulate_out_grad(&mut grads.out, &ws.step.h_next, &dlogits, 1.0);
            for (d, g) in dh.iter_mut().zip(dl_dh(params, &dlogits)) {
                *d += g;
            }
        }
        let dh_prev = backward_cell(params, &ws.step, &dh, &mut grads.rec);
        dh = if ws.reset_before { vec![0.0; params.n] } else { dh_prev };
    }
    (grads, loss_sum, evals)
}

/// Backpropagate a single hidden-state gradient through a buffered window,
/// returning the flat recurrent gradient. This is the truncated estimate of
/// `dL_t/dtheta` used when a window algorithm is driven step by step.
pub fn bptt_dlh(params: &RhnParams, window: &[(RhnStep, bool)], dl_dh_end: &[f64]) -> Vec<f64> {
    let mut rec = vec![0.0; params.rec_len()];
    let mut dh = dl_dh_end.to_vec();
    for (step, reset_before) in window.iter().rev() {
        let dh_prev = backward_cell(params, step, &dh, &mut rec);
        dh = if *reset_before { vec![0.0; params.n] } else { dh_prev };
        if dh.iter().all(|&x| x == 0.0) {
            break;
        }
    }
    rec
}

/// Run the forward pass over a window and return the exact truncated
/// gradient of its summed loss.
pub fn tbptt_gradient(
    params: &RhnParams,
    inputs: &[usize],
    targets: &[Option<usize>],
    h_init: &[f64],
) -> Result<(ParamGrads, f64, usize)> {
    if inputs.is_empty() {
        return Err(Error::EmptyInput);
    }
    if inputs.len() != targets.len() {
        return Err(Error::ShapeMismatch("inputs and targets differ in length".into()));
    }
    let mut window = Vec::with_capacity(inputs.len());
    let mut h = h_init.to_vec();
    for (&x, &tg) in inputs.iter().zip(targets) {
        let step = forward(params, &h, x)?;
        h = step.h_next.clone();
        window.push(WindowStep { step, target: tg, reset_before: false });
    }
    Ok(bptt_window(params, &window))
}

// ---------------------------------------------------------------------------
// Checkpoint format: UTF-8 `key=value` header lines terminated by a blank
// line, then raw little-endian f32s, row-major, in order w_g, w_t, w_out.
// ---------------------------------------------------------------------------

pub fn save_checkpoint(params: &RhnParams, seed: u64, path: &Path) -> Result<()> {
    let mut header = String::new();
    let _ = writeln!(header, "version=1");
    let _ = writeln!(header, "n={}", params.n);
    let _ = writeln!(header, "n_in={}", params.n_in);
    let _ = writeln!(header, "v={}", params.vocab);
    let _ = writeln!(header, "seed={seed}");
    header.push('\n');
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(header.as_bytes())?;
    for m in [&params.w_g, &params.w_t, &params.w_out] {
        for &x in m.data() {
            file.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    file.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(RhnParams, u64)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let split = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| Error::BadCheckpoint("missing blank line after header".into()))?;
    let header = std::str::from_utf8(&bytes[..split])
        .map_err(|_| Error::BadCheckpoint("header is not UTF-8".into()))?;
    let mut n = None;
    let mut n_in = None;
    let mut vocab = None;
    let mut seed = 0u64;
    let mut version = None;
    for line in header.lines() {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::BadCheckpoint(format!("bad header line {line:?}")))?;
        let parse =
            || value.parse::<u64>().map_err(|_| Error::BadCheckpoint(format!("bad value {line:?}")));
        match key {
            "version" => version = Some(parse()?),
            "n" => n = Some(parse()? as usize),
            "n_in" => n_in = Some(parse()? as usize),
            "v" => vocab = Some(parse()? as usize),
            "seed" => seed = parse()?,
            _ => return Err(Error::BadCheckpoint(format!("unknown header key {key:?}"))),
        }
    }
    if version != Some(1) {
        return Err(Error::BadCheckpoint("unsupported version".into()));
    }
    let (n, n_in, vocab) = match (n, n_in, vocab) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(Error::BadCheckpoint("missing dimension keys".into())),
    };
    let p = n + n_in + 1;
    let counts = [p * n, p * n, (n + 1) * vocab];
    let total: usize = counts.iter().sum();
    let payload = &bytes[split + 2..];
    if payload.len() != total * 4 {
        return Err(Error::BadCheckpoint(format!(
            "expected {} payload bytes, got {}",
            total * 4,
            payload.len()
        )));
    }
    let mut floats = Vec::with_capacity(total);
    for chunk in payload.chunks_exact(4) {
        floats.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
    }
    let w_g = Mat::new(p, n, floats[..counts[0]].to_vec())?;
    let w_t = Mat::new(p, n, floats[counts[0]..counts[0] + counts[1]].to_vec())?;
    let w_out = Mat::new(n + 1, vocab, floats[counts[0] + counts[1]..].to_vec())?;
    Ok((RhnParams::new(n, n_in, vocab, w_g, w_t, w_out)?, seed))
}
