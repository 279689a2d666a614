//! Adam with bias correction over the cell weights and output head.

use crate::rnn::{ParamGrads, RhnParams};
use crate::smalllin::Mat;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct AdamState {
    m_rec: Vec<f64>,
    v_rec: Vec<f64>,
    m_out: Mat,
    v_out: Mat,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &RhnParams, lr: f64) -> Self {
        AdamState {
            m_rec: vec![0.0; params.rec_len()],
            v_rec: vec![0.0; params.rec_len()],
            m_out: Mat::zeros(params.n() + 1, params.vocab()),
            v_out: Mat::zeros(params.n() + 1, params.vocab()),
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update. Rejects non-finite gradients so divergence is caught at
/// the point it enters the parameters.
pub fn adam_update(state: &mut AdamState, params: &mut RhnParams, grads: &ParamGrads) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    state.t += 1;
    let c1 = 1.0 - state.beta1.powi(state.t as i32);
    let c2 = 1.0 - state.beta2.powi(state.t as i32);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);

    let n = params.n();
    let p = params.p();
    // Flat recurrent layout a*2n + col maps to w_g[a][col] for col < n and
    // w_t[a][col - n] otherwise.
    for a in 0..p {
        let base = a * 2 * n;
        for j in 0..n {
            for (idx, w) in [(base + j, params.w_g.row_mut(a)), (base + n + j, params.w_t.row_mut(a))]
            {
                let g = grads.rec[idx];
                let m = &mut state.m_rec[idx];
                *m = b1 * *m + (1.0 - b1) * g;
                let v = &mut state.v_rec[idx];
                *v = b2 * *v + (1.0 - b2) * g * g;
                w[j] -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
    for i in 0..params.w_out.rows() {
        for j in 0..params.w_out.cols() {
            let g = grads.out.at(i, j);
            let idx = i * params.w_out.cols() + j;
            let m = &mut state.m_out.data_mut()[idx];
            *m = b1 * *m + (1.0 - b1) * g;
            let v = &mut state.v_out.data_mut()[idx];
            *v = b2 * *v + (1.0 - b2) * g * g;
            let w = params.w_out.at(i, j) - lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            params.w_out.set(i, j, w);
        }
    }
    Ok(())
}
