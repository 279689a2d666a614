//! Gradient-quality measurement: cosine between approximate and true
//! parameter gradients on a frozen network, and first/second moments of the
//! randomized samplers, by exhaustive sign enumeration where feasible and
//! Monte-Carlo otherwise.

use crate::approximators::AlgoSpec;
use crate::kronsum::{sign_trick_mix, KroneckerSum};
use crate::rng::{CounterRng, CountSigns, EnumSigns, SignSource};
use crate::rnn::{dl_dh, forward, softmax_loss, RhnParams};
use crate::smalllin::{dot, norm, Mat};
use crate::{Error, Result};

/// Default threshold below which a step's true gradient is considered too
/// small to be meaningful for learning.
pub const FILTER_THRESHOLD: f64 = 1e-4;

/// One step of a noise run.
#[derive(Clone, Debug)]
pub struct CosineRecord {
    pub step: u64,
    /// Missing when either gradient norm is below 1e-12.
    pub cosine: Option<f64>,
    pub true_norm: f64,
    pub approx_norm: f64,
    /// True when the true gradient norm fell below the filter threshold.
    pub filtered: bool,
}

/// Cosine of the angle between two flat gradients; `None` when either norm
/// is below 1e-12.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = norm(a);
    let nb = norm(b);
    if na < 1e-12 || nb < 1e-12 {
        return None;
    }
    Some(dot(a, b) / (na * nb))
}

/// Freeze the weights and co-evolve the chosen estimator with the exact
/// dense sensitivity on one shared stream of uniformly random characters,
/// recording per-step cosines between the two recurrent-gradient estimates.
///
/// `mem_cap_bytes` bounds the dense oracle state `n x (p * 2n)`; exceeding
/// it fails up front with the required size.
pub fn noise_protocol(
    params: &RhnParams,
    algo: AlgoSpec,
    steps: u64,
    seed: u64,
    filter_threshold: f64,
    mem_cap_bytes: usize,
) -> Result<Vec<CosineRecord>> {
    let required = params.n() * params.rec_len() * std::mem::size_of::<f64>();
    if required > mem_cap_bytes {
        return Err(Error::MemoryCap { required, cap: mem_cap_bytes });
    }
    let mut exact = AlgoSpec::Exact.build(params, CounterRng::new(seed).derive(&[0x0e, 0]));
    let mut approx = algo.build(params, CounterRng::new(seed).derive(&[0xa9, 0]));

    let mut data = CounterRng::new(seed).derive(&[0xda7a]);
    let vocab = params.vocab();
    let mut input = data.below(vocab as u64) as usize;
    let mut h = vec![0.0; params.n()];
    let mut records = Vec::with_capacity(steps as usize);
    for step_idx in 0..steps {
        let target = data.below(vocab as u64) as usize;
        let step = forward(params, &h, input)?;
        exact.advance(params, &step);
        approx.advance(params, &step);

        let (_, dlogits) = softmax_loss(params, &step.h_next, target);
        let dlh = dl_dh(params, &dlogits);
        let g_true = exact.estimate(params, &dlh);
        let g_est = approx.estimate(params, &dlh);
        let true_norm = norm(&g_true);
        records.push(CosineRecord {
            step: step_idx,
            cosine: cosine(&g_true, &g_est),
            true_norm,
            approx_norm: norm(&g_est),
            filtered: true_norm < filter_threshold,
        });

        h = step.h_next.clone();
        input = target;
    }
    Ok(records)
}

/// How to sample when measuring estimator moments.
#[derive(Clone, Copy, Debug)]
pub enum SampleBudget {
    /// Enumerate every sign assignment; fails if the sampler draws more
    /// than `max_draws` signs (outcome count is `2^draws`).
    Exhaustive { max_draws: u32 },
    MonteCarlo { samples: u64, seed: u64 },
}

/// First and second moments of a matrix-valued sampler against a target.
#[derive(Clone, Debug)]
pub struct Moments {
    pub mean: Mat,
    /// Frobenius distance between the mean and the target.
    pub abs_mean_err: f64,
    /// Same, relative to the target norm (or absolute for a zero target).
    pub rel_mean_err: f64,
    /// Mean squared Frobenius distance from the mean.
    pub variance: f64,
    /// Standard error of the variance estimate (Monte-Carlo only).
    pub variance_se: Option<f64>,
    pub outcomes: u64,
}

/// Estimate mean error and variance of a sampler. The sampler must draw a
/// number of signs that does not depend on the sign values.
pub fn estimator_moments(
    target: &Mat,
    mut sampler: impl FnMut(&mut dyn SignSource) -> Result<Mat>,
    budget: SampleBudget,
) -> Result<Moments> {
    let outcomes: Vec<Mat> = match budget {
        SampleBudget::Exhaustive { max_draws } => {
            let mut probe = CountSigns::default();
            let _ = sampler(&mut probe)?;
            let draws = probe.drawn;
            if draws > max_draws || draws >= 63 {
                return Err(Error::EnumerationTooLarge { draws, max: max_draws });
            }
            (0..(1u64 << draws))
                .map(|assignment| sampler(&mut EnumSigns::new(assignment)))
                .collect::<Result<_>>()?
        }
        SampleBudget::MonteCarlo { samples, seed } => {
            let base = CounterRng::new(seed).derive(&[0x3c]);
            (0..samples)
                .map(|i| sampler(&mut base.derive(&[i])))
                .collect::<Result<_>>()?
        }
    };
    if outcomes.is_empty() {
        return Err(Error::EmptyInput);
    }
    let count = outcomes.len() as f64;
    let mut mean = Mat::zeros(target.rows(), target.cols());
    for o in &outcomes {
        mean.axpy(1.0 / count, o);
    }
    let sq_devs: Vec<f64> = outcomes
        .iter()
        .map(|o| {
            let d = o.sub(&mean);
            d.frob_dot(&d)
        })
        .collect();
    let variance = sq_devs.iter().sum::<f64>() / count;
    let variance_se = match budget {
        SampleBudget::Exhaustive { .. } => None,
        SampleBudget::MonteCarlo { .. } => {
            let spread =
                sq_devs.iter().map(|&x| (x - variance) * (x - variance)).sum::<f64>() / count;
            Some((spread / count).sqrt())
        }
    };
    let abs_mean_err = mean.sub(target).frob_norm();
    let tnorm = target.frob_norm();
    Some(Moments {
        mean,
        abs_mean_err,
        rel_mean_err: if tnorm > 0.0 { abs_mean_err / tnorm } else { abs_mean_err },
        variance,
        variance_se,
        outcomes: outcomes.len() as u64,
    })
    .ok_or(Error::EmptyInput)
}

/// Baseline compression used for optimality comparisons: split the first
/// `r` terms across `r` sign-trick copies, each merged with the last term,
/// and average. This is what running `r` independent single-factor
/// estimators amounts to on a fixed `(r+1)`-term input.
pub fn kf_avg_compress(
    g: &KroneckerSum,
    r: usize,
    signs: &mut dyn SignSource,
) -> Result<KroneckerSum> {
    if g.term_count() != r + 1 {
        return Err(Error::ShapeMismatch(format!(
            "need exactly r + 1 = {} terms, got {}",
            r + 1,
            g.term_count()
        )));
    }
    let fresh = &g.terms()[r];
    let mut out = KroneckerSum::new(g.format());
    for (u, a) in &g.terms()[..r] {
        let scaled = u.scale(r as f64);
        let (mu, ma) = sign_trick_mix((&scaled, a), (&fresh.0, &fresh.1), signs)?;
        out.push_term(mu.scale(1.0 / r as f64), ma)?;
    }
    Ok(out)
}
