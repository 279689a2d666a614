//! Binary string memorization task with a length curriculum.
//!
//! One episode presents `#`, then `L` random bits, then `L + 1` blanks; the
//! target asks for blanks while reading and then `#` followed by the same
//! bits. Loss is evaluated on the reconstruction segment only; padding
//! positions carry no target.

use crate::rng::CounterRng;

/// Alphabet ids: bits 0 and 1, the start/recall marker, and the blank.
pub const COPY_VOCAB: usize = 4;
pub const BIT0: usize = 0;
pub const BIT1: usize = 1;
pub const MARK: usize = 2;
pub const BLANK: usize = 3;

#[derive(Clone, Debug)]
pub struct CopySample {
    pub inputs: Vec<usize>,
    /// `None` marks positions excluded from the loss.
    pub targets: Vec<Option<usize>>,
    /// Number of payload bits `L`.
    pub bits: usize,
}

/// Draw one episode with `L` uniform in `[max(1, t_max - 5), t_max]`.
pub fn copy_sample(t_max: usize, rng: &mut CounterRng) -> CopySample {
    let t_max = t_max.max(1);
    let lo = t_max.saturating_sub(5).max(1);
    let len = lo + rng.below((t_max - lo + 1) as u64) as usize;

    let mut inputs = Vec::with_capacity(2 * len + 2);
    let mut targets = Vec::with_capacity(2 * len + 2);
    inputs.push(MARK);
    let bits: Vec<usize> = (0..len).map(|_| rng.below(2) as usize).collect();
    inputs.extend(&bits);
    inputs.extend(std::iter::repeat_n(BLANK, len + 1));

    targets.extend(std::iter::repeat_n(None, len + 1));
    targets.push(Some(MARK));
    targets.extend(bits.iter().map(|&b| Some(b)));

    CopySample { inputs, targets, bits: len }
}

/// Length curriculum: raise the maximum length by one whenever the smoothed
/// error drops below the threshold, then reset the smoother to a neutral
/// high value so the new length must prove itself.
#[derive(Clone, Debug)]
pub struct CopyCurriculum {
    pub t_max: usize,
    pub error_ema: f64,
    pub threshold: f64,
    pub decay: f64,
}

impl Default for CopyCurriculum {
    fn default() -> Self {
        CopyCurriculum { t_max: 1, error_ema: 1.0, threshold: 0.15, decay: 0.99 }
    }
}

impl CopyCurriculum {
    /// Fold one step's bits-per-character into the smoother.
    pub fn curriculum_step(&mut self, step_bpc: f64) {
        self.error_ema = self.decay * self.error_ema + (1.0 - self.decay) * step_bpc;
        if self.error_ema < self.threshold {
            self.t_max += 1;
            self.error_ema = 1.0;
        }
    }
}
