//! Scheduled sampling: choosing each decoder input between the ground-truth
//! token and a token sampled from the model's previous prediction.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.2;

#[derive(Clone, Debug)]
enum Decisions {
    Seeded(ChaCha8Rng),
    Constant(f64),
    Replay { inputs: Vec<u32>, pos: usize },
}

/// Draws `s ~ U(0, 1)` per decoder step after the first; the ground-truth
/// token is fed iff `s > threshold`, otherwise a token `v ~ p(.)` drawn from
/// the previous step's softmax. Sampled tokens are treated as constants.
#[derive(Clone, Debug)]
pub struct ScheduledSampler {
    threshold: f64,
    decisions: Decisions,
    tokens: ChaCha8Rng,
    trace: Vec<u32>,
}

impl ScheduledSampler {
    pub fn new(threshold: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::config("scheduled-sampling threshold must lie in [0, 1]"));
        }
        Ok(ScheduledSampler {
            threshold,
            decisions: Decisions::Seeded(ChaCha8Rng::seed_from_u64(seed)),
            tokens: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_70c3),
            trace: Vec::new(),
        })
    }

    /// Every draw returns `s`; token samples still come from `seed`.
    pub fn constant(threshold: f64, s: f64, seed: u64) -> Self {
        ScheduledSampler {
            threshold,
            decisions: Decisions::Constant(s),
            tokens: ChaCha8Rng::seed_from_u64(seed),
            trace: Vec::new(),
        }
    }

    /// Always feeds the ground truth.
    pub fn teacher_forcing() -> Self {
        Self::constant(DEFAULT_THRESHOLD, 1.0, 0)
    }

    /// Feeds back a previously recorded input trace verbatim.
    pub fn replay(inputs: Vec<u32>) -> Self {
        ScheduledSampler {
            threshold: DEFAULT_THRESHOLD,
            decisions: Decisions::Replay { inputs, pos: 0 },
            tokens: ChaCha8Rng::seed_from_u64(0),
            trace: Vec::new(),
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Picks the next decoder input. `log_probs` is the previous step's
    /// output distribution in log space.
    pub fn next_input(&mut self, teacher: u32, log_probs: &[f64]) -> u32 {
        let choice = match &mut self.decisions {
            Decisions::Replay { inputs, pos } => {
                let tok = inputs.get(*pos).copied().unwrap_or(teacher);
                *pos += 1;
                tok
            }
            Decisions::Seeded(rng) => {
                let s: f64 = rng.gen();
                if s > self.threshold {
                    teacher
                } else {
                    sample_categorical(log_probs, &mut self.tokens)
                }
            }
            Decisions::Constant(s) => {
                if *s > self.threshold {
                    teacher
                } else {
                    sample_categorical(log_probs, &mut self.tokens)
                }
            }
        };
        self.trace.push(choice);
        choice
    }

    /// Inputs chosen so far, for replay.
    pub fn take_trace(&mut self) -> Vec<u32> {
        core::mem::take(&mut self.trace)
    }
}

/// Inverse-CDF draw from a distribution given in log space.
pub fn sample_categorical<R: Rng + ?Sized>(log_probs: &[f64], rng: &mut R) -> u32 {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    for (i, lp) in log_probs.iter().enumerate() {
        cum += libm::exp(*lp);
        if u < cum {
            return i as u32;
        }
    }
    (log_probs.len() - 1) as u32
}
