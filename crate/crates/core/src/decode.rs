//! Greedy and beam-search decoding over any step-wise scorer.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::layers::{Dropout, LstmState};
use crate::model::{Decoder, Model};
use crate::tape::Tape;
use crate::vocab::{EOS, SOS, UNK};

pub const DEFAULT_MAX_LEN: usize = 30;

/// A decoder that can be advanced one token at a time.
pub trait StepModel {
    type State: Clone;

    fn start(&self) -> Result<Self::State>;

    /// Consumes `token` and returns the next state with the log-probabilities
    /// of every vocabulary entry.
    fn step(&self, state: &Self::State, token: u32) -> Result<(Self::State, Vec<f64>)>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecodeOptions {
    pub max_len: usize,
    /// Never emit `<unk>`.
    pub suppress_unk: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            max_len: DEFAULT_MAX_LEN,
            suppress_unk: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Emitted tokens, ending with `<eos>` when finished.
    pub tokens: Vec<u32>,
    /// Sum of the token log-probabilities.
    pub score: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Tokens without the closing `<eos>`.
    pub fn words(&self) -> &[u32] {
        match self.tokens.split_last() {
            Some((&EOS, rest)) => rest,
            _ => &self.tokens,
        }
    }
}

/// Higher score first, then lexicographically smaller tokens.
fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.tokens.cmp(&b.tokens))
}

fn allowed(token: usize, opts: &DecodeOptions) -> bool {
    !(opts.suppress_unk && token == UNK as usize)
}

/// Arg-max decoding; ties go to the lowest token id.
pub fn greedy_decode<M: StepModel>(model: &M, opts: &DecodeOptions) -> Result<Hypothesis> {
    if opts.max_len == 0 {
        return Err(Error::config("max_len must be at least 1"));
    }
    let mut state = model.start()?;
    let mut prev = SOS;
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
        finished: false,
    };
    while hyp.tokens.len() < opts.max_len {
        let (next, lp) = model.step(&state, prev)?;
        let mut best: Option<(usize, f64)> = None;
        for (i, &p) in lp.iter().enumerate() {
            if allowed(i, opts) && best.map_or(true, |(_, b)| p > b) {
                best = Some((i, p));
            }
        }
        let (tok, p) = best.ok_or_else(|| Error::invalid("every token is suppressed"))?;
        hyp.tokens.push(tok as u32);
        hyp.score += p;
        if tok as u32 == EOS {
            hyp.finished = true;
            break;
        }
        state = next;
        prev = tok as u32;
    }
    Ok(hyp)
}

/// Beam search of width `k`. Finished hypotheses stay in the beam unchanged
/// and compete with the extensions of live ones; scores are not length
/// normalized. Returns the final beam, best first.
pub fn beam_search<M: StepModel>(model: &M, k: usize, opts: &DecodeOptions) -> Result<Vec<Hypothesis>> {
    if k < 1 {
        return Err(Error::config("beam width must be at least 1"));
    }
    if opts.max_len == 0 {
        return Err(Error::config("max_len must be at least 1"));
    }
    let root = Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
        finished: false,
    };
    let mut beam: Vec<(Hypothesis, Option<M::State>)> = alloc::vec![(root, Some(model.start()?))];
    for _ in 0..opts.max_len {
        if beam.iter().all(|(h, _)| h.finished) {
            break;
        }
        let mut pool: Vec<(Hypothesis, Option<usize>)> = Vec::new();
        let mut next_states: Vec<M::State> = Vec::new();
        for (hyp, state) in &beam {
            if hyp.finished {
                pool.push((hyp.clone(), None));
                continue;
            }
            let state = state.as_ref().expect("live hypotheses carry a state");
            let prev = hyp.tokens.last().copied().unwrap_or(SOS);
            let (next, lp) = model.step(state, prev)?;
            let slot = next_states.len();
            next_states.push(next);
            for (i, &p) in lp.iter().enumerate() {
                if !allowed(i, opts) {
                    continue;
                }
                let mut tokens = hyp.tokens.clone();
                tokens.push(i as u32);
                pool.push((
                    Hypothesis {
                        tokens,
                        score: hyp.score + p,
                        finished: i as u32 == EOS,
                    },
                    Some(slot),
                ));
            }
        }
        pool.sort_by(|a, b| rank(&a.0, &b.0));
        pool.truncate(k);
        beam = pool
            .into_iter()
            .map(|(h, slot)| {
                let state = match (h.finished, slot) {
                    (false, Some(s)) => Some(next_states[s].clone()),
                    _ => None,
                };
                (h, state)
            })
            .collect();
        if beam.is_empty() {
            return Err(Error::invalid("every token is suppressed"));
        }
    }
    Ok(beam.into_iter().map(|(h, _)| h).collect())
}

/// Steps a model decoder from a fixed context vector.
pub struct DecoderStepper<'m> {
    model: &'m Model,
    decoder: &'m Decoder,
    context: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct StepperState {
    h: Vec<f64>,
    c: Vec<f64>,
}

impl<'m> DecoderStepper<'m> {
    pub fn new(model: &'m Model, decoder: &'m Decoder, context: Vec<f64>) -> Result<Self> {
        if context.len() != decoder.context_dim {
            return Err(Error::ShapeMismatch {
                op: "decoder_start",
                left: alloc::vec![context.len()],
                right: alloc::vec![decoder.context_dim],
            });
        }
        Ok(DecoderStepper { model, decoder, context })
    }

    /// Stepper for the answer decoder.
    pub fn answer(model: &'m Model, context: Vec<f64>) -> Result<Self> {
        Self::new(model, &model.answer_decoder, context)
    }
}

impl StepModel for DecoderStepper<'_> {
    type State = StepperState;

    fn start(&self) -> Result<StepperState> {
        Ok(StepperState {
            h: self.context.clone(),
            c: alloc::vec![0.0; self.decoder.lstm.hidden_size],
        })
    }

    fn step(&self, state: &StepperState, token: u32) -> Result<(StepperState, Vec<f64>)> {
        let mut t = Tape::inference(&self.model.params);
        let s = LstmState {
            h: t.constant_vector(state.h.clone()),
            c: t.constant_vector(state.c.clone()),
        };
        let ctx = t.constant_vector(self.context.clone());
        let (next, lp) = self.decoder.step(&mut t, &self.model.embedding, s, ctx, token, &mut Dropout::eval())?;
        Ok((
            StepperState {
                h: t.value(next.h).to_vec(),
                c: t.value(next.c).to_vec(),
            },
            t.value(lp).to_vec(),
        ))
    }
}

/// How answers are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Greedy,
    Beam(usize),
}

pub fn decode<M: StepModel>(model: &M, strategy: Strategy, opts: &DecodeOptions) -> Result<Hypothesis> {
    match strategy {
        Strategy::Greedy => greedy_decode(model, opts),
        Strategy::Beam(k) => Ok(beam_search(model, k, opts)?.swap_remove(0)),
    }
}

/// Answers turn `turn` of `d` given its ground-truth history.
pub fn answer_turn(model: &Model, d: &crate::data::EncodedDialogue, turn: usize, strategy: Strategy, opts: &DecodeOptions) -> Result<Hypothesis> {
    let mut t = Tape::inference(&model.params);
    let ctx = model.turn_context(&mut t, d, turn, &mut Dropout::eval())?;
    let stepper = DecoderStepper::answer(model, t.value(ctx.context).to_vec())?;
    decode(&stepper, strategy, opts)
}
