//! Utterance, dialogue-level, description, and FiLM-conditioned feature
//! encoders.
//!
//! The video and audio encoders share one structure: an optional stack of
//! FiLM blocks whose `(gamma, beta)` come from the current question encoding
//! and are applied identically at every time step, a fully connected layer,
//! an LSTM over the time steps, and additive attention queried by the
//! question. With FiLM disabled the raw features go straight to the LSTM.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::data::{FeatureTrack, Modality};
use crate::error::{Error, Result};
use crate::layers::{Attended, AttentionKeys, AttentionParams, Dropout, EmbeddingTable, Linear, LstmParams, LstmState, SequenceOutput};
use crate::tape::{Tape, Var};
use crate::tensor::ParamSet;
use crate::vocab::EOS;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    /// Video segments per track (`L`).
    pub segments: usize,
    /// FiLM blocks per modality (`N`).
    pub film_blocks: usize,
    pub film_hidden: usize,
    /// Width of the fully connected layer after the last FiLM block.
    pub fc_dim: usize,
    pub use_film: bool,
    pub video_dim: usize,
    pub audio_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            segments: 30,
            film_blocks: 2,
            film_hidden: 256,
            fc_dim: 256,
            use_film: true,
            video_dim: Modality::Video.default_dims(),
            audio_dim: Modality::Audio.default_dims(),
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segments == 0 {
            return Err(Error::config("segment count L must be at least 1"));
        }
        if self.use_film && (self.film_hidden == 0 || self.fc_dim == 0) {
            return Err(Error::config("FiLM widths must be positive"));
        }
        if self.video_dim == 0 || self.audio_dim == 0 {
            return Err(Error::config("feature widths must be positive"));
        }
        Ok(())
    }

    pub fn feature_dim(&self, m: Modality) -> usize {
        match m {
            Modality::Video => self.video_dim,
            Modality::Audio => self.audio_dim,
        }
    }
}

/// The affine step of a FiLM block, `relu(gamma * h + beta)`.
pub fn film_affine(t: &mut Tape, h: Var, gamma: Var, beta: Var) -> Result<Var> {
    let scaled = t.mul(gamma, h)?;
    let shifted = t.add(scaled, beta)?;
    t.relu(shifted)
}

/// One FiLM block: `h = relu(W x)`, `y = relu(gamma * h + beta) + r`
/// where the residual `r` is `x` when widths agree and `h` otherwise.
#[derive(Clone, Debug)]
pub struct FilmBlock {
    pub pre: Linear,
    /// Maps the question encoding to `concat(gamma, beta)`.
    pub conditioning: Linear,
    pub in_dim: usize,
    pub film_hidden: usize,
}

impl FilmBlock {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, name: &str, in_dim: usize, film_hidden: usize, cond_dim: usize, rng: &mut R) -> Self {
        FilmBlock {
            pre: Linear::glorot_without_bias(params, &format!("{name}.pre"), in_dim, film_hidden, rng),
            conditioning: Linear::new(params, &format!("{name}.cond"), cond_dim, 2 * film_hidden, rng),
            in_dim,
            film_hidden,
        }
    }

    pub fn gamma_beta(&self, t: &mut Tape, question: Var) -> Result<(Var, Var)> {
        let gb = self.conditioning.forward(t, question)?;
        let delta = t.slice(gb, 0, self.film_hidden)?;
        let ones = t.constant_vector(alloc::vec![1.0; self.film_hidden]);
        let gamma = t.add(ones, delta)?;
        let beta = t.slice(gb, self.film_hidden, self.film_hidden)?;
        Ok((gamma, beta))
    }

    /// Applies the block at every time step with one shared `(gamma, beta)`.
    pub fn forward(&self, t: &mut Tape, features: &[Var], question: Var) -> Result<Vec<Var>> {
        let (gamma, beta) = self.gamma_beta(t, question)?;
        self.forward_with(t, features, gamma, beta)
    }

    pub fn forward_with(&self, t: &mut Tape, features: &[Var], gamma: Var, beta: Var) -> Result<Vec<Var>> {
        features
            .iter()
            .map(|&x| {
                let h = self.pre.forward(t, x)?;
                let h = t.relu(h)?;
                let a = film_affine(t, h, gamma, beta)?;
                let residual = if self.in_dim == self.film_hidden { x } else { h };
                t.add(a, residual)
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct FilmStack {
    pub blocks: Vec<FilmBlock>,
    pub fc: Linear,
}

impl FilmStack {
    pub fn forward(&self, t: &mut Tape, features: &[Var], question: Var) -> Result<Vec<Var>> {
        let mut xs = features.to_vec();
        for block in &self.blocks {
            xs = block.forward(t, &xs, question)?;
        }
        xs.iter().map(|&x| self.fc.forward(t, x)).collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ModalityEncoding {
    /// Attention-weighted sum of the LSTM states.
    pub attended: Var,
    pub weights: Var,
    /// LSTM state after the last time step.
    pub final_state: LstmState,
}

/// Feature-track encoder shared by video and audio.
#[derive(Clone, Debug)]
pub struct ModalityEncoder {
    pub modality: Modality,
    pub feature_dim: usize,
    pub film: Option<FilmStack>,
    pub lstm: LstmParams,
    pub attention: AttentionParams,
    /// Row count the encoder insists on (`L` for FiLM-conditioned video).
    pub required_rows: Option<usize>,
}

impl ModalityEncoder {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        modality: Modality,
        cfg: &EncoderConfig,
        question_dim: usize,
        hidden: usize,
        att_dim: usize,
        rng: &mut R,
    ) -> Self {
        let name = modality.name();
        let feature_dim = cfg.feature_dim(modality);
        let film = cfg.use_film.then(|| {
            let mut in_dim = feature_dim;
            let blocks = (0..cfg.film_blocks)
                .map(|i| {
                    let b = FilmBlock::new(params, &format!("{name}.film{i}"), in_dim, cfg.film_hidden, question_dim, rng);
                    in_dim = cfg.film_hidden;
                    b
                })
                .collect();
            let fc = Linear::glorot(params, &format!("{name}.fc"), in_dim, cfg.fc_dim, rng);
            FilmStack { blocks, fc }
        });
        let lstm_in = if cfg.use_film { cfg.fc_dim } else { feature_dim };
        let lstm = LstmParams::new(params, &format!("{name}.lstm"), lstm_in, hidden, rng);
        let attention = AttentionParams::new(params, &format!("{name}.att"), hidden, question_dim, att_dim, rng);
        let required_rows = (cfg.use_film && modality == Modality::Video).then_some(cfg.segments);
        ModalityEncoder {
            modality,
            feature_dim,
            film,
            lstm,
            attention,
            required_rows,
        }
    }

    /// True when the encoding depends on the question beyond attention.
    pub fn is_conditioned(&self) -> bool {
        self.film.is_some()
    }

    fn rows(&self, t: &mut Tape, track: &FeatureTrack) -> Result<Vec<Var>> {
        if track.dims() != self.feature_dim {
            return Err(Error::invalid(format!(
                "{} track has {} dims, encoder expects {}",
                self.modality.name(),
                track.dims(),
                self.feature_dim
            )));
        }
        if let Some(l) = self.required_rows {
            if track.rows() != l {
                return Err(Error::invalid(format!(
                    "{} track has {} rows, FiLM encoder expects L = {l}",
                    self.modality.name(),
                    track.rows()
                )));
            }
        }
        Ok((0..track.rows()).map(|i| t.constant_vector(track.row_f64(i))).collect())
    }

    /// LSTM states over the (possibly FiLM-transformed) track. `question` is
    /// required when the encoder is conditioned.
    pub fn states(&self, t: &mut Tape, track: &FeatureTrack, question: Option<Var>) -> Result<SequenceOutput> {
        let rows = self.rows(t, track)?;
        let inputs = match &self.film {
            Some(film) => {
                let q = question.ok_or_else(|| Error::invalid("FiLM encoder needs a question encoding"))?;
                film.forward(t, &rows, q)?
            }
            None => rows,
        };
        self.lstm.encode_sequence(t, &inputs, None, None)
    }

    pub fn prepare(&self, t: &mut Tape, states: &SequenceOutput) -> Result<AttentionKeys> {
        self.attention.prepare(t, &states.states, Some(&states.valid))
    }

    pub fn attend(&self, t: &mut Tape, keys: &AttentionKeys, states: &SequenceOutput, question: Var) -> Result<ModalityEncoding> {
        let Attended { context, weights } = self.attention.attend_prepared(t, keys, question)?;
        Ok(ModalityEncoding {
            attended: context,
            weights,
            final_state: states.last,
        })
    }

    /// Full pipeline for one question.
    pub fn encode(&self, t: &mut Tape, track: &FeatureTrack, question: Var) -> Result<ModalityEncoding> {
        let states = self.states(t, track, Some(question))?;
        let keys = self.prepare(t, &states)?;
        self.attend(t, &keys, &states, question)
    }
}

#[derive(Clone, Debug)]
pub struct UtteranceEncoding {
    pub final_h: Var,
    pub states: Vec<Var>,
}

fn embed_tokens(t: &mut Tape, emb: &EmbeddingTable, tokens: &[u32], dropout: &mut Dropout) -> Result<Vec<Var>> {
    tokens
        .iter()
        .map(|&id| {
            let e = emb.lookup(t, id)?;
            dropout.apply(t, e)
        })
        .collect()
}

/// Single-layer LSTM over word embeddings of one utterance.
#[derive(Clone, Debug)]
pub struct UtteranceEncoder {
    pub lstm: LstmParams,
}

impl UtteranceEncoder {
    /// `tokens` must be non-empty and end in `<eos>`; the encoding is the
    /// hidden state at that step.
    pub fn encode(&self, t: &mut Tape, emb: &EmbeddingTable, tokens: &[u32], dropout: &mut Dropout) -> Result<UtteranceEncoding> {
        match tokens.last() {
            None => return Err(Error::invalid("encode_utterance on an empty utterance")),
            Some(&last) if last != EOS => return Err(Error::invalid("utterance is not <eos> terminated")),
            _ => {}
        }
        let inputs = embed_tokens(t, emb, tokens, dropout)?;
        let out = self.lstm.encode_sequence(t, &inputs, None, None)?;
        Ok(UtteranceEncoding {
            final_h: out.last.h,
            states: out.states,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DialogueState {
    pub state: LstmState,
    /// Utterances folded in so far.
    pub updates: usize,
}

/// Dialogue-level LSTM over utterance encodings, one step per utterance.
#[derive(Clone, Debug)]
pub struct DialogueEncoder {
    pub lstm: LstmParams,
}

impl DialogueEncoder {
    pub fn initial(&self, t: &mut Tape) -> DialogueState {
        DialogueState {
            state: self.lstm.zero_state(t),
            updates: 0,
        }
    }

    pub fn update(&self, t: &mut Tape, state: &DialogueState, utterance: Var) -> Result<DialogueState> {
        Ok(DialogueState {
            state: self.lstm.step(t, utterance, state.state)?,
            updates: state.updates + 1,
        })
    }
}

/// LSTM over the caption and/or summary, attended by the question.
#[derive(Clone, Debug)]
pub struct DescriptionEncoder {
    pub lstm: LstmParams,
    pub attention: AttentionParams,
}

impl DescriptionEncoder {
    pub fn prepare(&self, t: &mut Tape, emb: &EmbeddingTable, tokens: &[u32], dropout: &mut Dropout) -> Result<AttentionKeys> {
        if tokens.is_empty() {
            return Err(Error::invalid("encode_description on an empty description"));
        }
        let inputs = embed_tokens(t, emb, tokens, dropout)?;
        let out = self.lstm.encode_sequence(t, &inputs, None, None)?;
        self.attention.prepare(t, &out.states, None)
    }

    pub fn encode(&self, t: &mut Tape, emb: &EmbeddingTable, tokens: &[u32], question: Var, dropout: &mut Dropout) -> Result<Attended> {
        let keys = self.prepare(t, emb, tokens, dropout)?;
        self.attention.attend_prepared(t, &keys, question)
    }
}
