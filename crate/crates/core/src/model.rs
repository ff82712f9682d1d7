//! The full hierarchical model: encoders fused into the dialogue context,
//! the answer decoder, the auxiliary description decoder, and the
//! word-normalized negative log-likelihood objective.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{DescriptionSource, EncodedDialogue, Modality};
use crate::encoders::{DescriptionEncoder, DialogueEncoder, DialogueState, EncoderConfig, ModalityEncoder, UtteranceEncoder};
use crate::error::{Error, Result};
use crate::layers::{AttentionKeys, AttentionParams, Dropout, EmbeddingTable, Linear, LstmParams, LstmState, SequenceOutput};
use crate::sampler::ScheduledSampler;
use crate::tape::{Tape, Var};
use crate::tensor::ParamSet;
use crate::vocab::{EOS, SOS};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Width of every LSTM state, and of the fused context.
    pub hidden: usize,
    pub att_dim: usize,
    pub encoder: EncoderConfig,
    pub use_video: bool,
    pub use_audio: bool,
    pub description: DescriptionSource,
    pub use_aux: bool,
    /// Weight of the auxiliary loss in the total objective.
    pub aux_weight: f64,
    /// Seed for parameter initialization.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            embed_dim: 300,
            hidden: 256,
            att_dim: 256,
            encoder: EncoderConfig::default(),
            use_video: true,
            use_audio: true,
            description: DescriptionSource::Caption,
            use_aux: true,
            aux_weight: 1.0,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < crate::vocab::RESERVED.len() {
            return Err(Error::config(format!("vocabulary of {} is smaller than the reserved set", self.vocab_size)));
        }
        if self.embed_dim == 0 || self.hidden == 0 || self.att_dim == 0 {
            return Err(Error::config("embedding, hidden and attention widths must be positive"));
        }
        if self.use_aux && self.description == DescriptionSource::None {
            return Err(Error::config("auxiliary decoding needs a description source"));
        }
        if self.use_aux && !self.use_video {
            return Err(Error::config("auxiliary decoding reads the video encoder state; enable video"));
        }
        if !(self.aux_weight.is_finite() && self.aux_weight >= 0.0) {
            return Err(Error::config("auxiliary weight must be finite and non-negative"));
        }
        self.encoder.validate()
    }

    /// Number of encodings concatenated into the context.
    pub fn fused_parts(&self) -> usize {
        1 + usize::from(self.description != DescriptionSource::None) + usize::from(self.use_video) + usize::from(self.use_audio)
    }
}

/// LSTM decoder fed `concat(embedding(prev), context)` at every step and
/// started from `h = context, c = 0`.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub lstm: LstmParams,
    pub output: Linear,
    pub context_dim: usize,
}

impl Decoder {
    fn new(params: &mut ParamSet, name: &str, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        Decoder {
            lstm: LstmParams::new(params, &format!("{name}.lstm"), cfg.embed_dim + cfg.hidden, cfg.hidden, rng),
            output: Linear::new(params, &format!("{name}.out"), cfg.hidden, cfg.vocab_size, rng),
            context_dim: cfg.hidden,
        }
    }

    pub fn start(&self, t: &mut Tape, context: Var) -> Result<LstmState> {
        if t.shape(context).dims() != [self.context_dim] {
            return Err(Error::ShapeMismatch {
                op: "decoder_start",
                left: t.shape(context).dims().to_vec(),
                right: alloc::vec![self.context_dim],
            });
        }
        Ok(LstmState {
            h: context,
            c: t.zeros(self.lstm.hidden_size),
        })
    }

    /// Consumes `token`, returns the new state and next-token log-probs.
    pub fn step(&self, t: &mut Tape, emb: &EmbeddingTable, state: LstmState, context: Var, token: u32, dropout: &mut Dropout) -> Result<(LstmState, Var)> {
        let e = emb.lookup(t, token)?;
        let e = dropout.apply(t, e)?;
        let x = t.concat(&[e, context])?;
        let next = self.lstm.step(t, x, state)?;
        let logits = self.output.forward(t, next.h)?;
        let log_probs = t.log_softmax(logits)?;
        Ok((next, log_probs))
    }

    /// `-(1/M) sum_m log p(r_m | context, r*_{m-1})` with `r*_0 = <sos>` and
    /// later inputs chosen by `sampler`.
    pub fn loss(&self, t: &mut Tape, emb: &EmbeddingTable, context: Var, target: &[u32], sampler: &mut ScheduledSampler, dropout: &mut Dropout) -> Result<Var> {
        if target.is_empty() {
            return Err(Error::invalid("decoder target is empty"));
        }
        if target.last() != Some(&EOS) {
            return Err(Error::invalid("decoder target must end with <eos>"));
        }
        let mut state = self.start(t, context)?;
        let mut input = SOS;
        let mut picks: Vec<(Var, Var)> = Vec::with_capacity(target.len());
        for (m, &want) in target.iter().enumerate() {
            if m > 0 {
                let prev_lp = t.value(picks[m - 1].0).to_vec();
                input = sampler.next_input(target[m - 1], &prev_lp);
            }
            let (next, lp) = self.step(t, emb, state, context, input, dropout)?;
            state = next;
            if want as usize >= emb.vocab_size {
                return Err(Error::TokenOutOfRange { id: want, vocab_size: emb.vocab_size });
            }
            picks.push((lp, t.pick(lp, want as usize)?));
        }
        let terms: Vec<Var> = picks.iter().map(|(_, p)| *p).collect();
        let all = t.concat(&terms)?;
        let total = t.reduce_sum(all)?;
        t.scale(total, -1.0 / target.len() as f64)
    }
}

/// Losses of one turn.
#[derive(Clone, Copy, Debug)]
pub struct TurnLosses {
    pub answer: Var,
    pub aux: Option<Var>,
}

/// Per-dialogue encodings that do not depend on the question.
struct DialogueCache {
    description: Option<AttentionKeys>,
    video: Option<(SequenceOutput, AttentionKeys)>,
    audio: Option<(SequenceOutput, AttentionKeys)>,
}

/// Context for one question.
#[derive(Clone, Copy, Debug)]
pub struct TurnContext {
    pub context: Var,
    pub state: DialogueState,
    pub question: Var,
    /// Video LSTM final state, the auxiliary decoder's input.
    pub video_state: Option<LstmState>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub embedding: EmbeddingTable,
    pub utterance: UtteranceEncoder,
    pub dialogue: DialogueEncoder,
    pub description: Option<DescriptionEncoder>,
    pub video: Option<ModalityEncoder>,
    pub audio: Option<ModalityEncoder>,
    pub fusion: Linear,
    pub answer_decoder: Decoder,
    pub aux_decoder: Option<Decoder>,
}

impl Model {
    /// Builds and initializes every parameter from `config.init_seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut p = ParamSet::new();
        let cfg = &config;
        let embedding = EmbeddingTable::new(&mut p, "embedding", cfg.vocab_size, cfg.embed_dim, &mut rng);
        let utterance = UtteranceEncoder {
            lstm: LstmParams::new(&mut p, "utterance.lstm", cfg.embed_dim, cfg.hidden, &mut rng),
        };
        let dialogue = DialogueEncoder {
            lstm: LstmParams::new(&mut p, "dialogue.lstm", cfg.hidden, cfg.hidden, &mut rng),
        };
        let description = (cfg.description != DescriptionSource::None).then(|| DescriptionEncoder {
            lstm: LstmParams::new(&mut p, "description.lstm", cfg.embed_dim, cfg.hidden, &mut rng),
            attention: AttentionParams::new(&mut p, "description.att", cfg.hidden, cfg.hidden, cfg.att_dim, &mut rng),
        });
        let video = cfg
            .use_video
            .then(|| ModalityEncoder::new(&mut p, Modality::Video, &cfg.encoder, cfg.hidden, cfg.hidden, cfg.att_dim, &mut rng));
        let audio = cfg
            .use_audio
            .then(|| ModalityEncoder::new(&mut p, Modality::Audio, &cfg.encoder, cfg.hidden, cfg.hidden, cfg.att_dim, &mut rng));
        let fusion = Linear::new(&mut p, "fusion", cfg.hidden * cfg.fused_parts(), cfg.hidden, &mut rng);
        let answer_decoder = Decoder::new(&mut p, "answer", cfg, &mut rng);
        let aux_decoder = cfg.use_aux.then(|| Decoder::new(&mut p, "aux", cfg, &mut rng));
        Ok(Model {
            config,
            params: p,
            embedding,
            utterance,
            dialogue,
            description,
            video,
            audio,
            fusion,
            answer_decoder,
            aux_decoder,
        })
    }

    /// Replaces the parameters with `params`, which must carry the same
    /// names and shapes in the same order.
    pub fn load_params(&mut self, params: ParamSet) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::invalid(format!(
                "parameter set has {} tensors, model expects {}",
                params.len(),
                self.params.len()
            )));
        }
        for ((n1, t1), (n2, t2)) in self.params.iter().zip(params.iter()) {
            if n1 != n2 || t1.shape() != t2.shape() {
                return Err(Error::invalid(format!("parameter {n2} {:?} does not match {n1} {:?}", t2.shape(), t1.shape())));
            }
        }
        self.params = params;
        Ok(())
    }

    /// Scalar parameters belonging to FiLM blocks.
    pub fn film_param_count(&self) -> usize {
        self.params
            .iter()
            .filter(|(n, _)| n.contains(".film") || n.ends_with(".fc.weight") || n.ends_with(".fc.bias"))
            .map(|(_, t)| t.numel())
            .sum()
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params.iter().map(|(n, _)| String::from(n)).collect()
    }

    /// Concatenates the present encodings in the fixed order (state,
    /// description, video, audio) and projects linearly to the decoder width.
    pub fn fuse_context(&self, t: &mut Tape, state: Option<Var>, description: Option<Var>, video: Option<Var>, audio: Option<Var>, dropout: &mut Dropout) -> Result<Var> {
        let state = match state {
            Some(s) => s,
            None if description.is_none() && video.is_none() && audio.is_none() => {
                return Err(Error::invalid("fuse_context: every input is absent"))
            }
            None => return Err(Error::invalid("fuse_context: the dialogue state is required")),
        };
        let expect = [
            (description.is_some(), self.description.is_some(), "description"),
            (video.is_some(), self.video.is_some(), "video"),
            (audio.is_some(), self.audio.is_some(), "audio"),
        ];
        for (given, configured, what) in expect {
            if given != configured {
                return Err(Error::invalid(format!(
                    "fuse_context: {what} encoding {} but the model is configured {}",
                    if given { "given" } else { "missing" },
                    if configured { "with it" } else { "without it" }
                )));
            }
        }
        let mut parts = Vec::with_capacity(4);
        for v in [Some(state), description, video, audio].into_iter().flatten() {
            parts.push(dropout.apply(t, v)?);
        }
        let x = t.concat(&parts)?;
        self.fusion.forward(t, x)
    }

    fn cache(&self, t: &mut Tape, d: &EncodedDialogue, dropout: &mut Dropout) -> Result<DialogueCache> {
        let description = match (&self.description, &d.description) {
            (Some(enc), Some(tokens)) => Some(enc.prepare(t, &self.embedding, tokens, dropout)?),
            (Some(_), None) => return Err(Error::invalid(format!("dialogue {} has no description", d.video_id))),
            (None, _) => None,
        };
        let mut unconditioned = |enc: &Option<ModalityEncoder>, track: &Option<crate::data::FeatureTrack>| -> Result<_> {
            match enc {
                Some(enc) if !enc.is_conditioned() => {
                    let track = track
                        .as_ref()
                        .ok_or_else(|| Error::invalid(format!("dialogue {} lacks a {} track", d.video_id, enc.modality.name())))?;
                    let states = enc.states(t, track, None)?;
                    let keys = enc.prepare(t, &states)?;
                    Ok(Some((states, keys)))
                }
                _ => Ok(None),
            }
        };
        let video = unconditioned(&self.video, &d.video)?;
        let audio = unconditioned(&self.audio, &d.audio)?;
        Ok(DialogueCache { description, video, audio })
    }

    fn modality(
        &self,
        t: &mut Tape,
        enc: &Option<ModalityEncoder>,
        track: &Option<crate::data::FeatureTrack>,
        cached: &Option<(SequenceOutput, AttentionKeys)>,
        question: Var,
        video_id: &str,
    ) -> Result<Option<(Var, LstmState)>> {
        let Some(enc) = enc else { return Ok(None) };
        let out = match cached {
            Some((states, keys)) => enc.attend(t, keys, states, question)?,
            None => {
                let track = track
                    .as_ref()
                    .ok_or_else(|| Error::invalid(format!("dialogue {video_id} lacks a {} track", enc.modality.name())))?;
                enc.encode(t, track, question)?
            }
        };
        Ok(Some((out.attended, out.final_state)))
    }

    fn context_for(&self, t: &mut Tape, d: &EncodedDialogue, cache: &DialogueCache, state: &DialogueState, question_tokens: &[u32], dropout: &mut Dropout) -> Result<TurnContext> {
        let q = self.utterance.encode(t, &self.embedding, question_tokens, dropout)?.final_h;
        let state = self.dialogue.update(t, state, q)?;
        let desc = match (&self.description, &cache.description) {
            (Some(enc), Some(keys)) => Some(enc.attention.attend_prepared(t, keys, q)?.context),
            _ => None,
        };
        let video = self.modality(t, &self.video, &d.video, &cache.video, q, &d.video_id)?;
        let audio = self.modality(t, &self.audio, &d.audio, &cache.audio, q, &d.video_id)?;
        let context = self.fuse_context(t, Some(state.state.h), desc, video.map(|v| v.0), audio.map(|a| a.0), dropout)?;
        Ok(TurnContext {
            context,
            state,
            question: q,
            video_state: video.map(|v| v.1),
        })
    }

    /// Losses for turns `0..turns` of `d`; each ground-truth answer is folded
    /// into the history before the next question.
    pub fn forward_dialogue(&self, t: &mut Tape, d: &EncodedDialogue, turns: usize, dropout: &mut Dropout, sampler: &mut ScheduledSampler) -> Result<Vec<TurnLosses>> {
        if turns > d.turns.len() {
            return Err(Error::OutOfRange {
                what: "turn",
                index: turns,
                len: d.turns.len(),
            });
        }
        let cache = self.cache(t, d, dropout)?;
        let mut state = self.dialogue.initial(t);
        let mut answers = Vec::with_capacity(turns);
        let mut video_states = Vec::with_capacity(turns);
        for turn in &d.turns[..turns] {
            let ctx = self.context_for(t, d, &cache, &state, &turn.question, dropout)?;
            answers.push(self.answer_decoder.loss(t, &self.embedding, ctx.context, &turn.answer, sampler, dropout)?);
            video_states.push(ctx.video_state);
            let a = self.utterance.encode(t, &self.embedding, &turn.answer, dropout)?.final_h;
            state = self.dialogue.update(t, &ctx.state, a)?;
        }
        // Auxiliary terms run after every answer term so that they cannot
        // perturb the answer losses' random streams.
        let mut out = Vec::with_capacity(turns);
        for (answer, video_state) in answers.into_iter().zip(video_states) {
            let aux = match &self.aux_decoder {
                Some(dec) => {
                    let target = d
                        .description_target()
                        .ok_or_else(|| Error::invalid(format!("auxiliary decoding enabled but dialogue {} has no description", d.video_id)))?;
                    let vs = video_state.ok_or_else(|| Error::invalid("auxiliary decoding needs the video encoder"))?;
                    Some(dec.loss(t, &self.embedding, vs.h, &target, sampler, dropout)?)
                }
                None => None,
            };
            out.push(TurnLosses { answer, aux });
        }
        Ok(out)
    }

    /// Losses of turn `turn` (0-based) with turns before it as history.
    pub fn forward_turn(&self, t: &mut Tape, d: &EncodedDialogue, turn: usize, dropout: &mut Dropout, sampler: &mut ScheduledSampler) -> Result<TurnLosses> {
        if turn >= d.turns.len() {
            return Err(Error::OutOfRange {
                what: "turn",
                index: turn,
                len: d.turns.len(),
            });
        }
        let losses = self.forward_dialogue(t, d, turn + 1, dropout, sampler)?;
        Ok(losses[turn])
    }

    /// `answer + aux_weight * aux` for one turn.
    pub fn turn_objective(&self, t: &mut Tape, losses: &TurnLosses) -> Result<Var> {
        match losses.aux {
            Some(aux) => {
                let w = t.scale(aux, self.config.aux_weight)?;
                t.add(losses.answer, w)
            }
            None => Ok(losses.answer),
        }
    }

    /// Sum of per-turn objectives over the whole dialogue.
    pub fn dialogue_objective(&self, t: &mut Tape, d: &EncodedDialogue, dropout: &mut Dropout, sampler: &mut ScheduledSampler) -> Result<(Var, usize)> {
        let losses = self.forward_dialogue(t, d, d.turns.len(), dropout, sampler)?;
        let terms = losses
            .iter()
            .map(|l| self.turn_objective(t, l))
            .collect::<Result<Vec<_>>>()?;
        let all = t.concat(&terms)?;
        Ok((t.reduce_sum(all)?, terms.len()))
    }

    /// Context for turn `turn` with ground-truth history, on any tape.
    pub fn turn_context(&self, t: &mut Tape, d: &EncodedDialogue, turn: usize, dropout: &mut Dropout) -> Result<TurnContext> {
        if turn >= d.turns.len() {
            return Err(Error::OutOfRange {
                what: "turn",
                index: turn,
                len: d.turns.len(),
            });
        }
        let cache = self.cache(t, d, dropout)?;
        let mut state = self.dialogue.initial(t);
        for past in &d.turns[..turn] {
            let q = self.utterance.encode(t, &self.embedding, &past.question, dropout)?.final_h;
            state = self.dialogue.update(t, &state, q)?;
            let a = self.utterance.encode(t, &self.embedding, &past.answer, dropout)?.final_h;
            state = self.dialogue.update(t, &state, a)?;
        }
        self.context_for(t, d, &cache, &state, &d.turns[turn].question, dropout)
    }
}

/// Incremental dialogue for generation: questions and answers are folded in
/// one utterance at a time and the dialogue state is carried as plain values.
pub struct DialogueSession<'m> {
    model: &'m Model,
    dialogue: EncodedDialogue,
    h: Vec<f64>,
    c: Vec<f64>,
    utterances: usize,
}

impl<'m> DialogueSession<'m> {
    /// `dialogue` supplies the description and tracks; its turns are ignored.
    pub fn new(model: &'m Model, dialogue: &EncodedDialogue) -> Self {
        let hs = model.config.hidden;
        DialogueSession {
            model,
            dialogue: EncodedDialogue {
                turns: Vec::new(),
                ..dialogue.clone()
            },
            h: alloc::vec![0.0; hs],
            c: alloc::vec![0.0; hs],
            utterances: 0,
        }
    }

    pub fn utterances(&self) -> usize {
        self.utterances
    }

    pub fn state(&self) -> (&[f64], &[f64]) {
        (&self.h, &self.c)
    }

    fn restore(&self, t: &mut Tape) -> DialogueState {
        DialogueState {
            state: LstmState {
                h: t.constant_vector(self.h.clone()),
                c: t.constant_vector(self.c.clone()),
            },
            updates: self.utterances,
        }
    }

    fn store(&mut self, t: &Tape, s: &DialogueState) {
        self.h = t.value(s.state.h).to_vec();
        self.c = t.value(s.state.c).to_vec();
        self.utterances = s.updates;
    }

    /// Folds an `<eos>`-terminated utterance into the dialogue state.
    pub fn observe(&mut self, utterance: &[u32]) -> Result<()> {
        let m = self.model;
        let mut t = Tape::inference(&m.params);
        let state = self.restore(&mut t);
        let mut dropout = Dropout::eval();
        let enc = m.utterance.encode(&mut t, &m.embedding, utterance, &mut dropout)?;
        let next = m.dialogue.update(&mut t, &state, enc.final_h)?;
        self.store(&t, &next);
        Ok(())
    }

    /// Folds the question in and returns the decoder context vector.
    pub fn question_context(&mut self, question: &[u32]) -> Result<Vec<f64>> {
        let m = self.model;
        let mut t = Tape::inference(&m.params);
        let state = self.restore(&mut t);
        let mut dropout = Dropout::eval();
        let cache = m.cache(&mut t, &self.dialogue, &mut dropout)?;
        let ctx = m.context_for(&mut t, &self.dialogue, &cache, &state, question, &mut dropout)?;
        self.store(&t, &ctx.state);
        Ok(t.value(ctx.context).to_vec())
    }
}
