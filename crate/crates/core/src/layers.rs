//! Parameterized building blocks: linear maps, embeddings, LSTM, additive
//! attention and inverted dropout.
//!
//! Layers hold [`ParamId`] handles into a shared [`ParamSet`]; evaluating a
//! layer records its primitives on a [`Tape`].

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{ParamId, ParamSet, Tensor};

/// Half-width of the uniform initialization range.
pub const INIT_SCALE: f64 = 0.08;

fn init<R: Rng + ?Sized>(params: &mut ParamSet, name: &str, dims: &[usize], rng: &mut R) -> ParamId {
    params.add(name, Tensor::uniform(dims, INIT_SCALE, rng))
}

fn check_vector(t: &Tape, op: &'static str, v: Var, len: usize) -> Result<()> {
    if t.shape(v).dims() == [len] {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            op,
            left: t.shape(v).dims().to_vec(),
            right: alloc::vec![len],
        })
    }
}

/// `y = W x + b` with `W: [out, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let weight = init(params, &format!("{name}.weight"), &[out_dim, in_dim], rng);
        let bias = init(params, &format!("{name}.bias"), &[out_dim], rng);
        Linear {
            weight,
            bias: Some(bias),
            in_dim,
            out_dim,
        }
    }

    /// Bias-free map with Glorot-uniform weights, which keeps activation
    /// scale roughly constant through stacked feature layers.
    pub fn glorot_without_bias<R: Rng + ?Sized>(params: &mut ParamSet, name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let scale = libm::sqrt(6.0 / (in_dim + out_dim) as f64);
        let weight = params.add(format!("{name}.weight"), Tensor::uniform(&[out_dim, in_dim][..], scale, rng));
        Linear {
            weight,
            bias: None,
            in_dim,
            out_dim,
        }
    }

    /// [`Linear::glorot_without_bias`] plus a zero bias.
    pub fn glorot<R: Rng + ?Sized>(params: &mut ParamSet, name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let mut l = Self::glorot_without_bias(params, name, in_dim, out_dim, rng);
        l.bias = Some(params.add(format!("{name}.bias"), Tensor::zeros(&[out_dim][..])));
        l
    }

    pub fn without_bias<R: Rng + ?Sized>(params: &mut ParamSet, name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let weight = init(params, &format!("{name}.weight"), &[out_dim, in_dim], rng);
        Linear {
            weight,
            bias: None,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Result<Var> {
        check_vector(t, "linear", x, self.in_dim)?;
        let w = t.param(self.weight);
        let y = t.matmul(w, x)?;
        match self.bias {
            Some(b) => {
                let b = t.param(b);
                t.add(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Word-embedding matrix, one row per vocabulary entry.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    pub table: ParamId,
    pub vocab_size: usize,
    pub dim: usize,
}

impl EmbeddingTable {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, name: &str, vocab_size: usize, dim: usize, rng: &mut R) -> Self {
        EmbeddingTable {
            table: init(params, name, &[vocab_size, dim], rng),
            vocab_size,
            dim,
        }
    }

    pub fn trainable(&self, params: &ParamSet) -> bool {
        params.get(self.table).requires_grad
    }

    pub fn set_trainable(&self, params: &mut ParamSet, trainable: bool) {
        params.get_mut(self.table).requires_grad = trainable;
    }

    pub fn lookup(&self, t: &mut Tape, id: u32) -> Result<Var> {
        if id as usize >= self.vocab_size {
            return Err(Error::TokenOutOfRange {
                id,
                vocab_size: self.vocab_size,
            });
        }
        let table = t.param(self.table);
        t.row(table, id as usize)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// Single-layer LSTM. Gate blocks are stacked `[input, forget, cell, output]`
/// in a `[4h, in + h]` weight acting on `concat(x, h_prev)`.
#[derive(Clone, Debug)]
pub struct LstmParams {
    pub input_size: usize,
    pub hidden_size: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Hidden states of a masked sequence run.
#[derive(Clone, Debug)]
pub struct SequenceOutput {
    /// One entry per input step; masked steps repeat the last valid state.
    pub states: Vec<Var>,
    pub valid: Vec<bool>,
    /// State after the last valid step.
    pub last: LstmState,
}

impl SequenceOutput {
    pub fn valid_states(&self) -> Vec<Var> {
        self.states
            .iter()
            .zip(&self.valid)
            .filter(|(_, &ok)| ok)
            .map(|(s, _)| *s)
            .collect()
    }
}

impl LstmParams {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, name: &str, input_size: usize, hidden_size: usize, rng: &mut R) -> Self {
        let weight = init(params, &format!("{name}.weight"), &[4 * hidden_size, input_size + hidden_size], rng);
        let bias = init(params, &format!("{name}.bias"), &[4 * hidden_size], rng);
        LstmParams {
            input_size,
            hidden_size,
            weight,
            bias,
        }
    }

    pub fn param_count(&self) -> usize {
        4 * self.hidden_size * (self.input_size + self.hidden_size + 1)
    }

    pub fn zero_state(&self, t: &mut Tape) -> LstmState {
        LstmState {
            h: t.zeros(self.hidden_size),
            c: t.zeros(self.hidden_size),
        }
    }

    /// One recurrence step; `h = o * tanh(c)`, `c = f * c_prev + i * g`.
    pub fn step(&self, t: &mut Tape, x: Var, prev: LstmState) -> Result<LstmState> {
        let hs = self.hidden_size;
        check_vector(t, "lstm_step", x, self.input_size)?;
        check_vector(t, "lstm_step", prev.h, hs)?;
        check_vector(t, "lstm_step", prev.c, hs)?;
        let xh = t.concat(&[x, prev.h])?;
        let w = t.param(self.weight);
        let b = t.param(self.bias);
        let z = t.matmul(w, xh)?;
        let z = t.add(z, b)?;
        let i = t.slice(z, 0, hs)?;
        let i = t.sigmoid(i)?;
        let f = t.slice(z, hs, hs)?;
        let f = t.sigmoid(f)?;
        let g = t.slice(z, 2 * hs, hs)?;
        let g = t.tanh(g)?;
        let o = t.slice(z, 3 * hs, hs)?;
        let o = t.sigmoid(o)?;
        let keep = t.mul(f, prev.c)?;
        let write = t.mul(i, g)?;
        let c = t.add(keep, write)?;
        let tc = t.tanh(c)?;
        let h = t.mul(o, tc)?;
        Ok(LstmState { h, c })
    }

    /// Runs the cell over `inputs` from `init` (zero state when `None`).
    ///
    /// `mask` must be a prefix mask; masked steps carry the state forward
    /// unchanged and never touch their inputs.
    pub fn encode_sequence(&self, t: &mut Tape, inputs: &[Var], mask: Option<&[bool]>, init: Option<LstmState>) -> Result<SequenceOutput> {
        if inputs.is_empty() {
            return Err(Error::invalid("lstm_encode_sequence on an empty sequence"));
        }
        let valid: Vec<bool> = match mask {
            Some(m) if m.len() != inputs.len() => {
                return Err(Error::invalid(format!(
                    "mask length {} does not match {} inputs",
                    m.len(),
                    inputs.len()
                )))
            }
            Some(m) => {
                if m.windows(2).any(|w| !w[0] && w[1]) {
                    return Err(Error::invalid("mask is not a prefix mask"));
                }
                m.to_vec()
            }
            None => alloc::vec![true; inputs.len()],
        };
        let mut state = match init {
            Some(s) => s,
            None => self.zero_state(t),
        };
        let mut states = Vec::with_capacity(inputs.len());
        for (&x, &ok) in inputs.iter().zip(&valid) {
            if ok {
                state = self.step(t, x, state)?;
            }
            states.push(state.h);
        }
        Ok(SequenceOutput {
            states,
            valid,
            last: state,
        })
    }
}

/// Additive attention, `score_i = v . tanh(W_k key_i + W_q query)`.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub key: Linear,
    pub query: Linear,
    pub score: ParamId,
    pub att_dim: usize,
}

/// Keys with their projections precomputed, reusable across queries.
#[derive(Clone, Debug)]
pub struct AttentionKeys {
    keys: Var,
    projected: Vec<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct Attended {
    pub context: Var,
    /// Weights over the unmasked keys, in order.
    pub weights: Var,
}

impl AttentionParams {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, name: &str, key_dim: usize, query_dim: usize, att_dim: usize, rng: &mut R) -> Self {
        let key = Linear::without_bias(params, &format!("{name}.key"), key_dim, att_dim, rng);
        let query = Linear::without_bias(params, &format!("{name}.query"), query_dim, att_dim, rng);
        let score = init(params, &format!("{name}.score"), &[att_dim], rng);
        AttentionParams { key, query, score, att_dim }
    }

    pub fn prepare(&self, t: &mut Tape, keys: &[Var], mask: Option<&[bool]>) -> Result<AttentionKeys> {
        if let Some(m) = mask {
            if m.len() != keys.len() {
                return Err(Error::invalid("attention mask length differs from key count"));
            }
        }
        let live: Vec<Var> = keys
            .iter()
            .enumerate()
            .filter(|(i, _)| mask.map_or(true, |m| m[*i]))
            .map(|(_, k)| *k)
            .collect();
        if live.is_empty() {
            return Err(Error::invalid("additive_attention: every key is masked"));
        }
        let projected = live
            .iter()
            .map(|&k| self.key.forward(t, k))
            .collect::<Result<Vec<_>>>()?;
        let keys = t.stack(&live)?;
        Ok(AttentionKeys { keys, projected })
    }

    pub fn attend_prepared(&self, t: &mut Tape, keys: &AttentionKeys, query: Var) -> Result<Attended> {
        let q = self.query.forward(t, query)?;
        let v = t.param(self.score);
        let mut scores = Vec::with_capacity(keys.projected.len());
        for &k in &keys.projected {
            let s = t.add(k, q)?;
            let s = t.tanh(s)?;
            scores.push(t.matmul(v, s)?);
        }
        let scores = t.concat(&scores)?;
        let weights = t.softmax(scores)?;
        let context = t.matmul(weights, keys.keys)?;
        Ok(Attended { context, weights })
    }

    pub fn attend(&self, t: &mut Tape, query: Var, keys: &[Var], mask: Option<&[bool]>) -> Result<Attended> {
        let prepared = self.prepare(t, keys, mask)?;
        self.attend_prepared(t, &prepared, query)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Eval,
}

/// Inverted dropout: kept entries are scaled by `1 / retain`.
pub fn dropout<R: Rng + ?Sized>(t: &mut Tape, x: Var, retain: f64, mode: DropoutMode, rng: &mut R) -> Result<Var> {
    if !(retain > 0.0 && retain <= 1.0) {
        return Err(Error::config(format!("dropout retain probability {retain} not in (0, 1]")));
    }
    if mode == DropoutMode::Eval || retain == 1.0 {
        return Ok(x);
    }
    let mask = (0..t.shape(x).numel())
        .map(|_| if rng.gen::<f64>() < retain { 1.0 / retain } else { 0.0 })
        .collect();
    t.mask_mul(x, mask)
}

/// Dropout with its own random stream; `eval()` is the identity.
#[derive(Clone, Debug)]
pub struct Dropout {
    retain: f64,
    rng: Option<ChaCha8Rng>,
}

impl Dropout {
    pub fn train(retain: f64, seed: u64) -> Result<Self> {
        if !(retain > 0.0 && retain <= 1.0) {
            return Err(Error::config(format!("dropout retain probability {retain} not in (0, 1]")));
        }
        Ok(Dropout {
            retain,
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
        })
    }

    pub fn eval() -> Self {
        Dropout { retain: 1.0, rng: None }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn apply(&mut self, t: &mut Tape, x: Var) -> Result<Var> {
        match &mut self.rng {
            Some(rng) => dropout(t, x, self.retain, DropoutMode::Train, rng),
            None => Ok(x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_difference_check, GradCheckOptions};
    use alloc::vec;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn lstm_param_count() {
        let mut p = ParamSet::new();
        let l = LstmParams::new(&mut p, "l", 5, 7, &mut rng(0));
        assert_eq!(l.param_count(), 4 * 7 * (5 + 7 + 1));
        assert_eq!(p.count(), l.param_count());
    }

    #[test]
    fn zero_lstm_stays_zero() {
        let mut p = ParamSet::new();
        let l = LstmParams::new(&mut p, "l", 3, 4, &mut rng(0));
        p.tensors_mut().for_each(|t| t.data_mut().fill(0.0));
        let mut t = Tape::new(&p);
        let x = t.zeros(3);
        let s0 = l.zero_state(&mut t);
        let s = l.step(&mut t, x, s0).unwrap();
        assert_eq!(t.value(s.h), &[0.0; 4]);
        assert_eq!(t.value(s.c), &[0.0; 4]);
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let mut p = ParamSet::new();
        let l = LstmParams::new(&mut p, "l", 2, 3, &mut rng(0));
        p.get_mut(l.weight).data_mut().fill(0.0);
        let b = p.get_mut(l.bias).data_mut();
        b.fill(0.0);
        b[3..6].fill(50.0);
        let mut t = Tape::new(&p);
        let x = t.constant_vector(vec![0.7, -0.2]);
        let prev = LstmState {
            h: t.constant_vector(vec![0.1, 0.2, 0.3]),
            c: t.constant_vector(vec![0.5, -1.0, 2.0]),
        };
        let s = l.step(&mut t, x, prev).unwrap();
        for (c, want) in t.value(s.c).iter().zip([0.5, -1.0, 2.0]) {
            assert!((c - want).abs() < 1e-12);
        }
    }

    #[test]
    fn lstm_step_rejects_bad_input_dim() {
        let mut p = ParamSet::new();
        let l = LstmParams::new(&mut p, "l", 2, 3, &mut rng(0));
        let mut t = Tape::new(&p);
        let x = t.zeros(5);
        let s0 = l.zero_state(&mut t);
        assert!(matches!(l.step(&mut t, x, s0), Err(Error::ShapeMismatch { op: "lstm_step", .. })));
    }

    #[test]
    fn length_one_sequence_equals_single_step() {
        let mut p = ParamSet::new();
        let l = LstmParams::new(&mut p, "l", 3, 4, &mut rng(1));
        let mut t = Tape::new(&p);
        let x = t.constant_vector(vec![0.3, -0.1, 0.9]);
        let out = l.encode_sequence(&mut t, &[x], None, None).unwrap();
        let s0 = l.zero_state(&mut t);
        let s = l.step(&mut t, x, s0).unwrap();
        assert_eq!(t.value(out.last.h), t.value(s.h));
    }

    #[test]
    fn sequence_mask_rules() {
        let mut p = ParamSet::new();
        let l = LstmParams::new(&mut p, "l", 1, 2, &mut rng(1));
        let mut t = Tape::new(&p);
        assert!(l.encode_sequence(&mut t, &[], None, None).is_err());
        let xs: Vec<Var> = (0..3).map(|i| t.constant_vector(vec![i as f64])).collect();
        assert!(l.encode_sequence(&mut t, &xs, Some(&[true, false, true]), None).is_err());
        assert!(l.encode_sequence(&mut t, &xs, Some(&[true, true]), None).is_err());
    }

    #[test]
    fn masked_padding_leaves_final_state_bitwise_unchanged() {
        let mut p = ParamSet::new();
        let l = LstmParams::new(&mut p, "l", 2, 3, &mut rng(2));
        let mut t = Tape::new(&p);
        let xs: Vec<Var> = (0..5)
            .map(|i| t.constant_vector(vec![i as f64 * 0.1, 1.0 - i as f64 * 0.3]))
            .collect();
        let plain = l.encode_sequence(&mut t, &xs[..3], None, None).unwrap();
        let padded = l
            .encode_sequence(&mut t, &xs, Some(&[true, true, true, false, false]), None)
            .unwrap();
        assert_eq!(t.value(plain.last.h), t.value(padded.last.h));
        assert_eq!(t.value(plain.last.c), t.value(padded.last.c));
        assert_eq!(padded.valid_states().len(), 3);
    }

    #[test]
    fn masked_inputs_get_zero_gradient() {
        let mut p = ParamSet::new();
        let l = LstmParams::new(&mut p, "l", 2, 3, &mut rng(3));
        let mut t = Tape::new(&p);
        let xs: Vec<Var> = (0..4)
            .map(|i| t.leaf(&Tensor::vector(vec![0.2 * i as f64, -0.4]).with_grad()))
            .collect();
        let out = l.encode_sequence(&mut t, &xs, Some(&[true, true, false, false]), None).unwrap();
        let loss = t.reduce_sum(out.last.h).unwrap();
        let g = t.backward(loss).unwrap();
        assert!(g.wrt(xs[0]).is_some());
        for &x in &xs[2..] {
            assert!(g.wrt(x).map_or(true, |g| g.iter().all(|v| *v == 0.0)));
        }
    }

    #[test]
    fn lstm_gradients_match_finite_differences() {
        let mut p = ParamSet::new();
        let l = LstmParams::new(&mut p, "l", 3, 4, &mut rng(7));
        let xs = [vec![0.5, -0.3, 0.8], vec![-0.9, 0.1, 0.4]];
        let report = finite_difference_check(
            &p,
            |t| {
                let vars: Vec<Var> = xs.iter().map(|x| t.constant_vector(x.clone())).collect();
                let out = l.encode_sequence(t, &vars, None, None)?;
                t.reduce_sum(out.last.h)
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed(1e-4), "{report:?}");
    }

    #[test]
    fn single_key_gets_full_weight() {
        let mut p = ParamSet::new();
        let a = AttentionParams::new(&mut p, "a", 3, 2, 4, &mut rng(0));
        let mut t = Tape::new(&p);
        let k = t.constant_vector(vec![1.0, 2.0, 3.0]);
        let q = t.constant_vector(vec![0.5, -0.5]);
        let out = a.attend(&mut t, q, &[k], None).unwrap();
        assert_eq!(t.value(out.weights), &[1.0]);
        assert_eq!(t.value(out.context), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn identical_keys_get_uniform_weights() {
        let mut p = ParamSet::new();
        let a = AttentionParams::new(&mut p, "a", 2, 2, 3, &mut rng(0));
        let mut t = Tape::new(&p);
        let keys: Vec<Var> = (0..4).map(|_| t.constant_vector(vec![0.3, -0.7])).collect();
        let q = t.constant_vector(vec![1.0, 0.0]);
        let out = a.attend(&mut t, q, &keys, None).unwrap();
        for w in t.value(out.weights) {
            assert!((w - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn all_masked_keys_is_an_error() {
        let mut p = ParamSet::new();
        let a = AttentionParams::new(&mut p, "a", 2, 2, 3, &mut rng(0));
        let mut t = Tape::new(&p);
        let k = t.zeros(2);
        let q = t.zeros(2);
        assert!(a.attend(&mut t, q, &[k, k], Some(&[false, false])).is_err());
    }

    #[test]
    fn dropout_modes() {
        let mut t = Tape::standalone();
        let x = t.constant_vector(vec![1.0, -2.0, 3.0]);
        let mut r = rng(0);
        assert_eq!(dropout(&mut t, x, 0.8, DropoutMode::Eval, &mut r).unwrap(), x);
        assert_eq!(dropout(&mut t, x, 1.0, DropoutMode::Train, &mut r).unwrap(), x);
        assert!(dropout(&mut t, x, 0.0, DropoutMode::Train, &mut r).is_err());
        assert!(dropout(&mut t, x, -0.5, DropoutMode::Eval, &mut r).is_err());
        let y = dropout(&mut t, x, 0.5, DropoutMode::Train, &mut r).unwrap();
        for (a, b) in t.value(y).iter().zip([1.0, -2.0, 3.0]) {
            assert!(*a == 0.0 || *a == 2.0 * b);
        }
    }
}
