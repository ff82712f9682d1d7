//! One pass/fail line per acceptance criterion.
//!
//! Run with `cargo test -p film-hred --test acceptance -- --nocapture` to see
//! the report. Criterion 10 reads the official splits and stored answer files
//! from `$FILM_HRED_DATA` when present; only its arithmetic part runs without
//! them.

use std::path::Path;
use std::time::{Duration, Instant};

use film_hred::checkpoint::{decode_checkpoint, encode_checkpoint, Checkpoint};
use film_hred::config::RunConfig;
use film_hred::dataset::{load_splits, parse_dataset, split_path, to_json};
use film_hred::features::{decode_features, encode_features};
use film_hred::score::{dialogue_references, read_tsv, score_run};
use film_hred::{Error, FormatError};
use film_hred_core::data::{DescriptionSource, EncodedDialogue, EncodedTurn, FeatureTrack, Modality};
use film_hred_core::decode::{beam_search, greedy_decode, DecodeOptions, DecoderStepper, Hypothesis, StepModel};
use film_hred_core::encoders::{film_affine, EncoderConfig, FilmBlock, ModalityEncoder};
use film_hred_core::gradcheck::{finite_difference_check, GradCheckOptions};
use film_hred_core::layers::{AttentionParams, Dropout, LstmParams, LstmState};
use film_hred_core::metrics::{bleu, cider_d, cider_d_segments, modified_precision, relative_improvement, rouge_l_pair, EvalPair, MetricReport};
use film_hred_core::model::{Model, ModelConfig};
use film_hred_core::optim::{AmsgradConfig, AmsgradState};
use film_hred_core::sampler::ScheduledSampler;
use film_hred_core::synth::{synthesize, SynthConfig, SynthTask};
use film_hred_core::tape::{Tape, Var};
use film_hred_core::train::{greedy_pairs, train, TrainConfig};
use film_hred_core::vocab::{tokenize, EOS, SOS};
use film_hred_core::{ParamSet, Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const INSTANCES: u64 = 20;
const GRAD_TOL: f64 = 1e-4;

struct Outcome {
    pass: bool,
    detail: String,
    /// Failure that comes only from a documented conflict between an
    /// expected constant and its own formula.
    known_deviation: bool,
}

impl Outcome {
    fn check(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
            known_deviation: false,
        }
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rvec(r: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(-scale..scale)).collect()
}

fn scramble(params: &mut ParamSet, scale: f64, r: &mut impl Rng) {
    for t in params.tensors_mut() {
        for x in t.data_mut() {
            *x = r.gen_range(-scale..scale);
        }
    }
}

fn input(params: &mut ParamSet, name: &str, n: usize, r: &mut impl Rng) -> film_hred_core::ParamId {
    params.add(name, Tensor::vector(rvec(r, n, 1.0)))
}

fn project(t: &mut Tape, x: Var, weights: &[f64]) -> Result<Var> {
    let w = t.constant_vector(weights.to_vec());
    let p = t.mul(x, w)?;
    t.reduce_sum(p)
}

fn max_error<F>(params: &ParamSet, loss: F, seed: u64, max_coords: Option<usize>) -> f64
where
    F: FnMut(&mut Tape) -> Result<Var>,
{
    let opts = GradCheckOptions {
        seed,
        max_coords,
        ..Default::default()
    };
    finite_difference_check(params, loss, &opts).expect("gradient check runs").max_error()
}

fn track(modality: Modality, rows: usize, dims: usize, r: &mut impl Rng) -> FeatureTrack {
    let values = (0..rows * dims).map(|_| r.gen_range(-1.0f32..1.0)).collect();
    FeatureTrack::new(modality, rows, dims, values).unwrap()
}

fn encoder_config(segments: usize) -> EncoderConfig {
    EncoderConfig {
        segments,
        film_blocks: 2,
        film_hidden: 6,
        fc_dim: 5,
        use_film: true,
        video_dim: 8,
        audio_dim: 8,
    }
}

fn tiny_model(vocab: usize, seed: u64) -> Model {
    Model::new(ModelConfig {
        vocab_size: vocab,
        embed_dim: 6,
        hidden: 7,
        att_dim: 5,
        encoder: encoder_config(3),
        use_video: true,
        use_audio: true,
        description: DescriptionSource::Caption,
        use_aux: true,
        aux_weight: 1.0,
        init_seed: seed,
    })
    .unwrap()
}

fn utterance(r: &mut impl Rng, vocab: usize, max_len: usize) -> Vec<u32> {
    let mut u: Vec<u32> = (0..r.gen_range(1..=max_len)).map(|_| r.gen_range(5..vocab as u32)).collect();
    u.push(EOS);
    u
}

fn random_dialogue(cfg: &ModelConfig, turns: usize, seed: u64) -> EncodedDialogue {
    let mut r = rng(seed);
    let v = cfg.vocab_size;
    EncodedDialogue {
        video_id: format!("v{seed}"),
        description: Some(utterance(&mut r, v, 4)),
        turns: (0..turns)
            .map(|_| EncodedTurn {
                question: utterance(&mut r, v, 4),
                answer: utterance(&mut r, v, 3),
            })
            .collect(),
        video: Some(track(Modality::Video, cfg.encoder.segments, cfg.encoder.video_dim, &mut r)),
        audio: Some(track(Modality::Audio, 2, cfg.encoder.audio_dim, &mut r)),
        audio_substituted: false,
    }
}

fn worst_over_seeds(f: impl Fn(u64) -> f64) -> f64 {
    (0..INSTANCES).map(f).fold(0.0, f64::max)
}

fn lstm_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut p = ParamSet::new();
    let lstm = LstmParams::new(&mut p, "lstm", 4, 5, &mut r);
    scramble(&mut p, 0.5, &mut r);
    let xs: Vec<_> = (0..3).map(|i| input(&mut p, &format!("x{i}"), 4, &mut r)).collect();
    let (h0, c0) = (input(&mut p, "h0", 5, &mut r), input(&mut p, "c0", 5, &mut r));
    let w = rvec(&mut r, 10, 1.0);
    max_error(
        &p,
        |t| {
            let inputs: Vec<Var> = xs.iter().map(|&x| t.param(x)).collect();
            let init = LstmState { h: t.param(h0), c: t.param(c0) };
            let out = lstm.encode_sequence(t, &inputs, None, Some(init))?;
            let both = t.concat(&[out.last.h, out.last.c])?;
            project(t, both, &w)
        },
        seed,
        None,
    )
}

fn attention_error(seed: u64) -> f64 {
    let mut r = rng(100 + seed);
    let mut p = ParamSet::new();
    let att = AttentionParams::new(&mut p, "att", 5, 4, 3, &mut r);
    scramble(&mut p, 0.8, &mut r);
    let keys: Vec<_> = (0..4).map(|i| input(&mut p, &format!("k{i}"), 5, &mut r)).collect();
    let q = input(&mut p, "q", 4, &mut r);
    let w = rvec(&mut r, 9, 1.0);
    max_error(
        &p,
        |t| {
            let ks: Vec<Var> = keys.iter().map(|&k| t.param(k)).collect();
            let q = t.param(q);
            let out = att.attend(t, q, &ks, None)?;
            let both = t.concat(&[out.context, out.weights])?;
            project(t, both, &w)
        },
        seed,
        None,
    )
}

fn film_block_error(seed: u64) -> f64 {
    let mut r = rng(200 + seed);
    let in_dim = if seed % 2 == 0 { 4 } else { 5 };
    let mut p = ParamSet::new();
    let block = FilmBlock::new(&mut p, "film", in_dim, 5, 3, &mut r);
    scramble(&mut p, 0.8, &mut r);
    let xs: Vec<_> = (0..3).map(|i| input(&mut p, &format!("x{i}"), in_dim, &mut r)).collect();
    let q = input(&mut p, "q", 3, &mut r);
    let w = rvec(&mut r, 15, 1.0);
    max_error(
        &p,
        |t| {
            let feats: Vec<Var> = xs.iter().map(|&x| t.param(x)).collect();
            let q = t.param(q);
            let ys = block.forward(t, &feats, q)?;
            let all = t.concat(&ys)?;
            project(t, all, &w)
        },
        seed,
        None,
    )
}

fn fusion_error(seed: u64) -> f64 {
    let mut model = tiny_model(12, seed);
    let mut r = rng(300 + seed);
    let h = model.config.hidden;
    let parts: Vec<_> = ["state", "desc", "video", "audio"].iter().map(|n| input(&mut model.params, &format!("in.{n}"), h, &mut r)).collect();
    scramble(&mut model.params, 0.5, &mut r);
    let w = rvec(&mut r, h, 1.0);
    max_error(
        &model.params,
        |t| {
            let v: Vec<Var> = parts.iter().map(|&p| t.param(p)).collect();
            let c = model.fuse_context(t, Some(v[0]), Some(v[1]), Some(v[2]), Some(v[3]), &mut Dropout::eval())?;
            project(t, c, &w)
        },
        seed,
        None,
    )
}

fn decoders_error(seed: u64) -> f64 {
    let mut model = tiny_model(10, seed);
    let mut r = rng(400 + seed);
    let ctx = input(&mut model.params, "in.context", model.config.hidden, &mut r);
    scramble(&mut model.params, 0.5, &mut r);
    let answer = utterance(&mut r, 10, 3);
    let aux = utterance(&mut r, 10, 3);
    let m = &model;
    max_error(
        &m.params,
        |t| {
            let c = t.param(ctx);
            let a = m.answer_decoder.loss(t, &m.embedding, c, &answer, &mut ScheduledSampler::teacher_forcing(), &mut Dropout::eval())?;
            let dec = m.aux_decoder.as_ref().unwrap();
            let b = dec.loss(t, &m.embedding, c, &aux, &mut ScheduledSampler::teacher_forcing(), &mut Dropout::eval())?;
            let b = t.scale(b, 0.7)?;
            t.add(a, b)
        },
        seed,
        None,
    )
}

fn modality_error(modality: Modality, seed: u64) -> f64 {
    let mut r = rng(500 + seed);
    let mut p = ParamSet::new();
    let enc = ModalityEncoder::new(&mut p, modality, &encoder_config(3), 4, 5, 3, &mut r);
    scramble(&mut p, 0.5, &mut r);
    let q = input(&mut p, "q", 4, &mut r);
    let tr = track(modality, 3, 8, &mut r);
    let w = rvec(&mut r, 10, 1.0);
    max_error(
        &p,
        |t| {
            let q = t.param(q);
            let out = enc.encode(t, &tr, q)?;
            let both = t.concat(&[out.attended, out.final_state.h])?;
            project(t, both, &w)
        },
        seed,
        None,
    )
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let layers: [(&str, fn(u64) -> f64); 7] = [
        ("lstm", lstm_error),
        ("attention", attention_error),
        ("film", film_block_error),
        ("fusion", fusion_error),
        ("decoders", decoders_error),
        ("video", |s| modality_error(Modality::Video, s)),
        ("audio", |s| modality_error(Modality::Audio, s)),
    ];
    let worst: Vec<(&str, f64)> = layers.iter().map(|(n, f)| (*n, worst_over_seeds(f))).collect();
    let elapsed = start.elapsed();
    let pass = worst.iter().all(|(_, e)| *e < GRAD_TOL) && elapsed < Duration::from_secs(120);
    let errs: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    Outcome::check(pass, format!("{INSTANCES} instances per layer, max rel error: {}; {:.1?}", errs.join(", "), elapsed))
}

fn film_outputs(p: &ParamSet, block: &FilmBlock, feats: &[Vec<f64>], q: &[f64]) -> Vec<f64> {
    let mut t = Tape::inference(p);
    let xs: Vec<_> = feats.iter().map(|f| t.constant_vector(f.clone())).collect();
    let q = t.constant_vector(q.to_vec());
    let ys = block.forward(&mut t, &xs, q).unwrap();
    ys.iter().flat_map(|&y| t.value(y).to_vec()).collect()
}

fn criterion_2() -> Outcome {
    let (mut identity, mut constant, mut live, mut live_video) = (0, 0, 0, 0);
    for seed in 0..INSTANCES {
        let mut r = rng(seed);
        let mut t = Tape::standalone();
        let h: Vec<f64> = rvec(&mut r, 6, 2.0).into_iter().map(|x| x.max(0.0)).collect();
        let (hv, g, b) = (t.constant_vector(h.clone()), t.constant_vector(vec![1.0; 6]), t.constant_vector(vec![0.0; 6]));
        let y = film_affine(&mut t, hv, g, b).unwrap();
        identity += usize::from(t.value(y) == &h[..]);

        let beta = rvec(&mut r, 5, 1.0);
        let outs: Vec<Vec<f64>> = (0..2)
            .map(|_| {
                let mut t = Tape::standalone();
                let h = t.constant_vector(rvec(&mut r, 5, 3.0));
                let (g, b) = (t.constant_vector(vec![0.0; 5]), t.constant_vector(beta.clone()));
                let y = film_affine(&mut t, h, g, b).unwrap();
                t.value(y).to_vec()
            })
            .collect();
        constant += usize::from(outs[0] == outs[1] && outs[0] == beta.iter().map(|x| x.max(0.0)).collect::<Vec<_>>());

        let mut p = ParamSet::new();
        let block = FilmBlock::new(&mut p, "b", 6, 5, 4, &mut r);
        let feats: Vec<Vec<f64>> = (0..3).map(|_| rvec(&mut r, 6, 1.0)).collect();
        let (q1, q2) = (rvec(&mut r, 4, 1.0), rvec(&mut r, 4, 1.0));
        live += usize::from(film_outputs(&p, &block, &feats, &q1) != film_outputs(&p, &block, &feats, &q2));

        let mut p = ParamSet::new();
        let enc = ModalityEncoder::new(&mut p, Modality::Video, &encoder_config(4), 5, 6, 3, &mut r);
        let tr = track(Modality::Video, 4, 8, &mut r);
        let (q1, q2) = (rvec(&mut r, 5, 1.0), rvec(&mut r, 5, 1.0));
        let run = |q: &[f64]| {
            let mut t = Tape::inference(&p);
            let q = t.constant_vector(q.to_vec());
            let out = enc.encode(&mut t, &tr, q).unwrap();
            t.value(out.final_state.h).to_vec()
        };
        live_video += usize::from(run(&q1) != run(&q2));
    }
    let n = INSTANCES as usize;
    Outcome::check(
        identity == n && constant == n && live == n && live_video == n,
        format!("identity {identity}/{n}, constant {constant}/{n}, live block {live}/{n}, live video encoder {live_video}/{n}"),
    )
}

fn overfit_model(vocab: usize, seed: u64, use_film: bool, hidden: usize, audio: bool, description: DescriptionSource) -> Model {
    Model::new(ModelConfig {
        vocab_size: vocab,
        embed_dim: 16,
        hidden,
        att_dim: 16,
        encoder: EncoderConfig {
            segments: 8,
            film_blocks: 2,
            film_hidden: 16,
            fc_dim: 16,
            use_film,
            video_dim: 16,
            audio_dim: 8,
        },
        use_video: true,
        use_audio: audio,
        description,
        use_aux: false,
        aux_weight: 1.0,
        init_seed: seed,
    })
    .unwrap()
}

fn desk_train(seed: u64, epochs: usize, target_loss: Option<f64>) -> TrainConfig {
    TrainConfig {
        optimizer: AmsgradConfig {
            lr: 1e-2,
            eps: 1e-2,
            ..Default::default()
        },
        batch_size: 1,
        max_epochs: epochs,
        patience: epochs,
        seed,
        retain: 1.0,
        target_loss,
        ..Default::default()
    }
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let ds = synthesize(&SynthConfig::new(1, 16, 50, 3)).unwrap();
    let vocab = ds.vocabulary();
    let data = ds.encode(&vocab, DescriptionSource::Caption, Some(8)).unwrap();
    let mut model = overfit_model(vocab.len(), 1, true, 32, true, DescriptionSource::Caption);
    let out = train(&mut model, &desk_train(1, 500, Some(0.02)), &data, &data[..1]).unwrap();
    let last = *out.history.last().unwrap();
    let below = out.history.iter().find(|r| r.train_loss < 0.1).map(|r| r.epoch);
    let pairs = greedy_pairs(&model, &data, &DecodeOptions::default()).unwrap();
    let exact = pairs.iter().filter(|p| p.candidate == p.references[0]).count();
    let elapsed = start.elapsed();
    let pass = below.is_some() && exact * 10 >= pairs.len() * 9 && elapsed < Duration::from_secs(300);
    Outcome::check(
        pass,
        format!(
            "loss < 0.1 at epoch {}, stopped at epoch {} with loss {:.4}; greedy exact {exact}/{}; {:.1?}",
            below.map_or("never".into(), |e| e.to_string()),
            last.epoch,
            last.train_loss,
            pairs.len(),
            elapsed
        ),
    )
}

fn switches_loss(seed: u64, use_film: bool) -> f64 {
    let sc = SynthConfig {
        task: SynthTask::Switches,
        ..SynthConfig::new(seed, 16, 50, 3)
    };
    let ds = synthesize(&sc).unwrap();
    let vocab = ds.vocabulary();
    let data = ds.encode(&vocab, DescriptionSource::None, Some(8)).unwrap();
    let mut model = overfit_model(vocab.len(), seed, use_film, 8, false, DescriptionSource::None);
    let out = train(&mut model, &desk_train(seed, 150, None), &data, &data[..1]).unwrap();
    out.history.last().unwrap().train_loss
}

fn criterion_4() -> Outcome {
    let runs: Vec<(u64, f64, f64)> = (1..=3).map(|s| (s, switches_loss(s, true), switches_loss(s, false))).collect();
    let pass = runs.iter().all(|(_, f, n)| f < n);
    let detail: Vec<String> = runs.iter().map(|(s, f, n)| format!("seed {s}: FiLM {f:.4} vs NoFiLM {n:.4}")).collect();
    Outcome::check(pass, detail.join("; "))
}

/// Next-token distribution is a seeded random function of the whole prefix.
struct PrefixModel {
    seed: u64,
    vocab: usize,
}

impl StepModel for PrefixModel {
    type State = Vec<u32>;

    fn start(&self) -> Result<Vec<u32>> {
        Ok(Vec::new())
    }

    fn step(&self, state: &Vec<u32>, token: u32) -> Result<(Vec<u32>, Vec<f64>)> {
        let mut prefix = state.clone();
        prefix.push(token);
        let key = prefix.iter().fold(self.seed.wrapping_mul(0x9e37_79b9), |h, &t| h.wrapping_mul(31).wrapping_add(t as u64 + 1));
        let mut r = rng(key);
        let logits: Vec<f64> = (0..self.vocab).map(|_| r.gen_range(-3.0..3.0)).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z = logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln() + m;
        Ok((prefix, logits.iter().map(|l| l - z).collect()))
    }
}

/// Highest-scoring sequence among all that end in `<eos>` or reach `max_len`.
fn brute_force_best<M: StepModel>(model: &M, max_len: usize) -> Hypothesis {
    fn go<M: StepModel>(model: &M, state: M::State, tokens: Vec<u32>, score: f64, max_len: usize, best: &mut Option<Hypothesis>) {
        let prev = tokens.last().copied().unwrap_or(SOS);
        let (next, lp) = model.step(&state, prev).unwrap();
        for (i, &p) in lp.iter().enumerate() {
            let mut t = tokens.clone();
            t.push(i as u32);
            let s = score + p;
            if i as u32 == EOS || t.len() == max_len {
                let better = match best {
                    None => true,
                    Some(b) => s > b.score || (s == b.score && t < b.tokens),
                };
                if better {
                    *best = Some(Hypothesis {
                        finished: i as u32 == EOS,
                        tokens: t,
                        score: s,
                    });
                }
            } else {
                go(model, next.clone(), t, s, max_len, best);
            }
        }
    }
    let mut best = None;
    go(model, model.start().unwrap(), Vec::new(), 0.0, max_len, &mut best);
    best.unwrap()
}

fn criterion_5() -> Outcome {
    let opts = DecodeOptions {
        max_len: 4,
        ..Default::default()
    };
    let (mut exhaustive, mut width_one) = (0, 0);
    for seed in 0..INSTANCES {
        let m = PrefixModel { seed, vocab: 6 };
        let got = beam_search(&m, 6usize.pow(4), &opts).unwrap().swap_remove(0);
        let prefix_ok = got.tokens == brute_force_best(&m, 4).tokens;

        let mut model = tiny_model(6, seed);
        let mut r = rng(900 + seed);
        scramble(&mut model.params, 1.0, &mut r);
        let ctx = rvec(&mut r, model.config.hidden, 1.0);
        let s = DecoderStepper::answer(&model, ctx).unwrap();
        let want = brute_force_best(&s, 4);
        let got = beam_search(&s, 6usize.pow(4), &opts).unwrap().swap_remove(0);
        exhaustive += usize::from(prefix_ok && got.tokens == want.tokens && (got.score - want.score).abs() < 1e-9);

        let d = DecodeOptions::default();
        let same = greedy_decode(&m, &d).unwrap() == beam_search(&m, 1, &d).unwrap().swap_remove(0)
            && greedy_decode(&s, &d).unwrap() == beam_search(&s, 1, &d).unwrap().swap_remove(0);
        width_one += usize::from(same);
    }
    let n = INSTANCES as usize;
    Outcome::check(
        exhaustive == n && width_one == n,
        format!("exhaustive width = brute force on {exhaustive}/{n} seeds (V=6, len 4, prefix and model decoders); k=1 = greedy on {width_one}/{n}"),
    )
}

fn objective(model: &Model, d: &EncodedDialogue, sampler: &mut ScheduledSampler) -> f64 {
    let mut t = Tape::inference(&model.params);
    let (obj, _) = model.dialogue_objective(&mut t, d, &mut Dropout::eval(), sampler).unwrap();
    t.scalar(obj)
}

fn criterion_6() -> Outcome {
    let mut bitwise = 0;
    for seed in 0..10 {
        let model = tiny_model(12, seed);
        let d = random_dialogue(&model.config, 3, seed);
        let forced = objective(&model, &d, &mut ScheduledSampler::teacher_forcing());
        let stubbed = objective(&model, &d, &mut ScheduledSampler::constant(0.2, 1.0, seed));
        bitwise += usize::from(forced.to_bits() == stubbed.to_bits());
    }
    let mut worst: f64 = 0.0;
    let mut finite = true;
    for seed in 0..5 {
        let model = tiny_model(12, seed);
        let d = random_dialogue(&model.config, 2, seed);
        let mut sampler = ScheduledSampler::constant(0.2, 0.0, 100 + seed);
        let loss = objective(&model, &d, &mut sampler);
        finite &= loss.is_finite() && loss > 0.0;
        let trace = sampler.take_trace();
        let err = max_error(
            &model.params,
            |t| {
                let mut replay = ScheduledSampler::replay(trace.clone());
                Ok(model.dialogue_objective(t, &d, &mut Dropout::eval(), &mut replay)?.0)
            },
            seed,
            Some(5),
        );
        worst = worst.max(err);
    }
    Outcome::check(
        bitwise == 10 && finite && worst < GRAD_TOL,
        format!("s=1 equals teacher forcing bitwise on {bitwise}/10; s=0 loss finite: {finite}, gradient check with frozen samples max rel error {worst:.1e}"),
    )
}

fn words(s: &str) -> Vec<String> {
    tokenize(s)
}

fn pair(c: &str, refs: &[&str]) -> EvalPair<String> {
    EvalPair::new(words(c), refs.iter().map(|r| words(r)).collect())
}

fn criterion_7() -> Outcome {
    let mut failures = Vec::new();
    let mut notes = Vec::new();

    let (m, t) = modified_precision(&words("the the the the the the the"), &[words("the cat is on the mat")], 1);
    let b1 = bleu(&[pair("the the the the the the the", &["the cat is on the mat"])], 1).unwrap()[0];
    if (m, t) != (2, 7) || (b1 - 2.0 / 7.0).abs() > 1e-6 {
        failures.push(format!("BLEU clipping {m}/{t}, BLEU-1 {b1:.6}"));
    }

    let rouge = rouge_l_pair(&words("a b c"), &words("a c"));
    let beta2: f64 = 1.2 * 1.2;
    let (p, r) = (2.0 / 3.0, 1.0);
    let formula = (1.0 + beta2) * p * r / (r + beta2 * p);
    if (rouge - formula).abs() > 1e-12 {
        failures.push(format!("ROUGE-L {rouge:.6} differs from its formula {formula:.6}"));
    }
    let literal_ok = (rouge - 0.7544).abs() <= 1e-6;
    notes.push(format!("ROUGE-L hand case {rouge:.6} vs expected 0.7544: {}", if literal_ok { "match" } else { "MISMATCH" }));

    let identity = vec![pair("a b c d", &["a b c d"]), pair("e f g h", &["e f g h"])];
    let (mean, segs) = cider_d_segments(&identity).unwrap();
    if (mean - 10.0).abs() > 1e-6 || segs.iter().any(|s| (s - 10.0).abs() > 1e-6) {
        failures.push(format!("CIDEr-D identity {mean:.6}"));
    }
    let disjoint = cider_d(&[pair("x y", &["a b c d"]), pair("z w", &["e f g h"])]).unwrap();
    if disjoint != 0.0 {
        failures.push(format!("CIDEr-D without shared n-grams {disjoint}"));
    }
    let mut r = rng(7);
    for _ in 0..200 {
        let corpus: Vec<EvalPair<u8>> = (0..r.gen_range(2..6))
            .map(|_| {
                let c = (0..r.gen_range(0..7)).map(|_| r.gen_range(0..8)).collect();
                let refs = (0..r.gen_range(1..3)).map(|_| (0..r.gen_range(1..7)).map(|_| r.gen_range(0..8)).collect()).collect();
                EvalPair::new(c, refs)
            })
            .collect();
        let c = cider_d(&corpus).unwrap();
        if !(0.0..=10.0 + 1e-9).contains(&c) {
            failures.push(format!("CIDEr-D {c} out of [0, 10]"));
            break;
        }
    }

    let same = vec![
        pair("the cat sat on the mat", &["the cat sat on the mat"]),
        pair("a dog runs in a park today", &["a dog runs in a park today"]),
        pair("he opens one window slowly", &["he opens one window slowly"]),
    ];
    let rep = MetricReport::compute(&same).unwrap();
    if (rep.bleu[3] - 1.0).abs() > 1e-6 || (rep.rouge_l - 1.0).abs() > 1e-6 || (rep.cider_d - 10.0).abs() > 1e-6 {
        failures.push(format!("identical corpus {:.6}/{:.6}/{:.6}", rep.bleu[3], rep.rouge_l, rep.cider_d));
    }

    let others_ok = failures.is_empty();
    let detail = if others_ok {
        format!(
            "{}; the formula gives 122/147 = {formula:.6}; BLEU clipping 2/7, CIDEr-D bounds and identity, identical-corpus maxima 1.0/1.0/10.0 all hold",
            notes.join("")
        )
    } else {
        format!("{}; {}", notes.join(""), failures.join("; "))
    };
    Outcome {
        pass: others_ok && literal_ok,
        detail,
        known_deviation: others_ok && !literal_ok,
    }
}

fn criterion_8() -> Outcome {
    let mut p = ParamSet::new();
    let id = p.add("theta", Tensor::vector(vec![1.0]));
    p.get_mut(id).accumulate_grad(&[2.0]);
    let mut opt = AmsgradState::new(AmsgradConfig { lr: 0.1, ..Default::default() }, &p).unwrap();
    opt.step(&mut p).unwrap();
    let theta = p.get(id).data()[0];
    let hand = 1.0 - 0.1 * 0.2 / (0.004f64.sqrt() + 1e-8);
    let step_ok = (theta - hand).abs() < 1e-9 && (theta - 0.68377).abs() < 1e-5;

    let mut r = rng(1);
    let mut p = ParamSet::new();
    p.add("a", Tensor::vector(rvec(&mut r, 5, 1.0)));
    p.add("b", Tensor::vector(rvec(&mut r, 3, 1.0)));
    let mut opt = AmsgradState::new(AmsgradConfig::default(), &p).unwrap();
    let mut prev = opt.v_hat.clone();
    let mut monotone = true;
    for _ in 0..10_000 {
        p.zero_grad();
        for t in p.tensors_mut() {
            let scale = 10f64.powf(r.gen_range(-3.0..1.0));
            let g: Vec<f64> = (0..t.numel()).map(|_| r.gen_range(-scale..scale)).collect();
            t.accumulate_grad(&g);
        }
        opt.step(&mut p).unwrap();
        monotone &= opt.v_hat.iter().zip(&prev).all(|(now, before)| now.iter().zip(before).all(|(a, b)| a >= b));
        prev = opt.v_hat.clone();
    }

    let mut p = ParamSet::new();
    let id = p.add("theta", Tensor::vector(vec![1.0]));
    let mut opt = AmsgradState::new(AmsgradConfig { lr: 0.05, ..Default::default() }, &p).unwrap();
    let mut reached = None;
    for step in 1..=200 {
        let theta = p.get(id).data()[0];
        p.zero_grad();
        p.get_mut(id).accumulate_grad(&[2.0 * theta]);
        opt.step(&mut p).unwrap();
        if p.get(id).data()[0].abs() < 0.1 {
            reached = Some(step);
            break;
        }
    }
    Outcome::check(
        step_ok && monotone && reached.is_some(),
        format!(
            "single step theta {theta:.9} (hand {hand:.9}); v_hat monotone over 10^4 steps: {monotone}; theta^2 reaches |theta| < 0.1 at step {}",
            reached.map_or("never".into(), |s| s.to_string())
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut checks = Vec::new();
    let mut r = rng(9);

    let values: Vec<f32> = (0..30 * 1024).map(|_| r.gen_range(-5.0f32..5.0)).collect();
    let tr = FeatureTrack::new(Modality::Video, 30, 1024, values).unwrap();
    let bytes = encode_features(&tr);
    let back = decode_features(&bytes, None).unwrap();
    let exact = back.rows() == 30 && back.dims() == 1024 && back.values().iter().zip(tr.values()).all(|(a, b)| a.to_bits() == b.to_bits());
    checks.push(("MMF1 value-exact", exact));
    let mut flipped = bytes.clone();
    let last = flipped.len() - 5;
    flipped[last] ^= 0x40;
    checks.push(("MMF1 corruption -> checksum", matches!(decode_features(&flipped, None), Err(FormatError::Checksum { .. }))));
    checks.push(("MMF1 truncation -> truncated", matches!(decode_features(&bytes[..bytes.len() - 9], None), Err(FormatError::Truncated { .. }))));

    let mut model = tiny_model(12, 4);
    let mut params = model.params.clone();
    for t in params.tensors_mut() {
        let g = rvec(&mut r, t.numel(), 1.0);
        t.accumulate_grad(&g);
    }
    let mut opt = AmsgradState::new(AmsgradConfig::default(), &params).unwrap();
    opt.step(&mut params).unwrap();
    params.zero_grad();
    model.load_params(params.clone()).unwrap();
    let ck = Checkpoint {
        params,
        optimizer: Some(opt),
        config: RunConfig::default().snapshot(),
        vocabulary: (0..12).map(|i| format!("w{i}")).collect(),
        best_bleu4: 0.123,
        best_epoch: 3,
    };
    let bytes = encode_checkpoint(&ck);
    let decoded = decode_checkpoint(&bytes).unwrap();
    let bitwise = encode_checkpoint(&decoded) == bytes && decoded.params.iter().zip(ck.params.iter()).all(|((a, x), (b, y))| a == b && x.data() == y.data());
    checks.push(("checkpoint bitwise", bitwise));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    checks.push(("checkpoint magic -> bad magic", matches!(decode_checkpoint(&bad), Err(FormatError::BadMagic { .. }))));
    let mut bad = bytes.clone();
    let mid = bytes.len() - 20;
    bad[mid] ^= 1;
    checks.push(("checkpoint corruption -> checksum", matches!(decode_checkpoint(&bad), Err(FormatError::Checksum { .. }))));

    let ds = synthesize(&SynthConfig::new(5, 6, 30, 4)).unwrap();
    let json = to_json(&ds.dialogues);
    checks.push(("dataset structural equality", parse_dataset(&json, "synth.json").map(|d| d == ds.dialogues).unwrap_or(false)));
    let broken = json.replacen("\"caption\"", "\"kaption\"", 1);
    checks.push(("dataset schema error", matches!(parse_dataset(&broken, "synth.json"), Err(Error::Schema { .. }))));

    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    let detail = if failed.is_empty() {
        format!("{} checks: {}", checks.len(), checks.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", "))
    } else {
        format!("failed: {}", failed.join(", "))
    };
    Outcome::check(failed.is_empty(), detail)
}

const OFFICIAL_COUNTS: [(&str, usize); 3] = [("train", 7659), ("valid", 1787), ("test", 1710)];

fn criterion_10() -> Outcome {
    let bleu4 = relative_improvement(0.360, 0.309);
    let cider = relative_improvement(0.997, 0.746);
    let mut pass = bleu4 >= 0.16 && cider >= 0.33;
    let mut parts = vec![format!("reported table: BLEU-4 +{:.1}%, CIDEr +{:.1}%", 100.0 * bleu4, 100.0 * cider)];

    let root = std::env::var_os("FILM_HRED_DATA").map(std::path::PathBuf::from);
    match root.as_deref().filter(|r| ["train", "valid", "test"].iter().all(|s| split_path(r, s).is_file())) {
        Some(root) => match load_splits(root) {
            Ok(splits) => {
                let counts: Vec<(&str, usize)> = splits.iter().map(|(s, d)| (*s, d.len())).collect();
                pass &= counts == OFFICIAL_COUNTS;
                parts.push(format!("splits {counts:?}"));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("loading splits failed: {e}"));
            }
        },
        None => parts.push("official splits: SKIPPED (set FILM_HRED_DATA to the dataset root)".into()),
    }

    match root.as_deref().filter(|r| stored_outputs(r).is_some()) {
        Some(root) => {
            let (model, baseline) = stored_outputs(root).unwrap();
            match score_stored(root, &model, &baseline) {
                Ok((b, c)) => {
                    pass &= b >= 0.16 && c >= 0.33;
                    parts.push(format!("stored outputs: BLEU-4 +{:.1}%, CIDEr +{:.1}%", 100.0 * b, 100.0 * c));
                }
                Err(e) => {
                    pass = false;
                    parts.push(format!("scoring stored outputs failed: {e}"));
                }
            }
        }
        None => parts.push("stored outputs: SKIPPED (outputs/model.tsv and outputs/baseline.tsv under FILM_HRED_DATA)".into()),
    }
    Outcome::check(pass, parts.join("; "))
}

fn stored_outputs(root: &Path) -> Option<(std::path::PathBuf, std::path::PathBuf)> {
    let (m, b) = (root.join("outputs/model.tsv"), root.join("outputs/baseline.tsv"));
    (m.is_file() && b.is_file() && split_path(root, "test").is_file()).then_some((m, b))
}

fn score_stored(root: &Path, model: &Path, baseline: &Path) -> film_hred::Result<(f64, f64)> {
    let test = film_hred::dataset::load_dataset(&split_path(root, "test"))?;
    let refs = dialogue_references(&test);
    let m = score_run(&read_tsv(model)?, &refs)?;
    let b = score_run(&read_tsv(baseline)?, &refs)?;
    Ok((relative_improvement(m.bleu[3], b.bleu[3]), relative_improvement(m.cider_d, b.cider_d)))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient suite", criterion_1),
        ("FiLM contracts", criterion_2),
        ("overfit", criterion_3),
        ("conditioning usefulness", criterion_4),
        ("beam oracle", criterion_5),
        ("scheduled sampling", criterion_6),
        ("metric oracles", criterion_7),
        ("AMSGrad", criterion_8),
        ("roundtrips", criterion_9),
        ("data-dependent", criterion_10),
    ];
    let mut failed = Vec::new();
    let mut deviations = Vec::new();
    println!();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        println!("criterion {:>2} {name}: {} ({})", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            if o.known_deviation {
                deviations.push(i + 1);
            } else {
                failed.push(i + 1);
            }
        }
    }
    if !deviations.is_empty() {
        println!("documented deviations (see the decisions ledger): criteria {deviations:?}");
    }
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
    // Only the ROUGE-L constant may fail, and only when every other metric
    // oracle and the formula itself hold.
    assert!(deviations.iter().all(|&c| c == 7), "unexpected deviations: {deviations:?}");
}
