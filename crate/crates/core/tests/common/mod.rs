#![allow(dead_code)]

use film_hred_core::data::{DescriptionSource, EncodedDialogue, EncodedTurn, FeatureTrack, Modality};
use film_hred_core::encoders::EncoderConfig;
use film_hred_core::gradcheck::{finite_difference_check, GradCheckOptions, GradCheckReport};
use film_hred_core::model::{Model, ModelConfig};
use film_hred_core::tape::{Tape, Var};
use film_hred_core::vocab::EOS;
use film_hred_core::{ParamSet, Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Re-draws every parameter from uniform(-scale, scale) so gradient checks
/// run away from the small-init regime.
pub fn scramble(params: &mut ParamSet, scale: f64, rng: &mut impl Rng) {
    for t in params.tensors_mut() {
        for x in t.data_mut() {
            *x = rng.gen_range(-scale..scale);
        }
    }
}

/// Adds a trainable input vector to `params`.
pub fn input(params: &mut ParamSet, name: &str, n: usize, rng: &mut impl Rng) -> film_hred_core::ParamId {
    params.add(name, Tensor::vector(random_vec(rng, n, 1.0)))
}

/// `sum(w * x)` for fixed random weights `w`, so every coordinate of `x`
/// matters with a different sign and size.
pub fn project(t: &mut Tape, x: Var, weights: &[f64]) -> Result<Var> {
    let w = t.constant_vector(weights.to_vec());
    let p = t.mul(x, w)?;
    t.reduce_sum(p)
}

pub fn check<F>(params: &ParamSet, loss: F, seed: u64) -> GradCheckReport
where
    F: FnMut(&mut Tape) -> Result<Var>,
{
    let opts = GradCheckOptions { seed, ..Default::default() };
    finite_difference_check(params, loss, &opts).expect("gradient check runs")
}

pub fn assert_passes(report: &GradCheckReport, what: &str, seed: u64) {
    let worst = report.worst().expect("at least one tensor checked");
    assert!(
        report.passed(TOL),
        "{what} seed {seed}: {} has relative error {:e}",
        worst.name,
        worst.max_rel_error
    );
}

pub fn track(modality: Modality, rows: usize, dims: usize, rng: &mut impl Rng) -> FeatureTrack {
    let values = (0..rows * dims).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    FeatureTrack::new(modality, rows, dims, values).unwrap()
}

pub fn encoder_config(segments: usize, use_film: bool) -> EncoderConfig {
    EncoderConfig {
        segments,
        film_blocks: 2,
        film_hidden: 6,
        fc_dim: 5,
        use_film,
        video_dim: 8,
        audio_dim: 8,
    }
}

/// A small model over `vocab` ids with every part switched on.
pub fn tiny_config(vocab: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        embed_dim: 6,
        hidden: 7,
        att_dim: 5,
        encoder: encoder_config(3, true),
        use_video: true,
        use_audio: true,
        description: DescriptionSource::Caption,
        use_aux: true,
        aux_weight: 1.0,
        init_seed: seed,
    }
}

fn utterance(rng: &mut impl Rng, vocab: usize, max_len: usize) -> Vec<u32> {
    let n = rng.gen_range(1..=max_len);
    let mut u: Vec<u32> = (0..n).map(|_| rng.gen_range(5..vocab as u32)).collect();
    u.push(EOS);
    u
}

/// A random encoded dialogue matching `cfg`.
pub fn dialogue(cfg: &ModelConfig, turns: usize, seed: u64) -> EncodedDialogue {
    let mut r = rng(seed);
    let v = cfg.vocab_size;
    EncodedDialogue {
        video_id: format!("v{seed}"),
        description: (cfg.description != DescriptionSource::None).then(|| utterance(&mut r, v, 4)),
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

pub fn tiny_model(vocab: usize, seed: u64) -> Model {
    Model::new(tiny_config(vocab, seed)).unwrap()
}
