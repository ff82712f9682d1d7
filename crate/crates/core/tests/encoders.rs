mod common;

use common::*;
use film_hred_core::data::Modality;
use film_hred_core::encoders::{film_affine, DescriptionEncoder, DialogueEncoder, FilmBlock, ModalityEncoder, UtteranceEncoder};
use film_hred_core::layers::{AttentionParams, Dropout, EmbeddingTable, LstmParams};
use film_hred_core::model::{Model, ModelConfig};
use film_hred_core::tape::Tape;
use film_hred_core::vocab::EOS;
use film_hred_core::{ParamSet, Tensor};

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn affine_identity_at_unit_gamma_zero_beta() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let mut t = Tape::standalone();
        // h comes out of a relu in the block, so it is non-negative.
        let h: Vec<f64> = random_vec(&mut r, 6, 2.0).into_iter().map(|x| x.max(0.0)).collect();
        let hv = t.constant_vector(h.clone());
        let g = t.constant_vector(vec![1.0; 6]);
        let b = t.constant_vector(vec![0.0; 6]);
        let y = film_affine(&mut t, hv, g, b).unwrap();
        assert_eq!(t.value(y), &h[..], "seed {seed}");
    }
}

#[test]
fn zero_gamma_gives_relu_beta() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let beta = random_vec(&mut r, 5, 1.0);
        let mut outputs = Vec::new();
        for _ in 0..2 {
            let mut t = Tape::standalone();
            let h = t.constant_vector(random_vec(&mut r, 5, 3.0));
            let g = t.constant_vector(vec![0.0; 5]);
            let b = t.constant_vector(beta.clone());
            let y = film_affine(&mut t, h, g, b).unwrap();
            outputs.push(t.value(y).to_vec());
        }
        let want: Vec<f64> = beta.iter().map(|x| x.max(0.0)).collect();
        assert_eq!(outputs[0], want);
        assert_eq!(outputs[1], want);
    }
}

#[test]
fn affine_hand_example() {
    let mut t = Tape::standalone();
    let h = t.constant_vector(vec![1.0, 2.0]);
    let g = t.constant_vector(vec![3.0, 0.5]);
    let b = t.constant_vector(vec![-1.0, 1.0]);
    let y = film_affine(&mut t, h, g, b).unwrap();
    assert_eq!(t.value(y), &[2.0, 2.0]);
}

#[test]
fn zeroed_conditioning_makes_the_block_an_identity_modulation() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let mut p = ParamSet::new();
        let block = FilmBlock::new(&mut p, "b", 4, 4, 3, &mut r);
        for id in [block.conditioning.weight, block.conditioning.bias.unwrap()] {
            p.get_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let mut t = Tape::inference(&p);
        let x = t.constant_vector(random_vec(&mut r, 4, 1.0));
        let q = t.constant_vector(random_vec(&mut r, 3, 1.0));
        let y = block.forward(&mut t, &[x], q).unwrap()[0];
        // relu(1 * h + 0) + x with h = relu(W x).
        let w = p.get(block.pre.weight).data().to_vec();
        let xv = t.value(x).to_vec();
        let want: Vec<f64> = (0..4)
            .map(|i| {
                let h: f64 = (0..4).map(|j| w[i * 4 + j] * xv[j]).sum::<f64>().max(0.0);
                h + xv[i]
            })
            .collect();
        assert!(close(t.value(y), &want, 1e-12), "seed {seed}");
    }
}

#[test]
fn conditioning_is_live() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let mut p = ParamSet::new();
        let block = FilmBlock::new(&mut p, "b", 6, 5, 4, &mut r);
        let feats: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut r, 6, 1.0)).collect();
        let q1 = random_vec(&mut r, 4, 1.0);
        let q2 = random_vec(&mut r, 4, 1.0);
        let run = |q: &[f64]| {
            let mut t = Tape::inference(&p);
            let xs: Vec<_> = feats.iter().map(|f| t.constant_vector(f.clone())).collect();
            let q = t.constant_vector(q.to_vec());
            let ys = block.forward(&mut t, &xs, q).unwrap();
            ys.iter().flat_map(|&y| t.value(y).to_vec()).collect::<Vec<f64>>()
        };
        assert_ne!(run(&q1), run(&q2), "seed {seed}");
        assert_eq!(run(&q1), run(&q1));
    }
}

#[test]
fn conditioning_is_live_through_the_video_encoder() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let mut p = ParamSet::new();
        let enc = ModalityEncoder::new(&mut p, Modality::Video, &encoder_config(4, true), 5, 6, 3, &mut r);
        let tr = track(Modality::Video, 4, 8, &mut r);
        let (q1, q2) = (random_vec(&mut r, 5, 1.0), random_vec(&mut r, 5, 1.0));
        let run = |q: &[f64]| {
            let mut t = Tape::inference(&p);
            let q = t.constant_vector(q.to_vec());
            let out = enc.encode(&mut t, &tr, q).unwrap();
            t.value(out.final_state.h).to_vec()
        };
        // The final LSTM state ignores attention, so any change comes from FiLM.
        assert_ne!(run(&q1), run(&q2), "seed {seed}");
    }
}

#[test]
fn film_gets_gradient_from_the_loss() {
    let model = tiny_model(12, 3);
    let d = dialogue(&model.config, 2, 3);
    let mut t = Tape::new(&model.params);
    let (obj, _) = model
        .dialogue_objective(&mut t, &d, &mut Dropout::eval(), &mut film_hred_core::sampler::ScheduledSampler::teacher_forcing())
        .unwrap();
    let grads = t.backward(obj).unwrap();
    for name in ["video.film0.cond.weight", "video.film1.cond.weight", "audio.film0.cond.weight"] {
        let id = model.params.lookup(name).unwrap();
        let g = grads.param(id).expect("conditioning receives a gradient");
        assert!(g.iter().any(|x| *x != 0.0), "{name}");
    }
}

fn no_film_config() -> ModelConfig {
    let mut cfg = tiny_config(12, 4);
    cfg.encoder.use_film = false;
    cfg
}

#[test]
fn film_off_allocates_no_film_parameters() {
    let on = tiny_model(12, 4);
    let off = Model::new(no_film_config()).unwrap();
    assert!(on.film_param_count() > 0);
    assert_eq!(off.film_param_count(), 0);
    assert!(off.param_names().iter().all(|n| !n.contains("film") && !n.contains(".fc.")));
    assert!(off.video.as_ref().unwrap().film.is_none());
}

#[test]
fn film_off_accepts_any_row_count_and_film_on_requires_l() {
    let mut r = rng(5);
    let (mut p_off, mut p_on) = (ParamSet::new(), ParamSet::new());
    let off = ModalityEncoder::new(&mut p_off, Modality::Video, &encoder_config(3, false), 4, 5, 3, &mut r);
    let on = ModalityEncoder::new(&mut p_on, Modality::Video, &encoder_config(3, true), 4, 5, 3, &mut r);
    let long = track(Modality::Video, 7, 8, &mut r);
    let q = random_vec(&mut r, 4, 1.0);
    let mut t = Tape::inference(&p_off);
    let qv = t.constant_vector(q.clone());
    assert!(off.encode(&mut t, &long, qv).is_ok());
    let mut t = Tape::inference(&p_on);
    let qv = t.constant_vector(q);
    assert!(on.encode(&mut t, &long, qv).is_err());
    assert!(on.encode(&mut t, &track(Modality::Video, 3, 8, &mut r), qv).is_ok());
}

#[test]
fn single_row_tracks_get_full_attention() {
    let mut r = rng(6);
    let mut p = ParamSet::new();
    let video = ModalityEncoder::new(&mut p, Modality::Video, &encoder_config(1, true), 4, 5, 3, &mut r);
    let audio = ModalityEncoder::new(&mut p, Modality::Audio, &encoder_config(1, true), 4, 5, 3, &mut r);
    let mut t = Tape::inference(&p);
    let q = t.constant_vector(random_vec(&mut r, 4, 1.0));
    for (enc, m) in [(&video, Modality::Video), (&audio, Modality::Audio)] {
        let out = enc.encode(&mut t, &track(m, 1, 8, &mut r), q).unwrap();
        assert_eq!(t.value(out.weights), &[1.0]);
        assert_eq!(t.value(out.attended), t.value(out.final_state.h));
    }
}

#[test]
fn attention_weights_sum_to_one_for_both_modalities() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let mut p = ParamSet::new();
        let video = ModalityEncoder::new(&mut p, Modality::Video, &encoder_config(5, true), 4, 5, 3, &mut r);
        let audio = ModalityEncoder::new(&mut p, Modality::Audio, &encoder_config(5, false), 4, 5, 3, &mut r);
        let mut t = Tape::inference(&p);
        let q = t.constant_vector(random_vec(&mut r, 4, 1.0));
        for (enc, m, rows) in [(&video, Modality::Video, 5), (&audio, Modality::Audio, 9)] {
            let out = enc.encode(&mut t, &track(m, rows, 8, &mut r), q).unwrap();
            let w = t.value(out.weights);
            assert!(w.iter().all(|x| *x >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }
}

#[test]
fn utterance_of_only_eos_is_one_step() {
    let mut r = rng(7);
    let mut p = ParamSet::new();
    let emb = EmbeddingTable::new(&mut p, "emb", 8, 4, &mut r);
    let enc = UtteranceEncoder {
        lstm: LstmParams::new(&mut p, "u", 4, 5, &mut r),
    };
    let mut t = Tape::inference(&p);
    let out = enc.encode(&mut t, &emb, &[EOS], &mut Dropout::eval()).unwrap();
    let e = emb.lookup(&mut t, EOS).unwrap();
    let zero = enc.lstm.zero_state(&mut t);
    let step = enc.lstm.step(&mut t, e, zero).unwrap();
    assert_eq!(t.value(out.final_h), t.value(step.h));
    assert_eq!(out.states.len(), 1);
    assert!(enc.encode(&mut t, &emb, &[], &mut Dropout::eval()).is_err());
    assert!(enc.encode(&mut t, &emb, &[5, 9, EOS], &mut Dropout::eval()).is_err());
}

#[test]
fn only_used_embedding_rows_get_gradient() {
    let mut r = rng(8);
    let mut p = ParamSet::new();
    let emb = EmbeddingTable::new(&mut p, "emb", 10, 4, &mut r);
    let enc = UtteranceEncoder {
        lstm: LstmParams::new(&mut p, "u", 4, 5, &mut r),
    };
    let tokens = [6, 8, 6, EOS];
    let mut t = Tape::new(&p);
    let out = enc.encode(&mut t, &emb, &tokens, &mut Dropout::eval()).unwrap();
    let loss = project(&mut t, out.final_h, &[1.0, -0.5, 0.3, 0.9, -1.1]).unwrap();
    let grads = t.backward(loss).unwrap();
    let g = grads.param(emb.table).unwrap();
    for row in 0..10u32 {
        let used = tokens.contains(&row);
        let nonzero = g[row as usize * 4..(row as usize + 1) * 4].iter().any(|x| *x != 0.0);
        assert_eq!(used, nonzero, "row {row}");
    }
}

#[test]
fn dialogue_encoder_is_order_sensitive() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let mut p = ParamSet::new();
        let enc = DialogueEncoder {
            lstm: LstmParams::new(&mut p, "d", 4, 5, &mut r),
        };
        scramble(&mut p, 0.5, &mut r);
        let us: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut r, 4, 1.0)).collect();
        let feed = |order: [usize; 3]| {
            let mut t = Tape::inference(&p);
            let mut s = enc.initial(&mut t);
            for i in order {
                let u = t.constant_vector(us[i].clone());
                s = enc.update(&mut t, &s, u).unwrap();
            }
            assert_eq!(s.updates, 3);
            t.value(s.state.h).to_vec()
        };
        assert_ne!(feed([0, 1, 2]), feed([2, 1, 0]), "seed {seed}");
    }
}

#[test]
fn zero_dialogue_encoder_stays_zero() {
    let mut p = ParamSet::new();
    let enc = DialogueEncoder {
        lstm: LstmParams::new(&mut p, "d", 4, 5, &mut rng(0)),
    };
    p.tensors_mut().for_each(|t| t.data_mut().iter_mut().for_each(|x| *x = 0.0));
    let mut t = Tape::inference(&p);
    let s = enc.initial(&mut t);
    let u = t.zeros(4);
    let s = enc.update(&mut t, &s, u).unwrap();
    assert_eq!(t.value(s.state.h), &[0.0; 5]);
    assert_eq!(t.value(s.state.c), &[0.0; 5]);
}

#[test]
fn one_token_description_returns_its_state() {
    let mut r = rng(9);
    let mut p = ParamSet::new();
    let emb = EmbeddingTable::new(&mut p, "emb", 10, 4, &mut r);
    let enc = DescriptionEncoder {
        lstm: LstmParams::new(&mut p, "desc", 4, 5, &mut r),
        attention: AttentionParams::new(&mut p, "att", 5, 3, 4, &mut r),
    };
    let mut t = Tape::inference(&p);
    let q = t.constant_vector(random_vec(&mut r, 3, 1.0));
    let out = enc.encode(&mut t, &emb, &[7], q, &mut Dropout::eval()).unwrap();
    let e = emb.lookup(&mut t, 7).unwrap();
    let zero = enc.lstm.zero_state(&mut t);
    let s = enc.lstm.step(&mut t, e, zero).unwrap();
    assert_eq!(t.value(out.context), t.value(s.h));
    assert_eq!(t.value(out.weights), &[1.0]);
    assert!(enc.encode(&mut t, &emb, &[], q, &mut Dropout::eval()).is_err());
}

#[test]
fn encoders_are_deterministic() {
    let mut r = rng(10);
    let mut p = ParamSet::new();
    let enc = ModalityEncoder::new(&mut p, Modality::Audio, &encoder_config(3, true), 4, 5, 3, &mut r);
    p.add("q", Tensor::vector(random_vec(&mut r, 4, 1.0)));
    let tr = track(Modality::Audio, 6, 8, &mut r);
    let run = || {
        let mut t = Tape::inference(&p);
        let q = t.param(p.lookup("q").unwrap());
        let out = enc.encode(&mut t, &tr, q).unwrap();
        t.value(out.attended).to_vec()
    };
    assert_eq!(run(), run());
}
