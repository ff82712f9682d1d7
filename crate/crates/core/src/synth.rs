//! Deterministic synthetic dialogues for desk-scale training.
//!
//! Two tasks are available. In both, every answer is a function of the
//! question tokens and the video track alone.
//!
//! * [`SynthTask::Attributes`]: the video channels are split into one group
//!   per slot (color, size, ...). Every entry of a group carries one sign,
//!   drawn per video. "what is the color ?" is answered "the color is red"
//!   or "the color is blue" by the sign of the color group.
//! * [`SynthTask::Switches`]: every video channel is a switch whose sign is
//!   drawn per video. "is c3 on ?" is answered "yes" or "no" by the sign of
//!   channel 3. Only one channel matters per question, which is the setting
//!   question-conditioned feature extraction is built for.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{DescriptionSource, Dialogue, EncodedDialogue, FeatureTrack, Modality, Turn};
use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

const SLOTS: [(&str, [&str; 2]); 4] = [
    ("color", ["red", "blue"]),
    ("size", ["big", "small"]),
    ("shape", ["round", "square"]),
    ("speed", ["fast", "slow"]),
];

const FIXED: [&str; 4] = ["what", "is", "the", "?"];

const SWITCH_FIXED: [&str; 5] = ["is", "on", "?", "yes", "no"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SynthTask {
    #[default]
    Attributes,
    Switches,
}

impl SynthTask {
    pub fn name(self) -> &'static str {
        match self {
            SynthTask::Attributes => "attributes",
            SynthTask::Switches => "switches",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "attributes" => Some(SynthTask::Attributes),
            "switches" => Some(SynthTask::Switches),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthConfig {
    pub seed: u64,
    pub dialogues: usize,
    /// Size of the generator's word inventory, reserved tokens excluded.
    pub vocab_size: usize,
    pub turns: usize,
    pub task: SynthTask,
    pub video_dim: usize,
    pub audio_dim: usize,
    /// Video rows are drawn from `segments..=2 * segments`.
    pub segments: usize,
    /// Prefix of generated video ids.
    pub id_prefix: String,
}

impl SynthConfig {
    pub fn new(seed: u64, dialogues: usize, vocab_size: usize, turns: usize) -> Self {
        SynthConfig {
            seed,
            dialogues,
            vocab_size,
            turns,
            task: SynthTask::Attributes,
            video_dim: 16,
            audio_dim: 8,
            segments: 8,
            id_prefix: String::from("syn"),
        }
    }

    /// Number of slots (attributes) or switches the inventory can hold.
    pub fn slots(&self) -> usize {
        match self.task {
            SynthTask::Attributes => (self.vocab_size.saturating_sub(FIXED.len()) / 3).min(SLOTS.len()),
            SynthTask::Switches => self.vocab_size.saturating_sub(SWITCH_FIXED.len()).min(self.video_dim),
        }
    }

    fn fillers(&self) -> usize {
        match self.task {
            SynthTask::Attributes => self.vocab_size - FIXED.len() - 3 * self.slots(),
            SynthTask::Switches => self.vocab_size - SWITCH_FIXED.len() - self.slots(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 10 {
            return Err(Error::config("synthetic vocabulary must hold at least 10 tokens"));
        }
        if self.dialogues == 0 || self.turns == 0 {
            return Err(Error::config("synthetic dataset needs at least one dialogue and one turn"));
        }
        if self.segments == 0 || self.audio_dim == 0 {
            return Err(Error::config("synthetic tracks need positive sizes"));
        }
        if self.video_dim < self.slots() || self.video_dim == 0 {
            return Err(Error::config(format!("video_dim must be at least {}", self.slots().max(1))));
        }
        Ok(())
    }
}

/// Feature tracks of one synthetic video.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthTracks {
    pub video: FeatureTrack,
    pub audio: FeatureTrack,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub dialogues: Vec<Dialogue>,
    pub tracks: BTreeMap<String, SynthTracks>,
}

/// Channels of group `k` out of `groups` over `dims` channels.
fn group(k: usize, groups: usize, dims: usize) -> core::ops::Range<usize> {
    (k * dims / groups)..((k + 1) * dims / groups)
}

fn channel_sum(video: &FeatureTrack, channels: core::ops::Range<usize>) -> f64 {
    (0..video.rows())
        .map(|r| video.row(r)[channels.clone()].iter().map(|&x| f64::from(x)).sum::<f64>())
        .sum()
}

/// The value word of slot `k` implied by `video`: the first value when the
/// slot's channel group sums to a positive number.
pub fn slot_value(k: usize, slots: usize, video: &FeatureTrack) -> &'static str {
    let positive = channel_sum(video, group(k, slots, video.dims())) > 0.0;
    SLOTS[k].1[usize::from(!positive)]
}

/// Answer text for a question about slot `k`.
pub fn answer_text(k: usize, slots: usize, video: &FeatureTrack) -> String {
    format!("the {} is {}", SLOTS[k].0, slot_value(k, slots, video))
}

pub fn question_text(k: usize) -> String {
    question_text_for(SLOTS[k].0)
}

/// Slot a generated attribute question asks about.
pub fn question_slot(question: &str) -> Option<usize> {
    SLOTS.iter().position(|s| question == question_text_for(s.0))
}

fn question_text_for(slot: &str) -> String {
    format!("what is the {slot} ?")
}

pub fn switch_question(k: usize) -> String {
    format!("is c{k} on ?")
}

/// Switch a generated switch question asks about.
pub fn switch_of(question: &str) -> Option<usize> {
    question.strip_prefix("is c")?.strip_suffix(" on ?")?.parse().ok()
}

/// "yes" when channel `k` of `video` sums to a positive number.
pub fn switch_answer(k: usize, video: &FeatureTrack) -> &'static str {
    if channel_sum(video, k..k + 1) > 0.0 {
        "yes"
    } else {
        "no"
    }
}

pub fn synthesize(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let slots = config.slots();
    let dims = config.video_dim;
    let fillers: Vec<String> = (0..config.fillers()).map(|i| format!("w{i}")).collect();
    // Sign group of every channel, if any.
    let owner: Vec<Option<usize>> = match config.task {
        SynthTask::Attributes => (0..dims).map(|c| (0..slots).find(|&k| group(k, slots, dims).contains(&c))).collect(),
        SynthTask::Switches => (0..dims).map(|c| (c < slots).then_some(c)).collect(),
    };
    let mut dialogues = Vec::with_capacity(config.dialogues);
    let mut tracks = BTreeMap::new();
    for d in 0..config.dialogues {
        let video_id = format!("{}{d:04}", config.id_prefix);
        let signs: Vec<f32> = (0..slots).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
        let rows = rng.gen_range(config.segments..=2 * config.segments);
        let mut values = Vec::with_capacity(rows * dims);
        for _ in 0..rows {
            for g in &owner {
                values.push(match g {
                    Some(g) => signs[*g] * rng.gen_range(0.1f32..1.0),
                    None => rng.gen_range(-1.0f32..1.0),
                });
            }
        }
        let video = FeatureTrack::new(Modality::Video, rows, dims, values)?;
        let audio_rows = rng.gen_range(1..=config.segments);
        let audio_values = (0..audio_rows * config.audio_dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let audio = FeatureTrack::new(Modality::Audio, audio_rows, config.audio_dim, audio_values)?;

        let caption = if fillers.is_empty() {
            String::from("video")
        } else {
            let n = rng.gen_range(3..=6);
            (0..n).map(|_| fillers.choose(&mut rng).unwrap().as_str()).collect::<Vec<_>>().join(" ")
        };
        let (summary, turns) = match config.task {
            SynthTask::Attributes => {
                let summary = (0..slots).map(|k| answer_text(k, slots, &video)).collect::<Vec<_>>().join(" ");
                let turns = (0..config.turns)
                    .map(|_| {
                        let k = rng.gen_range(0..slots);
                        Turn {
                            question: question_text(k),
                            answer: answer_text(k, slots, &video),
                        }
                    })
                    .collect();
                (summary, turns)
            }
            SynthTask::Switches => {
                let on: Vec<String> = (0..slots).filter(|&k| switch_answer(k, &video) == "yes").map(|k| format!("c{k}")).collect();
                let summary = if on.is_empty() { String::from("no") } else { on.join(" ") + " on" };
                let turns = (0..config.turns)
                    .map(|_| {
                        let k = rng.gen_range(0..slots);
                        Turn {
                            question: switch_question(k),
                            answer: String::from(switch_answer(k, &video)),
                        }
                    })
                    .collect();
                (summary, turns)
            }
        };
        dialogues.push(Dialogue {
            video_id: video_id.clone(),
            caption,
            summary: Some(summary),
            turns,
        });
        tracks.insert(video_id, SynthTracks { video, audio });
    }
    Ok(SynthDataset {
        config: config.clone(),
        dialogues,
        tracks,
    })
}

impl SynthDataset {
    pub fn qa_pairs(&self) -> usize {
        self.dialogues.iter().map(|d| d.turns.len()).sum()
    }

    /// Vocabulary over every utterance, caption and summary.
    pub fn vocabulary(&self) -> Vocabulary {
        let mut texts: Vec<&str> = Vec::new();
        for d in &self.dialogues {
            texts.push(&d.caption);
            if let Some(s) = &d.summary {
                texts.push(s);
            }
            for t in &d.turns {
                texts.push(&t.question);
                texts.push(&t.answer);
            }
        }
        Vocabulary::build(texts, 1)
    }

    /// Encodes every dialogue, resampling video to `segments` rows when
    /// given.
    pub fn encode(&self, vocab: &Vocabulary, source: DescriptionSource, segments: Option<usize>) -> Result<Vec<EncodedDialogue>> {
        self.dialogues
            .iter()
            .map(|d| {
                let tr = &self.tracks[&d.video_id];
                let video = match segments {
                    Some(l) => tr.video.resample(l)?,
                    None => tr.video.clone(),
                };
                EncodedDialogue::encode(d, vocab, source, Some(video), Some(tr.audio.clone()))
            })
            .collect()
    }
}
