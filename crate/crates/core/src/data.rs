//! Dialogue records, feature tracks, and their token-id encodings.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::vocab::{Vocabulary, EOS, SEP};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Turn {
    pub question: String,
    pub answer: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dialogue {
    pub video_id: String,
    pub caption: String,
    pub summary: Option<String>,
    pub turns: Vec<Turn>,
}

/// Number of turns in an official AVSD dialogue.
pub const OFFICIAL_TURNS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Video,
    Audio,
}

impl Modality {
    /// Feature width of the pretrained extractors (I3D Mixed_7c pooled,
    /// VGGish).
    pub fn default_dims(self) -> usize {
        match self {
            Modality::Video => 1024,
            Modality::Audio => 128,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Video => "video",
            Modality::Audio => "audio",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "video" => Some(Modality::Video),
            "audio" => Some(Modality::Audio),
            _ => None,
        }
    }
}

/// A dense `rows x dims` matrix of per-segment features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTrack {
    pub modality: Modality,
    rows: usize,
    dims: usize,
    values: Vec<f32>,
}

impl FeatureTrack {
    pub fn new(modality: Modality, rows: usize, dims: usize, values: Vec<f32>) -> Result<Self> {
        if rows == 0 || dims == 0 || rows * dims != values.len() {
            return Err(Error::invalid(format!(
                "feature track {rows}x{dims} cannot hold {} values",
                values.len()
            )));
        }
        Ok(FeatureTrack {
            modality,
            rows,
            dims,
            values,
        })
    }

    /// One all-zero frame, standing in for a missing track.
    pub fn zero_frame(modality: Modality, dims: usize) -> Self {
        FeatureTrack {
            modality,
            rows: 1,
            dims,
            values: alloc::vec![0.0; dims],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dims..(i + 1) * self.dims]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&x| f64::from(x)).collect()
    }

    /// Picks `target` equi-distant rows, row `i` taken from source row
    /// `floor(i * rows / target)`.
    pub fn resample(&self, target: usize) -> Result<FeatureTrack> {
        if target == 0 {
            return Err(Error::invalid("resample_track: target row count must be at least 1"));
        }
        if target == self.rows {
            return Ok(self.clone());
        }
        let mut values = Vec::with_capacity(target * self.dims);
        for i in 0..target {
            values.extend_from_slice(self.row(i * self.rows / target));
        }
        FeatureTrack::new(self.modality, target, self.dims, values)
    }
}

/// Which text describes the video to the description encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DescriptionSource {
    Caption,
    Summary,
    /// Caption, `<sep>`, summary.
    Both,
    None,
}

impl DescriptionSource {
    pub fn name(self) -> &'static str {
        match self {
            DescriptionSource::Caption => "caption",
            DescriptionSource::Summary => "summary",
            DescriptionSource::Both => "both",
            DescriptionSource::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "caption" => Some(DescriptionSource::Caption),
            "summary" => Some(DescriptionSource::Summary),
            "both" => Some(DescriptionSource::Both),
            "none" => Some(DescriptionSource::None),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedTurn {
    /// Question ids, `<eos>` terminated.
    pub question: Vec<u32>,
    /// Answer ids, `<eos>` terminated.
    pub answer: Vec<u32>,
}

/// A dialogue ready for the model: token ids plus its feature tracks.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedDialogue {
    pub video_id: String,
    /// Description ids without terminator; `None` when no source is used.
    pub description: Option<Vec<u32>>,
    pub turns: Vec<EncodedTurn>,
    pub video: Option<FeatureTrack>,
    pub audio: Option<FeatureTrack>,
    /// Set when the audio track was absent and replaced by a zero frame.
    pub audio_substituted: bool,
}

impl EncodedDialogue {
    pub fn encode(
        dialogue: &Dialogue,
        vocab: &Vocabulary,
        source: DescriptionSource,
        video: Option<FeatureTrack>,
        audio: Option<FeatureTrack>,
    ) -> Result<Self> {
        if dialogue.turns.is_empty() {
            return Err(Error::invalid(format!("dialogue {} has no turns", dialogue.video_id)));
        }
        let summary = || {
            dialogue
                .summary
                .as_deref()
                .ok_or_else(|| Error::invalid(format!("dialogue {} has no summary", dialogue.video_id)))
        };
        let description = match source {
            DescriptionSource::None => None,
            DescriptionSource::Caption => Some(vocab.encode(&dialogue.caption)),
            DescriptionSource::Summary => Some(vocab.encode(summary()?)),
            DescriptionSource::Both => {
                let mut ids = vocab.encode(&dialogue.caption);
                ids.push(SEP);
                ids.extend(vocab.encode(summary()?));
                Some(ids)
            }
        };
        if description.as_ref().is_some_and(Vec::is_empty) {
            return Err(Error::invalid(format!(
                "dialogue {} has an empty {} description",
                dialogue.video_id,
                source.name()
            )));
        }
        let turns = dialogue
            .turns
            .iter()
            .map(|t| EncodedTurn {
                question: vocab.encode_utterance(&t.question),
                answer: vocab.encode_utterance(&t.answer),
            })
            .collect();
        Ok(EncodedDialogue {
            video_id: dialogue.video_id.clone(),
            description,
            turns,
            video,
            audio,
            audio_substituted: false,
        })
    }

    /// Replaces a missing audio track with one zero frame and flags it.
    pub fn fill_missing_audio(&mut self, dims: usize) {
        if self.audio.is_none() {
            self.audio = Some(FeatureTrack::zero_frame(Modality::Audio, dims));
            self.audio_substituted = true;
        }
    }

    /// Description target for the auxiliary decoder (`<eos>` terminated).
    pub fn description_target(&self) -> Option<Vec<u32>> {
        self.description.as_ref().map(|d| {
            let mut t = d.clone();
            t.push(EOS);
            t
        })
    }
}
