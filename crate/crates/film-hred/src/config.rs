//! Flat `key = value` run configuration.
//!
//! Values are layered: defaults, then a preset, then a config file, then
//! command-line overrides. [`RunConfig::snapshot`] prints every key and
//! parses back to the same configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use film_hred_core::data::DescriptionSource;
use film_hred_core::encoders::EncoderConfig;
use film_hred_core::model::ModelConfig;
use film_hred_core::optim::AmsgradConfig;
use film_hred_core::synth::{SynthConfig, SynthTask};
use film_hred_core::train::{SearchSpace, TrainConfig};

use crate::error::{Error, Result};

/// Environment variable naming the default data root.
pub const DATA_ENV: &str = "FILM_HRED_DATA";

pub const PRESETS: [&str; 5] = ["1.a.i", "1.a.ii", "2.a.i", "2.a.ii", "synth"];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: String,
    pub data_root: PathBuf,
    /// Empty paths resolve under `data_root`.
    pub train_path: PathBuf,
    pub valid_path: PathBuf,
    pub test_path: PathBuf,
    pub features: PathBuf,
    pub embeddings: PathBuf,
    /// Required embedding width; 0 accepts the file's width.
    pub embedding_dim_check: usize,
    pub min_count: usize,
    pub output_dir: PathBuf,
    pub tag: String,
    pub seed: u64,

    pub embed_dim: usize,
    pub hidden: usize,
    pub att_dim: usize,
    pub segments: usize,
    pub film_blocks: usize,
    pub film_hidden: usize,
    pub fc_dim: usize,
    pub video_dim: usize,
    pub audio_dim: usize,
    pub use_film: bool,
    pub use_i3d: bool,
    pub use_vggish: bool,
    pub description: DescriptionSource,
    pub use_aux: bool,
    pub aux_weight: f64,

    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub retain: f64,
    pub ss_threshold: f64,
    pub clip_norm: f64,
    pub target_loss: Option<f64>,

    pub beam: usize,
    pub max_len: usize,

    pub search_budget: usize,
    pub search_lr_min: f64,
    pub search_lr_max: f64,
    pub search_hidden: Vec<usize>,
    pub search_retain_min: f64,
    pub search_retain_max: f64,

    pub synth_task: SynthTask,
    pub synth_dialogues: usize,
    pub synth_valid: usize,
    pub synth_test: usize,
    pub synth_vocab: usize,
    pub synth_turns: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        let s = SearchSpace::default();
        RunConfig {
            preset: "none".into(),
            data_root: PathBuf::from("data"),
            train_path: PathBuf::new(),
            valid_path: PathBuf::new(),
            test_path: PathBuf::new(),
            features: PathBuf::new(),
            embeddings: PathBuf::new(),
            embedding_dim_check: crate::embeddings::GLOVE_DIM,
            min_count: 2,
            output_dir: PathBuf::from("run"),
            tag: "run".into(),
            seed: 0,
            embed_dim: m.embed_dim,
            hidden: m.hidden,
            att_dim: m.att_dim,
            segments: m.encoder.segments,
            film_blocks: m.encoder.film_blocks,
            film_hidden: m.encoder.film_hidden,
            fc_dim: m.encoder.fc_dim,
            video_dim: m.encoder.video_dim,
            audio_dim: m.encoder.audio_dim,
            use_film: m.encoder.use_film,
            use_i3d: m.use_video,
            use_vggish: m.use_audio,
            description: m.description,
            use_aux: m.use_aux,
            aux_weight: m.aux_weight,
            lr: t.optimizer.lr,
            beta1: t.optimizer.beta1,
            beta2: t.optimizer.beta2,
            eps: t.optimizer.eps,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            retain: t.retain,
            ss_threshold: t.ss_threshold,
            clip_norm: t.clip_norm,
            target_loss: t.target_loss,
            beam: 5,
            max_len: film_hred_core::decode::DEFAULT_MAX_LEN,
            search_budget: 0,
            search_lr_min: s.lr.0,
            search_lr_max: s.lr.1,
            search_hidden: s.hidden,
            search_retain_min: s.retain.0,
            search_retain_max: s.retain.1,
            synth_task: SynthTask::Attributes,
            synth_dialogues: 16,
            synth_valid: 4,
            synth_test: 4,
            synth_vocab: 50,
            synth_turns: 3,
        }
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "yes" | "1" | "on" => Some(true),
        "false" | "no" | "0" | "off" => Some(false),
        _ => None,
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

impl RunConfig {
    /// Defaults with the data root taken from `FILM_HRED_DATA` when set.
    pub fn from_env() -> Self {
        let mut c = RunConfig::default();
        if let Some(root) = std::env::var_os(DATA_ENV) {
            c.data_root = PathBuf::from(root);
        }
        c
    }

    pub fn apply_preset(&mut self, name: &str) -> Result<()> {
        match name {
            "none" => {}
            "1.a.i" | "1.a.ii" => {
                self.use_i3d = true;
                self.use_vggish = true;
                self.description = if name == "1.a.i" { DescriptionSource::Caption } else { DescriptionSource::Summary };
            }
            "2.a.i" | "2.a.ii" => {
                self.use_i3d = false;
                self.use_vggish = false;
                // The auxiliary decoder reads the video encoder.
                self.use_aux = false;
                self.description = if name == "2.a.i" { DescriptionSource::Caption } else { DescriptionSource::Summary };
            }
            "synth" => {
                self.embed_dim = 16;
                self.hidden = 32;
                self.att_dim = 16;
                self.segments = 8;
                self.film_hidden = 16;
                self.fc_dim = 16;
                self.video_dim = 16;
                self.audio_dim = 8;
                self.use_aux = false;
                self.min_count = 1;
                self.lr = 1e-2;
                self.eps = 1e-2;
                self.batch_size = 1;
                self.retain = 1.0;
                self.max_epochs = 150;
                self.patience = 30;
                self.beam = 1;
                self.search_hidden = vec![16, 32];
            }
            _ => return Err(Error::Config(format!("unknown preset {name:?}; known: {}", PRESETS.join(", ")))),
        }
        self.preset = name.to_string();
        Ok(())
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::Config(format!("bad value {value:?} for {key}"));
        let usize_ = || value.parse::<usize>().map_err(|_| bad());
        let f64_ = || value.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(bad);
        let bool_ = || parse_bool(value).ok_or_else(bad);
        let path = || PathBuf::from(value);
        match key {
            "preset" => self.apply_preset(value)?,
            "data_root" => self.data_root = path(),
            "train_path" => self.train_path = path(),
            "valid_path" => self.valid_path = path(),
            "test_path" => self.test_path = path(),
            "features" => self.features = path(),
            "embeddings" => self.embeddings = path(),
            "embedding_dim_check" => self.embedding_dim_check = usize_()?,
            "min_count" => self.min_count = usize_()?,
            "output_dir" => self.output_dir = path(),
            "tag" => self.tag = value.to_string(),
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            "embed_dim" => self.embed_dim = usize_()?,
            "hidden" => self.hidden = usize_()?,
            "att_dim" => self.att_dim = usize_()?,
            "segments" => self.segments = usize_()?,
            "film_blocks" => self.film_blocks = usize_()?,
            "film_hidden" => self.film_hidden = usize_()?,
            "fc_dim" => self.fc_dim = usize_()?,
            "video_dim" => self.video_dim = usize_()?,
            "audio_dim" => self.audio_dim = usize_()?,
            "use_film" => self.use_film = bool_()?,
            "use_i3d" => self.use_i3d = bool_()?,
            "use_vggish" => self.use_vggish = bool_()?,
            "description" => self.description = DescriptionSource::parse(value).ok_or_else(bad)?,
            "use_aux" => self.use_aux = bool_()?,
            "aux_weight" => self.aux_weight = f64_()?,
            "lr" => self.lr = f64_()?,
            "beta1" => self.beta1 = f64_()?,
            "beta2" => self.beta2 = f64_()?,
            "eps" => self.eps = f64_()?,
            "batch_size" => self.batch_size = usize_()?,
            "max_epochs" => self.max_epochs = usize_()?,
            "patience" => self.patience = usize_()?,
            "retain" => self.retain = f64_()?,
            "ss_threshold" => self.ss_threshold = f64_()?,
            "clip_norm" => self.clip_norm = f64_()?,
            "target_loss" => self.target_loss = if value == "none" { None } else { Some(f64_()?) },
            "beam" => self.beam = usize_()?,
            "max_len" => self.max_len = usize_()?,
            "search_budget" => self.search_budget = usize_()?,
            "search_lr_min" => self.search_lr_min = f64_()?,
            "search_lr_max" => self.search_lr_max = f64_()?,
            "search_hidden" => {
                self.search_hidden = value.split(',').map(|s| s.trim().parse::<usize>()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?
            }
            "search_retain_min" => self.search_retain_min = f64_()?,
            "search_retain_max" => self.search_retain_max = f64_()?,
            "synth_task" => self.synth_task = SynthTask::parse(value).ok_or_else(bad)?,
            "synth_dialogues" => self.synth_dialogues = usize_()?,
            "synth_valid" => self.synth_valid = usize_()?,
            "synth_test" => self.synth_test = usize_()?,
            "synth_vocab" => self.synth_vocab = usize_()?,
            "synth_turns" => self.synth_turns = usize_()?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its text value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        vec![
            ("preset", self.preset.clone()),
            ("data_root", path_str(&self.data_root)),
            ("train_path", path_str(&self.train_path)),
            ("valid_path", path_str(&self.valid_path)),
            ("test_path", path_str(&self.test_path)),
            ("features", path_str(&self.features)),
            ("embeddings", path_str(&self.embeddings)),
            ("embedding_dim_check", self.embedding_dim_check.to_string()),
            ("min_count", self.min_count.to_string()),
            ("output_dir", path_str(&self.output_dir)),
            ("tag", self.tag.clone()),
            ("seed", self.seed.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("hidden", self.hidden.to_string()),
            ("att_dim", self.att_dim.to_string()),
            ("segments", self.segments.to_string()),
            ("film_blocks", self.film_blocks.to_string()),
            ("film_hidden", self.film_hidden.to_string()),
            ("fc_dim", self.fc_dim.to_string()),
            ("video_dim", self.video_dim.to_string()),
            ("audio_dim", self.audio_dim.to_string()),
            ("use_film", self.use_film.to_string()),
            ("use_i3d", self.use_i3d.to_string()),
            ("use_vggish", self.use_vggish.to_string()),
            ("description", self.description.name().to_string()),
            ("use_aux", self.use_aux.to_string()),
            ("aux_weight", format!("{:?}", self.aux_weight)),
            ("lr", format!("{:?}", self.lr)),
            ("beta1", format!("{:?}", self.beta1)),
            ("beta2", format!("{:?}", self.beta2)),
            ("eps", format!("{:?}", self.eps)),
            ("batch_size", self.batch_size.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("retain", format!("{:?}", self.retain)),
            ("ss_threshold", format!("{:?}", self.ss_threshold)),
            ("clip_norm", format!("{:?}", self.clip_norm)),
            ("target_loss", self.target_loss.map_or("none".into(), |x| format!("{x:?}"))),
            ("beam", self.beam.to_string()),
            ("max_len", self.max_len.to_string()),
            ("search_budget", self.search_budget.to_string()),
            ("search_lr_min", format!("{:?}", self.search_lr_min)),
            ("search_lr_max", format!("{:?}", self.search_lr_max)),
            ("search_hidden", join(&self.search_hidden)),
            ("search_retain_min", format!("{:?}", self.search_retain_min)),
            ("search_retain_max", format!("{:?}", self.search_retain_max)),
            ("synth_task", self.synth_task.name().to_string()),
            ("synth_dialogues", self.synth_dialogues.to_string()),
            ("synth_valid", self.synth_valid.to_string()),
            ("synth_test", self.synth_test.to_string()),
            ("synth_vocab", self.synth_vocab.to_string()),
            ("synth_turns", self.synth_turns.to_string()),
        ]
    }

    /// `key = value` lines for every setting.
    pub fn snapshot(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Applies `key = value` lines. Blank lines and `#` comments are skipped.
    /// `preset` lines are applied first so that the other keys override them.
    pub fn apply_text(&mut self, text: &str, file: &str) -> Result<()> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                file: file.to_string(),
                line: i + 1,
                msg: format!("expected key = value, found {line:?}"),
            })?;
            pairs.push((i + 1, k.trim().to_string(), v.trim().to_string()));
        }
        pairs.sort_by_key(|(_, k, _)| k != "preset");
        for (line, k, v) in pairs {
            self.set(&k, &v).map_err(|e| Error::Parse {
                file: file.to_string(),
                line,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Applies `key=value` overrides from the command line.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| Error::Usage(format!("override {o:?} is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn parse_snapshot(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_text(text, "config snapshot")?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.use_aux && self.description == DescriptionSource::None {
            return Err(Error::Config("use_aux needs a description source other than none".into()));
        }
        if self.beam == 0 || self.max_len == 0 {
            return Err(Error::Config("beam and max_len must be at least 1".into()));
        }
        if self.min_count == 0 {
            return Err(Error::Config("min_count must be at least 1".into()));
        }
        self.train_config().validate()?;
        Ok(())
    }

    fn resolve(&self, explicit: &Path, default: impl FnOnce() -> PathBuf) -> PathBuf {
        if explicit.as_os_str().is_empty() {
            default()
        } else {
            explicit.to_path_buf()
        }
    }

    pub fn split_path(&self, split: &str) -> PathBuf {
        let explicit = match split {
            "train" => &self.train_path,
            "valid" => &self.valid_path,
            _ => &self.test_path,
        };
        self.resolve(explicit, || crate::dataset::split_path(&self.data_root, split))
    }

    pub fn features_dir(&self) -> PathBuf {
        self.resolve(&self.features, || self.data_root.join("features"))
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            hidden: self.hidden,
            att_dim: self.att_dim,
            encoder: EncoderConfig {
                segments: self.segments,
                film_blocks: self.film_blocks,
                film_hidden: self.film_hidden,
                fc_dim: self.fc_dim,
                use_film: self.use_film,
                video_dim: self.video_dim,
                audio_dim: self.audio_dim,
            },
            use_video: self.use_i3d,
            use_audio: self.use_vggish,
            description: self.description,
            use_aux: self.use_aux,
            aux_weight: self.aux_weight,
            init_seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            optimizer: AmsgradConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
            },
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.seed,
            retain: self.retain,
            ss_threshold: self.ss_threshold,
            clip_norm: self.clip_norm,
            target_loss: self.target_loss,
        }
    }

    pub fn search_space(&self) -> SearchSpace {
        SearchSpace {
            lr: (self.search_lr_min, self.search_lr_max),
            hidden: self.search_hidden.clone(),
            retain: (self.search_retain_min, self.search_retain_max),
        }
    }

    /// Generator settings for one split; `index` 0, 1, 2 = train, valid, test.
    pub fn synth_config(&self, index: usize) -> SynthConfig {
        let (n, prefix) = match index {
            0 => (self.synth_dialogues, "train"),
            1 => (self.synth_valid, "valid"),
            _ => (self.synth_test, "test"),
        };
        let mut c = SynthConfig::new(self.seed.wrapping_add(index as u64), n, self.synth_vocab, self.synth_turns);
        c.task = self.synth_task;
        c.video_dim = self.video_dim;
        c.audio_dim = self.audio_dim;
        c.segments = self.segments;
        c.id_prefix = format!("{prefix}-");
        c
    }
}
