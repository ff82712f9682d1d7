//! The `train`, `ablate`, `generate`, `score`, `demo` and `synth` commands.
//!
//! Each command takes a resolved [`RunConfig`] and returns what it produced,
//! so the binary only parses flags and prints.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use film_hred_core::data::{DescriptionSource, Dialogue, EncodedDialogue, Modality};
use film_hred_core::decode::{answer_turn, decode, DecodeOptions, DecoderStepper, Strategy};
use film_hred_core::metrics::MetricReport;
use film_hred_core::model::{DialogueSession, Model};
use film_hred_core::synth::synthesize;
use film_hred_core::train::{random_search, train, EpochRecord, TrainOutcome, TrialResult};
use film_hred_core::vocab::{tokenize, Vocabulary, EOS};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::RunConfig;
use crate::dataset::{load_dataset, save_dataset, turn_count_warnings, SPLITS};
use crate::embeddings::load_embeddings;
use crate::error::{Error, Result};
use crate::features::FeatureStore;
use crate::score::{dialogue_references, format_comparison, format_report, group_references, read_tsv, score_run, segment_id, to_tsv};

pub const CHECKPOINT_FILE: &str = "checkpoint";
pub const HISTORY_FILE: &str = "history.ndlines";
pub const ANSWERS_FILE: &str = "answers.tsv";
pub const SNAPSHOT_FILE: &str = "config.snapshot";

/// Output directory `<output_dir>/<timestamp>-<tag>`, removed on drop unless
/// [`RunDir::keep`] was called.
pub struct RunDir {
    pub path: PathBuf,
    keep: bool,
}

impl RunDir {
    pub fn create(cfg: &RunConfig) -> Result<Self> {
        let stamp = chrono::Utc::now().format("%Y%m%d-%H%M%S");
        let base = cfg.output_dir.join(format!("{stamp}-{}", cfg.tag));
        let mut path = base.clone();
        let mut n = 2;
        while path.exists() {
            path = PathBuf::from(format!("{}-{n}", base.display()));
            n += 1;
        }
        fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
        Ok(RunDir { path, keep: false })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<()> {
        let p = self.file(name);
        fs::write(&p, contents).map_err(|e| Error::io(&p, e))
    }

    pub fn keep(mut self) -> PathBuf {
        self.keep = true;
        self.path.clone()
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        if !self.keep {
            let _ = fs::remove_dir_all(&self.path);
        }
    }
}

pub fn load_split(cfg: &RunConfig, split: &str) -> Result<Vec<Dialogue>> {
    let dialogues = load_dataset(&cfg.split_path(split))?;
    let warnings = turn_count_warnings(&dialogues);
    if let Some(first) = warnings.first() {
        eprintln!("warning: {split}: {first} ({} dialogues affected)", warnings.len());
    }
    Ok(dialogues)
}

/// Vocabulary over every question, answer, caption and summary.
pub fn build_vocabulary(dialogues: &[Dialogue], min_count: usize) -> Vocabulary {
    let mut texts: Vec<&str> = Vec::new();
    for d in dialogues {
        texts.push(&d.caption);
        texts.extend(d.summary.as_deref());
        for t in &d.turns {
            texts.push(&t.question);
            texts.push(&t.answer);
        }
    }
    Vocabulary::build(texts, min_count)
}

/// Attaches feature tracks and token ids. Video is resampled to `segments`
/// rows when FiLM is on; missing audio becomes one zero frame.
pub fn encode_dialogues(cfg: &RunConfig, dialogues: &[Dialogue], vocab: &Vocabulary) -> Result<Vec<EncodedDialogue>> {
    let store = FeatureStore::new(cfg.features_dir());
    let mut substituted = 0;
    let mut out = Vec::with_capacity(dialogues.len());
    for d in dialogues {
        let video = if cfg.use_i3d {
            let track = store.load(Modality::Video, &d.video_id)?.ok_or_else(|| Error::MissingFeatures {
                modality: "video",
                video_id: d.video_id.clone(),
                path: store.path(Modality::Video, &d.video_id),
            })?;
            check_width(&track, cfg.video_dim, "video_dim", &d.video_id)?;
            Some(if cfg.use_film { track.resample(cfg.segments)? } else { track })
        } else {
            None
        };
        let audio = if cfg.use_vggish {
            let track = store.load(Modality::Audio, &d.video_id)?;
            if let Some(t) = &track {
                check_width(t, cfg.audio_dim, "audio_dim", &d.video_id)?;
            }
            track
        } else {
            None
        };
        let mut e = EncodedDialogue::encode(d, vocab, cfg.description, video, audio)?;
        if cfg.use_vggish {
            e.fill_missing_audio(cfg.audio_dim);
            substituted += usize::from(e.audio_substituted);
        }
        out.push(e);
    }
    if substituted > 0 {
        eprintln!("note: {substituted} dialogues have no audio features; using a zero frame");
    }
    Ok(out)
}

fn check_width(track: &film_hred_core::data::FeatureTrack, want: usize, key: &str, id: &str) -> Result<()> {
    if track.dims() != want {
        return Err(Error::Config(format!("{} features of {id} are {} wide; set {key} = {}", track.modality.name(), track.dims(), track.dims())));
    }
    Ok(())
}

fn strategy(cfg: &RunConfig) -> Strategy {
    if cfg.beam == 1 {
        Strategy::Greedy
    } else {
        Strategy::Beam(cfg.beam)
    }
}

/// One `segment_id<TAB>answer` row per turn.
pub fn generate_answers(model: &Model, vocab: &Vocabulary, data: &[EncodedDialogue], cfg: &RunConfig) -> Result<Vec<(String, String)>> {
    let opts = DecodeOptions {
        max_len: cfg.max_len,
        suppress_unk: false,
    };
    let mut rows = Vec::new();
    for d in data {
        for turn in 0..d.turns.len() {
            let hyp = answer_turn(model, d, turn, strategy(cfg), &opts)?;
            rows.push((segment_id(&d.video_id, turn), vocab.decode(hyp.words())));
        }
    }
    Ok(rows)
}

pub fn history_lines(history: &[EpochRecord]) -> String {
    let mut s = String::new();
    for r in history {
        let line = serde_json::json!({"epoch": r.epoch, "train_loss": r.train_loss, "val_bleu4": r.val_bleu4});
        let _ = writeln!(s, "{line}");
    }
    s
}

/// Trains one model on already loaded splits.
pub fn fit(cfg: &RunConfig, vocab: &Vocabulary, train_set: &[EncodedDialogue], valid_set: &[EncodedDialogue]) -> Result<(Model, TrainOutcome)> {
    let mut model = Model::new(cfg.model_config(vocab.len()))?;
    if !cfg.embeddings.as_os_str().is_empty() {
        let dim = (cfg.embedding_dim_check > 0).then_some(cfg.embedding_dim_check);
        let init = load_embeddings(&cfg.embeddings, vocab, dim, cfg.seed)?;
        eprintln!("embeddings: {} of {} tokens covered ({:.1}%)", init.hits(), vocab.len(), 100.0 * init.coverage());
        init.apply(&mut model.params, model.embedding.table)?;
    }
    let outcome = train(&mut model, &cfg.train_config(), train_set, valid_set)?;
    model.load_params(outcome.best_params.clone())?;
    Ok((model, outcome))
}

#[derive(Debug)]
pub struct TrainReport {
    pub run_dir: PathBuf,
    pub best_epoch: usize,
    pub best_bleu4: f64,
    pub epochs: usize,
    pub search: Vec<TrialResult>,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let train_d = load_split(cfg, "train")?;
    let valid_d = load_split(cfg, "valid")?;
    eprintln!("train: {} dialogues, valid: {} dialogues", train_d.len(), valid_d.len());
    let vocab = build_vocabulary(&train_d, cfg.min_count);
    let train_set = encode_dialogues(cfg, &train_d, &vocab)?;
    let valid_set = encode_dialogues(cfg, &valid_d, &vocab)?;
    let run = RunDir::create(cfg)?;

    let mut cfg = cfg.clone();
    let mut search = Vec::new();
    if cfg.search_budget > 0 {
        search = random_search(
            &cfg.search_space(),
            cfg.search_budget,
            cfg.seed,
            &cfg.model_config(vocab.len()),
            &cfg.train_config(),
            &train_set,
            &valid_set,
        )?;
        let mut table = String::from("rank\ttrial\tlr\thidden\tretain\tval_bleu4\n");
        for (rank, r) in search.iter().enumerate() {
            let _ = writeln!(table, "{}\t{}\t{:?}\t{}\t{:?}\t{:.6}", rank + 1, r.index, r.trial.lr, r.trial.hidden, r.trial.retain, r.bleu4);
        }
        run.write("search.tsv", &table)?;
        let best = search[0].trial;
        cfg.lr = best.lr;
        cfg.hidden = best.hidden;
        cfg.retain = best.retain;
    }

    let (model, outcome) = fit(&cfg, &vocab, &train_set, &valid_set)?;
    run.write(HISTORY_FILE, &history_lines(&outcome.history))?;
    run.write(ANSWERS_FILE, &to_tsv(&generate_answers(&model, &vocab, &valid_set, &cfg)?))?;
    let snapshot = cfg.snapshot();
    let ck = Checkpoint {
        params: outcome.best_params.clone(),
        optimizer: Some(outcome.best_optimizer.clone()),
        config: snapshot.clone(),
        vocabulary: vocab.tokens().to_vec(),
        best_bleu4: outcome.best_bleu4,
        best_epoch: outcome.best_epoch,
    };
    save_checkpoint(&run.file(CHECKPOINT_FILE), &ck)?;
    run.write(SNAPSHOT_FILE, &snapshot)?;
    Ok(TrainReport {
        best_epoch: outcome.best_epoch,
        best_bleu4: outcome.best_bleu4,
        epochs: outcome.history.len(),
        search,
        run_dir: run.keep(),
    })
}

/// A model rebuilt from a checkpoint.
pub struct Restored {
    pub config: RunConfig,
    pub vocab: Vocabulary,
    pub model: Model,
    pub checkpoint: Checkpoint,
}

pub fn restore(path: &Path) -> Result<Restored> {
    let checkpoint = load_checkpoint(path)?;
    let config = RunConfig::parse_snapshot(&checkpoint.config)?;
    let vocab = Vocabulary::from_tokens(checkpoint.vocabulary.clone())?;
    let mut model = Model::new(config.model_config(vocab.len()))?;
    model.load_params(checkpoint.params.clone()).map_err(|e| Error::VocabMismatch(format!("checkpoint parameters do not fit its own configuration: {e}")))?;
    Ok(Restored {
        config,
        vocab,
        model,
        checkpoint,
    })
}

/// Share of the dataset's word tokens known to `vocab`.
pub fn token_coverage(dialogues: &[Dialogue], vocab: &Vocabulary) -> f64 {
    let (mut known, mut total) = (0usize, 0usize);
    for d in dialogues {
        for t in &d.turns {
            for w in tokenize(&t.question).iter().chain(&tokenize(&t.answer)) {
                total += 1;
                known += usize::from(vocab.get(w).is_some());
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        known as f64 / total as f64
    }
}

/// Below this share of known tokens a dataset is taken to belong to another
/// vocabulary.
pub const MIN_TOKEN_COVERAGE: f64 = 0.5;

/// Model settings come from the checkpoint; data paths, beam width and
/// length cap from `cfg`.
fn generation_config(cfg: &RunConfig, model_cfg: &RunConfig) -> RunConfig {
    let mut c = model_cfg.clone();
    c.data_root = cfg.data_root.clone();
    c.train_path = cfg.train_path.clone();
    c.valid_path = cfg.valid_path.clone();
    c.test_path = cfg.test_path.clone();
    c.features = cfg.features.clone();
    c.output_dir = cfg.output_dir.clone();
    c.tag = cfg.tag.clone();
    c.beam = cfg.beam;
    c.max_len = cfg.max_len;
    c
}

pub struct GenerateReport {
    pub answers: PathBuf,
    pub rows: usize,
    pub coverage: f64,
}

/// Writes answers for `split` to `out`, or to a new run directory.
pub fn cmd_generate(cfg: &RunConfig, checkpoint: &Path, split: &str, out: Option<&Path>) -> Result<GenerateReport> {
    cfg.validate()?;
    let r = restore(checkpoint)?;
    let gcfg = generation_config(cfg, &r.config);
    let dialogues = load_dataset(&gcfg.split_path(split))?;
    let coverage = token_coverage(&dialogues, &r.vocab);
    if coverage < MIN_TOKEN_COVERAGE {
        return Err(Error::VocabMismatch(format!(
            "only {:.1}% of the {split} tokens are in the checkpoint vocabulary",
            100.0 * coverage
        )));
    }
    let data = encode_dialogues(&gcfg, &dialogues, &r.vocab)?;
    let rows = generate_answers(&r.model, &r.vocab, &data, &gcfg)?;
    let text = to_tsv(&rows);
    let answers = match out {
        Some(p) => {
            fs::write(p, &text).map_err(|e| Error::io(p, e))?;
            p.to_path_buf()
        }
        None => {
            let run = RunDir::create(&gcfg)?;
            run.write(ANSWERS_FILE, &text)?;
            run.write(SNAPSHOT_FILE, &gcfg.snapshot())?;
            run.keep().join(ANSWERS_FILE)
        }
    };
    Ok(GenerateReport {
        answers,
        rows: rows.len(),
        coverage,
    })
}

/// Where the references of `score` come from.
pub enum References<'a> {
    Tsv(&'a Path),
    Dataset(&'a Path),
}

/// Scores an answers file, and compares it with a baseline when given.
pub fn cmd_score(candidates: &Path, references: References<'_>, baseline: Option<&Path>) -> Result<String> {
    let refs: BTreeMap<String, Vec<String>> = match references {
        References::Tsv(p) => group_references(&read_tsv(p)?),
        References::Dataset(p) => dialogue_references(&load_dataset(p)?),
    };
    let model = score_run(&read_tsv(candidates)?, &refs)?;
    Ok(match baseline {
        None => format_report(&model),
        Some(b) => {
            let base: MetricReport = score_run(&read_tsv(b)?, &refs)?;
            format_comparison(&model, &base)
        }
    })
}

/// One ablation setting: which inputs the model sees.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub label: String,
    pub use_i3d: bool,
    pub use_vggish: bool,
    pub description: DescriptionSource,
}

impl Variant {
    fn new(label: &str, use_i3d: bool, use_vggish: bool, description: DescriptionSource) -> Self {
        Variant {
            label: label.to_string(),
            use_i3d,
            use_vggish,
            description,
        }
    }

    /// FiLM only modulates video and audio.
    pub fn film_applies(&self) -> bool {
        self.use_i3d || self.use_vggish
    }
}

/// Rows of the ablation table for the caption and summary blocks.
pub fn ablation_variants(block: &str) -> Result<Vec<Variant>> {
    use DescriptionSource::{Caption, None as NoText, Summary};
    let caption = vec![
        Variant::new("Attention + I3D + VGGish + Caption", true, true, Caption),
        Variant::new("-Caption", true, true, NoText),
        Variant::new("-Caption -VGGish", true, false, NoText),
        Variant::new("-I3D -VGGish", false, false, Caption),
        Variant::new("-I3D -Caption", false, true, NoText),
    ];
    let summary = vec![
        Variant::new("Attention + I3D + VGGish + Summary", true, true, Summary),
        Variant::new("-VGGish", true, false, Summary),
        Variant::new("-I3D -VGGish", false, false, Summary),
        Variant::new("-I3D", false, true, Summary),
    ];
    match block {
        "caption" => Ok(caption),
        "summary" => Ok(summary),
        "both" => Ok(caption.into_iter().chain(summary).collect()),
        _ => Err(Error::Usage(format!("unknown ablation block {block:?}; use caption, summary or both"))),
    }
}

/// One trained cell of the ablation table.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub bleu4: f64,
    pub params: usize,
    pub film_params: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    /// `None` when the variant has no features for FiLM to modulate.
    pub film: Option<Cell>,
    pub no_film: Cell,
}

/// Tab-separated table with the row labels in the first column.
pub fn format_ablation(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant\tFiLM\tNoFiLM\tparams_FiLM\tparams_NoFiLM\tfilm_params_FiLM\tfilm_params_NoFiLM\n");
    for r in rows {
        let (b, p, f) = match &r.film {
            Some(c) => (format!("{:.4}", c.bleu4), c.params.to_string(), c.film_params.to_string()),
            None => ("--".into(), "--".into(), "--".into()),
        };
        let n = &r.no_film;
        let _ = writeln!(s, "{}\t{b}\t{:.4}\t{p}\t{}\t{f}\t{}", r.variant.label, n.bleu4, n.params, n.film_params);
    }
    s
}

pub struct AblationReport {
    pub run_dir: PathBuf,
    pub rows: Vec<AblationRow>,
}

/// Trains every variant with FiLM on and off under the same seed and budget.
/// `only` keeps the listed row labels (all rows when empty).
pub fn cmd_ablate(cfg: &RunConfig, block: &str, only: &[String]) -> Result<AblationReport> {
    cfg.validate()?;
    let mut variants = ablation_variants(block)?;
    if !only.is_empty() {
        let unknown: Vec<&String> = only.iter().filter(|l| !variants.iter().any(|v| &v.label == *l)).collect();
        if !unknown.is_empty() {
            return Err(Error::Usage(format!("unknown ablation rows: {unknown:?}")));
        }
        variants.retain(|v| only.contains(&v.label));
    }
    let train_d = load_split(cfg, "train")?;
    let valid_d = load_split(cfg, "valid")?;
    let vocab = build_vocabulary(&train_d, cfg.min_count);
    let run = RunDir::create(cfg)?;
    let mut rows = Vec::new();
    for v in variants {
        let mut base = cfg.clone();
        base.use_i3d = v.use_i3d;
        base.use_vggish = v.use_vggish;
        base.description = v.description;
        base.use_aux = cfg.use_aux && v.use_i3d && v.description != DescriptionSource::None;
        let cell = |use_film: bool| -> Result<Cell> {
            let mut c = base.clone();
            c.use_film = use_film;
            let tr = encode_dialogues(&c, &train_d, &vocab)?;
            let va = encode_dialogues(&c, &valid_d, &vocab)?;
            let (model, outcome) = fit(&c, &vocab, &tr, &va)?;
            eprintln!("{} [{}]: best val BLEU-4 {:.4} at epoch {}", v.label, if use_film { "FiLM" } else { "NoFiLM" }, outcome.best_bleu4, outcome.best_epoch);
            Ok(Cell {
                bleu4: outcome.best_bleu4,
                params: model.params.count(),
                film_params: model.film_param_count(),
            })
        };
        let film = if v.film_applies() { Some(cell(true)?) } else { None };
        let no_film = cell(false)?;
        rows.push(AblationRow { variant: v, film, no_film });
    }
    run.write("ablation.tsv", &format_ablation(&rows))?;
    run.write(SNAPSHOT_FILE, &cfg.snapshot())?;
    Ok(AblationReport { run_dir: run.keep(), rows })
}

/// Writes `train.json`, `valid.json`, `test.json` and their feature files
/// under `out`. Returns the dialogue count per split.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<Vec<(&'static str, usize)>> {
    let store = FeatureStore::new(out.join("features"));
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut counts = Vec::new();
    for (i, split) in SPLITS.iter().enumerate() {
        let sc = cfg.synth_config(i);
        if sc.dialogues == 0 {
            continue;
        }
        let ds = synthesize(&sc)?;
        for (id, tracks) in &ds.tracks {
            store.save(id, &tracks.video)?;
            store.save(id, &tracks.audio)?;
        }
        save_dataset(&crate::dataset::split_path(out, split), &ds.dialogues)?;
        counts.push((*split, ds.dialogues.len()));
    }
    Ok(counts)
}

/// Finds `video_id` in any split under the configured data paths.
fn find_dialogue(cfg: &RunConfig, video_id: &str) -> Result<Dialogue> {
    let mut available = Vec::new();
    for split in SPLITS {
        let path = cfg.split_path(split);
        if !path.exists() {
            continue;
        }
        for d in load_dataset(&path)? {
            if d.video_id == video_id {
                return Ok(d);
            }
            available.push(d.video_id);
        }
    }
    available.sort();
    available.dedup();
    Err(Error::UnknownVideo {
        id: video_id.to_string(),
        available,
    })
}

#[derive(Debug, PartialEq, Eq)]
pub struct DemoSummary {
    pub questions: usize,
    /// Utterances folded into the dialogue state (question and answer each).
    pub utterances: usize,
}

/// Interactive loop: reads questions from `input`, writes answers to
/// `output`. The model's own answers are folded into the history. Ends on
/// `quit` or end of input.
pub fn cmd_demo<R: BufRead, W: Write>(cfg: &RunConfig, checkpoint: &Path, video_id: &str, input: R, mut output: W) -> Result<DemoSummary> {
    let r = restore(checkpoint)?;
    let gcfg = generation_config(cfg, &r.config);
    let dialogue = find_dialogue(&gcfg, video_id)?;
    let encoded = encode_dialogues(&gcfg, std::slice::from_ref(&dialogue), &r.vocab)?.remove(0);
    let mut session = DialogueSession::new(&r.model, &encoded);
    let opts = DecodeOptions {
        max_len: gcfg.max_len,
        suppress_unk: false,
    };
    let io = |e| Error::io("<terminal>", e);
    let mut questions = 0;
    writeln!(output, "video {video_id}: {}", dialogue.caption).map_err(io)?;
    let mut lines = input.lines();
    loop {
        write!(output, "> ").map_err(io)?;
        output.flush().map_err(io)?;
        let Some(line) = lines.next() else { break };
        let line = line.map_err(io)?;
        let q = line.trim();
        if q.is_empty() {
            continue;
        }
        if q == "quit" {
            break;
        }
        let tokens = r.vocab.encode_utterance(q);
        let ctx = session.question_context(&tokens)?;
        let stepper = DecoderStepper::answer(&r.model, ctx)?;
        let hyp = decode(&stepper, strategy(&gcfg), &opts)?;
        let mut answer = hyp.words().to_vec();
        writeln!(output, "{}", r.vocab.decode(&answer)).map_err(io)?;
        answer.push(EOS);
        session.observe(&answer)?;
        questions += 1;
    }
    writeln!(output).map_err(io)?;
    Ok(DemoSummary {
        questions,
        utterances: session.utterances(),
    })
}
