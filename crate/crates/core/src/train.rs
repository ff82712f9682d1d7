//! Epoch loop with validation BLEU-4 early stopping, and random search over
//! a small hyperparameter space.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::EncodedDialogue;
use crate::decode::{answer_turn, DecodeOptions, Strategy};
use crate::error::{Error, Result};
use crate::layers::Dropout;
use crate::metrics::{bleu, EvalPair};
use crate::model::Model;
use crate::optim::{AmsgradConfig, AmsgradState};
use crate::sampler::{ScheduledSampler, DEFAULT_THRESHOLD};
use crate::tape::Tape;
use crate::tensor::ParamSet;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub optimizer: AmsgradConfig,
    /// Dialogues per update.
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation BLEU-4 gain before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Dropout retain probability.
    pub retain: f64,
    pub ss_threshold: f64,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
    /// Stop once the epoch's mean training loss falls below this.
    pub target_loss: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: AmsgradConfig::default(),
            batch_size: 8,
            max_epochs: 50,
            patience: 5,
            seed: 0,
            retain: 0.8,
            ss_threshold: DEFAULT_THRESHOLD,
            clip_norm: 5.0,
            target_loss: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.patience < 1 {
            return Err(Error::config("patience must be at least 1"));
        }
        if self.batch_size < 1 || self.max_epochs < 1 {
            return Err(Error::config("batch size and epoch budget must be at least 1"));
        }
        if !(self.retain > 0.0 && self.retain <= 1.0) {
            return Err(Error::config(format!("retain {} not in (0, 1]", self.retain)));
        }
        if !(0.0..=1.0).contains(&self.ss_threshold) {
            return Err(Error::config("scheduled-sampling threshold must lie in [0, 1]"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::config("clip norm must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-turn objective over the epoch.
    pub train_loss: f64,
    pub val_bleu4: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub best_params: ParamSet,
    pub best_optimizer: AmsgradState,
    pub best_bleu4: f64,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Greedy answers with ground-truth history, as `(candidate, reference)`
/// id sequences without `<eos>`.
pub fn greedy_pairs(model: &Model, data: &[EncodedDialogue], opts: &DecodeOptions) -> Result<Vec<EvalPair<u32>>> {
    let mut pairs = Vec::new();
    for d in data {
        for (i, turn) in d.turns.iter().enumerate() {
            let hyp = answer_turn(model, d, i, Strategy::Greedy, opts)?;
            let reference = turn.answer[..turn.answer.len() - 1].to_vec();
            pairs.push(EvalPair::new(hyp.words().to_vec(), alloc::vec![reference]));
        }
    }
    Ok(pairs)
}

pub fn validation_bleu4(model: &Model, data: &[EncodedDialogue]) -> Result<f64> {
    let pairs = greedy_pairs(model, data, &DecodeOptions::default())?;
    Ok(bleu(&pairs, 4)?[3])
}

/// Mean per-turn objective without dropout and with teacher forcing.
pub fn evaluation_loss(model: &Model, data: &[EncodedDialogue]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("evaluation over an empty split"));
    }
    let (mut total, mut turns) = (0.0, 0usize);
    for d in data {
        let mut t = Tape::inference(&model.params);
        let (obj, n) = model.dialogue_objective(&mut t, d, &mut Dropout::eval(), &mut ScheduledSampler::teacher_forcing())?;
        total += t.scalar(obj);
        turns += n;
    }
    Ok(total / turns as f64)
}

/// Trains `model` in place and returns the best validation snapshot.
pub fn train(model: &mut Model, cfg: &TrainConfig, train_set: &[EncodedDialogue], valid_set: &[EncodedDialogue]) -> Result<TrainOutcome> {
    train_observed(model, cfg, train_set, valid_set, |_| {})
}

/// As [`train`], calling `observe` after every epoch.
pub fn train_observed(
    model: &mut Model,
    cfg: &TrainConfig,
    train_set: &[EncodedDialogue],
    valid_set: &[EncodedDialogue],
    mut observe: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    if valid_set.is_empty() {
        return Err(Error::invalid("validation split is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = AmsgradState::new(cfg.optimizer, &model.params)?;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(ParamSet, AmsgradState, f64, usize)> = None;
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut epoch_loss, mut epoch_turns) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let batch_turns: usize = batch.iter().map(|&i| train_set[i].turns.len()).sum();
            model.params.zero_grad();
            for &i in batch {
                let mut dropout = Dropout::train(cfg.retain, rng.gen())?;
                let mut sampler = ScheduledSampler::new(cfg.ss_threshold, rng.gen())?;
                let (value, grads) = {
                    let mut t = Tape::new(&model.params);
                    let (obj, _) = model.dialogue_objective(&mut t, &train_set[i], &mut dropout, &mut sampler)?;
                    (t.scalar(obj), t.backward_scaled(obj, 1.0 / batch_turns as f64)?)
                };
                grads.accumulate_into(&mut model.params);
                epoch_loss += value;
                epoch_turns += train_set[i].turns.len();
            }
            model.params.clip_grad_norm(cfg.clip_norm);
            optimizer.step(&mut model.params)?;
        }
        model.params.zero_grad();
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss / epoch_turns as f64,
            val_bleu4: validation_bleu4(model, valid_set)?,
        };
        history.push(record);
        observe(&record);
        if best.as_ref().map_or(true, |b| record.val_bleu4 > b.2) {
            best = Some((model.params.clone(), optimizer.clone(), record.val_bleu4, epoch));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
        if cfg.target_loss.is_some_and(|t| record.train_loss < t) {
            break;
        }
    }
    let (best_params, best_optimizer, best_bleu4, best_epoch) = best.expect("at least one epoch runs");
    Ok(TrainOutcome {
        best_params,
        best_optimizer,
        best_bleu4,
        best_epoch,
        history,
    })
}

/// Ranges sampled by [`random_search`].
#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpace {
    /// Sampled log-uniformly.
    pub lr: (f64, f64),
    pub hidden: Vec<usize>,
    /// Dropout retain probability, sampled uniformly.
    pub retain: (f64, f64),
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            lr: (1e-4, 1e-2),
            hidden: alloc::vec![128, 256],
            retain: (0.6, 0.9),
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("search space has no valid hidden sizes"));
        }
        if !(self.lr.0 > 0.0 && self.lr.0 <= self.lr.1) {
            return Err(Error::config("search space learning-rate range is empty"));
        }
        if !(self.retain.0 > 0.0 && self.retain.0 <= self.retain.1 && self.retain.1 <= 1.0) {
            return Err(Error::config("search space retain range is empty"));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Trial {
        let (lo, hi) = (libm::log(self.lr.0), libm::log(self.lr.1));
        let u: f64 = rng.gen();
        let v: f64 = rng.gen();
        Trial {
            lr: libm::exp(lo + (hi - lo) * u),
            hidden: self.hidden[rng.gen_range(0..self.hidden.len())],
            retain: self.retain.0 + (self.retain.1 - self.retain.0) * v,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Trial {
    pub lr: f64,
    pub hidden: usize,
    pub retain: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialResult {
    pub index: usize,
    pub trial: Trial,
    pub bleu4: f64,
}

/// Samples `budget` trials and scores each with `run`; results are ranked by
/// descending score, earlier trials first on ties.
pub fn random_search_with(space: &SearchSpace, budget: usize, seed: u64, mut run: impl FnMut(&Trial) -> Result<f64>) -> Result<Vec<TrialResult>> {
    space.validate()?;
    if budget < 1 {
        return Err(Error::config("search budget must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut results = Vec::with_capacity(budget);
    for index in 0..budget {
        let trial = space.sample(&mut rng);
        results.push(TrialResult {
            index,
            trial,
            bleu4: run(&trial)?,
        });
    }
    results.sort_by(|a, b| b.bleu4.total_cmp(&a.bleu4).then(a.index.cmp(&b.index)));
    Ok(results)
}

/// Full training run per trial: builds a model from `base_model` with the
/// trial's hidden size and trains it with the trial's learning rate and
/// retain. Seeds come from the base configs, so trials differ only in the
/// sampled values.
pub fn random_search(
    space: &SearchSpace,
    budget: usize,
    seed: u64,
    base_model: &crate::model::ModelConfig,
    base_train: &TrainConfig,
    train_set: &[EncodedDialogue],
    valid_set: &[EncodedDialogue],
) -> Result<Vec<TrialResult>> {
    random_search_with(space, budget, seed, |trial| {
        let mut mc = base_model.clone();
        mc.hidden = trial.hidden;
        let mut model = Model::new(mc)?;
        let mut tc = base_train.clone();
        tc.optimizer.lr = trial.lr;
        tc.retain = trial.retain;
        Ok(train(&mut model, &tc, train_set, valid_set)?.best_bleu4)
    })
}
