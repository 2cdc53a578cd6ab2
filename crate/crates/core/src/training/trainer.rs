use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, Schedule, TrainState};
use super::backward::{backward, BackwardOptions, Example};
use super::{TrainConfig, TrainMode};
use crate::corpus::{DictionaryEntry, SplitTag, TrainingCorpus};
use crate::encoder::{build_input, EncoderParams, ModelConfig};
use crate::error::{Error, Result};
use crate::evaluation::{rank_samples, summarize, EvalSample};
use crate::vocab::SubwordVocab;
use crate::word_index::WordIndex;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample loss over the epoch.
    pub train_loss: f64,
    pub dev_acc10: f64,
    /// Learning rate of the epoch's last update.
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model_config: ModelConfig,
    /// Language tags in language-embedding row order.
    pub languages: Vec<String>,
    pub initial_dev_acc10: f64,
    /// Parameters with the best dev Acc@10; the later epoch wins ties.
    pub best_params: EncoderParams<f32>,
    /// 0 when no epoch beat the initial parameters.
    pub best_epoch: usize,
    pub best_dev_acc10: f64,
    pub history: Vec<EpochRecord>,
    pub state: TrainState,
    pub train_examples: usize,
    /// Training entries skipped because their word is not indexed.
    pub skipped_excluded: usize,
    /// Definitions cut to fit the sequence budget (train and dev).
    pub truncated: usize,
}

/// Final model configuration for a vocabulary, index and training setup.
pub fn resolve_config(base: &ModelConfig, vocab: &SubwordVocab, index: &WordIndex, cfg: &TrainConfig) -> Result<ModelConfig> {
    let model = ModelConfig {
        vocab_size: vocab.len(),
        num_languages: if cfg.mode.uses_language_embedding() {
            index.languages().count()
        } else {
            0
        },
        head_mode: cfg.head_mode,
        ..base.clone()
    };
    model.validate()?;
    model.validate_for_k(index.k())?;
    Ok(model)
}

/// Encodes dictionary entries for the encoder. With `languages`, each input
/// carries the row of its word language.
pub fn encode_entries<'a, I>(
    entries: I,
    vocab: &SubwordVocab,
    index: &WordIndex,
    model: &ModelConfig,
    languages: Option<&[String]>,
) -> Result<Vec<EvalSample>>
where
    I: IntoIterator<Item = &'a DictionaryEntry>,
{
    let budget = model.definition_budget(index.k());
    entries
        .into_iter()
        .map(|e| {
            index.language(&e.word_language)?;
            let language = match languages {
                Some(langs) => Some(
                    langs
                        .iter()
                        .position(|l| l == &e.word_language)
                        .ok_or_else(|| Error::UnknownLanguage(e.word_language.clone()))?,
                ),
                None => None,
            };
            let ids = vocab.tokenize_text(&e.definition);
            Ok(EvalSample {
                input: build_input(vocab.special(), index.k(), &ids, language, budget),
                language: e.word_language.clone(),
                word: e.word.clone(),
                target: index.lookup(&e.word_language, &e.word),
            })
        })
        .collect()
}

/// Entries a mode may read for a split. Modes without aligned data go
/// through the monolingual view.
pub fn mode_entries(corpus: &TrainingCorpus, mode: TrainMode, split: SplitTag) -> Vec<&DictionaryEntry> {
    match mode {
        TrainMode::BilingualAligned => corpus.split(split).collect(),
        TrainMode::Monolingual | TrainMode::UnalignedMultilingual => corpus.monolingual().split(split).collect(),
    }
}

fn step_seed(seed: u64, step: u64) -> u64 {
    seed ^ step.wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

fn dev_acc10(
    params: &EncoderParams<f32>,
    model: &ModelConfig,
    index: &WordIndex,
    dev: &[EvalSample],
    cfg: &TrainConfig,
) -> Result<f64> {
    let ranks = rank_samples(params, model, index, dev, cfg.score_normalization)?;
    Ok(summarize(&ranks)?.acc(10))
}

/// Trains from a seeded initialization, evaluating dev Acc@10 after every
/// epoch and keeping the best parameters.
///
/// `log` receives one JSON line per epoch.
pub fn train(
    corpus: &TrainingCorpus,
    index: &WordIndex,
    vocab: &SubwordVocab,
    base: &ModelConfig,
    cfg: &TrainConfig,
    seed: u64,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = resolve_config(base, vocab, index, cfg)?;
    let languages: Vec<String> = index.languages().map(str::to_string).collect();
    let lang_rows = cfg.mode.uses_language_embedding().then_some(languages.as_slice());

    let train_samples = encode_entries(mode_entries(corpus, cfg.mode, SplitTag::Train), vocab, index, &model, lang_rows)?;
    let dev = encode_entries(mode_entries(corpus, cfg.mode, SplitTag::Dev), vocab, index, &model, lang_rows)?;
    let truncated = train_samples.iter().chain(&dev).filter(|s| s.input.truncated > 0).count();
    let skipped_excluded = train_samples.iter().filter(|s| s.target.is_none()).count();
    let examples: Vec<Example> = train_samples
        .into_iter()
        .filter_map(|s| {
            s.target.map(|target| Example {
                input: s.input,
                language: s.language,
                target,
            })
        })
        .collect();
    if examples.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if dev.is_empty() {
        return Err(Error::EmptySplit("dev"));
    }
    if skipped_excluded > 0 {
        log::warn!("{skipped_excluded} training entries target words outside the index and are skipped");
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    let params = EncoderParams::init(&model, &mut init_rng)?;
    let steps_per_epoch = examples.len().div_ceil(cfg.batch_size) as u64;
    let total_steps = steps_per_epoch * cfg.epochs as u64;
    let schedule = Schedule {
        peak_lr: cfg.learning_rate,
        warmup_steps: (cfg.warmup_fraction * total_steps as f64).round() as u64,
        total_steps,
    };
    let adam = AdamConfig {
        clip_norm: cfg.clip_norm,
        ..AdamConfig::default()
    };
    let mut state = TrainState::new(params, seed, schedule, adam);

    let initial_dev_acc10 = dev_acc10(&state.params, &model, index, &dev, cfg)?;
    let mut best_params = state.params.clone();
    let mut best_epoch = 0;
    let mut best_dev_acc10 = initial_dev_acc10;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed.rotate_left(17) ^ 0x5DEE_CE66);
    let mut order: Vec<usize> = (0..examples.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| examples[i].clone()).collect();
            let opts = BackwardOptions {
                normalization: cfg.score_normalization,
                reduction: cfg.loss_reduction,
                dropout_seed: (model.dropout > 0.0).then(|| step_seed(seed, state.step)),
            };
            let step = state.step;
            let result = backward(&state.params, &model, index, &batch, &opts).map_err(|e| match e {
                Error::NonFinite(_) | Error::NonFiniteActivation { .. } => Error::Diverged { step },
                other => other,
            })?;
            loss_sum += match cfg.loss_reduction {
                super::LossReduction::Sum => result.loss as f64,
                super::LossReduction::Mean => result.loss as f64 * batch.len() as f64,
            };
            lr = adam_step(&mut state, &result.grads).learning_rate;
            if state.params.all_finite().is_err() {
                return Err(Error::Diverged { step });
            }
        }
        let acc = dev_acc10(&state.params, &model, index, &dev, cfg)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / examples.len() as f64,
            dev_acc10: acc,
            lr,
        };
        log::info!(
            "epoch {epoch}: train loss {:.4}, dev acc@10 {:.4}, lr {:.2e}",
            record.train_loss,
            acc,
            lr
        );
        if let Some(out) = log.as_deref_mut() {
            serde_json::to_writer(&mut *out, &record)?;
            writeln!(out).map_err(|e| Error::io("training log", e))?;
        }
        if acc >= best_dev_acc10 {
            best_dev_acc10 = acc;
            best_epoch = epoch;
            best_params = state.params.clone();
        }
        history.push(record);
    }

    Ok(TrainOutcome {
        model_config: model,
        languages,
        initial_dev_acc10,
        best_params,
        best_epoch,
        best_dev_acc10,
        history,
        state,
        train_examples: examples.len(),
        skipped_excluded,
        truncated,
    })
}
