//! A trained model bundled with its vocabulary and word index, ready for
//! queries and evaluation.
//!
//! On disk a model is a directory holding `model.ckpt`, `vocab.txt` and
//! `index.json`.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::corpus::DictionaryEntry;
use crate::encoder::{build_input, forward_sequence, EncoderParams, ModelConfig, SequenceInput};
use crate::error::{Error, Result};
use crate::evaluation::{grouped_metrics, piece_count_keys, rank_samples, summarize, EvalSample, MetricsReport, SampleRank};
use crate::scoring::{gather, normalize_rows, rank, RankingList, ScoreNormalization, SubwordScoreMatrix, WordScores};
use crate::training::{encode_entries, TrainMode, TrainOutcome};
use crate::vocab::SubwordVocab;
use crate::word_index::WordIndex;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub model_id: String,
    pub mode: TrainMode,
    /// Language tags in language-embedding row order.
    pub languages: Vec<String>,
    pub score_normalization: ScoreNormalization,
    pub lowercase: bool,
    pub continuation_marker: String,
}

#[derive(Debug, Clone)]
pub struct ReverseDictionary {
    config: ModelConfig,
    params: EncoderParams<f32>,
    vocab: SubwordVocab,
    index: WordIndex,
    meta: ModelMeta,
}

/// How evaluation samples are grouped, if at all.
#[derive(Debug, Clone, Default)]
pub enum GroupBy {
    #[default]
    None,
    /// Gold word piece count from the index.
    PieceCount,
    /// Gold word surface to group key.
    Annotation(HashMap<String, String>),
}

fn fingerprint(params: &EncoderParams<f32>) -> String {
    // FNV-1a over the little-endian parameter bytes
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for (_, t) in params.tensors() {
        for v in t.iter() {
            for b in v.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    format!("{h:016x}")
}

impl ReverseDictionary {
    pub fn new(
        config: ModelConfig,
        params: EncoderParams<f32>,
        vocab: SubwordVocab,
        index: WordIndex,
        mode: TrainMode,
        score_normalization: ScoreNormalization,
    ) -> Result<Self> {
        config.validate()?;
        config.validate_for_k(index.k())?;
        if config.vocab_size != vocab.len() {
            return Err(Error::ShapeMismatch {
                name: "vocabulary".into(),
                expected: vec![config.vocab_size],
                found: vec![vocab.len()],
            });
        }
        let languages: Vec<String> = index.languages().map(str::to_string).collect();
        if mode.uses_language_embedding() && config.num_languages != languages.len() {
            return Err(Error::InvalidConfig(format!(
                "model has {} language rows but the index holds {} languages",
                config.num_languages,
                languages.len()
            )));
        }
        let meta = ModelMeta {
            model_id: fingerprint(&params),
            mode,
            languages,
            score_normalization,
            lowercase: vocab.lowercase(),
            continuation_marker: vocab.continuation_marker().to_string(),
        };
        Ok(ReverseDictionary {
            config,
            params,
            vocab,
            index,
            meta,
        })
    }

    /// Bundles the best parameters of a training run.
    pub fn from_outcome(
        outcome: &TrainOutcome,
        vocab: SubwordVocab,
        index: WordIndex,
        mode: TrainMode,
        score_normalization: ScoreNormalization,
    ) -> Result<Self> {
        Self::new(
            outcome.model_config.clone(),
            outcome.best_params.clone(),
            vocab,
            index,
            mode,
            score_normalization,
        )
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        checkpoint::save(dir.join(CHECKPOINT_FILE), &self.config, &self.meta, &self.params)?;
        self.vocab.save(dir.join(VOCAB_FILE))?;
        self.index.save(dir.join(INDEX_FILE))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let (config, meta, params): (ModelConfig, ModelMeta, _) = checkpoint::load(dir.join(CHECKPOINT_FILE))?;
        let vocab = SubwordVocab::load(dir.join(VOCAB_FILE))?
            .with_lowercase(meta.lowercase)
            .with_continuation_marker(meta.continuation_marker.clone());
        let index = WordIndex::load(dir.join(INDEX_FILE), &vocab)?;
        let mut model = Self::new(config, params, vocab, index, meta.mode, meta.score_normalization)?;
        model.meta.model_id = meta.model_id;
        Ok(model)
    }

    pub fn model_id(&self) -> &str {
        &self.meta.model_id
    }

    pub fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    pub fn mode(&self) -> TrainMode {
        self.meta.mode
    }

    pub fn languages(&self) -> &[String] {
        &self.meta.languages
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &EncoderParams<f32> {
        &self.params
    }

    pub fn vocab(&self) -> &SubwordVocab {
        &self.vocab
    }

    pub fn index(&self) -> &WordIndex {
        &self.index
    }

    /// Language pairs this model can answer: identical pairs only for a
    /// monolingual model, any pair from the inventory otherwise.
    pub fn supported_pairs(&self) -> BTreeSet<(String, String)> {
        let langs = &self.meta.languages;
        langs
            .iter()
            .flat_map(|a| langs.iter().map(move |b| (a.clone(), b.clone())))
            .filter(|(a, b)| self.meta.mode != TrainMode::Monolingual || a == b)
            .collect()
    }

    pub fn check_pair(&self, definition_language: &str, target_language: &str) -> Result<()> {
        for tag in [definition_language, target_language] {
            if !self.meta.languages.iter().any(|l| l == tag) {
                return Err(Error::UnknownLanguage(tag.to_string()));
            }
        }
        if self.meta.mode == TrainMode::Monolingual && definition_language != target_language {
            return Err(Error::UnsupportedPair {
                definition: definition_language.to_string(),
                target: target_language.to_string(),
            });
        }
        Ok(())
    }

    fn language_row(&self, target_language: &str) -> Option<usize> {
        if !self.meta.mode.uses_language_embedding() {
            return None;
        }
        self.meta.languages.iter().position(|l| l == target_language)
    }

    pub fn encode(&self, definition: &str, target_language: &str) -> SequenceInput {
        let ids = self.vocab.tokenize_text(definition);
        build_input(
            self.vocab.special(),
            self.index.k(),
            &ids,
            self.language_row(target_language),
            self.config.definition_budget(self.index.k()),
        )
    }

    /// Raw k x |V| scores at the mask positions.
    pub fn subword_scores(
        &self,
        definition: &str,
        definition_language: &str,
        target_language: &str,
    ) -> Result<SubwordScoreMatrix> {
        self.check_pair(definition_language, target_language)?;
        let input = self.encode(definition, target_language);
        let cache = forward_sequence::<f32, ChaCha8Rng>(&self.params, &self.config, &input, None)?;
        SubwordScoreMatrix::new(cache.scores)
    }

    pub fn word_scores(
        &self,
        definition: &str,
        definition_language: &str,
        target_language: &str,
    ) -> Result<WordScores> {
        let s = self.subword_scores(definition, definition_language, target_language)?;
        let normalized = normalize_rows(&s.scores.view(), self.meta.score_normalization);
        let words = self.index.language(target_language)?;
        Ok(WordScores {
            language: target_language.to_string(),
            scores: gather(&normalized.view(), words.padded()),
        })
    }

    /// Candidates of `target_language` ranked for a definition.
    pub fn query(
        &self,
        definition: &str,
        definition_language: &str,
        target_language: &str,
        top_n: Option<usize>,
    ) -> Result<RankingList> {
        let scores = self.word_scores(definition, definition_language, target_language)?;
        rank(&scores, &self.index, top_n)
    }

    pub fn samples<'a, I>(&self, entries: I) -> Result<Vec<EvalSample>>
    where
        I: IntoIterator<Item = &'a DictionaryEntry>,
    {
        let rows = self
            .meta
            .mode
            .uses_language_embedding()
            .then_some(self.meta.languages.as_slice());
        encode_entries(entries, &self.vocab, &self.index, &self.config, rows)
    }

    /// Ranks every entry's gold word and summarizes the result.
    pub fn evaluate(
        &self,
        entries: &[&DictionaryEntry],
        split: &str,
        group_by: &GroupBy,
    ) -> Result<(MetricsReport, Vec<SampleRank>)> {
        for e in entries {
            self.check_pair(&e.definition_language, &e.word_language)?;
        }
        let samples = self.samples(entries.iter().copied())?;
        let ranks = rank_samples(&self.params, &self.config, &self.index, &samples, self.meta.score_normalization)?;
        let metrics = summarize(&ranks)?;
        let groups = match group_by {
            GroupBy::None => None,
            GroupBy::PieceCount => {
                let mut keys = Vec::with_capacity(samples.len());
                for s in &samples {
                    keys.extend(piece_count_keys(&self.index, &s.language, &[s.target])?);
                }
                Some(grouped_metrics(&ranks, &keys)?)
            }
            GroupBy::Annotation(map) => {
                let keys: Vec<Option<String>> = samples.iter().map(|s| map.get(&s.word).cloned()).collect();
                Some(grouped_metrics(&ranks, &keys)?)
            }
        };
        let pairs: BTreeSet<String> = entries
            .iter()
            .map(|e| format!("{}-{}", e.definition_language, e.word_language))
            .collect();
        let excluded: BTreeSet<String> = samples
            .iter()
            .filter(|s| s.target.is_none())
            .map(|s| s.word.clone())
            .collect();
        let report = MetricsReport {
            split: split.to_string(),
            language_pair: pairs.into_iter().collect::<Vec<_>>().join(","),
            metrics,
            groups,
            excluded: excluded.into_iter().collect(),
        };
        Ok((report, ranks))
    }
}
