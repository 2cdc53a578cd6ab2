//! Rank metrics, grouped analyses, the definition-deletion ablation and the
//! lexicon pivot baseline.

mod lexicon;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::corpus::SplitTag;
use crate::corpus::{DictionaryEntry, TrainingCorpus};
use crate::encoder::{forward_sequence, EncoderParams, ModelConfig, SequenceInput};
use crate::error::{Error, Result};
use crate::scoring::{gather, normalize_rows, rank_of, RankingList, ScoreNormalization};
use crate::word_index::{WordId, WordIndex};

pub use lexicon::{pivot_baseline, BilingualLexicon};

/// Cutoffs reported as Acc@N.
pub const CUTOFFS: [usize; 3] = [1, 10, 100];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub median_rank: f64,
    pub acc_at: BTreeMap<usize, f64>,
    pub rank_variance: f64,
    pub mrr: f64,
    pub n_samples: usize,
    pub n_excluded_targets: usize,
}

impl EvalResult {
    /// Acc@N for a reported cutoff.
    pub fn acc(&self, n: usize) -> f64 {
        self.acc_at.get(&n).copied().unwrap_or(f64::NAN)
    }
}

/// Metrics over 0-based ranks: lower median, Acc@N as the fraction of ranks
/// below N, population variance and mean of `1 / (rank + 1)`.
pub fn compute_metrics(ranks: &[usize]) -> Result<EvalResult> {
    if ranks.is_empty() {
        return Err(Error::EmptyInput("rank list"));
    }
    let n = ranks.len() as f64;
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    let median_rank = sorted[(sorted.len() - 1) / 2] as f64;
    let acc_at = CUTOFFS
        .iter()
        .map(|&c| (c, ranks.iter().filter(|&&r| r < c).count() as f64 / n))
        .collect();
    // sorted order makes the sums independent of input order
    let mean = sorted.iter().map(|&r| r as f64).sum::<f64>() / n;
    let rank_variance = sorted.iter().map(|&r| (r as f64 - mean).powi(2)).sum::<f64>() / n;
    let mrr = sorted.iter().map(|&r| 1.0 / (r as f64 + 1.0)).sum::<f64>() / n;
    Ok(EvalResult {
        median_rank,
        acc_at,
        rank_variance,
        mrr,
        n_samples: ranks.len(),
        n_excluded_targets: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRank {
    pub rank: usize,
    /// The gold word is missing from the index; `rank` is then the
    /// candidate count.
    pub excluded: bool,
}

pub fn summarize(samples: &[SampleRank]) -> Result<EvalResult> {
    let ranks: Vec<usize> = samples.iter().map(|s| s.rank).collect();
    let mut result = compute_metrics(&ranks)?;
    result.n_excluded_targets = samples.iter().filter(|s| s.excluded).count();
    Ok(result)
}

/// Position of `target` in a full ranking. A target absent from the index
/// (`None`) takes the worst rank, the number of candidates.
pub fn target_rank(ranking: &RankingList, target: Option<WordId>) -> SampleRank {
    match target {
        Some(t) => SampleRank {
            rank: ranking.position(t).unwrap_or(ranking.len()),
            excluded: false,
        },
        None => SampleRank {
            rank: ranking.len(),
            excluded: true,
        },
    }
}

pub const UNANNOTATED: &str = "unannotated";

/// Metrics per group key. Samples without a key fall into `unannotated`.
pub fn grouped_metrics(samples: &[SampleRank], keys: &[Option<String>]) -> Result<BTreeMap<String, EvalResult>> {
    let mut groups: BTreeMap<String, Vec<SampleRank>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        let key = keys
            .get(i)
            .cloned()
            .flatten()
            .unwrap_or_else(|| UNANNOTATED.to_string());
        groups.entry(key).or_default().push(*s);
    }
    groups
        .into_iter()
        .map(|(k, v)| summarize(&v).map(|m| (k, m)))
        .collect()
}

/// Group keys from the gold word's piece count in the index.
pub fn piece_count_keys(index: &WordIndex, language: &str, targets: &[Option<WordId>]) -> Result<Vec<Option<String>>> {
    let words = index.language(language)?;
    Ok(targets
        .iter()
        .map(|t| t.and_then(|id| words.get(id)).map(|e| e.pieces.len().to_string()))
        .collect())
}

/// Reads a `word<TAB>group` annotation file.
pub fn load_annotations(path: impl AsRef<Path>) -> Result<HashMap<String, String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (word, group) = line.split_once('\t').ok_or_else(|| Error::Lexicon {
            line: i + 1,
            reason: "expected word<TAB>group".into(),
        })?;
        out.entry(word.to_string()).or_insert_with(|| group.trim().to_string());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub language_pair: String,
    pub metrics: EvalResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub groups: Option<BTreeMap<String, EvalResult>>,
    /// Gold words absent from the index, ranked last.
    pub excluded: Vec<String>,
}

/// An encoded test definition with its gold word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalSample {
    pub input: SequenceInput,
    pub language: String,
    pub word: String,
    pub target: Option<WordId>,
}

/// Ranks the gold word of every sample among its language's candidates,
/// without dropout.
pub fn rank_samples(
    params: &EncoderParams<f32>,
    cfg: &ModelConfig,
    index: &WordIndex,
    samples: &[EvalSample],
    normalization: ScoreNormalization,
) -> Result<Vec<SampleRank>> {
    samples
        .par_iter()
        .map(|s| {
            let words = index.language(&s.language)?;
            let Some(target) = s.target else {
                return Ok(SampleRank {
                    rank: words.len(),
                    excluded: true,
                });
            };
            let cache = forward_sequence::<f32, ChaCha8Rng>(params, cfg, &s.input, None)?;
            let normalized = normalize_rows(&cache.scores.view(), normalization);
            let scores = gather(&normalized.view(), words.padded());
            Ok(SampleRank {
                rank: rank_of(&scores, target),
                excluded: false,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    /// Words whose definitions were removed, in selection order.
    pub chosen: Vec<String>,
    pub removed: Vec<DictionaryEntry>,
}

/// Removes the monolingual training definitions of a seeded `p`-fraction of
/// `words` in `language`.
///
/// The selection is a prefix of one seeded permutation, so for a fixed seed a
/// larger `p` removes a superset of what a smaller `p` removes.
pub fn ablation_filter(
    corpus: &TrainingCorpus,
    language: &str,
    words: &[String],
    p: f64,
    seed: u64,
) -> Result<(TrainingCorpus, AblationReport)> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidConfig(format!("ablation fraction {p} outside [0, 1]")));
    }
    let mut pool: Vec<String> = words.to_vec();
    pool.sort();
    pool.dedup();
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = (p * pool.len() as f64).round() as usize;
    pool.truncate(take);
    let chosen: HashSet<&str> = pool.iter().map(String::as_str).collect();

    let mut kept = Vec::with_capacity(corpus.len());
    let mut removed = Vec::new();
    for e in corpus.entries() {
        if e.split == SplitTag::Train
            && e.is_monolingual()
            && e.word_language == language
            && chosen.contains(e.word.as_str())
        {
            removed.push(e.clone());
        } else {
            kept.push(e.clone());
        }
    }
    let filtered = corpus.with_entries(kept)?;
    Ok((filtered, AblationReport { chosen: pool, removed }))
}
