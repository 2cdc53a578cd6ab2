//! From subword scores to word scores, rankings and word-level losses.
//!
//! A word with padded pieces `b_1..b_k` scores `sum_i S[i][b_i]`; padding
//! slots gather the score of the mask id at that position. Ranking sorts by
//! score, ties broken by ascending word id.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::encoder::ops::log_sum_exp;
use crate::encoder::Scalar;
use crate::error::{Error, Result};
use crate::word_index::{WordId, WordIndex};

/// k x |V| subword scores at the mask positions of one input.
#[derive(Debug, Clone, PartialEq)]
pub struct SubwordScoreMatrix {
    pub scores: Array2<f32>,
}

impl SubwordScoreMatrix {
    pub fn new(scores: Array2<f32>) -> Result<Self> {
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("subword scores".into()));
        }
        Ok(SubwordScoreMatrix { scores })
    }

    pub fn k(&self) -> usize {
        self.scores.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.scores.ncols()
    }

    /// Interchange layout: u32 k, u32 |V|, then k*|V| f32, all little-endian,
    /// row-major.
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(&(self.k() as u32).to_le_bytes())?;
        out.write_all(&(self.vocab_size() as u32).to_le_bytes())?;
        for v in self.scores.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut bytes = Vec::new();
        input
            .read_to_end(&mut bytes)
            .map_err(|e| Error::ScoreFile(e.to_string()))?;
        if bytes.len() < 8 {
            return Err(Error::ScoreFile("truncated header".into()));
        }
        let k = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let v = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body = &bytes[8..];
        if body.len() != k * v * 4 {
            return Err(Error::ScoreFile(format!(
                "expected {} payload bytes for {k}x{v}, found {}",
                k * v * 4,
                body.len()
            )));
        }
        let data: Vec<f32> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let scores = Array2::from_shape_vec((k, v), data).map_err(|e| Error::ScoreFile(e.to_string()))?;
        Self::new(scores)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        self.write_to(&mut out)
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

/// Whether subword scores are used raw or log-softmax normalized per mask
/// position before gathering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScoreNormalization {
    #[default]
    Raw,
    LogSoftmax,
}

pub fn normalize_rows<T: Scalar>(scores: &ArrayView2<T>, mode: ScoreNormalization) -> Array2<T> {
    match mode {
        ScoreNormalization::Raw => scores.to_owned(),
        ScoreNormalization::LogSoftmax => {
            let mut out = scores.to_owned();
            for mut row in out.rows_mut() {
                let lse = log_sum_exp(&row.view());
                row.mapv_inplace(|v| v - lse);
            }
            out
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordScores<T = f32> {
    pub language: String,
    pub scores: Array1<T>,
}

impl<T: Scalar> WordScores<T> {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Gathers word scores from an n x k matrix of padded piece ids.
pub fn gather<T: Scalar>(scores: &ArrayView2<T>, padded: &Array2<usize>) -> Array1<T> {
    let mut out = Array1::zeros(padded.nrows());
    for (i, row) in scores.rows().into_iter().enumerate() {
        Zip::from(&mut out)
            .and(padded.column(i))
            .for_each(|o, &piece| *o += row[piece]);
    }
    out
}

/// Word scores for every candidate of `language`.
pub fn aggregate<T: Scalar>(
    scores: &ArrayView2<T>,
    index: &WordIndex,
    language: &str,
) -> Result<WordScores<T>> {
    let words = index.language(language)?;
    if scores.nrows() != index.k() {
        return Err(Error::ShapeMismatch {
            name: "subword scores".into(),
            expected: vec![index.k(), scores.ncols()],
            found: scores.shape().to_vec(),
        });
    }
    Ok(WordScores {
        language: language.to_string(),
        scores: gather(scores, words.padded()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedWord {
    pub word_id: WordId,
    pub surface: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingList {
    pub language: String,
    pub items: Vec<RankedWord>,
}

impl RankingList {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn position(&self, word_id: WordId) -> Option<usize> {
        self.items.iter().position(|w| w.word_id == word_id)
    }
}

/// Word ids ordered by descending score, ascending id on ties.
pub fn order<T: Scalar>(scores: &Array1<T>) -> Vec<WordId> {
    let mut ids: Vec<WordId> = (0..scores.len()).collect();
    ids.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    ids
}

/// 0-based rank of `target` under the same ordering, without a full sort.
pub fn rank_of<T: Scalar>(scores: &Array1<T>, target: WordId) -> usize {
    let t = scores[target];
    scores
        .iter()
        .enumerate()
        .filter(|&(id, &s)| s > t || (s == t && id < target))
        .count()
}

pub fn rank<T: Scalar>(scores: &WordScores<T>, index: &WordIndex, top_n: Option<usize>) -> Result<RankingList> {
    let words = index.language(&scores.language)?;
    if scores.len() != words.len() {
        return Err(Error::ShapeMismatch {
            name: format!("word scores for {}", scores.language),
            expected: vec![words.len()],
            found: vec![scores.len()],
        });
    }
    if scores.is_empty() {
        return Err(Error::EmptyInput("word scores"));
    }
    let limit = top_n.unwrap_or(usize::MAX);
    let items = order(&scores.scores)
        .into_iter()
        .take(limit)
        .enumerate()
        .map(|(rank, word_id)| RankedWord {
            word_id,
            surface: words.entries()[word_id].surface.clone(),
            score: scores.scores[word_id].to_f64().unwrap(),
            rank,
        })
        .collect();
    Ok(RankingList {
        language: scores.language.clone(),
        items,
    })
}

/// `-log_softmax(scores)[target]`.
pub fn word_loss<T: Scalar>(scores: &WordScores<T>, target: WordId) -> Result<f64> {
    if target >= scores.len() {
        return Err(Error::TargetOutOfRange {
            target,
            size: scores.len(),
        });
    }
    let lse = log_sum_exp(&scores.scores.view());
    Ok((lse - scores.scores[target]).to_f64().unwrap().max(0.0))
}

/// Sum over languages and their samples of `word_loss`, each softmax taken
/// over that sample's own language list.
pub fn multilingual_loss<T: Scalar>(samples: &[(&WordScores<T>, WordId)]) -> Result<f64> {
    samples
        .iter()
        .map(|(scores, target)| word_loss(scores, *target))
        .sum()
}

/// Loss of one sample and its gradient w.r.t. the k x |V| subword scores.
/// `weight` multiplies both (1 for sum reduction, 1/N for mean).
pub fn loss_and_score_grad<T: Scalar>(
    scores: &Array2<T>,
    padded: &Array2<usize>,
    target: WordId,
    normalization: ScoreNormalization,
    weight: T,
) -> Result<(T, Array2<T>)> {
    if target >= padded.nrows() {
        return Err(Error::TargetOutOfRange {
            target,
            size: padded.nrows(),
        });
    }
    let view = scores.view();
    let normalized = normalize_rows(&view, normalization);
    let word_scores = gather(&normalized.view(), padded);
    let lse = log_sum_exp(&word_scores.view());
    let loss = (lse - word_scores[target]) * weight;

    let mut d_words = word_scores.mapv(|s| (s - lse).exp() * weight);
    d_words[target] -= weight;

    let mut d_norm = Array2::zeros(scores.raw_dim());
    for (w, pieces) in padded.rows().into_iter().enumerate() {
        let g = d_words[w];
        for (i, &piece) in pieces.iter().enumerate() {
            d_norm[[i, piece]] += g;
        }
    }
    let d_scores = match normalization {
        ScoreNormalization::Raw => d_norm,
        ScoreNormalization::LogSoftmax => {
            let mut out = d_norm;
            for (mut row, norm_row) in out.rows_mut().into_iter().zip(normalized.rows()) {
                let total = row.sum();
                Zip::from(&mut row)
                    .and(&norm_row)
                    .for_each(|d, &ls| *d -= ls.exp() * total);
            }
            out
        }
    };
    Ok((loss, d_scores))
}
