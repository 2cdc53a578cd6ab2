use ndarray::Array2;

use crate::vocab::{SpecialIds, TokenId};

/// One encoder input: `[CLS] [MASK]*k [SEP] definition [SEP]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceInput {
    pub tokens: Vec<TokenId>,
    pub segments: Vec<usize>,
    pub language: Option<usize>,
    /// Indices of the k mask slots (always `1..=k`).
    pub mask_positions: Vec<usize>,
    /// Definition ids dropped from the tail to fit the length budget.
    pub truncated: usize,
}

impl SequenceInput {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Lays out a definition for the encoder. Segment 0 covers everything up to
/// and including the first `[SEP]`; the definition and the final `[SEP]` are
/// segment 1. Definitions longer than `budget` lose their tail.
pub fn build_input(
    special: SpecialIds,
    k: usize,
    definition: &[TokenId],
    language: Option<usize>,
    budget: usize,
) -> SequenceInput {
    let kept = definition.len().min(budget);
    let mut tokens = Vec::with_capacity(k + kept + 3);
    tokens.push(special.cls);
    tokens.extend(std::iter::repeat_n(special.mask, k));
    tokens.push(special.sep);
    let prefix = tokens.len();
    tokens.extend_from_slice(&definition[..kept]);
    tokens.push(special.sep);
    let mut segments = vec![0; prefix];
    segments.resize(tokens.len(), 1);
    SequenceInput {
        tokens,
        segments,
        language,
        mask_positions: (1..=k).collect(),
        truncated: definition.len() - kept,
    }
}

/// Sequences padded to a common length with `[PAD]`; `attention` is false on
/// padding.
#[derive(Debug, Clone)]
pub struct InputBatch {
    pub tokens: Array2<TokenId>,
    pub segments: Array2<usize>,
    pub positions: Array2<usize>,
    pub attention: Array2<bool>,
    pub languages: Vec<Option<usize>>,
    pub mask_positions: Vec<Vec<usize>>,
}

impl InputBatch {
    pub fn from_sequences(seqs: &[SequenceInput], pad_id: TokenId) -> Self {
        let width = seqs.iter().map(SequenceInput::len).max().unwrap_or(0);
        Self::padded_to(seqs, pad_id, width)
    }

    /// Pads every sequence to `width` (at least the longest sequence).
    pub fn padded_to(seqs: &[SequenceInput], pad_id: TokenId, width: usize) -> Self {
        let width = width.max(seqs.iter().map(SequenceInput::len).max().unwrap_or(0));
        let b = seqs.len();
        let mut tokens = Array2::from_elem((b, width), pad_id);
        let mut segments = Array2::zeros((b, width));
        let mut attention = Array2::from_elem((b, width), false);
        let positions = Array2::from_shape_fn((b, width), |(_, t)| t);
        for (i, s) in seqs.iter().enumerate() {
            for t in 0..s.len() {
                tokens[[i, t]] = s.tokens[t];
                segments[[i, t]] = s.segments[t];
                attention[[i, t]] = true;
            }
        }
        InputBatch {
            tokens,
            segments,
            positions,
            attention,
            languages: seqs.iter().map(|s| s.language).collect(),
            mask_positions: seqs.iter().map(|s| s.mask_positions.clone()).collect(),
        }
    }

    pub fn batch_size(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn width(&self) -> usize {
        self.tokens.ncols()
    }
}
