#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use revdict_core::encoder::{build_input, EncoderParams, HeadMode, ModelConfig};
use revdict_core::training::Example;
use revdict_core::vocab::SubwordVocab;
use revdict_core::word_index::WordIndex;

const CONSONANTS: &str = "bdfgklmnprst";
const VOWELS: &str = "aeiou";

fn syllables() -> Vec<String> {
    CONSONANTS
        .chars()
        .flat_map(|c| VOWELS.chars().map(move |v| format!("{c}{v}")))
        .collect()
}

/// A 64-entry vocabulary: the five specials, 30 word-initial syllables and
/// 29 continuation syllables.
pub fn tiny_vocab() -> SubwordVocab {
    let syl = syllables();
    let mut tokens: Vec<String> = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    tokens.extend(syl[..30].iter().cloned());
    tokens.extend(syl[..29].iter().map(|s| format!("##{s}")));
    assert_eq!(tokens.len(), 64);
    SubwordVocab::from_tokens(tokens).unwrap()
}

/// Words of one to three syllables over the tiny vocabulary; the first is a
/// single syllable so every k keeps at least one word.
pub fn tiny_words(n: usize, seed: u64) -> Vec<String> {
    let syl = syllables();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<String> = Vec::new();
    while out.len() < n {
        let len = if out.is_empty() { 1 } else { rng.random_range(1..=3) };
        let mut w = syl[rng.random_range(0..30)].clone();
        for _ in 1..len {
            w.push_str(&syl[rng.random_range(0..29)]);
        }
        if !out.contains(&w) {
            out.push(w);
        }
    }
    out
}

pub fn tiny_index(vocab: &SubwordVocab, languages: &[&str], words: usize) -> WordIndex {
    WordIndex::build(
        vocab,
        languages.iter().enumerate().map(|(i, l)| (*l, tiny_words(words, i as u64 + 11))),
        3,
    )
    .unwrap()
}

pub fn tiny_config(head_mode: HeadMode, num_languages: usize) -> ModelConfig {
    ModelConfig {
        num_layers: 2,
        d_model: 16,
        num_heads: 2,
        ffn_dim: 32,
        vocab_size: 64,
        max_seq_len: 16,
        num_languages,
        dropout: 0.0,
        head_mode,
        ..ModelConfig::default()
    }
}

/// Random definitions of 1..=6 non-special tokens with random targets.
pub fn random_examples(
    vocab: &SubwordVocab,
    index: &WordIndex,
    cfg: &ModelConfig,
    languages: &[&str],
    n: usize,
    seed: u64,
) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let lang_idx = i % languages.len();
            let language = languages[lang_idx];
            let len = rng.random_range(1..=6);
            let def: Vec<usize> = (0..len).map(|_| rng.random_range(5..vocab.len())).collect();
            let row = (cfg.num_languages > 0).then_some(lang_idx);
            Example {
                input: build_input(vocab.special(), index.k(), &def, row, cfg.definition_budget(index.k())),
                language: language.to_string(),
                target: rng.random_range(0..index.language(language).unwrap().len()),
            }
        })
        .collect()
}

/// Initialized parameters with every tensor (biases and gains included)
/// perturbed, so no gradient is trivially zero.
pub fn perturbed_params(cfg: &ModelConfig, seed: u64) -> EncoderParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params: EncoderParams<f64> = EncoderParams::init(cfg, &mut rng).unwrap();
    for (_, mut t) in params.tensors_mut() {
        t.mapv_inplace(|v| v + rng.random_range(-0.1..0.1));
    }
    params
}

/// Element-wise closeness of two equally shaped arrays.
pub fn assert_close<'a, A, B>(a: A, b: B, eps: f64)
where
    A: IntoIterator<Item = &'a f64>,
    B: IntoIterator<Item = &'a f64>,
{
    let (a, b): (Vec<f64>, Vec<f64>) = (a.into_iter().copied().collect(), b.into_iter().copied().collect());
    assert_eq!(a.len(), b.len(), "length mismatch");
    for (i, (x, y)) in a.iter().zip(&b).enumerate() {
        assert!((x - y).abs() <= eps, "element {i}: {x} vs {y}");
    }
}

/// Per-word scalar loop: tokenizes each surface afresh, pads with `[MASK]`
/// and sums one score per slot.
pub fn aggregate_oracle(
    scores: &ndarray::Array2<f64>,
    vocab: &SubwordVocab,
    index: &WordIndex,
    language: &str,
) -> Vec<f64> {
    let k = index.k();
    index
        .language(language)
        .unwrap()
        .entries()
        .iter()
        .map(|e| {
            let mut pieces = vocab.tokenize_word(&e.surface);
            assert!(pieces.len() <= k);
            pieces.resize(k, vocab.mask_id());
            let mut total = 0.0;
            for (i, &p) in pieces.iter().enumerate() {
                total += scores[[i, p]];
            }
            total
        })
        .collect()
}

/// Smallest k >= 1 whose coverage reaches `percent`, by trying every k.
pub fn choose_k_scan(counts: &[usize], percent: usize) -> usize {
    let n = counts.len();
    (1..).find(|&k| 100 * counts.iter().filter(|&&c| c <= k).count() >= percent * n).unwrap()
}
