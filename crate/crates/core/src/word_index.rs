//! Candidate word lists per language, each word fixed to a length-k subword
//! sequence padded with the mask id.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{SubwordVocab, TokenId};

pub type WordId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordIndexEntry {
    pub word_id: WordId,
    pub surface: String,
    pub language: String,
    pub pieces: Vec<TokenId>,
    pub padded: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "reason")]
pub enum ExclusionReason {
    ExceedsK { pieces: usize },
    UnknownPiece,
    Duplicate,
    Malformed,
}

impl std::fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExclusionReason::ExceedsK { pieces } => write!(f, "exceeds k ({pieces} pieces)"),
            ExclusionReason::UnknownPiece => f.write_str("unknown piece"),
            ExclusionReason::Duplicate => f.write_str("duplicate surface"),
            ExclusionReason::Malformed => f.write_str("empty or multiword surface"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub surface: String,
    #[serde(flatten)]
    pub reason: ExclusionReason,
}

#[derive(Debug, Clone)]
pub struct LanguageWords {
    entries: Vec<WordIndexEntry>,
    by_surface: HashMap<String, WordId>,
    /// n x k matrix of padded piece ids, row = word id.
    padded: Array2<TokenId>,
}

impl LanguageWords {
    fn new(entries: Vec<WordIndexEntry>, k: usize) -> Self {
        let by_surface = entries
            .iter()
            .map(|e| (e.surface.clone(), e.word_id))
            .collect();
        let mut padded = Array2::zeros((entries.len(), k));
        for e in &entries {
            for (i, &p) in e.padded.iter().enumerate() {
                padded[[e.word_id, i]] = p;
            }
        }
        LanguageWords {
            entries,
            by_surface,
            padded,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[WordIndexEntry] {
        &self.entries
    }

    pub fn get(&self, word_id: WordId) -> Option<&WordIndexEntry> {
        self.entries.get(word_id)
    }

    pub fn padded(&self) -> &Array2<TokenId> {
        &self.padded
    }
}

#[derive(Debug, Clone)]
pub struct WordIndex {
    k: usize,
    mask_id: TokenId,
    lowercase: bool,
    languages: BTreeMap<String, LanguageWords>,
    exclusions: BTreeMap<String, Vec<Exclusion>>,
}

/// Smallest k such that at least `coverage` of the words have at most k pieces.
pub fn choose_k<I>(piece_counts: I, coverage: f64) -> Result<usize>
where
    I: IntoIterator<Item = usize>,
{
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(Error::InvalidCoverage(coverage));
    }
    let mut counts: Vec<usize> = piece_counts.into_iter().collect();
    if counts.is_empty() {
        return Err(Error::EmptyWordList);
    }
    counts.sort_unstable();
    let n = counts.len();
    // words needed so that needed / n >= coverage
    let needed = ((coverage * n as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(counts[needed.min(n) - 1].max(1))
}

impl WordIndex {
    /// Builds the index from surface lists keyed by language tag.
    pub fn build<'a, I, W>(vocab: &SubwordVocab, words: I, k: usize) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, W)>,
        W: IntoIterator,
        W::Item: AsRef<str>,
    {
        if k == 0 {
            return Err(Error::InvalidK);
        }
        let mask_id = vocab.mask_id();
        let mut languages = BTreeMap::new();
        let mut exclusions = BTreeMap::new();
        for (language, list) in words {
            let mut entries: Vec<WordIndexEntry> = Vec::new();
            let mut seen: HashMap<String, WordId> = HashMap::new();
            let mut dropped = Vec::new();
            for raw in list {
                let raw = raw.as_ref().trim();
                let surface = vocab.normalize(raw);
                let reject = |reason| Exclusion {
                    surface: surface.clone(),
                    reason,
                };
                if surface.is_empty() || surface.chars().any(char::is_whitespace) {
                    dropped.push(reject(ExclusionReason::Malformed));
                    continue;
                }
                if seen.contains_key(&surface) {
                    dropped.push(reject(ExclusionReason::Duplicate));
                    continue;
                }
                let pieces = vocab.tokenize_word(&surface);
                if pieces.contains(&vocab.unk_id()) {
                    dropped.push(reject(ExclusionReason::UnknownPiece));
                    continue;
                }
                if pieces.len() > k {
                    dropped.push(reject(ExclusionReason::ExceedsK {
                        pieces: pieces.len(),
                    }));
                    continue;
                }
                let word_id = entries.len();
                seen.insert(surface.clone(), word_id);
                entries.push(make_entry(word_id, surface, language, pieces, k, mask_id));
            }
            if entries.is_empty() {
                return Err(Error::EmptyLanguage(language.to_string()));
            }
            languages.insert(language.to_string(), LanguageWords::new(entries, k));
            exclusions.insert(language.to_string(), dropped);
        }
        Ok(WordIndex {
            k,
            mask_id,
            lowercase: vocab.lowercase(),
            languages,
            exclusions,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn mask_id(&self) -> TokenId {
        self.mask_id
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.languages.keys().map(String::as_str)
    }

    pub fn language(&self, tag: &str) -> Result<&LanguageWords> {
        self.languages
            .get(tag)
            .ok_or_else(|| Error::UnknownLanguage(tag.to_string()))
    }

    pub fn exclusions(&self, tag: &str) -> &[Exclusion] {
        self.exclusions.get(tag).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Looks a surface up after the same case normalization used at build time.
    pub fn lookup(&self, tag: &str, surface: &str) -> Option<WordId> {
        let words = self.languages.get(tag)?;
        let key = if self.lowercase {
            surface.trim().to_lowercase()
        } else {
            surface.trim().to_string()
        };
        words.by_surface.get(&key).copied()
    }

    pub fn to_json(&self) -> IndexFile {
        IndexFile {
            k: self.k,
            languages: self
                .languages
                .iter()
                .map(|(tag, words)| {
                    let list = words
                        .entries
                        .iter()
                        .map(|e| IndexFileWord {
                            word: e.surface.clone(),
                            pieces: e.pieces.clone(),
                        })
                        .collect();
                    (tag.clone(), list)
                })
                .collect(),
        }
    }

    pub fn from_json(file: IndexFile, vocab: &SubwordVocab) -> Result<Self> {
        if file.k == 0 {
            return Err(Error::InvalidK);
        }
        let mask_id = vocab.mask_id();
        let mut languages = BTreeMap::new();
        for (tag, list) in file.languages {
            if list.is_empty() {
                return Err(Error::EmptyLanguage(tag));
            }
            let mut entries = Vec::with_capacity(list.len());
            for (word_id, w) in list.into_iter().enumerate() {
                if w.pieces.is_empty()
                    || w.pieces.len() > file.k
                    || w.pieces.iter().any(|&p| p >= vocab.len() || p == vocab.unk_id())
                {
                    return Err(Error::InvalidConfig(format!(
                        "index entry {:?} in {tag:?} has invalid pieces",
                        w.word
                    )));
                }
                entries.push(make_entry(word_id, w.word, &tag, w.pieces, file.k, mask_id));
            }
            let words = LanguageWords::new(entries, file.k);
            if words.by_surface.len() != words.entries.len() {
                return Err(Error::InvalidConfig(format!("duplicate surfaces in {tag:?}")));
            }
            languages.insert(tag, words);
        }
        Ok(WordIndex {
            k: file.k,
            mask_id,
            lowercase: vocab.lowercase(),
            languages,
            exclusions: BTreeMap::new(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.to_json())?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, vocab: &SubwordVocab) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(serde_json::from_str(&text)?, vocab)
    }
}

fn make_entry(
    word_id: WordId,
    surface: String,
    language: &str,
    pieces: Vec<TokenId>,
    k: usize,
    mask_id: TokenId,
) -> WordIndexEntry {
    let mut padded = pieces.clone();
    padded.resize(k, mask_id);
    WordIndexEntry {
        word_id,
        surface,
        language: language.to_string(),
        pieces,
        padded,
    }
}

/// On-disk form of the index: `{k, languages: {tag: [{word, pieces}]}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexFile {
    pub k: usize,
    pub languages: BTreeMap<String, Vec<IndexFileWord>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexFileWord {
    pub word: String,
    pub pieces: Vec<TokenId>,
}

/// Reads a word-list file: one surface per line, blank lines skipped.
pub fn load_word_list(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy() -> SubwordVocab {
        SubwordVocab::from_tokens([
            "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "play", "##ing", "##er",
        ])
        .unwrap()
    }

    #[test]
    fn choose_k_examples() {
        assert_eq!(choose_k([1, 1, 2, 2, 3, 3, 3, 4, 5, 9], 0.9).unwrap(), 5);
        assert_eq!(choose_k(vec![1; 50], 0.99).unwrap(), 1);
        assert_eq!(choose_k([2, 2, 2], 1.0).unwrap(), 2);
        assert!(matches!(choose_k(Vec::<usize>::new(), 0.9), Err(Error::EmptyWordList)));
        assert!(choose_k([1], 0.0).is_err());
        assert!(choose_k([1], 1.5).is_err());
    }

    #[test]
    fn pads_with_mask() {
        let index = WordIndex::build(&toy(), [("en", ["playing"])], 3).unwrap();
        let entry = &index.language("en").unwrap().entries()[0];
        assert_eq!(entry.pieces, vec![5, 6]);
        assert_eq!(entry.padded, vec![5, 6, 4]);
    }

    #[test]
    fn excludes_long_and_unknown_words() {
        let index =
            WordIndex::build(&toy(), [("en", ["playing", "play", "xyz", "play", "a b"])], 1).unwrap();
        let words = index.language("en").unwrap();
        assert_eq!(words.len(), 1);
        let reasons: Vec<_> = index.exclusions("en").iter().map(|e| e.reason.clone()).collect();
        assert_eq!(reasons, vec![
            ExclusionReason::ExceedsK { pieces: 2 },
            ExclusionReason::UnknownPiece,
            ExclusionReason::Duplicate,
            ExclusionReason::Malformed,
        ]);
        assert_eq!(index.exclusions("en")[0].reason.to_string(), "exceeds k (2 pieces)");
    }

    #[test]
    fn unknown_word_reason() {
        let err = WordIndex::build(&toy(), [("en", ["xyz"])], 2).unwrap_err();
        assert!(matches!(err, Error::EmptyLanguage(_)));
        let index = WordIndex::build(&toy(), [("en", ["xyz", "player"])], 2).unwrap();
        assert_eq!(index.exclusions("en")[0].reason, ExclusionReason::UnknownPiece);
    }

    #[test]
    fn json_round_trip() {
        let vocab = toy();
        let index = WordIndex::build(&vocab, [("en", ["playing", "player", "play"])], 2).unwrap();
        let text = serde_json::to_string(&index.to_json()).unwrap();
        let back = WordIndex::from_json(serde_json::from_str(&text).unwrap(), &vocab).unwrap();
        assert_eq!(back.language("en").unwrap().entries(), index.language("en").unwrap().entries());
        assert_eq!(back.lookup("en", "Player"), Some(1));
    }

    proptest! {
        #[test]
        fn choose_k_is_monotone(counts in prop::collection::vec(1usize..12, 1..60), a in 0.01f64..1.0, b in 0.01f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(choose_k(counts.clone(), lo).unwrap() <= choose_k(counts, hi).unwrap());
        }

        #[test]
        fn retained_plus_excluded_is_input(words in prop::collection::vec("(play|xyz|a)(ing|er|zz)?", 1..30)) {
            let vocab = toy();
            let mut list = words.clone();
            list.push("play".to_string());
            let index = WordIndex::build(&vocab, [("en", list.iter())], 2).unwrap();
            let lang = index.language("en").unwrap();
            prop_assert_eq!(lang.len() + index.exclusions("en").len(), list.len());
            for e in lang.entries() {
                prop_assert_eq!(&vocab.tokenize_word(&e.surface), &e.pieces);
            }
        }
    }
}
