use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scoring::{RankedWord, RankingList};
use crate::word_index::WordIndex;

/// Source-to-target word translations. When a source word appears more than
/// once, its first translation wins.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BilingualLexicon {
    pairs: Vec<(String, String)>,
    first: HashMap<String, usize>,
}

impl BilingualLexicon {
    pub fn from_pairs<I, S, T>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        let mut lex = BilingualLexicon::default();
        for (s, t) in pairs {
            let (s, t) = (s.into(), t.into());
            lex.first.entry(s.clone()).or_insert(lex.pairs.len());
            lex.pairs.push((s, t));
        }
        lex
    }

    /// Reads `source<TAB>target` lines.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match line.split_once('\t') {
                Some((s, t)) if !s.trim().is_empty() && !t.trim().is_empty() => {
                    pairs.push((s.trim().to_string(), t.trim().to_string()))
                }
                _ => {
                    return Err(Error::Lexicon {
                        line: i + 1,
                        reason: "expected source<TAB>target".into(),
                    })
                }
            }
        }
        Ok(Self::from_pairs(pairs))
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn translate(&self, source: &str) -> Option<&str> {
        self.first.get(source).map(|&i| self.pairs[i].1.as_str())
    }
}

/// Translates the top `m` words of a definition-language ranking into the
/// target language.
///
/// Words without a translation, or whose translation is not a candidate of
/// `target_language`, are dropped; repeated translations keep their first
/// occurrence. Scores are carried over from the source ranking.
pub fn pivot_baseline(
    mono: &RankingList,
    lexicon: &BilingualLexicon,
    m: usize,
    target_index: &WordIndex,
    target_language: &str,
) -> Result<RankingList> {
    if lexicon.is_empty() {
        return Err(Error::EmptyLexicon);
    }
    if m == 0 {
        return Err(Error::InvalidConfig("pivot depth m must be at least 1".into()));
    }
    let words = target_index.language(target_language)?;
    let mut seen = HashSet::new();
    let mut items = Vec::new();
    for src in mono.items.iter().take(m) {
        let Some(translation) = lexicon.translate(&src.surface) else {
            continue;
        };
        let Some(word_id) = target_index.lookup(target_language, translation) else {
            continue;
        };
        if !seen.insert(word_id) {
            continue;
        }
        items.push(RankedWord {
            word_id,
            surface: words.entries()[word_id].surface.clone(),
            score: src.score,
            rank: items.len(),
        });
    }
    Ok(RankingList {
        language: target_language.to_string(),
        items,
    })
}
