use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DictionaryEntry, SplitTag, TrainingCorpus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Words whose every definition moves to the unseen split.
    pub unseen_words: usize,
    /// Words whose every definition moves to the dev split.
    pub dev_words: usize,
    /// Training entries copied into the seen split.
    pub seen_entries: usize,
}

type WordKey = (String, String);

fn key(e: &DictionaryEntry) -> WordKey {
    (e.word_language.clone(), e.word.clone())
}

/// Assigns unseen, dev and seen test entries among the `Train` entries.
///
/// Unseen and dev words lose all their training definitions. Seen entries are
/// verbatim copies of training entries that stay in training.
pub fn make_splits(corpus: &TrainingCorpus, cfg: &SplitConfig, seed: u64) -> Result<TrainingCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words: BTreeSet<WordKey> = corpus.split(SplitTag::Train).map(key).collect();
    let mut words: Vec<WordKey> = words.into_iter().collect();
    if cfg.unseen_words + cfg.dev_words >= words.len() {
        return Err(Error::Split(format!(
            "{} unseen + {} dev words requested but only {} training words exist",
            cfg.unseen_words,
            cfg.dev_words,
            words.len()
        )));
    }
    words.shuffle(&mut rng);
    let unseen: HashSet<&WordKey> = words[..cfg.unseen_words].iter().collect();
    let dev: HashSet<&WordKey> = words[cfg.unseen_words..cfg.unseen_words + cfg.dev_words]
        .iter()
        .collect();

    let mut entries = corpus.entries().to_vec();
    let mut train_idx = Vec::new();
    for (i, e) in entries.iter_mut().enumerate() {
        if e.split != SplitTag::Train {
            continue;
        }
        let k = key(e);
        if unseen.contains(&k) {
            e.split = SplitTag::Unseen;
        } else if dev.contains(&k) {
            e.split = SplitTag::Dev;
        } else {
            train_idx.push(i);
        }
    }
    if cfg.seen_entries > train_idx.len() {
        return Err(Error::Split(format!(
            "{} seen entries requested but only {} training entries remain",
            cfg.seen_entries,
            train_idx.len()
        )));
    }
    train_idx.shuffle(&mut rng);
    let mut picked = train_idx[..cfg.seen_entries].to_vec();
    picked.sort_unstable();
    for i in picked {
        let mut copy = entries[i].clone();
        copy.split = SplitTag::Seen;
        entries.push(copy);
    }
    corpus.with_entries(entries)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoldoutConfig {
    pub definition_language: String,
    pub target_language: String,
    pub test_words: usize,
    pub dev_words: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Holdout {
    pub corpus: TrainingCorpus,
    pub test_words: Vec<String>,
    pub dev_words: Vec<String>,
    /// Aligned entries removed because they pair a held-out concept.
    pub dropped: usize,
}

/// Holds out cross-lingual test and dev pairs (definition language to target
/// language) for a seeded sample of target words.
///
/// Aligned pairs of test words become `Test`. Dev words have both their
/// aligned pairs and their target-language monolingual entries moved to
/// `Dev`. Any other aligned entry touching a held-out concept, found through
/// `lexicon` (definition-language word, target-language word), is dropped.
/// Monolingual entries of test words stay in training.
pub fn bilingual_holdout(
    corpus: &TrainingCorpus,
    lexicon: &[(String, String)],
    cfg: &HoldoutConfig,
    seed: u64,
) -> Result<Holdout> {
    let (src, tgt) = (&cfg.definition_language, &cfg.target_language);
    let is_pair = |e: &DictionaryEntry| &e.definition_language == src && &e.word_language == tgt;
    let candidates: BTreeSet<&str> = corpus
        .split(SplitTag::Train)
        .filter(|e| is_pair(e))
        .map(|e| e.word.as_str())
        .collect();
    let mut candidates: Vec<&str> = candidates.into_iter().collect();
    if cfg.test_words + cfg.dev_words > candidates.len() {
        return Err(Error::Split(format!(
            "{} test + {} dev words requested but only {} words have {src}->{tgt} pairs",
            cfg.test_words,
            cfg.dev_words,
            candidates.len()
        )));
    }
    candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test: HashSet<&str> = candidates[..cfg.test_words].iter().copied().collect();
    let dev: HashSet<&str> = candidates[cfg.test_words..cfg.test_words + cfg.dev_words]
        .iter()
        .copied()
        .collect();
    // every surface, in either language, belonging to a held-out concept
    let mut held: HashSet<(&str, &str)> = HashSet::new();
    for w in test.iter().chain(dev.iter()) {
        held.insert((tgt.as_str(), w));
    }
    for (s, t) in lexicon {
        if test.contains(t.as_str()) || dev.contains(t.as_str()) {
            held.insert((src.as_str(), s.as_str()));
        }
    }

    let mut entries = Vec::with_capacity(corpus.len());
    let mut dropped = 0;
    for e in corpus.entries() {
        let mut e = e.clone();
        if e.split == SplitTag::Train {
            let word = e.word.as_str();
            if is_pair(&e) && test.contains(word) {
                e.split = SplitTag::Test;
            } else if &e.word_language == tgt && dev.contains(word) && (is_pair(&e) || e.is_monolingual()) {
                e.split = SplitTag::Dev;
            } else if !e.is_monolingual() && held.contains(&(e.word_language.as_str(), word)) {
                dropped += 1;
                continue;
            }
        }
        entries.push(e);
    }
    let mut test_words: Vec<String> = test.into_iter().map(str::to_string).collect();
    let mut dev_words: Vec<String> = dev.into_iter().map(str::to_string).collect();
    test_words.sort();
    dev_words.sort();
    Ok(Holdout {
        corpus: corpus.with_entries(entries)?,
        test_words,
        dev_words,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> TrainingCorpus {
        let mut entries = Vec::new();
        for w in 0..20 {
            for d in 0..3 {
                entries.push(DictionaryEntry::monolingual(
                    &format!("w{w}"),
                    "en",
                    &format!("def {d} of {w}"),
                    SplitTag::Train,
                ));
            }
        }
        TrainingCorpus::new(entries, None).unwrap()
    }

    #[test]
    fn unseen_words_have_no_training_definitions() {
        let split = make_splits(
            &toy(),
            &SplitConfig {
                unseen_words: 4,
                dev_words: 2,
                seen_entries: 5,
            },
            3,
        )
        .unwrap();
        let unseen: HashSet<&str> = split.split(SplitTag::Unseen).map(|e| e.word.as_str()).collect();
        assert_eq!(unseen.len(), 4);
        assert_eq!(split.split(SplitTag::Unseen).count(), 12);
        assert!(split.split(SplitTag::Train).all(|e| !unseen.contains(e.word.as_str())));
        let train: HashSet<&DictionaryEntry> = split.split(SplitTag::Train).collect();
        for seen in split.split(SplitTag::Seen) {
            let mut as_train = seen.clone();
            as_train.split = SplitTag::Train;
            assert!(train.contains(&as_train));
        }
        assert_eq!(split.split(SplitTag::Seen).count(), 5);
    }

    #[test]
    fn same_seed_same_split() {
        let cfg = SplitConfig {
            unseen_words: 3,
            dev_words: 3,
            seen_entries: 4,
        };
        assert_eq!(make_splits(&toy(), &cfg, 7).unwrap(), make_splits(&toy(), &cfg, 7).unwrap());
        assert_ne!(make_splits(&toy(), &cfg, 7).unwrap(), make_splits(&toy(), &cfg, 8).unwrap());
    }

    #[test]
    fn oversized_request_fails() {
        let cfg = SplitConfig {
            unseen_words: 15,
            dev_words: 5,
            seen_entries: 0,
        };
        assert!(matches!(make_splits(&toy(), &cfg, 0), Err(Error::Split(_))));
    }

    #[test]
    fn holdout_moves_pairs_and_drops_reverse_direction() {
        let mut entries = Vec::new();
        let mut lexicon = Vec::new();
        for i in 0..10 {
            let (a, b) = (format!("a{i}"), format!("b{i}"));
            entries.push(DictionaryEntry::monolingual(&a, "xa", &format!("xa def {i}"), SplitTag::Train));
            entries.push(DictionaryEntry::monolingual(&b, "xb", &format!("xb def {i}"), SplitTag::Train));
            entries.push(DictionaryEntry {
                word: b.clone(),
                word_language: "xb".into(),
                definition: format!("xa def {i}"),
                definition_language: "xa".into(),
                split: SplitTag::Train,
            });
            entries.push(DictionaryEntry {
                word: a.clone(),
                word_language: "xa".into(),
                definition: format!("xb def {i}"),
                definition_language: "xb".into(),
                split: SplitTag::Train,
            });
            lexicon.push((a, b));
        }
        let corpus = TrainingCorpus::new(entries, None).unwrap();
        let cfg = HoldoutConfig {
            definition_language: "xa".into(),
            target_language: "xb".into(),
            test_words: 3,
            dev_words: 2,
        };
        let h = bilingual_holdout(&corpus, &lexicon, &cfg, 1).unwrap();
        assert_eq!(h.corpus.split(SplitTag::Test).count(), 3);
        // dev: one aligned pair and one monolingual entry per word
        assert_eq!(h.corpus.split(SplitTag::Dev).count(), 4);
        assert_eq!(h.dropped, 5);
        for w in &h.test_words {
            assert!(h
                .corpus
                .split(SplitTag::Train)
                .any(|e| &e.word == w && e.is_monolingual()));
            assert!(!h
                .corpus
                .split(SplitTag::Train)
                .any(|e| &e.word == w && !e.is_monolingual()));
        }
    }
}
