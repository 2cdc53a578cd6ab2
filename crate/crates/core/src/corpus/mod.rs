//! Dictionary entries, JSON-lines ingestion, split construction and the
//! synthetic toy-language generator.

mod splits;
mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use splits::{bilingual_holdout, make_splits, Holdout, HoldoutConfig, SplitConfig};
pub use synth::{synth_generate, SynthOutput, SynthSpec, Template};

/// Partition an entry belongs to. `Train` is the default for entries that
/// carry no tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    #[default]
    Train,
    Dev,
    Seen,
    Unseen,
    Description,
    Question,
    /// Cross-lingual test pairs.
    Test,
}

impl SplitTag {
    pub const ALL: [SplitTag; 7] = [
        SplitTag::Train,
        SplitTag::Dev,
        SplitTag::Seen,
        SplitTag::Unseen,
        SplitTag::Description,
        SplitTag::Question,
        SplitTag::Test,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Dev => "dev",
            SplitTag::Seen => "seen",
            SplitTag::Unseen => "unseen",
            SplitTag::Description => "description",
            SplitTag::Question => "question",
            SplitTag::Test => "test",
        }
    }
}

impl std::fmt::Display for SplitTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SplitTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Split(format!("unknown split {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DictionaryEntry {
    pub word: String,
    pub word_language: String,
    pub definition: String,
    pub definition_language: String,
    #[serde(default)]
    pub split: SplitTag,
}

impl DictionaryEntry {
    pub fn monolingual(word: &str, language: &str, definition: &str, split: SplitTag) -> Self {
        DictionaryEntry {
            word: word.to_string(),
            word_language: language.to_string(),
            definition: definition.to_string(),
            definition_language: language.to_string(),
            split,
        }
    }

    pub fn is_monolingual(&self) -> bool {
        self.word_language == self.definition_language
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.word.trim().is_empty() {
            return Err("empty word".into());
        }
        if self.word.chars().any(char::is_whitespace) {
            return Err("word contains whitespace".into());
        }
        if self.definition.trim().is_empty() {
            return Err("empty definition".into());
        }
        if self.word_language.is_empty() || self.definition_language.is_empty() {
            return Err("empty language tag".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RejectedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub accepted: usize,
    pub rejected: Vec<RejectedLine>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingCorpus {
    entries: Vec<DictionaryEntry>,
    languages: BTreeSet<String>,
}

impl TrainingCorpus {
    /// Validates entries against an optional language inventory. Without an
    /// inventory, the languages seen in the entries form it.
    pub fn new(entries: Vec<DictionaryEntry>, inventory: Option<&[String]>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyCorpus { rejected: 0 });
        }
        for e in &entries {
            e.validate()
                .map_err(|reason| Error::Split(format!("invalid entry for {:?}: {reason}", e.word)))?;
        }
        let languages: BTreeSet<String> = match inventory {
            Some(inv) => {
                let inv: BTreeSet<String> = inv.iter().cloned().collect();
                for e in &entries {
                    for tag in [&e.word_language, &e.definition_language] {
                        if !inv.contains(tag) {
                            return Err(Error::UnknownLanguage(tag.clone()));
                        }
                    }
                }
                inv
            }
            None => entries
                .iter()
                .flat_map(|e| [e.word_language.clone(), e.definition_language.clone()])
                .collect(),
        };
        Ok(TrainingCorpus { entries, languages })
    }

    pub fn entries(&self) -> &[DictionaryEntry] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<DictionaryEntry> {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.languages.iter().map(String::as_str)
    }

    pub fn split(&self, tag: SplitTag) -> impl Iterator<Item = &DictionaryEntry> {
        self.entries.iter().filter(move |e| e.split == tag)
    }

    /// Entries grouped by `(definition_language, word_language)`.
    pub fn by_pair(&self) -> BTreeMap<(String, String), Vec<&DictionaryEntry>> {
        let mut groups: BTreeMap<_, Vec<_>> = BTreeMap::new();
        for e in &self.entries {
            groups
                .entry((e.definition_language.clone(), e.word_language.clone()))
                .or_default()
                .push(e);
        }
        groups
    }

    /// Training-split sample count per word language.
    pub fn train_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for e in self.split(SplitTag::Train) {
            *counts.entry(e.word_language.clone()).or_insert(0) += 1;
        }
        counts
    }

    /// View restricted to entries whose definition and word share a language.
    pub fn monolingual(&self) -> MonolingualView<'_> {
        MonolingualView { corpus: self }
    }

    /// Rebuilds the corpus with entries replaced, keeping the inventory.
    pub fn with_entries(&self, entries: Vec<DictionaryEntry>) -> Result<Self> {
        let inventory: Vec<String> = self.languages.iter().cloned().collect();
        TrainingCorpus::new(entries, Some(&inventory))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_entries(path, &self.entries)
    }
}

/// Read access to monolingual entries only. Training without aligned data
/// goes through this view, so bilingual pairs are unreachable from it.
#[derive(Debug, Clone, Copy)]
pub struct MonolingualView<'a> {
    corpus: &'a TrainingCorpus,
}

impl<'a> MonolingualView<'a> {
    pub fn entries(&self) -> impl Iterator<Item = &'a DictionaryEntry> + 'a {
        self.corpus.entries.iter().filter(|e| e.is_monolingual())
    }

    pub fn split(&self, tag: SplitTag) -> impl Iterator<Item = &'a DictionaryEntry> + 'a {
        self.entries().filter(move |e| e.split == tag)
    }

    pub fn languages(&self) -> impl Iterator<Item = &'a str> + 'a {
        self.corpus.languages()
    }
}

/// Reads a JSON-lines corpus. Malformed lines are skipped and listed in the
/// report; a tag outside `inventory` is an error.
pub fn load_corpus(path: impl AsRef<Path>, inventory: Option<&[String]>) -> Result<(TrainingCorpus, LoadReport)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, inventory)
}

pub fn parse_corpus(text: &str, inventory: Option<&[String]>) -> Result<(TrainingCorpus, LoadReport)> {
    let mut entries = Vec::new();
    let mut report = LoadReport::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<DictionaryEntry>(line)
            .map_err(|e| e.to_string())
            .and_then(|e| e.validate().map(|()| e));
        match parsed {
            Ok(entry) => entries.push(entry),
            Err(reason) => report.rejected.push(RejectedLine { line: i + 1, reason }),
        }
    }
    if entries.is_empty() {
        return Err(Error::EmptyCorpus {
            rejected: report.rejected.len(),
        });
    }
    for r in &report.rejected {
        log::warn!("corpus line {}: {}", r.line, r.reason);
    }
    report.accepted = entries.len();
    Ok((TrainingCorpus::new(entries, inventory)?, report))
}

pub fn save_entries(path: impl AsRef<Path>, entries: &[DictionaryEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}
