//! Toy languages with compositional definitions.
//!
//! Each concept is a tuple of slot values: slot 0 is a category noun, the
//! remaining slots are attributes. A language assigns every slot value a few
//! synonymous definition words and one word piece, and the concept's word is
//! the concatenation of its slot pieces (`kaz` + `##hoj` + `##wuc`). Pieces
//! come from an alphabet disjoint from definition words, so greedy
//! segmentation recovers exactly the generating pieces.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{save_entries, DictionaryEntry, SplitTag, TrainingCorpus};
use crate::error::{Error, Result};
use crate::vocab::{SubwordVocab, CLS_TOKEN, MASK_TOKEN, PAD_TOKEN, SEP_TOKEN, UNK_TOKEN};

const DEF_CONSONANTS: &str = "bdfglmnprstv";
const PIECE_CONSONANTS: &str = "kzxhjwcqy";
const VOWELS: &str = "aeiou";
const FUNCTION_ROLES: usize = 5;
const ART: usize = 0;
const REL: usize = 1;
const COP: usize = 2;
const CONJ: usize = 3;
const PREP: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    /// `art a1 a2 noun`
    Prenominal,
    /// `noun rel cop a1 conj a2`
    Relative,
    /// `art noun prep a2 a1`
    With,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub languages: Vec<String>,
    pub word_count: usize,
    /// Number of values per slot; their product bounds `word_count`.
    pub slot_sizes: Vec<usize>,
    /// Definition words per slot value.
    pub synonyms: usize,
    pub grammar: Vec<Template>,
    /// Monolingual training definitions per word and language.
    pub definitions_per_word: usize,
    /// Paraphrased definitions per word and language, tagged `description`.
    pub descriptions_per_word: usize,
    /// Definitions per word in each other language (aligned pairs).
    pub aligned_per_word: usize,
    /// Fraction of definition words and word pieces whose string is shared
    /// by every language.
    pub sharing_ratio: f64,
    /// Fraction of concepts whose word is built from pieces unrelated to its
    /// slot values, so it can only be learned from its own definitions.
    pub irregular_fraction: f64,
    /// Pads the vocabulary with inert tokens up to this size.
    pub vocab_size: Option<usize>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            languages: vec!["xa".into(), "xb".into()],
            word_count: 300,
            slot_sizes: vec![10, 6, 5],
            synonyms: 2,
            grammar: vec![Template::Prenominal, Template::Relative, Template::With],
            definitions_per_word: 3,
            descriptions_per_word: 1,
            aligned_per_word: 1,
            sharing_ratio: 0.5,
            irregular_fraction: 0.5,
            vocab_size: None,
        }
    }
}

impl SynthSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::SynthSpec(msg));
        let unique: BTreeSet<&String> = self.languages.iter().collect();
        if self.languages.is_empty() || unique.len() != self.languages.len() {
            return bad("languages must be non-empty and distinct".into());
        }
        if self.languages.iter().any(|l| l.is_empty() || l.chars().any(char::is_whitespace)) {
            return bad("language tags must be non-empty and whitespace-free".into());
        }
        if self.slot_sizes.is_empty() || self.slot_sizes.contains(&0) {
            return bad("every slot needs at least one value".into());
        }
        let combos = self
            .slot_sizes
            .iter()
            .try_fold(1usize, |acc, &s| acc.checked_mul(s))
            .unwrap_or(usize::MAX);
        if self.word_count == 0 || self.word_count > combos {
            return bad(format!(
                "word_count {} must lie in 1..={combos} for slot sizes {:?}",
                self.word_count, self.slot_sizes
            ));
        }
        if self.synonyms == 0 || self.definitions_per_word == 0 || self.grammar.is_empty() {
            return bad("synonyms, definitions_per_word and grammar must be non-empty".into());
        }
        if !(0.0..=1.0).contains(&self.sharing_ratio) {
            return bad(format!("sharing_ratio {} outside [0, 1]", self.sharing_ratio));
        }
        if !(0.0..=1.0).contains(&self.irregular_fraction) {
            return bad(format!("irregular_fraction {} outside [0, 1]", self.irregular_fraction));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub entries: Vec<DictionaryEntry>,
    pub vocab: Vec<String>,
    pub word_lists: BTreeMap<String, Vec<String>>,
    /// Translation pairs from the first language to the second.
    pub lexicon: Vec<(String, String)>,
    /// Slot values of each concept, in word-list order.
    pub concepts: Vec<Vec<usize>>,
    /// Whether each concept's word is irregular.
    pub irregular: Vec<bool>,
}

impl SynthOutput {
    pub fn corpus(&self) -> Result<TrainingCorpus> {
        TrainingCorpus::new(self.entries.clone(), None)
    }

    pub fn subword_vocab(&self) -> Result<SubwordVocab> {
        SubwordVocab::from_tokens(&self.vocab)
    }

    /// Writes `corpus.jsonl`, `vocab.txt`, `words.<lang>.txt` and, with two
    /// or more languages, `lexicon.tsv`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_entries(dir.join("corpus.jsonl"), &self.entries)?;
        write_lines(&dir.join("vocab.txt"), self.vocab.iter().map(String::as_str))?;
        for (lang, words) in &self.word_lists {
            write_lines(&dir.join(format!("words.{lang}.txt")), words.iter().map(String::as_str))?;
        }
        if !self.lexicon.is_empty() {
            let lines: Vec<String> = self.lexicon.iter().map(|(a, b)| format!("{a}\t{b}")).collect();
            write_lines(&dir.join("lexicon.tsv"), lines.iter().map(String::as_str))?;
        }
        Ok(())
    }
}

fn write_lines<'a>(path: &Path, lines: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut text = String::new();
    for l in lines {
        text.push_str(l);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Every string of the given consonant-vowel pattern, shuffled.
fn pool(pattern: &str, consonants: &str, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut out = vec![String::new()];
    for p in pattern.chars() {
        let letters = if p == 'C' { consonants } else { VOWELS };
        out = out
            .into_iter()
            .flat_map(|s| letters.chars().map(move |c| format!("{s}{c}")))
            .collect();
    }
    out.shuffle(rng);
    out
}

/// Per-language strings for `n` items; the first `round(ratio * n)` items of a
/// seeded permutation use one string in every language.
fn assign(
    n: usize,
    languages: usize,
    ratio: f64,
    pool: &mut Vec<String>,
    rng: &mut ChaCha8Rng,
    what: &str,
) -> Result<Vec<Vec<String>>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let shared_count = (ratio * n as f64).round() as usize;
    let mut shared = vec![false; n];
    for &i in &order[..shared_count] {
        shared[i] = true;
    }
    let mut out = vec![vec![String::new(); n]; languages];
    for i in 0..n {
        for l in 0..languages {
            out[l][i] = if shared[i] && l > 0 {
                out[0][i].clone()
            } else {
                pool.pop()
                    .ok_or_else(|| Error::SynthSpec(format!("not enough distinct {what} strings")))?
            };
        }
    }
    Ok(out)
}

struct Lexicon {
    /// `[slot][value][synonym]`
    content: Vec<Vec<Vec<String>>>,
    function: Vec<String>,
    /// Piece tokens of each concept's word, continuation marker included.
    forms: Vec<Vec<String>>,
}

impl Lexicon {
    fn word(&self, concept: usize) -> String {
        self.forms[concept]
            .iter()
            .map(|p| p.strip_prefix("##").unwrap_or(p))
            .collect()
    }

    fn render(&self, template: Template, values: &[usize], syn: &[usize]) -> String {
        let content = |s: usize| self.content[s][values[s]][syn[s]].as_str();
        let f = |r: usize| self.function[r].as_str();
        let attrs: Vec<&str> = (1..values.len()).map(content).collect();
        let mut words: Vec<&str> = Vec::new();
        match template {
            Template::Prenominal => {
                words.push(f(ART));
                words.extend(&attrs);
                words.push(content(0));
            }
            Template::Relative => {
                words.extend([content(0), f(REL), f(COP)]);
                for (i, a) in attrs.iter().enumerate() {
                    if i > 0 {
                        words.push(f(CONJ));
                    }
                    words.push(a);
                }
            }
            Template::With => {
                words.extend([f(ART), content(0), f(PREP)]);
                words.extend(attrs.iter().rev());
            }
        }
        words.join(" ")
    }
}

/// Generates a corpus, vocabulary, word lists and gold lexicon. The output
/// is a pure function of `spec` and `seed`.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_lang = spec.languages.len();
    let mut def_pool = pool("CVCV", DEF_CONSONANTS, &mut rng);
    let mut func_pool = pool("CV", DEF_CONSONANTS, &mut rng);
    let mut piece_pool = pool("CVC", PIECE_CONSONANTS, &mut rng);

    let slot_offsets: Vec<usize> = spec
        .slot_sizes
        .iter()
        .scan(0, |acc, &s| {
            let start = *acc;
            *acc += s;
            Some(start)
        })
        .collect();
    let n_values: usize = spec.slot_sizes.iter().sum();

    let content = assign(
        n_values * spec.synonyms,
        n_lang,
        spec.sharing_ratio,
        &mut def_pool,
        &mut rng,
        "definition word",
    )?;
    let function = assign(FUNCTION_ROLES, n_lang, spec.sharing_ratio, &mut func_pool, &mut rng, "function word")?;
    let pieces = assign(n_values, n_lang, spec.sharing_ratio, &mut piece_pool, &mut rng, "word piece")?;

    let concepts = sample_concepts(&spec.slot_sizes, spec.word_count, &mut rng);
    // An irregular word is one piece of its own, from a longer pattern than
    // regular pieces so the two never prefix each other.
    let n_irregular = (spec.irregular_fraction * concepts.len() as f64).round() as usize;
    let mut irregular = vec![false; concepts.len()];
    for i in sample(&mut rng, concepts.len(), n_irregular) {
        irregular[i] = true;
    }
    let mut odd_pool = pool("CVCV", PIECE_CONSONANTS, &mut rng);
    let odd_pieces = assign(n_irregular, n_lang, spec.sharing_ratio, &mut odd_pool, &mut rng, "irregular word")?;
    let odd_slot: Vec<Option<usize>> = irregular
        .iter()
        .scan(0, |next, &odd| {
            Some(odd.then(|| {
                *next += 1;
                *next - 1
            }))
        })
        .collect();

    let lexicons: Vec<Lexicon> = (0..n_lang)
        .map(|l| Lexicon {
            content: spec
                .slot_sizes
                .iter()
                .enumerate()
                .map(|(s, &size)| {
                    (0..size)
                        .map(|v| {
                            let base = (slot_offsets[s] + v) * spec.synonyms;
                            content[l][base..base + spec.synonyms].to_vec()
                        })
                        .collect()
                })
                .collect(),
            function: function[l].clone(),
            forms: concepts
                .iter()
                .zip(&odd_slot)
                .map(|(values, odd)| match odd {
                    Some(j) => vec![odd_pieces[l][*j].clone()],
                    None => values
                        .iter()
                        .enumerate()
                        .map(|(s, &v)| {
                            let p = &pieces[l][slot_offsets[s] + v];
                            if s == 0 {
                                p.clone()
                            } else {
                                format!("##{p}")
                            }
                        })
                        .collect(),
                })
                .collect(),
        })
        .collect();

    let mut tokens: BTreeSet<String> = BTreeSet::new();
    for lex in &lexicons {
        tokens.extend(lex.content.iter().flatten().flatten().cloned());
        tokens.extend(lex.function.iter().cloned());
        tokens.extend(lex.forms.iter().flatten().cloned());
    }
    let mut vocab: Vec<String> = [PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN, MASK_TOKEN]
        .iter()
        .map(|s| s.to_string())
        .collect();
    vocab.extend(tokens);
    if let Some(size) = spec.vocab_size {
        if size < vocab.len() {
            return Err(Error::SynthSpec(format!(
                "vocab_size {size} is below the {} tokens the languages need",
                vocab.len()
            )));
        }
        let mut i = 0;
        while vocab.len() < size {
            vocab.push(format!("[unused{i}]"));
            i += 1;
        }
    }

    let mut entries = Vec::new();
    // repeated draws of the same rendering are kept once
    let mut emitted: HashSet<DictionaryEntry> = HashSet::new();
    let mut push = |entries: &mut Vec<DictionaryEntry>, e: DictionaryEntry| {
        if emitted.insert(e.clone()) {
            entries.push(e);
        }
    };
    let mut word_lists: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let n_slots = spec.slot_sizes.len();
    let draw = |rng: &mut ChaCha8Rng, lex: &Lexicon, values: &[usize], shift: usize| {
        let template = spec.grammar[rng.random_range(0..spec.grammar.len())];
        let syn: Vec<usize> = (0..n_slots)
            .map(|_| (rng.random_range(0..spec.synonyms) + shift) % spec.synonyms)
            .collect();
        lex.render(template, values, &syn)
    };
    for (c, values) in concepts.iter().enumerate() {
        for (l, lang) in spec.languages.iter().enumerate() {
            let lex = &lexicons[l];
            let word = lex.word(c);
            word_lists.entry(lang.clone()).or_default().push(word.clone());
            for _ in 0..spec.definitions_per_word {
                let def = draw(&mut rng, lex, values, 0);
                push(&mut entries, DictionaryEntry::monolingual(&word, lang, &def, SplitTag::Train));
            }
            for _ in 0..spec.descriptions_per_word {
                let def = draw(&mut rng, lex, values, 1);
                push(&mut entries, DictionaryEntry::monolingual(&word, lang, &def, SplitTag::Description));
            }
            for (l2, def_lang) in spec.languages.iter().enumerate() {
                if l2 == l {
                    continue;
                }
                for _ in 0..spec.aligned_per_word {
                    let def = draw(&mut rng, &lexicons[l2], values, 0);
                    let entry = DictionaryEntry {
                        word: word.clone(),
                        word_language: lang.clone(),
                        definition: def,
                        definition_language: def_lang.clone(),
                        split: SplitTag::Train,
                    };
                    push(&mut entries, entry);
                }
            }
        }
    }

    let lexicon = if n_lang >= 2 {
        (0..concepts.len())
            .map(|c| (lexicons[0].word(c), lexicons[1].word(c)))
            .collect()
    } else {
        Vec::new()
    };

    let out = SynthOutput {
        entries,
        vocab,
        word_lists,
        lexicon,
        concepts,
        irregular,
    };
    verify_segmentation(&out, &lexicons)?;
    Ok(out)
}

fn sample_concepts(slot_sizes: &[usize], count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let total: usize = slot_sizes.iter().product();
    let mut ids: Vec<usize> = (0..total).collect();
    ids.shuffle(rng);
    ids.truncate(count);
    ids.sort_unstable();
    ids.into_iter()
        .map(|mut id| {
            let mut values = vec![0; slot_sizes.len()];
            for (s, &size) in slot_sizes.iter().enumerate().rev() {
                values[s] = id % size;
                id /= size;
            }
            values
        })
        .collect()
}

/// Checks that greedy segmentation of every generated word returns the
/// generating pieces.
fn verify_segmentation(out: &SynthOutput, lexicons: &[Lexicon]) -> Result<()> {
    let vocab = out.subword_vocab()?;
    for lex in lexicons {
        for (c, form) in lex.forms.iter().enumerate() {
            let word = lex.word(c);
            let expected: Vec<Option<usize>> = form.iter().map(|p| vocab.id(p)).collect();
            let got: Vec<Option<usize>> = vocab.tokenize_word(&word).into_iter().map(Some).collect();
            if got != expected {
                return Err(Error::SynthSpec(format!("word {word:?} does not segment into its pieces")));
            }
        }
    }
    Ok(())
}
