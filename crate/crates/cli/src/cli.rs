//! Command-line interface: argument definitions and command implementations.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use revdict_core::corpus::{
    bilingual_holdout, load_corpus, make_splits, save_entries, synth_generate, HoldoutConfig, SplitConfig, SplitTag,
    SynthSpec, TrainingCorpus,
};
use revdict_core::encoder::{EncoderParams, HeadMode, ModelConfig};
use revdict_core::evaluation::{ablation_filter, compute_metrics, load_annotations, pivot_baseline, BilingualLexicon};
use revdict_core::model::GroupBy;
use revdict_core::scoring::ScoreNormalization;
use revdict_core::training::{
    encode_entries, grad_check, BackwardOptions, Example, GradCheckOptions, LossReduction, TrainConfig, TrainMode,
};
use revdict_core::vocab::SubwordVocab;
use revdict_core::word_index::{choose_k, load_word_list, WordIndex};
use revdict_core::ReverseDictionary;
use serde::{Deserialize, Serialize};

use crate::config::{parse_name, required, resolve};
use crate::service::{self, AppState, CorsConfig};

/// Environment variable naming the default model directory.
pub const MODEL_DIR_ENV: &str = "REVDICT_MODEL_DIR";

#[derive(Debug, Parser)]
#[command(name = "revdict", version, about = "Reverse dictionary: find the word that fits a definition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Generate a synthetic multilingual dictionary corpus.
    Synth(SynthArgs),
    /// Tokenize word lists into a candidate index.
    BuildIndex(BuildIndexArgs),
    /// Train a model and save it as a model directory.
    Train(TrainArgs),
    /// Evaluate a model on one split of a corpus; prints metrics JSON.
    Eval(EvalArgs),
    /// Rank candidate words for one definition.
    Query(QueryArgs),
    /// Serve the HTTP query API.
    Serve(ServeArgs),
    /// Dump raw subword and word scores for one definition as JSON.
    ExportScores(ExportArgs),
    /// Check analytic gradients against finite differences.
    GradCheck(GradCheckArgs),
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::BuildIndex(a) => build_index(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Query(a) => query(a),
        Command::Serve(a) => serve(a),
        Command::ExportScores(a) => export_scores(a),
        Command::GradCheck(a) => run_grad_check(a),
    }
}

fn model_dir(flag: Option<PathBuf>) -> Result<PathBuf> {
    flag.or_else(|| std::env::var_os(MODEL_DIR_ENV).map(PathBuf::from))
        .with_context(|| format!("missing --checkpoint (pass the flag, set `checkpoint` in --config or set {MODEL_DIR_ENV})"))
}

fn load_model(dir: &Path) -> Result<ReverseDictionary> {
    ReverseDictionary::load(dir).with_context(|| format!("loading model from {}", dir.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn read_corpus(path: &Path) -> Result<TrainingCorpus> {
    let (corpus, report) = load_corpus(path, None).with_context(|| format!("loading corpus {}", path.display()))?;
    for r in &report.rejected {
        log::warn!("{}:{}: skipped ({})", path.display(), r.line, r.reason);
    }
    Ok(corpus)
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthArgs {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Generator settings as JSON; individual flags below override them.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated language tags.
    #[arg(long, value_delimiter = ',')]
    pub languages: Vec<String>,
    #[arg(long)]
    pub word_count: Option<usize>,
    #[arg(long)]
    pub aligned_per_word: Option<usize>,
    #[arg(long)]
    pub sharing_ratio: Option<f64>,
    #[arg(long)]
    pub irregular_fraction: Option<f64>,
}

fn synth(flags: SynthArgs) -> Result<()> {
    let a: SynthArgs = resolve(flags.config.as_deref(), &flags)?;
    let out = required(a.out, "out")?;
    let mut spec = match &a.spec {
        Some(p) => SynthSpec::load(p).with_context(|| format!("loading synth spec {}", p.display()))?,
        None => SynthSpec::default(),
    };
    if !a.languages.is_empty() {
        spec.languages = a.languages;
    }
    spec.word_count = a.word_count.unwrap_or(spec.word_count);
    spec.aligned_per_word = a.aligned_per_word.unwrap_or(spec.aligned_per_word);
    spec.sharing_ratio = a.sharing_ratio.unwrap_or(spec.sharing_ratio);
    spec.irregular_fraction = a.irregular_fraction.unwrap_or(spec.irregular_fraction);
    let generated = synth_generate(&spec, a.seed.unwrap_or(0))?;
    generated.save(&out)?;
    log::info!(
        "wrote {} entries, {} tokens and {} word lists to {}",
        generated.entries.len(),
        generated.vocab.len(),
        generated.word_lists.len(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- build-index

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildIndexArgs {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Vocabulary file, one token per line.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Word list per language as `lang=path`; repeatable.
    #[arg(long)]
    pub words: Vec<String>,
    /// Mask slots; chosen from `coverage` when absent.
    #[arg(long)]
    pub k: Option<usize>,
    /// Fraction of words that must fit in k pieces (default 0.99).
    #[arg(long)]
    pub coverage: Option<f64>,
    /// Output index file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct IndexSummary {
    k: usize,
    words: BTreeMap<String, usize>,
    excluded: BTreeMap<String, usize>,
}

fn build_index(flags: BuildIndexArgs) -> Result<()> {
    let a: BuildIndexArgs = resolve(flags.config.as_deref(), &flags)?;
    let vocab_path = required(a.vocab, "vocab")?;
    let out = required(a.out, "out")?;
    if a.words.is_empty() {
        bail!("missing --words lang=path");
    }
    let vocab = SubwordVocab::load(&vocab_path).with_context(|| format!("loading vocabulary {}", vocab_path.display()))?;
    let mut lists = Vec::new();
    for spec in &a.words {
        let (lang, path) = spec
            .split_once('=')
            .with_context(|| format!("--words expects lang=path, got {spec:?}"))?;
        let words = load_word_list(path).with_context(|| format!("loading word list {path}"))?;
        lists.push((lang.to_string(), words));
    }
    let k = match a.k {
        Some(k) => k,
        None => {
            let counts = lists.iter().flat_map(|(_, w)| w).map(|w| vocab.tokenize_word(w).len());
            choose_k(counts, a.coverage.unwrap_or(0.99))?
        }
    };
    let index = WordIndex::build(&vocab, lists.iter().map(|(l, w)| (l.as_str(), w)), k)?;
    index.save(&out)?;
    let mut summary = IndexSummary {
        k,
        words: BTreeMap::new(),
        excluded: BTreeMap::new(),
    };
    for lang in index.languages() {
        summary.words.insert(lang.to_string(), index.language(lang)?.len());
        let excluded = index.exclusions(lang);
        for e in excluded {
            log::debug!("{lang}: excluded {:?}: {}", e.surface, e.reason);
        }
        summary.excluded.insert(lang.to_string(), excluded.len());
    }
    print_json(&summary)
}

// ---------------------------------------------------------------- train

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainArgs {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Corpus in JSON lines.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Model directory to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// monolingual, bilingual_aligned or unaligned_multilingual.
    #[arg(long)]
    pub mode: Option<TrainMode>,
    /// mlm_head or embedding_dot.
    #[arg(long)]
    pub head: Option<HeadMode>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub warmup_fraction: Option<f64>,
    /// sum or mean.
    #[arg(long, value_parser = parse_name::<LossReduction>)]
    pub loss_reduction: Option<LossReduction>,
    /// raw or log_softmax.
    #[arg(long, value_parser = parse_name::<ScoreNormalization>)]
    pub score_normalization: Option<ScoreNormalization>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub num_layers: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub num_heads: Option<usize>,
    #[arg(long)]
    pub ffn_dim: Option<usize>,
    #[arg(long)]
    pub max_seq_len: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Words moved to the unseen test split (with --dev-words and --seen-entries).
    #[arg(long)]
    pub unseen_words: Option<usize>,
    #[arg(long)]
    pub dev_words: Option<usize>,
    #[arg(long)]
    pub seen_entries: Option<usize>,
    /// Hold out cross-lingual pairs from this definition language.
    #[arg(long)]
    pub holdout_definition_language: Option<String>,
    #[arg(long)]
    pub holdout_target_language: Option<String>,
    #[arg(long)]
    pub holdout_test_words: Option<usize>,
    #[arg(long)]
    pub holdout_dev_words: Option<usize>,
    /// Translation lexicon (source TAB target) used by the holdout.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Fraction of held-out test words whose target-language definitions
    /// are removed from training.
    #[arg(long)]
    pub ablation: Option<f64>,
    /// Per-epoch JSON lines log.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

impl TrainArgs {
    fn train_config(&self) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            epochs: self.epochs.unwrap_or(d.epochs),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            warmup_fraction: self.warmup_fraction.unwrap_or(d.warmup_fraction),
            clip_norm: d.clip_norm,
            mode: self.mode.unwrap_or(d.mode),
            head_mode: self.head.unwrap_or(d.head_mode),
            loss_reduction: self.loss_reduction.unwrap_or(d.loss_reduction),
            score_normalization: self.score_normalization.unwrap_or(d.score_normalization),
        }
    }

    fn model_config(&self) -> ModelConfig {
        let d = ModelConfig::default();
        ModelConfig {
            num_layers: self.num_layers.unwrap_or(d.num_layers),
            d_model: self.d_model.unwrap_or(d.d_model),
            num_heads: self.num_heads.unwrap_or(d.num_heads),
            ffn_dim: self.ffn_dim.unwrap_or(d.ffn_dim),
            max_seq_len: self.max_seq_len.unwrap_or(d.max_seq_len),
            dropout: self.dropout.unwrap_or(d.dropout),
            ..d
        }
    }

    /// Applies the optional split, holdout and ablation steps in that order.
    /// Returns the corpus and whether it differs from the input.
    fn prepare(&self, corpus: TrainingCorpus, seed: u64) -> Result<(TrainingCorpus, bool)> {
        let mut corpus = corpus;
        let mut changed = false;
        let split = [self.unseen_words, self.dev_words, self.seen_entries];
        if split.iter().any(Option::is_some) {
            let cfg = SplitConfig {
                unseen_words: self.unseen_words.unwrap_or(0),
                dev_words: required(self.dev_words, "dev-words")?,
                seen_entries: self.seen_entries.unwrap_or(0),
            };
            corpus = make_splits(&corpus, &cfg, seed)?;
            changed = true;
        }
        let mut held_out = None;
        if let Some(src) = &self.holdout_definition_language {
            let lexicon = BilingualLexicon::load(required(self.lexicon.as_ref(), "lexicon")?)?;
            let cfg = HoldoutConfig {
                definition_language: src.clone(),
                target_language: required(self.holdout_target_language.clone(), "holdout-target-language")?,
                test_words: required(self.holdout_test_words, "holdout-test-words")?,
                dev_words: required(self.holdout_dev_words, "holdout-dev-words")?,
            };
            let holdout = bilingual_holdout(&corpus, lexicon.pairs(), &cfg, seed)?;
            log::info!(
                "held out {} test and {} dev words; dropped {} aligned entries",
                holdout.test_words.len(),
                holdout.dev_words.len(),
                holdout.dropped
            );
            corpus = holdout.corpus;
            held_out = Some((cfg.target_language, holdout.test_words));
            changed = true;
        }
        if let Some(p) = self.ablation {
            let Some((target, words)) = &held_out else {
                bail!("--ablation needs a cross-lingual holdout (--holdout-definition-language)");
            };
            let (filtered, report) = ablation_filter(&corpus, target, words, p, seed)?;
            log::info!(
                "ablation p={p}: removed {} definitions of {} words",
                report.removed.len(),
                report.chosen.len()
            );
            corpus = filtered;
            changed = true;
        }
        Ok((corpus, changed))
    }
}

/// Split corpus written next to a trained model when the command rebuilt
/// the splits.
pub const SPLITS_FILE: &str = "splits.jsonl";
pub const SUMMARY_FILE: &str = "train_summary.json";

#[derive(Debug, Serialize)]
struct TrainSummary<'a> {
    model_id: &'a str,
    seed: u64,
    train: &'a TrainConfig,
    model: &'a ModelConfig,
    train_examples: usize,
    skipped_excluded: usize,
    truncated: usize,
    initial_dev_acc10: f64,
    best_epoch: usize,
    best_dev_acc10: f64,
}

fn train(flags: TrainArgs) -> Result<()> {
    let a: TrainArgs = resolve(flags.config.as_deref(), &flags)?;
    let corpus_path = required(a.corpus.clone(), "corpus")?;
    let vocab_path = required(a.vocab.clone(), "vocab")?;
    let index_path = required(a.index.clone(), "index")?;
    let out = required(a.out.clone(), "out")?;
    let seed = a.seed.unwrap_or(0);
    let cfg = a.train_config();

    let vocab = SubwordVocab::load(&vocab_path).with_context(|| format!("loading vocabulary {}", vocab_path.display()))?;
    let index = WordIndex::load(&index_path, &vocab).with_context(|| format!("loading index {}", index_path.display()))?;
    let (corpus, changed) = a.prepare(read_corpus(&corpus_path)?, seed)?;

    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut log_file = match &a.log {
        Some(p) => Some(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => None,
    };
    let outcome = revdict_core::training::train(
        &corpus,
        &index,
        &vocab,
        &a.model_config(),
        &cfg,
        seed,
        log_file.as_mut().map(|w| w as &mut dyn Write),
    )?;
    if let Some(mut w) = log_file {
        w.flush()?;
    }
    let model = ReverseDictionary::from_outcome(&outcome, vocab, index, cfg.mode, cfg.score_normalization)?;
    model.save(&out)?;
    if changed {
        save_entries(out.join(SPLITS_FILE), corpus.entries())?;
    }
    let summary = TrainSummary {
        model_id: model.model_id(),
        seed,
        train: &cfg,
        model: &outcome.model_config,
        train_examples: outcome.train_examples,
        skipped_excluded: outcome.skipped_excluded,
        truncated: outcome.truncated,
        initial_dev_acc10: outcome.initial_dev_acc10,
        best_epoch: outcome.best_epoch,
        best_dev_acc10: outcome.best_dev_acc10,
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    print_json(&summary)
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalArgs {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Model directory (default: $REVDICT_MODEL_DIR).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// train, dev, seen, unseen, description, question or test.
    #[arg(long)]
    pub split: Option<SplitTag>,
    /// Group metrics by gold word piece count (`pieces`) or by an annotation
    /// file (`word TAB group`).
    #[arg(long)]
    pub group_by: Option<String>,
    /// Also score the lexicon pivot baseline with this translation lexicon.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Pivot depth: definition-language words translated per query (default 10).
    #[arg(long)]
    pub pivot_m: Option<usize>,
    /// Write per-sample ranks as JSON lines.
    #[arg(long)]
    pub ranks: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct RankLine<'a> {
    word: &'a str,
    definition: &'a str,
    rank: usize,
    excluded: bool,
}

fn eval(flags: EvalArgs) -> Result<()> {
    let a: EvalArgs = resolve(flags.config.as_deref(), &flags)?;
    let model = load_model(&model_dir(a.checkpoint)?)?;
    let corpus_path = required(a.corpus, "corpus")?;
    let split = required(a.split, "split")?;
    let corpus = read_corpus(&corpus_path)?;
    let entries: Vec<_> = corpus.split(split).collect();
    if entries.is_empty() {
        bail!("split {split} of {} is empty", corpus_path.display());
    }
    let group_by = match a.group_by.as_deref() {
        None | Some("none") => GroupBy::None,
        Some("pieces") => GroupBy::PieceCount,
        Some(path) => GroupBy::Annotation(load_annotations(path)?),
    };
    let (report, ranks) = model.evaluate(&entries, split.as_str(), &group_by)?;
    if let Some(path) = &a.ranks {
        let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
        for (e, r) in entries.iter().zip(&ranks) {
            let line = RankLine {
                word: &e.word,
                definition: &e.definition,
                rank: r.rank,
                excluded: r.excluded,
            };
            serde_json::to_writer(&mut out, &line)?;
            writeln!(out)?;
        }
        out.flush()?;
    }
    let mut value = serde_json::to_value(&report)?;
    if let Some(path) = &a.lexicon {
        let lexicon = BilingualLexicon::load(path)?;
        let m = a.pivot_m.unwrap_or(10);
        let mut pivot_ranks = Vec::with_capacity(entries.len());
        for e in &entries {
            let mono = model.query(&e.definition, &e.definition_language, &e.definition_language, None)?;
            let ranking = pivot_baseline(&mono, &lexicon, m, model.index(), &e.word_language)?;
            let candidates = model.index().language(&e.word_language)?.len();
            let rank = model
                .index()
                .lookup(&e.word_language, &e.word)
                .and_then(|id| ranking.position(id))
                .unwrap_or(candidates);
            pivot_ranks.push(rank);
        }
        value["pivot_baseline"] = serde_json::to_value(compute_metrics(&pivot_ranks)?)?;
    }
    print_json(&value)
}

// ---------------------------------------------------------------- query

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueryArgs {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Model directory (default: $REVDICT_MODEL_DIR).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// The definition to look up.
    #[arg(long = "def")]
    pub definition: Option<String>,
    #[arg(long = "def-lang")]
    pub definition_language: Option<String>,
    #[arg(long = "target-lang")]
    pub target_language: Option<String>,
    /// Number of candidates (default 10).
    #[arg(long)]
    pub top_n: Option<usize>,
    /// Print the HTTP response body format instead of a table.
    #[arg(long)]
    #[serde(skip)]
    pub json: bool,
}

fn query(flags: QueryArgs) -> Result<()> {
    let json = flags.json;
    let a: QueryArgs = resolve(flags.config.as_deref(), &flags)?;
    let model = load_model(&model_dir(a.checkpoint)?)?;
    let definition = required(a.definition, "def")?;
    let def_lang = required(a.definition_language, "def-lang")?;
    let target_lang = a.target_language.unwrap_or_else(|| def_lang.clone());
    let top_n = a.top_n.unwrap_or(10);
    if top_n == 0 {
        bail!("--top-n must be at least 1");
    }
    let response = service::answer(&model, &definition, &def_lang, &target_lang, top_n)?;
    if json {
        return print_json(&response);
    }
    let mut out = std::io::stdout().lock();
    for c in &response.candidates {
        writeln!(out, "{:>4}  {:<24} {:>10.4}", c.rank + 1, c.surface, c.score)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- serve

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeArgs {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Model directory (default: $REVDICT_MODEL_DIR).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Listen address (default 127.0.0.1:8080).
    #[arg(long)]
    pub bind: Option<SocketAddr>,
    /// Browser origin allowed to call the API, or `*`; repeatable.
    #[arg(long = "cors-origin")]
    pub cors_origins: Vec<String>,
}

fn serve(flags: ServeArgs) -> Result<()> {
    let a: ServeArgs = resolve(flags.config.as_deref(), &flags)?;
    let dir = model_dir(a.checkpoint)?;
    let state = Arc::new(AppState::load(&dir).with_context(|| format!("loading model from {}", dir.display()))?);
    let bind = a.bind.unwrap_or_else(|| SocketAddr::from(([127, 0, 0, 1], 8080)));
    let app = service::router(
        Arc::clone(&state),
        &CorsConfig {
            origins: a.cors_origins,
        },
    );
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(bind)
            .await
            .with_context(|| format!("binding {bind}"))?;
        log::info!(
            "serving model {} on http://{}",
            state.snapshot().model_id(),
            listener.local_addr()?
        );
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

// ---------------------------------------------------------------- export-scores

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportArgs {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Model directory (default: $REVDICT_MODEL_DIR).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long = "def")]
    pub definition: Option<String>,
    #[arg(long = "def-lang")]
    pub definition_language: Option<String>,
    #[arg(long = "target-lang")]
    pub target_language: Option<String>,
    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct ScoreExport {
    model_id: String,
    definition: String,
    definition_language: String,
    target_language: String,
    k: usize,
    /// Row per mask slot, column per vocabulary token.
    subword_scores: Vec<Vec<f32>>,
    /// Aggregated score per candidate, in word-id order.
    words: Vec<WordScore>,
}

#[derive(Debug, Serialize)]
struct WordScore {
    surface: String,
    score: f32,
}

fn export_scores(flags: ExportArgs) -> Result<()> {
    let a: ExportArgs = resolve(flags.config.as_deref(), &flags)?;
    let model = load_model(&model_dir(a.checkpoint)?)?;
    let definition = required(a.definition, "def")?;
    let def_lang = required(a.definition_language, "def-lang")?;
    let target_lang = a.target_language.unwrap_or_else(|| def_lang.clone());
    let subword = model.subword_scores(&definition, &def_lang, &target_lang)?;
    let words = model.word_scores(&definition, &def_lang, &target_lang)?;
    let candidates = model.index().language(&target_lang)?;
    let export = ScoreExport {
        model_id: model.model_id().to_string(),
        k: model.index().k(),
        subword_scores: subword.scores.rows().into_iter().map(|r| r.to_vec()).collect(),
        words: candidates
            .entries()
            .iter()
            .zip(words.scores.iter())
            .map(|(e, &score)| WordScore {
                surface: e.surface.clone(),
                score,
            })
            .collect(),
        definition,
        definition_language: def_lang,
        target_language: target_lang,
    };
    match &a.out {
        Some(path) => write_json(path, &export),
        None => print_json(&export),
    }
}

// ---------------------------------------------------------------- grad-check

/// A self-contained gradient-check problem: a small synthetic corpus and a
/// small randomly perturbed model, checked in 64-bit.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckSetup {
    pub synth: SynthSpec,
    pub synth_seed: u64,
    pub k: usize,
    pub model: ModelConfig,
    pub mode: TrainMode,
    pub normalization: ScoreNormalization,
    pub reduction: LossReduction,
    pub examples: usize,
    pub seed: u64,
    /// Half-width of the uniform noise added to every initialized tensor.
    pub perturb: f64,
    pub step: f64,
    pub tolerance: f64,
    pub samples_per_tensor: usize,
}

impl Default for GradCheckSetup {
    fn default() -> Self {
        let opts = GradCheckOptions::default();
        GradCheckSetup {
            synth: SynthSpec {
                word_count: 24,
                slot_sizes: vec![4, 3, 2],
                definitions_per_word: 1,
                descriptions_per_word: 0,
                ..SynthSpec::default()
            },
            synth_seed: 0,
            k: 3,
            model: ModelConfig {
                num_layers: 2,
                d_model: 16,
                num_heads: 2,
                ffn_dim: 32,
                max_seq_len: 24,
                dropout: 0.0,
                ..ModelConfig::default()
            },
            mode: TrainMode::UnalignedMultilingual,
            normalization: ScoreNormalization::Raw,
            reduction: LossReduction::Sum,
            examples: 4,
            seed: 1,
            perturb: 0.1,
            step: opts.step,
            tolerance: opts.tolerance,
            samples_per_tensor: opts.samples_per_tensor,
        }
    }
}

impl GradCheckSetup {
    pub fn run(&self) -> Result<revdict_core::training::GradCheckReport> {
        let out = synth_generate(&self.synth, self.synth_seed)?;
        let vocab = out.subword_vocab()?;
        let index = WordIndex::build(&vocab, out.word_lists.iter().map(|(l, w)| (l.as_str(), w)), self.k)?;
        let languages: Vec<String> = index.languages().map(str::to_string).collect();
        let cfg = ModelConfig {
            vocab_size: vocab.len(),
            num_languages: if self.mode.uses_language_embedding() { languages.len() } else { 0 },
            ..self.model.clone()
        };
        cfg.validate_for_k(index.k())?;

        let corpus = out.corpus()?;
        let rows = self.mode.uses_language_embedding().then_some(languages.as_slice());
        let samples = encode_entries(
            corpus.split(SplitTag::Train).filter(|e| e.is_monolingual()),
            &vocab,
            &index,
            &cfg,
            rows,
        )?;
        let examples: Vec<Example> = samples
            .into_iter()
            .filter_map(|s| {
                s.target.map(|target| Example {
                    input: s.input,
                    language: s.language,
                    target,
                })
            })
            .step_by(7)
            .take(self.examples)
            .collect();
        if examples.is_empty() {
            bail!("the grad-check corpus produced no usable examples");
        }

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut params: EncoderParams<f64> = EncoderParams::init(&cfg, &mut rng)?;
        if self.perturb > 0.0 {
            for (_, mut t) in params.tensors_mut() {
                t.mapv_inplace(|v| v + rng.random_range(-self.perturb..self.perturb));
            }
        }
        let opts = GradCheckOptions {
            step: self.step,
            tolerance: self.tolerance,
            samples_per_tensor: self.samples_per_tensor,
            seed: self.seed,
            backward: BackwardOptions {
                normalization: self.normalization,
                reduction: self.reduction,
                dropout_seed: None,
            },
            ..GradCheckOptions::default()
        };
        Ok(grad_check(&params, &cfg, &index, &examples, &opts)?)
    }
}

#[derive(Debug, Default, Args)]
pub struct GradCheckArgs {
    /// `tiny` for the built-in problem, or a JSON setup file.
    #[arg(long, default_value = "tiny")]
    pub config: String,
    #[arg(long)]
    pub seed: Option<u64>,
    /// mlm_head or embedding_dot.
    #[arg(long)]
    pub head: Option<HeadMode>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

fn run_grad_check(a: GradCheckArgs) -> Result<()> {
    let mut setup = match a.config.as_str() {
        "tiny" => GradCheckSetup::default(),
        path => {
            let text = fs::read_to_string(path).with_context(|| format!("reading grad-check setup {path}"))?;
            serde_json::from_str(&text).with_context(|| format!("parsing grad-check setup {path}"))?
        }
    };
    setup.seed = a.seed.unwrap_or(setup.seed);
    setup.model.head_mode = a.head.unwrap_or(setup.model.head_mode);
    setup.step = a.step.unwrap_or(setup.step);
    setup.tolerance = a.tolerance.unwrap_or(setup.tolerance);
    let report = setup.run()?;
    if a.json {
        print_json(&report)?;
    } else {
        print!("{report}");
    }
    let failed: Vec<&str> = report.failures().map(|t| t.name.as_str()).collect();
    if !failed.is_empty() {
        bail!("{} of {} tensors failed the gradient check: {}", failed.len(), report.tensors.len(), failed.join(", "));
    }
    Ok(())
}
