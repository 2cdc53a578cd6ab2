use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use revdict_core::corpus::{synth_generate, SplitTag, SynthSpec};
use revdict_core::encoder::{build_input, forward_sequence, EncoderParams, HeadMode, ModelConfig};
use revdict_core::model::GroupBy;
use revdict_core::scoring::{aggregate, rank, ScoreNormalization};
use revdict_core::training::TrainMode;
use revdict_core::word_index::WordIndex;
use revdict_core::{Error, ReverseDictionary};

fn model(mode: TrainMode) -> (ReverseDictionary, revdict_core::corpus::SynthOutput) {
    let out = synth_generate(
        &SynthSpec {
            word_count: 50,
            ..SynthSpec::default()
        },
        3,
    )
    .unwrap();
    let vocab = out.subword_vocab().unwrap();
    let index = WordIndex::build(&vocab, out.word_lists.iter().map(|(l, w)| (l.as_str(), w.clone())), 3).unwrap();
    let cfg = ModelConfig {
        d_model: 16,
        num_heads: 2,
        ffn_dim: 32,
        max_seq_len: 32,
        vocab_size: vocab.len(),
        num_languages: if mode == TrainMode::Monolingual { 0 } else { 2 },
        head_mode: HeadMode::EmbeddingDot,
        ..ModelConfig::default()
    };
    let params = EncoderParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let m = ReverseDictionary::new(cfg, params, vocab, index, mode, ScoreNormalization::Raw).unwrap();
    (m, out)
}

#[test]
fn query_is_the_scoring_pipeline_truncated() {
    let (m, out) = model(TrainMode::UnalignedMultilingual);
    let def = &out.entries[0].definition;
    let got = m.query(def, "xa", "xb", Some(5)).unwrap();

    let ids = m.vocab().tokenize_text(def);
    let input = build_input(
        m.vocab().special(),
        m.index().k(),
        &ids,
        Some(1),
        m.config().definition_budget(m.index().k()),
    );
    let cache = forward_sequence::<f32, ChaCha8Rng>(m.params(), m.config(), &input, None).unwrap();
    let scores = aggregate(&cache.scores.view(), m.index(), "xb").unwrap();
    let full = rank(&scores, m.index(), None).unwrap();
    assert_eq!(got.items, full.items[..5]);
}

#[test]
fn save_and_load_round_trip() {
    let (m, out) = model(TrainMode::UnalignedMultilingual);
    let dir = tempfile::tempdir().unwrap();
    m.save(dir.path()).unwrap();
    let back = ReverseDictionary::load(dir.path()).unwrap();
    assert_eq!(back.model_id(), m.model_id());
    assert_eq!(back.meta(), m.meta());
    assert_eq!(back.params(), m.params());
    let def = &out.entries[3].definition;
    assert_eq!(back.query(def, "xb", "xa", None).unwrap(), m.query(def, "xb", "xa", None).unwrap());
}

#[test]
fn language_pairs_are_checked() {
    let (mono, _) = model(TrainMode::Monolingual);
    assert!(matches!(mono.query("x", "xa", "xb", None), Err(Error::UnsupportedPair { .. })));
    assert!(matches!(mono.query("x", "zz", "zz", None), Err(Error::UnknownLanguage(t)) if t == "zz"));
    assert!(mono.query("x", "xb", "xb", Some(3)).unwrap().len() == 3);
    assert_eq!(mono.supported_pairs().len(), 2);
    let (multi, _) = model(TrainMode::BilingualAligned);
    assert_eq!(multi.supported_pairs().len(), 4);
}

#[test]
fn evaluation_groups_and_counts() {
    let (m, out) = model(TrainMode::UnalignedMultilingual);
    let entries: Vec<_> = out.entries.iter().filter(|e| e.split == SplitTag::Train).take(40).collect();
    let (report, ranks) = m.evaluate(&entries, "train", &GroupBy::PieceCount).unwrap();
    assert_eq!(ranks.len(), 40);
    assert_eq!(report.metrics.n_samples, 40);
    let groups = report.groups.unwrap();
    assert_eq!(groups.values().map(|g| g.n_samples).sum::<usize>(), 40);
    assert!(groups.keys().all(|k| ["1", "2", "3"].contains(&k.as_str())));
}
