//! End-to-end acceptance suite. Runs without the libtest harness so that
//! every criterion prints one PASS/FAIL line; exits nonzero if any fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use revdict_core::corpus::{
    bilingual_holdout, make_splits, synth_generate, HoldoutConfig, SplitConfig, SplitTag, SynthOutput, SynthSpec,
    TrainingCorpus,
};
use revdict_core::encoder::{HeadMode, ModelConfig};
use revdict_core::evaluation::{ablation_filter, compute_metrics};
use revdict_core::model::GroupBy;
use revdict_core::scoring::{aggregate, multilingual_loss, rank, word_loss, ScoreNormalization};
use revdict_core::training::{grad_check, train, GradCheckOptions, TrainConfig, TrainMode};
use revdict_core::vocab::SubwordVocab;
use revdict_core::word_index::{choose_k, WordIndex};
use revdict_core::ReverseDictionary;

use common::{aggregate_oracle, choose_k_scan, perturbed_params, random_examples, tiny_config, tiny_vocab, tiny_words};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let vocab = tiny_vocab();
    let langs = ["xa", "xb"];
    let index = common::tiny_index(&vocab, &langs, 25);
    let cfg = tiny_config(HeadMode::MlmHead, 2);
    let params = perturbed_params(&cfg, 1);
    let examples = random_examples(&vocab, &index, &cfg, &langs, 4, 2);
    let report = grad_check(&params, &cfg, &index, &examples, &GradCheckOptions::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let worst = report.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
    let failed: Vec<&str> = report.failures().map(|t| t.name.as_str()).collect();
    outcome(
        report.all_passed() && secs < 60.0,
        format!(
            "{} tensors, worst rel error {worst:.2e} (< 1e-4), {secs:.1}s (< 60s){}",
            report.tensors.len(),
            if failed.is_empty() { String::new() } else { format!(", failed: {failed:?}") }
        ),
    )
}

fn scores(rng: &mut ChaCha8Rng, k: usize, v: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((k, v), || 3.0 * rng.sample::<f64, _>(StandardNormal))
}

fn scoring_oracle() -> Outcome {
    let vocab = tiny_vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut words = 0;
    for i in 0..1000u64 {
        let k = rng.random_range(1..=5);
        let n = rng.random_range(1..=80);
        let index = WordIndex::build(&vocab, [("xa", tiny_words(n, i))], k).unwrap();
        let s = scores(&mut rng, k, vocab.len());
        let fast = aggregate(&s.view(), &index, "xa").unwrap();
        let slow = aggregate_oracle(&s, &vocab, &index, "xa");
        if fast.len() != slow.len() {
            return outcome(false, format!("instance {i}: {} vs {} words", fast.len(), slow.len()));
        }
        words += slow.len();
        for (a, b) in fast.scores.iter().zip(&slow) {
            worst = worst.max((a - b).abs());
        }
    }
    outcome(worst <= 1e-6, format!("1000 instances, {words} words, max |diff| {worst:.1e} (<= 1e-6)"))
}

fn shift_invariance() -> Outcome {
    let vocab = tiny_vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for trial in 0..100u64 {
        let index = WordIndex::build(&vocab, [("xa", tiny_words(50, trial)), ("xb", tiny_words(50, trial + 500))], 3).unwrap();
        let s = scores(&mut rng, 3, vocab.len());
        let c: f64 = rng.random_range(-50.0..50.0);
        let shifted = s.mapv(|x| x + c);
        let mut losses = Vec::new();
        for lang in ["xa", "xb"] {
            let a = aggregate(&s.view(), &index, lang).unwrap();
            let b = aggregate(&shifted.view(), &index, lang).unwrap();
            let ids = |w: &revdict_core::scoring::WordScores<f64>| -> Vec<usize> {
                rank(w, &index, None).unwrap().items.iter().map(|r| r.word_id).collect()
            };
            if ids(&a) != ids(&b) {
                return outcome(false, format!("trial {trial}: ranking of {lang} changed under shift {c}"));
            }
            let t = rng.random_range(0..a.len());
            worst = worst.max((word_loss(&a, t).unwrap() - word_loss(&b, t).unwrap()).abs());
            losses.push((a, b, t));
        }
        let before: Vec<_> = losses.iter().map(|(a, _, t)| (a, *t)).collect();
        let after: Vec<_> = losses.iter().map(|(_, b, t)| (b, *t)).collect();
        worst = worst.max((multilingual_loss(&before).unwrap() - multilingual_loss(&after).unwrap()).abs());
    }
    outcome(worst < 1e-6, format!("100 trials, orders identical, max loss change {worst:.1e} (< 1e-6)"))
}

fn metric_suite() -> Outcome {
    let m = compute_metrics(&[0, 3, 9, 150]).unwrap();
    let mut ok = m.acc(1) == 0.25
        && m.acc(10) == 0.75
        && m.acc(100) == 0.75
        && (m.mrr - 0.3392).abs() <= 1e-4
        && m.median_rank == 3.0;
    let all_zero = compute_metrics(&[0, 0, 0]).unwrap();
    ok &= all_zero.acc(1) == 1.0 && all_zero.mrr == 1.0 && all_zero.median_rank == 0.0 && all_zero.rank_variance == 0.0;
    let single = compute_metrics(&[5]).unwrap();
    ok &= single.acc(1) == 0.0 && single.acc(10) == 1.0 && single.mrr == 1.0 / 6.0 && single.median_rank == 5.0;
    ok &= compute_metrics(&[]).is_err();
    outcome(
        ok,
        format!(
            "acc@1 {} acc@10 {} acc@100 {} mrr {:.4} median {}; degenerate cases exact",
            m.acc(1),
            m.acc(10),
            m.acc(100),
            m.mrr,
            m.median_rank
        ),
    )
}

fn k_selection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cases = 0;
    for _ in 0..2000 {
        let n = rng.random_range(1..300);
        let max = rng.random_range(1..12);
        let counts: Vec<usize> = (0..n).map(|_| rng.random_range(1..=max)).collect();
        if choose_k(counts.iter().copied(), 0.99).unwrap() != choose_k_scan(&counts, 99) {
            return outcome(false, format!("mismatch on {counts:?}"));
        }
        cases += 1;
    }
    for seed in 0..5 {
        let out = synth_generate(&SynthSpec::default(), seed).unwrap();
        let vocab = out.subword_vocab().unwrap();
        for words in out.word_lists.values() {
            let counts: Vec<usize> = words.iter().map(|w| vocab.tokenize_word(w).len()).collect();
            if choose_k(counts.iter().copied(), 0.99).unwrap() != choose_k_scan(&counts, 99) {
                return outcome(false, format!("mismatch on synthetic corpus seed {seed}"));
            }
            cases += 1;
        }
    }
    outcome(true, format!("{cases} corpora agree with the exhaustive scan"))
}

fn index_for(out: &SynthOutput, vocab: &SubwordVocab) -> WordIndex {
    let counts = out.word_lists.values().flatten().map(|w| vocab.tokenize_word(w).len());
    let k = choose_k(counts, 0.99).unwrap();
    WordIndex::build(vocab, out.word_lists.iter().map(|(l, w)| (l.as_str(), w.clone())), k).unwrap()
}

fn base_model() -> ModelConfig {
    ModelConfig {
        num_layers: 2,
        d_model: 32,
        max_seq_len: 32,
        ..ModelConfig::default()
    }
}

/// Trains the monolingual model and returns (train seconds, metrics JSON per
/// split, model).
fn monolingual_run() -> (f64, Vec<(SplitTag, String)>, ReverseDictionary) {
    let spec = SynthSpec {
        languages: vec!["xa".into()],
        aligned_per_word: 0,
        ..SynthSpec::default()
    };
    let out = synth_generate(&spec, 1).unwrap();
    let vocab = out.subword_vocab().unwrap();
    let corpus = make_splits(
        &out.corpus().unwrap(),
        &SplitConfig {
            unseen_words: 30,
            dev_words: 30,
            seen_entries: 100,
        },
        1,
    )
    .unwrap();
    let index = index_for(&out, &vocab);
    let cfg = TrainConfig {
        epochs: 60,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let trained = train(&corpus, &index, &vocab, &base_model(), &cfg, 7, None).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let model = ReverseDictionary::from_outcome(&trained, vocab, index, cfg.mode, cfg.score_normalization).unwrap();
    let reports = [SplitTag::Seen, SplitTag::Unseen, SplitTag::Description]
        .into_iter()
        .map(|split| {
            let entries: Vec<_> = corpus.split(split).collect();
            let (report, _) = model.evaluate(&entries, split.as_str(), &GroupBy::None).unwrap();
            (split, serde_json::to_string(&report).unwrap())
        })
        .collect();
    (secs, reports, model)
}

fn acc10(json: &str) -> f64 {
    let v: serde_json::Value = serde_json::from_str(json).unwrap();
    v["metrics"]["acc_at"]["10"].as_f64().unwrap()
}

fn monolingual_learning(run: &(f64, Vec<(SplitTag, String)>, ReverseDictionary)) -> Outcome {
    let (secs, reports, model) = run;
    let seen = acc10(&reports[0].1);
    let unseen = acc10(&reports[1].1);
    let description = acc10(&reports[2].1);
    let random = 10.0 / model.index().language("xa").unwrap().len() as f64;
    outcome(
        *secs < 300.0 && seen >= 0.9 && unseen >= 5.0 * random,
        format!(
            "seen acc@10 {seen:.3} (>= 0.9), unseen {unseen:.3} (>= {:.3}), description {description:.3}, train {secs:.1}s (< 300s)",
            5.0 * random
        ),
    )
}

struct CrossLingual {
    unaligned: [f64; 3],
    aligned: f64,
    chance: f64,
}

fn cross_lingual_run(seed: u64) -> CrossLingual {
    let out = synth_generate(&SynthSpec::default(), seed).unwrap();
    let vocab = out.subword_vocab().unwrap();
    let index = index_for(&out, &vocab);
    let holdout = bilingual_holdout(
        &out.corpus().unwrap(),
        &out.lexicon,
        &HoldoutConfig {
            definition_language: "xa".into(),
            target_language: "xb".into(),
            test_words: 60,
            dev_words: 30,
        },
        seed,
    )
    .unwrap();
    let test: Vec<_> = holdout.corpus.split(SplitTag::Test).collect();
    let run = |corpus: &TrainingCorpus, mode: TrainMode| -> f64 {
        let cfg = TrainConfig {
            epochs: 30,
            learning_rate: 3e-3,
            mode,
            head_mode: HeadMode::EmbeddingDot,
            ..TrainConfig::default()
        };
        let trained = train(corpus, &index, &vocab, &base_model(), &cfg, seed, None).unwrap();
        let model =
            ReverseDictionary::from_outcome(&trained, vocab.clone(), index.clone(), mode, ScoreNormalization::Raw).unwrap();
        model.evaluate(&test, "test", &GroupBy::None).unwrap().0.metrics.acc(10)
    };
    let mut unaligned = [0.0; 3];
    for (slot, p) in [0.0, 0.5, 1.0].into_iter().enumerate() {
        let (filtered, _) = ablation_filter(&holdout.corpus, "xb", &holdout.test_words, p, seed).unwrap();
        unaligned[slot] = run(&filtered, TrainMode::UnalignedMultilingual);
    }
    let aligned = run(&holdout.corpus, TrainMode::BilingualAligned);
    CrossLingual {
        unaligned,
        aligned,
        chance: 10.0 / index.language("xb").unwrap().len() as f64,
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |name: &'static str, o: Outcome| {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o));
    };
    println!("acceptance suite");
    report("gradient correctness", gradient_correctness());
    report("scoring oracle equivalence", scoring_oracle());
    report("shift invariance", shift_invariance());
    report("metric unit suite", metric_suite());
    report("k-selection", k_selection());

    let first = monolingual_run();
    report("monolingual learning", monolingual_learning(&first));
    let second = monolingual_run();
    let same = first.1 == second.1;
    report(
        "determinism",
        outcome(
            same,
            if same {
                "two seeded train+eval runs gave identical metrics JSON".to_string()
            } else {
                format!("metrics differ:\n{:?}\n{:?}", first.1, second.1)
            },
        ),
    );

    let runs: Vec<CrossLingual> = (1..=3).map(cross_lingual_run).collect();
    for (seed, r) in (1..=3).zip(&runs) {
        println!(
            "     seed {seed}: unaligned acc@10 p=0 {:.3} p=0.5 {:.3} p=1 {:.3}; aligned {:.3}",
            r.unaligned[0], r.unaligned[1], r.unaligned[2], r.aligned
        );
    }
    let chance = runs[0].chance;
    let unaligned = mean(runs.iter().map(|r| r.unaligned[0]));
    let aligned = mean(runs.iter().map(|r| r.aligned));
    report(
        "unaligned cross-lingual trend",
        outcome(
            unaligned >= 3.0 * chance && aligned >= unaligned,
            format!(
                "mean over seeds 1-3: unaligned {unaligned:.3} (>= {:.3}), aligned {aligned:.3} (>= unaligned)",
                3.0 * chance
            ),
        ),
    );
    let curve: Vec<f64> = (0..3).map(|i| mean(runs.iter().map(|r| r.unaligned[i]))).collect();
    report(
        "ablation trend",
        outcome(
            curve[0] >= curve[1] && curve[1] >= curve[2],
            format!(
                "mean acc@10 at p=0/0.5/1: {:.3} / {:.3} / {:.3} (non-increasing)",
                curve[0], curve[1], curve[2]
            ),
        ),
    );

    let failed = results.iter().filter(|(_, o)| !o.pass).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
