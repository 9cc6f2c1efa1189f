use proptest::prelude::*;
use rareclass::dataset::{gen_synthetic, split_protocol, LabeledCorpus, SyntheticConfig};
use rareclass::eval::*;
use rareclass::featurize::RepSpec;
use rareclass::pipeline::ModelConfig;
use rareclass::recognizer::Verdict;

fn corpus() -> LabeledCorpus {
    gen_synthetic(&SyntheticConfig {
        d: 5,
        k_total: 3,
        docs_per_subclass: 20,
        majority_docs: 40,
        subclass_separation: 6.0,
        noise_scale: 1.0,
        collinearity_groups: vec![],
        seed: 2,
    })
    .unwrap()
}

fn verdict_strategy(k: usize) -> impl Strategy<Value = Verdict> {
    prop_oneof![
        Just(Verdict::Majority),
        Just(Verdict::Emerging),
        (1..=k).prop_map(Verdict::Known),
    ]
}

/// Counts averaged over five runs, in the seen / unseen / majority column layout.
#[test]
fn reconciles_published_counts() {
    let t: ConfusionTable<f64> = ConfusionTable {
        seen: SeenCounts {
            correct: 293.0,
            wrong_subclass: 13.2,
            emerging: 54.0,
            majority: 32.0,
        },
        unseen: OtherCounts {
            known: 28.0,
            emerging: 77.2,
            majority: 325.2,
        },
        majority: OtherCounts {
            known: 35.2,
            emerging: 21.0,
            majority: 491.0,
        },
        seen_by_subclass: Default::default(),
    };
    assert!((t.seen.total() + t.unseen.total() - 822.6).abs() < 1e-9);
    let acc = acc_rare(&t).unwrap();
    assert!((acc - 0.450).abs() <= 0.005, "{acc}");
}

#[test]
fn fixed_seeds_reproduce_the_report() {
    let c = corpus();
    let cfg = ModelConfig {
        rep: RepSpec::Raw,
        mu: 0.0,
        ..ModelConfig::default()
    };
    let a = run_experiment(&c, &cfg, 2, 7).unwrap();
    let b = run_experiment(&c, &cfg, 2, 7).unwrap();
    assert_eq!(a, b);
    assert!(a.complete);
    assert_eq!(a.runs.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![7, 8]);
    let one = run_experiment(&c, &cfg, 1, 7).unwrap();
    assert!(one.summary.values().all(|s| s.sd.is_none()));
    assert_eq!(one.runs[0], a.runs[0]);
}

#[test]
fn failed_repetitions_mark_the_report_incomplete() {
    let c = corpus();
    let cfg = ModelConfig {
        rep: RepSpec::Raw,
        mu: 1.0,
        train: rareclass::trainer::TrainConfig {
            step_size: Some(1e4),
            step_decay: rareclass::trainer::StepDecay::Fixed,
            ..Default::default()
        },
        ..ModelConfig::default()
    };
    let r = run_experiment(&c, &cfg, 2, 0).unwrap();
    assert!(!r.complete);
    assert!(r.runs.iter().all(|run| run.numerical && run.error.is_some()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn metric_identities(seed in 0u64..1000, picks in prop::collection::vec(verdict_strategy(3), 200)) {
        let c = corpus();
        let split = split_protocol(&c, seed, SEEN_FRACTION, TRAIN_FRACTION).unwrap();
        let n = split.test().len();
        let verdicts: Vec<Verdict> = picks.iter().cycle().take(n).copied().collect();
        let t = confusion_table(&verdicts, &split, &c).unwrap();
        // column totals
        prop_assert_eq!(t.seen.total(), split.test_seen.len());
        prop_assert_eq!(t.unseen.total(), split.test_unseen.len());
        prop_assert_eq!(t.majority.total(), split.test_majority.len());
        for (&k, cell) in &t.seen_by_subclass {
            let expect = split.test_seen.iter().filter(|&&i| c.docs()[i].subclass == Some(k)).count();
            prop_assert_eq!(cell.total(), expect);
        }
        let m = metrics_from_table(&t);
        let (rs, ru) = (t.seen.total() as f64, t.unseen.total() as f64);
        let recall = m.recall.unwrap();
        let mixed = (rs * m.recall_seen.unwrap_or(0.0) + ru * m.recall_unseen.unwrap_or(0.0)) / (rs + ru);
        prop_assert!((recall - mixed).abs() < 1e-12);
        prop_assert!(m.acc_rare.unwrap() <= recall + 1e-12);
        if let (Some(p), Some(ps)) = (m.precision, m.precision_seen) {
            prop_assert!(ps <= p + 1e-12);
        }
        for v in m.values().into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn summary_matches_definition(values in prop::collection::vec(-10.0f64..10.0, 2..20)) {
        let s = summarize(values.iter().copied());
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
        prop_assert!((s.mean.unwrap() - mean).abs() < 1e-9);
        prop_assert!((s.sd.unwrap() - var.sqrt()).abs() < 1e-9);
    }
}
