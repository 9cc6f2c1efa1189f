//! Top-level and sub-level metrics, confusion accounting, and the repeated
//! random-split experiment.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Add;

use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::dataset::{split_protocol, LabeledCorpus, SplitResult};
use crate::error::{Error, Result};
use crate::pipeline::{train_model, ModelConfig};
use crate::recognizer::{Recognizer, Verdict};

pub const SEEN_FRACTION: f64 = 2.0 / 3.0;
pub const TRAIN_FRACTION: f64 = 0.8;

/// Outcomes of seen-subclass test instances.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeenCounts<C> {
    pub correct: C,
    pub wrong_subclass: C,
    pub emerging: C,
    pub majority: C,
}

/// Outcomes of unseen-subclass or majority test instances.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OtherCounts<C> {
    pub known: C,
    pub emerging: C,
    pub majority: C,
}

impl<C: Copy + Add<Output = C>> SeenCounts<C> {
    pub fn total(&self) -> C {
        self.correct + self.wrong_subclass + self.emerging + self.majority
    }
}

impl<C: Copy + Add<Output = C>> OtherCounts<C> {
    pub fn total(&self) -> C {
        self.known + self.emerging + self.majority
    }
}

/// Predicted outcome (rows) by true group (columns `R_s`, `R_u`, `N_test`).
/// Generic over the count type so averaged (fractional) tables work too.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfusionTable<C> {
    pub seen: SeenCounts<C>,
    pub unseen: OtherCounts<C>,
    pub majority: OtherCounts<C>,
    /// Seen counts broken down by corpus subclass id.
    #[serde(default)]
    pub seen_by_subclass: BTreeMap<usize, SeenCounts<C>>,
}

/// Fraction of rare test instances sent to their own seen subclass or, when
/// unseen, flagged as emerging.
pub fn acc_rare<C>(table: &ConfusionTable<C>) -> Result<f64>
where
    C: Copy + Add<Output = C> + ToPrimitive,
{
    let f = |c: C| c.to_f64().expect("count converts to f64");
    let denom = f(table.seen.total()) + f(table.unseen.total());
    if denom <= 0.0 {
        return Err(Error::InvalidArgument("no rare test instances".into()));
    }
    Ok((f(table.seen.correct) + f(table.unseen.emerging)) / denom)
}

fn check_alignment(verdicts: &[Verdict], split: &SplitResult) -> Result<()> {
    let n = split.test_seen.len() + split.test_unseen.len() + split.test_majority.len();
    if verdicts.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: verdicts.len(),
        });
    }
    Ok(())
}

/// `verdicts` follow `split.test()` order and carry corpus subclass ids.
pub fn confusion_table(verdicts: &[Verdict], split: &SplitResult, corpus: &LabeledCorpus) -> Result<ConfusionTable<usize>> {
    check_alignment(verdicts, split)?;
    let mut t = ConfusionTable::<usize>::default();
    let (seen, rest) = verdicts.split_at(split.test_seen.len());
    let (unseen, majority) = rest.split_at(split.test_unseen.len());
    for (&i, &v) in split.test_seen.iter().zip(seen) {
        let truth = corpus.docs()[i]
            .subclass
            .ok_or_else(|| Error::Corpus(format!("seen test doc {i} has no subclass")))?;
        let cell = t.seen_by_subclass.entry(truth).or_default();
        for c in [&mut t.seen, cell] {
            match v {
                Verdict::Known(k) if k == truth => c.correct += 1,
                Verdict::Known(_) => c.wrong_subclass += 1,
                Verdict::Emerging => c.emerging += 1,
                Verdict::Majority => c.majority += 1,
            }
        }
    }
    for (group, vs) in [(&mut t.unseen, unseen), (&mut t.majority, majority)] {
        for &v in vs {
            match v {
                Verdict::Known(_) => group.known += 1,
                Verdict::Emerging => group.emerging += 1,
                Verdict::Majority => group.majority += 1,
            }
        }
    }
    Ok(t)
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub precision_seen: Option<f64>,
    pub recall_seen: Option<f64>,
    pub recall_unseen: Option<f64>,
    pub acc_rare: Option<f64>,
}

pub const METRIC_NAMES: [&str; 7] = [
    "precision",
    "recall",
    "f1",
    "precision_seen",
    "recall_seen",
    "recall_unseen",
    "acc_rare",
];

impl Metrics {
    pub fn values(&self) -> [Option<f64>; 7] {
        [
            self.precision,
            self.recall,
            self.f1,
            self.precision_seen,
            self.recall_seen,
            self.recall_unseen,
            self.acc_rare,
        ]
    }
}

/// Top-level metrics from a confusion table; `acc_rare` filled in too.
pub fn metrics_from_table(t: &ConfusionTable<usize>) -> Metrics {
    let hit_seen = t.seen.total() - t.seen.majority;
    let hit_unseen = t.unseen.total() - t.unseen.majority;
    let predicted_rare = hit_seen + hit_unseen + t.majority.known + t.majority.emerging;
    let r_test = t.seen.total() + t.unseen.total();
    let precision = ratio(hit_seen + hit_unseen, predicted_rare);
    let recall = ratio(hit_seen + hit_unseen, r_test);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    Metrics {
        precision,
        recall,
        f1,
        precision_seen: ratio(hit_seen, predicted_rare),
        recall_seen: ratio(hit_seen, t.seen.total()),
        recall_unseen: ratio(hit_unseen, t.unseen.total()),
        acc_rare: acc_rare(t).ok(),
    }
}

/// Precision, recall, F1 and their seen/unseen variants; rare-predicted means any
/// non-`Majority` verdict. Precision (and F1) are `None` when nothing is predicted rare.
pub fn top_level_metrics(verdicts: &[Verdict], split: &SplitResult, corpus: &LabeledCorpus) -> Result<Metrics> {
    Ok(metrics_from_table(&confusion_table(verdicts, split, corpus)?))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Option<f64>,
    /// Sample standard deviation; `None` with fewer than two values.
    pub sd: Option<f64>,
    pub n: usize,
}

pub fn summarize(values: impl IntoIterator<Item = f64>) -> Summary {
    let v: Vec<f64> = values.into_iter().collect();
    let n = v.len();
    if n == 0 {
        return Summary::default();
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let sd = (n > 1).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
    Summary {
        mean: Some(mean),
        sd,
        n,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub seed: u64,
    pub metrics: Option<Metrics>,
    pub confusion: Option<ConfusionTable<usize>>,
    pub error: Option<String>,
    /// The failure was a numerical abort rather than bad input.
    #[serde(default)]
    pub numerical: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub runs: Vec<RunOutcome>,
    pub summary: BTreeMap<String, Summary>,
    /// False when any repetition failed.
    pub complete: bool,
    /// Effective configuration, echoed for provenance.
    pub config: serde_json::Value,
}

impl MetricReport {
    pub fn from_runs(runs: Vec<RunOutcome>, config: serde_json::Value) -> Self {
        let complete = runs.iter().all(|r| r.error.is_none());
        let summary = METRIC_NAMES
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let vals = runs.iter().filter_map(|r| r.metrics.and_then(|m| m.values()[i]));
                (name.to_string(), summarize(vals))
            })
            .collect();
        MetricReport {
            runs,
            summary,
            complete,
            config,
        }
    }

    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.summary.get(metric).and_then(|s| s.mean)
    }

    /// Fixed-width table: one row per metric, mean ± sd then per-seed values.
    pub fn to_text(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| format!("{:>8}", "-"), |x| format!("{x:>8.3}"));
        let mut s = String::new();
        let _ = write!(s, "{:<16}{:>8}{:>8}", "metric", "mean", "sd");
        for r in &self.runs {
            let _ = write!(s, "{:>8}", format!("s{}", r.seed));
        }
        s.push('\n');
        for (i, name) in METRIC_NAMES.iter().enumerate() {
            let sum = self.summary.get(*name).copied().unwrap_or_default();
            let _ = write!(s, "{name:<16}{}{}", cell(sum.mean), cell(sum.sd));
            for r in &self.runs {
                s.push_str(&cell(r.metrics.and_then(|m| m.values()[i])));
            }
            s.push('\n');
        }
        if !self.complete {
            for r in self.runs.iter().filter(|r| r.error.is_some()) {
                let _ = writeln!(s, "seed {} failed: {}", r.seed, r.error.as_deref().unwrap_or(""));
            }
        }
        s
    }
}

/// One repetition: split, train on the training rows, stream the test rows.
pub fn run_once(corpus: &LabeledCorpus, cfg: &ModelConfig, seed: u64) -> Result<(Metrics, ConfusionTable<usize>)> {
    let split = split_protocol(corpus, seed, SEEN_FRACTION, TRAIN_FRACTION)?;
    let model = train_model(corpus, &split.train, cfg)?;
    let recognizer = Recognizer::new(model.document)?;
    let featurizer = &recognizer.document().representation;
    let test = split.test();
    let docs: Vec<_> = test.iter().map(|&i| &corpus.docs()[i]).collect();
    let x = featurizer.transform_docs(&docs)?.values;
    let (decisions, _) = recognizer.predict_stream(x.rows().into_iter().map(|r| Ok(r.to_vec())))?;
    let verdicts: Vec<Verdict> = decisions
        .iter()
        .map(|d| match d.verdict {
            Verdict::Known(k) => Verdict::Known(model.subclass_ids[k - 1]),
            v => v,
        })
        .collect();
    let table = confusion_table(&verdicts, &split, corpus)?;
    Ok((metrics_from_table(&table), table))
}

/// Repeats [`run_once`] for seeds `base_seed..base_seed + repetitions`.
pub fn run_experiment(corpus: &LabeledCorpus, cfg: &ModelConfig, repetitions: usize, base_seed: u64) -> Result<MetricReport> {
    if repetitions == 0 {
        return Err(Error::InvalidArgument("repetitions must be >= 1".into()));
    }
    let runs = (0..repetitions as u64)
        .map(|i| {
            let seed = base_seed.wrapping_add(i);
            match run_once(corpus, cfg, seed) {
                Ok((m, t)) => RunOutcome {
                    seed,
                    metrics: Some(m),
                    confusion: Some(t),
                    error: None,
                    numerical: false,
                },
                Err(e) => RunOutcome {
                    seed,
                    metrics: None,
                    confusion: None,
                    error: Some(e.to_string()),
                    numerical: e.is_numerical(),
                },
            }
        })
        .collect();
    let config = serde_json::json!({
        "model": cfg,
        "repetitions": repetitions,
        "base_seed": base_seed,
        "seen_fraction": SEEN_FRACTION,
        "train_fraction": TRAIN_FRACTION,
    });
    Ok(MetricReport::from_runs(runs, config))
}

/// Sum of two tables cell by cell (e.g. to average over repetitions).
pub fn add_tables<C: Copy + Add<Output = C> + Zero>(a: &ConfusionTable<C>, b: &ConfusionTable<C>) -> ConfusionTable<C> {
    let seen = |x: &SeenCounts<C>, y: &SeenCounts<C>| SeenCounts {
        correct: x.correct + y.correct,
        wrong_subclass: x.wrong_subclass + y.wrong_subclass,
        emerging: x.emerging + y.emerging,
        majority: x.majority + y.majority,
    };
    let other = |x: &OtherCounts<C>, y: &OtherCounts<C>| OtherCounts {
        known: x.known + y.known,
        emerging: x.emerging + y.emerging,
        majority: x.majority + y.majority,
    };
    let zero = SeenCounts {
        correct: C::zero(),
        wrong_subclass: C::zero(),
        emerging: C::zero(),
        majority: C::zero(),
    };
    let mut by = a.seen_by_subclass.clone();
    for (k, v) in &b.seen_by_subclass {
        let cur = by.get(k).copied().unwrap_or(zero);
        by.insert(*k, seen(&cur, v));
    }
    ConfusionTable {
        seen: seen(&a.seen, &b.seen),
        unseen: other(&a.unseen, &b.unseen),
        majority: other(&a.majority, &b.majority),
        seen_by_subclass: by,
    }
}
