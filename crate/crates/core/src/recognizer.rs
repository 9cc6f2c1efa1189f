//! Decision flow over a stream: the general classifier filters out majority
//! instances, survivors are routed to the best accepting subclass or flagged
//! as an emerging subclass. Also the persisted model document.

use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::featurize::Featurizer;
use crate::objective::ModelParams;
use crate::rejection::RejectionThresholds;
use crate::scalar::Scalar;

pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Majority,
    /// 1-based subclass id.
    Known(usize),
    Emerging,
}

impl Verdict {
    pub fn is_rare(self) -> bool {
        self != Verdict::Majority
    }

    pub fn name(self) -> &'static str {
        match self {
            Verdict::Majority => "Majority",
            Verdict::Known(_) => "Known",
            Verdict::Emerging => "Emerging",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision<T> {
    pub verdict: Verdict,
    pub gc_score: T,
    /// Absent exactly when the verdict is `Majority`.
    pub sc_scores: Option<Vec<T>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument<T> {
    pub version: u32,
    pub d: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub params: ModelParams<T>,
    pub thresholds: RejectionThresholds<T>,
    pub representation: Featurizer,
    pub subclass_names: Vec<String>,
}

impl<T: Scalar> ModelDocument<T> {
    pub fn new(
        params: ModelParams<T>,
        thresholds: RejectionThresholds<T>,
        representation: Featurizer,
        subclass_names: Vec<String>,
    ) -> Result<Self> {
        let doc = ModelDocument {
            version: MODEL_VERSION,
            d: params.dim(),
            k: params.k(),
            params,
            thresholds,
            representation,
            subclass_names,
        };
        doc.check()?;
        Ok(doc)
    }

    /// Mutual consistency of all declared sizes.
    pub fn check(&self) -> Result<()> {
        if self.version != MODEL_VERSION {
            return Err(Error::Version(self.version));
        }
        let mismatch = |a: &str, av: usize, b: &str, bv: usize| {
            Err(Error::Document(format!("inconsistent sizes: {a} is {av} but {b} has {bv}")))
        };
        let p = &self.params;
        let (d, k) = (self.d, self.k);
        if p.w0.len() != d {
            return mismatch("d", d, "params.w0", p.w0.len());
        }
        if p.w.ncols() != d {
            return mismatch("d", d, "params.w columns", p.w.ncols());
        }
        if self.representation.dim() != d {
            return mismatch("d", d, "representation", self.representation.dim());
        }
        if p.w.nrows() != k {
            return mismatch("K", k, "params.w rows", p.w.nrows());
        }
        if p.b.len() != k {
            return mismatch("K", k, "params.b", p.b.len());
        }
        if self.thresholds.t.len() != k {
            return mismatch("K", k, "thresholds", self.thresholds.t.len());
        }
        if self.subclass_names.len() != k {
            return mismatch("K", k, "subclass_names", self.subclass_names.len());
        }
        self.thresholds.validate()?;
        if !p.is_finite() {
            return Err(Error::Document("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| Error::Document(format!("corrupt document: {e}")))?;
        match value.get("version").and_then(Value::as_u64) {
            Some(v) if v == MODEL_VERSION as u64 => {}
            Some(v) => return Err(Error::Version(v.min(u32::MAX as u64) as u32)),
            None => return Err(Error::Document("corrupt document: missing version".into())),
        }
        let doc: Self =
            serde_json::from_value(value).map_err(|e| Error::Document(format!("corrupt document: {e}")))?;
        doc.check()?;
        Ok(doc)
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Writes `bytes` to `path` via a temporary file in the same directory, so a
/// failure never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamStats {
    pub majority: usize,
    /// Per subclass, index `k - 1`.
    pub known: Vec<usize>,
    pub emerging: usize,
    pub sc_evaluations: usize,
}

impl StreamStats {
    pub fn total(&self) -> usize {
        self.majority + self.known.iter().sum::<usize>() + self.emerging
    }
}

/// A loaded model with an instrumented count of specialized-classifier evaluations.
#[derive(Debug)]
pub struct Recognizer<T> {
    doc: ModelDocument<T>,
    sc_evaluations: AtomicUsize,
}

impl<T: Scalar> Recognizer<T> {
    pub fn new(doc: ModelDocument<T>) -> Result<Self> {
        doc.check()?;
        Ok(Recognizer {
            doc,
            sc_evaluations: AtomicUsize::new(0),
        })
    }

    pub fn document(&self) -> &ModelDocument<T> {
        &self.doc
    }

    /// Total specialized-score evaluations performed through this recognizer.
    pub fn sc_evaluations(&self) -> usize {
        self.sc_evaluations.load(Ordering::Relaxed)
    }

    pub fn predict(&self, x: ArrayView1<T>) -> Result<Decision<T>> {
        self.decide(x, &self.sc_evaluations)
    }

    fn decide(&self, x: ArrayView1<T>, counter: &AtomicUsize) -> Result<Decision<T>> {
        let p = &self.doc.params;
        if x.len() != self.doc.d {
            return Err(Error::Dimension {
                expected: self.doc.d,
                got: x.len(),
            });
        }
        let gc_score = p.general_score(x);
        if gc_score <= T::zero() {
            return Ok(Decision {
                verdict: Verdict::Majority,
                gc_score,
                sc_scores: None,
            });
        }
        counter.fetch_add(1, Ordering::Relaxed);
        let sc = p.subclass_scores(x);
        let verdict = route(&sc, &self.doc.thresholds);
        Ok(Decision {
            verdict,
            gc_score,
            sc_scores: Some(sc.to_vec()),
        })
    }

    /// One decision per input, in order. A failing item aborts with its index.
    pub fn predict_stream<I, X>(&self, source: I) -> Result<(Vec<Decision<T>>, StreamStats)>
    where
        I: IntoIterator<Item = Result<X>>,
        X: AsRef<[T]>,
    {
        let local = AtomicUsize::new(0);
        let mut stats = StreamStats {
            known: vec![0; self.doc.k],
            ..StreamStats::default()
        };
        let mut out = Vec::new();
        for (index, item) in source.into_iter().enumerate() {
            let wrap = |e: Error| Error::StreamItem {
                index,
                source: Box::new(e),
            };
            let x = item.map_err(wrap)?;
            let d = self.decide(ArrayView1::from(x.as_ref()), &local).map_err(wrap)?;
            match d.verdict {
                Verdict::Majority => stats.majority += 1,
                Verdict::Known(k) => stats.known[k - 1] += 1,
                Verdict::Emerging => stats.emerging += 1,
            }
            out.push(d);
        }
        stats.sc_evaluations = local.load(Ordering::Relaxed);
        self.sc_evaluations.fetch_add(stats.sc_evaluations, Ordering::Relaxed);
        Ok((out, stats))
    }
}

/// Highest-scoring accepting subclass (ties to the smallest id), else `Emerging`.
pub fn route<T: Scalar>(sc_scores: &Array1<T>, thresholds: &RejectionThresholds<T>) -> Verdict {
    let mut best: Option<(usize, T)> = None;
    for (i, &s) in sc_scores.iter().enumerate() {
        let k = i + 1;
        if thresholds.accepts(k, s) && best.is_none_or(|(_, b)| s > b) {
            best = Some((k, s));
        }
    }
    best.map_or(Verdict::Emerging, |(k, _)| Verdict::Known(k))
}

/// One line of a prediction stream: text, a feature vector, or both.
#[derive(Clone, Debug, Deserialize)]
pub struct StreamRecord {
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub features: Option<Vec<f64>>,
}

/// Parses a jsonl stream; blank lines are skipped, bad lines reported by line number.
pub fn read_stream<R: BufRead>(reader: R) -> impl Iterator<Item = Result<StreamRecord>> {
    reader.lines().enumerate().filter_map(|(i, line)| match line {
        Err(e) => Some(Err(Error::Io(e))),
        Ok(l) if l.trim().is_empty() => None,
        Ok(l) => Some(serde_json::from_str::<StreamRecord>(&l).map_err(|e| Error::Parse {
            path: "<stream>".into(),
            line: i + 1,
            msg: e.to_string(),
        })),
    })
}

/// Output line `{index, verdict, subclass?, gc_score}`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DecisionRecord {
    pub index: usize,
    pub verdict: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub subclass: Option<String>,
    pub gc_score: f64,
}

impl DecisionRecord {
    pub fn new<T: Scalar>(index: usize, d: &Decision<T>, names: &[String]) -> Self {
        DecisionRecord {
            index,
            verdict: d.verdict.name().to_string(),
            subclass: match d.verdict {
                Verdict::Known(k) => Some(names[k - 1].clone()),
                _ => None,
            },
            gc_score: d.gc_score.as_f64(),
        }
    }
}
