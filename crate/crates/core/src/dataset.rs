//! Labeled corpora, the seen/unseen train/test protocol, and synthetic data.
//!
//! A corpus holds documents labeled rare or majority; every rare document
//! belongs to one of `K` known subclasses, numbered `1..=K` in order of first
//! appearance. Documents may carry pre-computed numeric features in place of
//! (or next to) their text, which is how synthetic corpora are represented.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Rare,
    Majority,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Doc {
    pub text: String,
    pub label: Label,
    /// Subclass id in `1..=K`; present iff `label == Rare`.
    pub subclass: Option<usize>,
    pub features: Option<Vec<f64>>,
}

impl Doc {
    pub fn is_rare(&self) -> bool {
        self.label == Label::Rare
    }
}

#[derive(Clone, Debug)]
pub struct LabeledCorpus {
    id: String,
    docs: Vec<Doc>,
    subclass_names: Vec<String>,
}

impl LabeledCorpus {
    /// Builds a corpus and checks its invariants.
    pub fn new(id: impl Into<String>, docs: Vec<Doc>, subclass_names: Vec<String>) -> Result<Self> {
        let k = subclass_names.len();
        if docs.is_empty() {
            return Err(Error::Corpus("empty corpus".into()));
        }
        if k == 0 {
            return Err(Error::Corpus("corpus has no rare subclass".into()));
        }
        let mut sizes = vec![0usize; k];
        let mut dim = None;
        for (i, doc) in docs.iter().enumerate() {
            match (doc.label, doc.subclass) {
                (Label::Rare, Some(s)) if (1..=k).contains(&s) => sizes[s - 1] += 1,
                (Label::Rare, Some(s)) => {
                    return Err(Error::Corpus(format!("doc {i}: subclass {s} outside 1..={k}")))
                }
                (Label::Rare, None) => {
                    return Err(Error::Corpus(format!("doc {i}: rare doc missing subclass")))
                }
                (Label::Majority, Some(_)) => {
                    return Err(Error::Corpus(format!("doc {i}: majority doc carries subclass")))
                }
                (Label::Majority, None) => {}
            }
            let d = doc.features.as_ref().map(Vec::len);
            if i == 0 {
                dim = Some(d);
            } else if dim != Some(d) {
                return Err(Error::Corpus(format!(
                    "doc {i}: feature length {d:?} differs from doc 0 ({:?})",
                    dim.flatten()
                )));
            }
        }
        if let Some(empty) = sizes.iter().position(|&c| c == 0) {
            return Err(Error::Corpus(format!(
                "subclass {} ({}) has no documents",
                empty + 1,
                subclass_names[empty]
            )));
        }
        Ok(LabeledCorpus {
            id: id.into(),
            docs,
            subclass_names,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn docs(&self) -> &[Doc] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Number of known rare subclasses.
    pub fn k(&self) -> usize {
        self.subclass_names.len()
    }

    pub fn subclass_names(&self) -> &[String] {
        &self.subclass_names
    }

    /// Number of rare documents.
    pub fn n_rare(&self) -> usize {
        self.docs.iter().filter(|d| d.is_rare()).count()
    }

    pub fn subclass_size(&self, subclass: usize) -> usize {
        self.docs.iter().filter(|d| d.subclass == Some(subclass)).count()
    }

    /// Feature dimension when documents carry numeric features.
    pub fn feature_dim(&self) -> Option<usize> {
        self.docs[0].features.as_ref().map(Vec::len)
    }

    /// Writes the corpus as jsonl, including `features` when present.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for doc in &self.docs {
            let rec = Record {
                text: Some(doc.text.clone()),
                label: doc.label,
                subclass: doc.subclass.map(|s| self.subclass_names[s - 1].clone()),
                features: doc.features.clone(),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    Csv,
}

impl CorpusFormat {
    /// Picks the format from the file extension; anything but `.csv` is jsonl.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => CorpusFormat::Csv,
            _ => CorpusFormat::Jsonl,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    subclass: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<Vec<f64>>,
}

/// Reads a labeled corpus. Subclass names map to ids `1..=K` in first-appearance order.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<LabeledCorpus> {
    let file = File::open(path)?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let mut records = Vec::new();
    match format {
        CorpusFormat::Jsonl => {
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: Record =
                    serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e.to_string()))?;
                records.push((i + 1, rec));
            }
        }
        CorpusFormat::Csv => {
            let mut reader = csv::Reader::from_reader(file);
            let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
            let col = |name: &str| headers.iter().position(|h| h.trim() == name);
            let (Some(text_col), Some(label_col)) = (col("text"), col("label")) else {
                return Err(parse_err(1, "header must contain text,label,subclass".into()));
            };
            let subclass_col = col("subclass");
            for (i, row) in reader.records().enumerate() {
                let line = i + 2;
                let row = row.map_err(|e| parse_err(line, e.to_string()))?;
                let label = match row.get(label_col).map(str::trim) {
                    Some("rare") => Label::Rare,
                    Some("majority") => Label::Majority,
                    other => return Err(parse_err(line, format!("bad label {other:?}"))),
                };
                let subclass = subclass_col
                    .and_then(|c| row.get(c))
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from);
                records.push((
                    line,
                    Record {
                        text: row.get(text_col).map(String::from),
                        label,
                        subclass,
                        features: None,
                    },
                ));
            }
        }
    }
    if records.is_empty() {
        return Err(Error::Corpus(format!("{}: empty corpus", path.display())));
    }

    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut names = Vec::new();
    let mut docs = Vec::with_capacity(records.len());
    for (line, rec) in records {
        let subclass = match (rec.label, rec.subclass) {
            (Label::Rare, Some(name)) => Some(*ids.entry(name.clone()).or_insert_with(|| {
                names.push(name);
                names.len()
            })),
            (Label::Rare, None) => return Err(parse_err(line, "rare doc missing subclass".into())),
            (Label::Majority, Some(_)) => {
                return Err(parse_err(line, "majority doc carries subclass".into()))
            }
            (Label::Majority, None) => None,
        };
        if rec.text.is_none() && rec.features.is_none() {
            return Err(parse_err(line, "record has neither text nor features".into()));
        }
        docs.push(Doc {
            text: rec.text.unwrap_or_default(),
            label: rec.label,
            subclass,
            features: rec.features,
        });
    }
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    LabeledCorpus::new(id, docs, names)
}

/// Index sets of one train/test construction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitResult {
    pub train: Vec<usize>,
    pub test_seen: Vec<usize>,
    pub test_unseen: Vec<usize>,
    pub test_majority: Vec<usize>,
    pub seen_subclasses: BTreeSet<usize>,
    pub unseen_subclasses: BTreeSet<usize>,
    pub seed: u64,
}

impl SplitResult {
    /// All test indices: seen, unseen, then majority.
    pub fn test(&self) -> Vec<usize> {
        let mut all = self.test_seen.clone();
        all.extend(&self.test_unseen);
        all.extend(&self.test_majority);
        all
    }
}

/// `floor(fraction * n)`, tolerant of representation error in the fraction.
pub(crate) fn floor_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) + 1e-9).floor() as usize
}

/// Randomly marks `floor(seen_fraction * K)` subclasses as seen (at least one
/// seen and one unseen) and splits seen-subclass and majority documents
/// `train_fraction` / rest, per subclass.
pub fn split_protocol(
    corpus: &LabeledCorpus,
    seed: u64,
    seen_fraction: f64,
    train_fraction: f64,
) -> Result<SplitResult> {
    let k = corpus.k();
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 subclasses to hold one out, corpus has {k}"
        )));
    }
    for (name, f) in [("seen_fraction", seen_fraction), ("train_fraction", train_fraction)] {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::InvalidArgument(format!("{name} must be in (0, 1), got {f}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let n_seen = floor_count(seen_fraction, k).clamp(1, k - 1);
    let mut order: Vec<usize> = (1..=k).collect();
    order.shuffle(&mut rng);
    let seen_subclasses: BTreeSet<usize> = order[..n_seen].iter().copied().collect();
    let unseen_subclasses: BTreeSet<usize> = order[n_seen..].iter().copied().collect();

    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); k + 1];
    for (i, doc) in corpus.docs().iter().enumerate() {
        groups[doc.subclass.unwrap_or(0)].push(i);
    }

    let mut train = Vec::new();
    let mut test_seen = Vec::new();
    let mut test_unseen = Vec::new();
    let mut test_majority = Vec::new();
    for (s, mut members) in groups.into_iter().enumerate() {
        if s != 0 && unseen_subclasses.contains(&s) {
            test_unseen.extend(members);
            continue;
        }
        members.shuffle(&mut rng);
        let cut = floor_count(train_fraction, members.len());
        train.extend_from_slice(&members[..cut]);
        if s == 0 {
            test_majority.extend_from_slice(&members[cut..]);
        } else {
            test_seen.extend_from_slice(&members[cut..]);
        }
    }
    for set in [&mut train, &mut test_seen, &mut test_unseen, &mut test_majority] {
        set.sort_unstable();
    }
    Ok(SplitResult {
        train,
        test_seen,
        test_unseen,
        test_majority,
        seen_subclasses,
        unseen_subclasses,
        seed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub d: usize,
    pub k_total: usize,
    pub docs_per_subclass: usize,
    pub majority_docs: usize,
    pub subclass_separation: f64,
    pub noise_scale: f64,
    #[serde(default)]
    pub collinearity_groups: Vec<Vec<usize>>,
    pub seed: u64,
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.d < 2 {
            return bad(format!("d must be >= 2, got {}", self.d));
        }
        if self.k_total < 2 {
            return bad(format!("k_total must be >= 2, got {}", self.k_total));
        }
        if self.docs_per_subclass < 4 {
            return bad(format!("docs_per_subclass must be >= 4, got {}", self.docs_per_subclass));
        }
        if !(self.subclass_separation >= 0.0) {
            return bad("subclass_separation must be >= 0".into());
        }
        if !(self.noise_scale > 0.0) {
            return bad("noise_scale must be > 0".into());
        }
        for g in &self.collinearity_groups {
            if let Some(&c) = g.iter().find(|&&c| c >= self.d) {
                return bad(format!("collinearity column {c} out of range for d={}", self.d));
            }
        }
        Ok(())
    }
}

/// Unit direction of subclass `k` (1-based).
///
/// Axis 0 is shared by every subclass; each subclass adds its own component on
/// one of the remaining `d - 1` axes. Once the axes are used up they are reused
/// with a different coefficient, so centers stay distinct and all rare centers
/// keep a positive component on axis 0 (rare vs majority stays linearly separable).
pub(crate) fn subclass_direction(k: usize, d: usize) -> Vec<f64> {
    const COEFS: [f64; 8] = [1.0, -1.0, 0.5, -0.5, 2.0, -2.0, 0.25, -0.25];
    let slots = d - 1;
    let axis = 1 + (k - 1) % slots;
    let wrap = (k - 1) / slots;
    let coef = COEFS[wrap % COEFS.len()] * 3f64.powi((wrap / COEFS.len()) as i32);
    let mut v = vec![0.0; d];
    v[0] = 1.0;
    v[axis] = coef;
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// Generates a corpus of numeric documents: subclass `k` is drawn around
/// `separation * direction(k)`, majority documents around the origin, all with
/// isotropic Gaussian noise. Collinearity groups overwrite every column of a
/// group after the first with the first column plus a little noise.
pub fn gen_synthetic(cfg: &SyntheticConfig) -> Result<LabeledCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_scale).expect("noise_scale > 0");
    let jitter = Normal::new(0.0, 0.05 * cfg.noise_scale).expect("noise_scale > 0");

    let sample = |center: &[f64], rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mut x: Vec<f64> = center.iter().map(|c| c + noise.sample(rng)).collect();
        for group in &cfg.collinearity_groups {
            if let Some((&lead, rest)) = group.split_first() {
                for &c in rest {
                    x[c] = x[lead] + jitter.sample(rng);
                }
            }
        }
        x
    };

    let mut docs = Vec::with_capacity(cfg.k_total * cfg.docs_per_subclass + cfg.majority_docs);
    for k in 1..=cfg.k_total {
        let center: Vec<f64> = subclass_direction(k, cfg.d)
            .into_iter()
            .map(|v| v * cfg.subclass_separation)
            .collect();
        for _ in 0..cfg.docs_per_subclass {
            docs.push(Doc {
                text: String::new(),
                label: Label::Rare,
                subclass: Some(k),
                features: Some(sample(&center, &mut rng)),
            });
        }
    }
    let origin = vec![0.0; cfg.d];
    for _ in 0..cfg.majority_docs {
        docs.push(Doc {
            text: String::new(),
            label: Label::Majority,
            subclass: None,
            features: Some(sample(&origin, &mut rng)),
        });
    }
    let names = (1..=cfg.k_total).map(|k| format!("s{k}")).collect();
    LabeledCorpus::new(format!("synthetic-{}", cfg.seed), docs, names)
}
