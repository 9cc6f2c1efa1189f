//! Text to numeric features: TF-IDF over a frequency-capped vocabulary and an
//! optional PCA projection fitted on the training rows.

use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::Doc;
use crate::error::{Error, Result};

const DOC_VERSION: u32 = 1;

/// Lowercased alphabetic runs of at least two characters.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphabetic())
        .filter(|t| t.chars().nth(1).is_some())
        .map(str::to_lowercase)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "VocabularyDoc", into = "VocabularyDoc")]
pub struct Vocabulary {
    terms: Vec<String>,
    df: Vec<usize>,
    n_docs_fitted: usize,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabularyDoc {
    version: u32,
    terms: Vec<String>,
    df: Vec<usize>,
    n_docs_fitted: usize,
}

impl TryFrom<VocabularyDoc> for Vocabulary {
    type Error = String;

    fn try_from(doc: VocabularyDoc) -> std::result::Result<Self, String> {
        if doc.version != DOC_VERSION {
            return Err(format!("unsupported vocabulary version {}", doc.version));
        }
        Vocabulary::from_parts(doc.terms, doc.df, doc.n_docs_fitted).map_err(|e| e.to_string())
    }
}

impl From<Vocabulary> for VocabularyDoc {
    fn from(v: Vocabulary) -> Self {
        VocabularyDoc {
            version: DOC_VERSION,
            terms: v.terms,
            df: v.df,
            n_docs_fitted: v.n_docs_fitted,
        }
    }
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.terms == other.terms && self.df == other.df && self.n_docs_fitted == other.n_docs_fitted
    }
}

impl Hash for Vocabulary {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.terms.hash(state);
        self.df.hash(state);
        self.n_docs_fitted.hash(state);
    }
}

impl Vocabulary {
    pub fn from_parts(terms: Vec<String>, df: Vec<usize>, n_docs_fitted: usize) -> Result<Self> {
        if terms.len() != df.len() {
            return Err(Error::InvalidArgument(format!(
                "vocabulary has {} terms but {} df entries",
                terms.len(),
                df.len()
            )));
        }
        if let Some(bad) = df.iter().find(|&&f| f == 0 || f > n_docs_fitted) {
            return Err(Error::InvalidArgument(format!(
                "df {bad} outside 1..={n_docs_fitted}"
            )));
        }
        let index: HashMap<String, usize> =
            terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != terms.len() {
            return Err(Error::InvalidArgument("duplicate vocabulary term".into()));
        }
        Ok(Vocabulary {
            terms,
            df,
            n_docs_fitted,
            index,
        })
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn df(&self) -> &[usize] {
        &self.df
    }

    pub fn n_docs_fitted(&self) -> usize {
        self.n_docs_fitted
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn position(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    /// Smoothed inverse document frequency `ln((1 + n) / (1 + df))`.
    pub fn idf(&self, j: usize) -> f64 {
        ((1 + self.n_docs_fitted) as f64 / (1 + self.df[j]) as f64).ln()
    }

    /// Raw per-term counts of one document.
    pub fn counts(&self, text: &str) -> Vec<usize> {
        let mut c = vec![0; self.len()];
        for tok in tokenize(text) {
            if let Some(j) = self.position(&tok) {
                c[j] += 1;
            }
        }
        c
    }
}

/// Keeps the `top_n` most frequent terms of the given (training) documents,
/// ties broken lexicographically.
pub fn build_vocab<'a, I>(docs: I, top_n: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a str>,
{
    if top_n == 0 {
        return Err(Error::InvalidArgument("top_n must be >= 1".into()));
    }
    let mut freq: HashMap<String, (usize, usize)> = HashMap::new();
    let mut n_docs = 0;
    for text in docs {
        n_docs += 1;
        let mut seen = std::collections::HashSet::new();
        for tok in tokenize(text) {
            let entry = freq.entry(tok.clone()).or_default();
            entry.0 += 1;
            if seen.insert(tok) {
                entry.1 += 1;
            }
        }
    }
    if n_docs == 0 {
        return Err(Error::InvalidArgument("no training documents".into()));
    }
    if freq.is_empty() {
        return Err(Error::Corpus("empty effective vocabulary".into()));
    }
    let mut ranked: Vec<(String, usize, usize)> =
        freq.into_iter().map(|(t, (tf, df))| (t, tf, df)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(top_n);
    let (terms, df) = ranked.into_iter().map(|(t, _, df)| (t, df)).unzip();
    Vocabulary::from_parts(terms, df, n_docs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Tfidf,
    Pca,
    Raw,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub values: Array2<f64>,
    pub row_ids: Vec<usize>,
    pub representation: Representation,
}

impl FeatureMatrix {
    pub fn raw(values: Array2<f64>, row_ids: Vec<usize>) -> Self {
        FeatureMatrix {
            values,
            row_ids,
            representation: Representation::Raw,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

/// TF-IDF row for a single document, L2-normalized when non-zero.
pub fn tfidf_row(text: &str, vocab: &Vocabulary) -> Array1<f64> {
    let mut row: Array1<f64> = vocab
        .counts(text)
        .into_iter()
        .enumerate()
        .map(|(j, c)| c as f64 * vocab.idf(j))
        .collect();
    let norm = row.dot(&row).sqrt();
    if norm > 0.0 {
        row /= norm;
    }
    row
}

/// TF-IDF matrix of `texts`; the vocabulary is only read.
pub fn tfidf_transform<'a, I>(texts: I, vocab: &Vocabulary) -> FeatureMatrix
where
    I: IntoIterator<Item = &'a str>,
{
    let rows: Vec<Array1<f64>> = texts.into_iter().map(|t| tfidf_row(t, vocab)).collect();
    let mut values = Array2::zeros((rows.len(), vocab.len()));
    for (mut dst, src) in values.rows_mut().into_iter().zip(&rows) {
        dst.assign(src);
    }
    FeatureMatrix {
        values,
        row_ids: (0..rows.len()).collect(),
        representation: Representation::Tfidf,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PcaDoc", into = "PcaDoc")]
pub struct PcaProjection {
    pub mean: Array1<f64>,
    /// `rank x d`, rows orthonormal.
    pub components: Array2<f64>,
    pub explained_variance: Array1<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PcaDoc {
    version: u32,
    mean: Vec<f64>,
    components: Vec<Vec<f64>>,
    explained_variance: Vec<f64>,
}

impl From<PcaProjection> for PcaDoc {
    fn from(p: PcaProjection) -> Self {
        PcaDoc {
            version: DOC_VERSION,
            mean: p.mean.to_vec(),
            components: p.components.rows().into_iter().map(|r| r.to_vec()).collect(),
            explained_variance: p.explained_variance.to_vec(),
        }
    }
}

impl TryFrom<PcaDoc> for PcaProjection {
    type Error = String;

    fn try_from(doc: PcaDoc) -> std::result::Result<Self, String> {
        if doc.version != DOC_VERSION {
            return Err(format!("unsupported projection version {}", doc.version));
        }
        let d = doc.mean.len();
        let r = doc.components.len();
        if doc.explained_variance.len() != r {
            return Err(format!(
                "projection has {r} components but {} variances",
                doc.explained_variance.len()
            ));
        }
        if doc.components.iter().any(|c| c.len() != d) {
            return Err(format!("projection component length differs from mean length {d}"));
        }
        let flat: Vec<f64> = doc.components.into_iter().flatten().collect();
        Ok(PcaProjection {
            mean: Array1::from(doc.mean),
            components: Array2::from_shape_vec((r, d), flat).map_err(|e| e.to_string())?,
            explained_variance: Array1::from(doc.explained_variance),
        })
    }
}

#[derive(Clone, Debug)]
pub struct PcaFit {
    pub projection: PcaProjection,
    /// Set when the data had fewer than `rank` non-degenerate directions.
    pub truncated: bool,
}

/// Top-`rank` eigendirections of the sample covariance of `x`.
pub fn pca_fit(x: ArrayView2<f64>, rank: usize) -> Result<PcaFit> {
    let (n, d) = x.dim();
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument("PCA needs a non-empty matrix".into()));
    }
    if rank == 0 || rank > n.min(d) {
        return Err(Error::InvalidArgument(format!(
            "PCA rank {rank} must be in 1..={}",
            n.min(d)
        )));
    }
    let mean = x.mean_axis(Axis(0)).expect("n > 0");
    let centered = &x - &mean;
    let cov = centered.t().dot(&centered) / (n.saturating_sub(1).max(1)) as f64;
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[(i, j)]));

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top_index = order[0];
    let top = eig.eigenvalues[top_index].max(0.0);
    let floor = 1e-10 * top.max(1e-300);
    let kept: Vec<usize> = order
        .into_iter()
        .take(rank)
        .filter(|&i| eig.eigenvalues[i] > floor)
        .collect();
    let kept = if kept.is_empty() { vec![top_index] } else { kept };

    let mut components = Array2::zeros((kept.len(), d));
    let mut explained = Array1::zeros(kept.len());
    for (r, &i) in kept.iter().enumerate() {
        let v = eig.eigenvectors.column(i);
        // fix the sign so the largest-magnitude coordinate is positive
        let pivot = v.iter().copied().fold(0.0f64, |m, c| if c.abs() > m.abs() { c } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            components[(r, j)] = sign * v[j];
        }
        explained[r] = eig.eigenvalues[i].max(0.0);
    }
    Ok(PcaFit {
        truncated: kept.len() < rank,
        projection: PcaProjection {
            mean,
            components,
            explained_variance: explained,
        },
    })
}

impl PcaProjection {
    pub fn rank(&self) -> usize {
        self.components.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn project(&self, x: ArrayView2<f64>) -> Array2<f64> {
        (&x - &self.mean).dot(&self.components.t())
    }

    pub fn inverse(&self, z: ArrayView2<f64>) -> Array2<f64> {
        z.dot(&self.components) + &self.mean
    }
}

pub fn pca_transform(x: &FeatureMatrix, proj: &PcaProjection) -> Result<FeatureMatrix> {
    if x.dim() != proj.input_dim() {
        return Err(Error::Dimension {
            expected: proj.input_dim(),
            got: x.dim(),
        });
    }
    Ok(FeatureMatrix {
        values: proj.project(x.values.view()),
        row_ids: x.row_ids.clone(),
        representation: Representation::Pca,
    })
}

/// Which representation to fit, as chosen on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RepSpec {
    Tfidf { top_n: usize },
    Pca { top_n: usize, rank: usize },
    Raw,
}

pub const DEFAULT_TOP_N: usize = 1000;

impl std::str::FromStr for RepSpec {
    type Err = Error;

    /// `tfidf1k`, `tfidf:<n>`, `pca:<rank>` (over the 1k vocabulary) or `raw`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown representation {s:?}"));
        match s {
            "tfidf1k" | "tfidf" => Ok(RepSpec::Tfidf { top_n: DEFAULT_TOP_N }),
            "raw" => Ok(RepSpec::Raw),
            _ => {
                let (kind, n) = s.split_once(':').ok_or_else(bad)?;
                let n: usize = n.parse().map_err(|_| bad())?;
                if n == 0 {
                    return Err(bad());
                }
                match kind {
                    "tfidf" => Ok(RepSpec::Tfidf { top_n: n }),
                    "pca" => Ok(RepSpec::Pca {
                        top_n: DEFAULT_TOP_N,
                        rank: n,
                    }),
                    _ => Err(bad()),
                }
            }
        }
    }
}

impl std::fmt::Display for RepSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RepSpec::Tfidf { top_n: DEFAULT_TOP_N } => write!(f, "tfidf1k"),
            RepSpec::Tfidf { top_n } => write!(f, "tfidf:{top_n}"),
            RepSpec::Pca { rank, .. } => write!(f, "pca:{rank}"),
            RepSpec::Raw => write!(f, "raw"),
        }
    }
}

/// A fitted representation: everything needed to featurize unseen documents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Featurizer {
    Tfidf { vocab: Vocabulary },
    Pca { vocab: Vocabulary, projection: PcaProjection },
    Raw { dim: usize },
}

fn raw_row(features: Option<&[f64]>, dim: usize) -> Result<Array1<f64>> {
    let f = features.ok_or_else(|| Error::InvalidArgument("raw representation needs a features array".into()))?;
    if f.len() != dim {
        return Err(Error::Dimension {
            expected: dim,
            got: f.len(),
        });
    }
    Ok(Array1::from(f.to_vec()))
}

impl Featurizer {
    /// Fits on training documents only.
    pub fn fit(docs: &[&Doc], spec: RepSpec) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::InvalidArgument("no training documents".into()));
        }
        match spec {
            RepSpec::Raw => {
                let dim = docs[0]
                    .features
                    .as_ref()
                    .map(Vec::len)
                    .ok_or_else(|| Error::Corpus("raw representation needs feature vectors".into()))?;
                Ok(Featurizer::Raw { dim })
            }
            RepSpec::Tfidf { top_n } => Ok(Featurizer::Tfidf {
                vocab: build_vocab(docs.iter().map(|d| d.text.as_str()), top_n)?,
            }),
            RepSpec::Pca { top_n, rank } => {
                let vocab = build_vocab(docs.iter().map(|d| d.text.as_str()), top_n)?;
                let x = tfidf_transform(docs.iter().map(|d| d.text.as_str()), &vocab);
                let rank = rank.min(x.n_rows()).min(x.dim());
                let fit = pca_fit(x.values.view(), rank)?;
                Ok(Featurizer::Pca {
                    vocab,
                    projection: fit.projection,
                })
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Featurizer::Tfidf { vocab } => vocab.len(),
            Featurizer::Pca { projection, .. } => projection.rank(),
            Featurizer::Raw { dim } => *dim,
        }
    }

    pub fn representation(&self) -> Representation {
        match self {
            Featurizer::Tfidf { .. } => Representation::Tfidf,
            Featurizer::Pca { .. } => Representation::Pca,
            Featurizer::Raw { .. } => Representation::Raw,
        }
    }

    /// Features of one record given its text and/or precomputed feature vector.
    /// A feature vector of the final dimension is used as-is for any representation.
    pub fn transform_one(&self, text: Option<&str>, features: Option<&[f64]>) -> Result<Array1<f64>> {
        if let (Some(f), false) = (features, matches!(self, Featurizer::Raw { .. })) {
            if text.is_none() {
                return raw_row(Some(f), self.dim());
            }
        }
        let missing = || Error::InvalidArgument("record has no text".into());
        match self {
            Featurizer::Raw { dim } => raw_row(features, *dim),
            Featurizer::Tfidf { vocab } => Ok(tfidf_row(text.ok_or_else(missing)?, vocab)),
            Featurizer::Pca { vocab, projection } => {
                let row = tfidf_row(text.ok_or_else(missing)?, vocab);
                let z = projection.project(row.view().insert_axis(Axis(0)));
                Ok(z.row(0).to_owned())
            }
        }
    }

    pub fn transform_docs(&self, docs: &[&Doc]) -> Result<FeatureMatrix> {
        let mut values = Array2::zeros((docs.len(), self.dim()));
        for (i, d) in docs.iter().enumerate() {
            let row = match self {
                Featurizer::Raw { dim } => raw_row(d.features.as_deref(), *dim)?,
                _ => self.transform_one(Some(&d.text), None)?,
            };
            values.row_mut(i).assign(&row);
        }
        Ok(FeatureMatrix {
            values,
            row_ids: (0..docs.len()).collect(),
            representation: self.representation(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::hash_map::DefaultHasher;

    #[test]
    fn tokenizer_rules() {
        let toks: Vec<String> = tokenize("A bb, CC3dd é x Ünï").collect();
        assert_eq!(toks, ["bb", "cc", "dd", "ünï"]);
    }

    #[test]
    fn vocab_top_n_with_ties() {
        let v = build_vocab(["a bb bb cc", "cc dd"], 2).unwrap();
        assert_eq!(v.terms(), ["bb", "cc"]);
        assert_eq!(v.df(), [1, 2]);
        assert_eq!(v.n_docs_fitted(), 2);
    }

    #[test]
    fn vocab_cap_exceeds_supply() {
        let texts: Vec<String> = (0..600)
            .map(|i| {
                let w: String = format!("{i:03}")
                    .bytes()
                    .map(|b| (b'a' + (b - b'0')) as char)
                    .collect();
                format!("zz{w}")
            })
            .collect();
        let v = build_vocab(texts.iter().map(String::as_str), 1000).unwrap();
        assert_eq!(v.len(), 600);
    }

    #[test]
    fn vocab_errors() {
        assert!(build_vocab(["a b c"], 10).is_err());
        assert!(build_vocab(["aa"], 0).is_err());
        assert!(build_vocab(Vec::<&str>::new(), 3).is_err());
    }

    #[test]
    fn tfidf_degenerate_rows() {
        let v = build_vocab(["flood river", "fire smoke"], 10).unwrap();
        let m = tfidf_transform(["nothing in common"], &v);
        assert!(m.values.iter().all(|&x| x == 0.0));
        // every term in every fitted doc: idf = ln(2/2) = 0
        let v = build_vocab(["xx xx yy"], 10).unwrap();
        let m = tfidf_transform(["xx xx yy"], &v);
        assert!(m.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn tfidf_weighting() {
        let v = build_vocab(["aa bb", "aa", "cc"], 10).unwrap();
        let m = tfidf_transform(["aa aa bb"], &v);
        let ia = (4.0f64 / 3.0).ln();
        let ib = (4.0f64 / 2.0).ln();
        let raw = [2.0 * ia, ib];
        let norm = (raw[0] * raw[0] + raw[1] * raw[1]).sqrt();
        let a = v.position("aa").unwrap();
        let b = v.position("bb").unwrap();
        assert!((m.values[(0, a)] - raw[0] / norm).abs() < 1e-12);
        assert!((m.values[(0, b)] - raw[1] / norm).abs() < 1e-12);
    }

    fn random_corpus(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
        const WORDS: [&str; 12] = [
            "flood", "fire", "storm", "stock", "fraud", "river", "smoke", "quake", "market",
            "court", "snow", "wind",
        ];
        (0..n)
            .map(|_| {
                let len = rng.random_range(0..8);
                (0..len)
                    .map(|_| WORDS[rng.random_range(0..WORDS.len())])
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect()
    }

    #[test]
    fn tfidf_rows_unit_or_zero_and_vocab_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let train = random_corpus(&mut rng, 20);
            let test = random_corpus(&mut rng, 20);
            let Ok(v) = build_vocab(train.iter().map(String::as_str), 8) else {
                continue;
            };
            let hash = |v: &Vocabulary| {
                let mut h = DefaultHasher::new();
                v.hash(&mut h);
                h.finish()
            };
            let before = hash(&v);
            let m = tfidf_transform(test.iter().map(String::as_str), &v);
            assert_eq!(hash(&v), before);
            for row in m.values.rows() {
                let norm = row.dot(&row).sqrt();
                assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn vocab_terms_come_from_train(seed in 0u64..1000, top in 1usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let train = random_corpus(&mut rng, 10);
            if let Ok(v) = build_vocab(train.iter().map(String::as_str), top) {
                prop_assert!(v.len() <= top);
                for t in v.terms() {
                    prop_assert!(train.iter().any(|doc| tokenize(doc).any(|tok| &tok == t)));
                }
            }
        }
    }

    #[test]
    fn vocabulary_json_round_trip() {
        let v = build_vocab(["aa bb", "bb cc"], 5).unwrap();
        let s = serde_json::to_string(&v).unwrap();
        assert!(s.contains("\"version\":1"));
        let back: Vocabulary = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.position("cc"), v.position("cc"));
        let bad = s.replace("\"version\":1", "\"version\":2");
        assert!(serde_json::from_str::<Vocabulary>(&bad).is_err());
    }

    #[test]
    fn pca_axis_aligned() {
        let x = array![[-2.0, 0.0], [-1.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        let fit = pca_fit(x.view(), 1).unwrap();
        let c = &fit.projection.components;
        assert!((c[(0, 0)].abs() - 1.0).abs() < 1e-12);
        assert!(c[(0, 1)].abs() < 1e-12);
        let sample_var = (4.0 + 1.0 + 1.0 + 4.0) / 3.0;
        assert!((fit.projection.explained_variance[0] - sample_var).abs() < 1e-12);
        assert!(!fit.truncated);
    }

    #[test]
    fn pca_full_rank_round_trip_and_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let (n, d) = (rng.random_range(6..30), rng.random_range(2..6));
            let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-3.0..3.0));
            let fit = pca_fit(x.view(), d).unwrap();
            let p = &fit.projection;
            let back = p.inverse(p.project(x.view()).view());
            assert!((&back - &x).iter().all(|e| e.abs() < 1e-6));
            let cct = p.components.dot(&p.components.t());
            for i in 0..p.rank() {
                for j in 0..p.rank() {
                    let target = if i == j { 1.0 } else { 0.0 };
                    assert!((cct[(i, j)] - target).abs() < 1e-8);
                }
            }
            let ev = &p.explained_variance;
            assert!(ev.windows(2).into_iter().all(|w| w[0] >= w[1]));
            let mean = x.mean_axis(Axis(0)).unwrap();
            let total: f64 = (&x - &mean).iter().map(|v| v * v).sum::<f64>() / (n - 1) as f64;
            assert!(ev.sum() <= total * (1.0 + 1e-12));
        }
    }

    #[test]
    fn pca_scores_are_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((200, 6), |(_, j)| rng.random_range(-1.0..1.0) * (j + 1) as f64);
        let mut x = x;
        for i in 0..200 {
            x[(i, 1)] += 0.8 * x[(i, 0)];
        }
        let fit = pca_fit(x.view(), 6).unwrap();
        let z = fit.projection.project(x.view());
        let g = z.t().dot(&z);
        let scale = (0..6).map(|i| g[(i, i)]).fold(0.0f64, f64::max);
        for i in 0..6 {
            for j in 0..6 {
                if i != j {
                    assert!(g[(i, j)].abs() < 1e-6 * scale);
                }
            }
        }
    }

    #[test]
    fn pca_rank_deficient_is_flagged() {
        let x = array![[1.0, 2.0, 0.0], [2.0, 4.0, 0.0], [3.0, 6.0, 0.0], [4.0, 8.0, 0.0]];
        let fit = pca_fit(x.view(), 3).unwrap();
        assert!(fit.truncated);
        assert_eq!(fit.projection.rank(), 1);
        assert!(pca_fit(x.view(), 5).is_err());
    }

    #[test]
    fn pca_json_round_trip() {
        let x = array![[1.0, 2.0], [2.0, 1.0], [4.0, 0.5]];
        let p = pca_fit(x.view(), 2).unwrap().projection;
        let s = serde_json::to_string(&p).unwrap();
        let back: PcaProjection = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }
}
