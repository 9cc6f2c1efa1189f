//! End-to-end training: featurize the training documents, fit all classifiers,
//! calibrate rejection thresholds, and package the result as a model document.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledCorpus;
use crate::error::{Error, Result};
use crate::featurize::{Featurizer, RepSpec};
use crate::objective::{BoundData, GramCache, Hyperparams};
use crate::recognizer::ModelDocument;
use crate::rejection::{self, Method};
use crate::trainer::{fit_with_gram, TrainConfig, TrainedModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub rep: RepSpec,
    pub lambda0: f64,
    pub lambda_k: f64,
    pub mu: f64,
    pub train: TrainConfig,
    pub reject: Method,
    pub q: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            rep: RepSpec::Tfidf {
                top_n: crate::featurize::DEFAULT_TOP_N,
            },
            lambda0: 1.0,
            lambda_k: 1.0,
            mu: 1.0,
            train: TrainConfig::default(),
            reject: Method::EvtPot,
            q: rejection::DEFAULT_RISK,
        }
    }
}

impl ModelConfig {
    pub fn hyperparams(&self, k: usize) -> Hyperparams<f64> {
        Hyperparams {
            lambda0: self.lambda0,
            lambda_k: vec![self.lambda_k; k],
            mu: self.mu,
        }
    }
}

/// A trained model together with the corpus subclass id behind each model subclass.
#[derive(Clone, Debug)]
pub struct PipelineModel {
    pub document: ModelDocument<f64>,
    pub trained: TrainedModel<f64>,
    /// `subclass_ids[k-1]` is the corpus subclass of model subclass `k`.
    pub subclass_ids: Vec<usize>,
}

/// Trains on `rows` of `corpus`. Subclasses present among those rows become the
/// model's subclasses, renumbered `1..=K` in corpus order.
pub fn train_model(corpus: &LabeledCorpus, rows: &[usize], cfg: &ModelConfig) -> Result<PipelineModel> {
    let docs: Vec<_> = rows.iter().map(|&i| &corpus.docs()[i]).collect();
    let mut subclass_ids: Vec<usize> = docs.iter().filter_map(|d| d.subclass).collect();
    subclass_ids.sort_unstable();
    subclass_ids.dedup();
    if subclass_ids.is_empty() {
        return Err(Error::Corpus("training rows contain no rare documents".into()));
    }
    let k = subclass_ids.len();
    let relabel: Vec<Option<usize>> = docs
        .iter()
        .map(|d| d.subclass.map(|s| subclass_ids.binary_search(&s).expect("collected above") + 1))
        .collect();

    let featurizer = Featurizer::fit(&docs, cfg.rep)?;
    let x: Array2<f64> = featurizer.transform_docs(&docs)?.values;
    let data = BoundData::new(x, &relabel, k)?;
    let gram = match featurizer {
        Featurizer::Pca { .. } => GramCache::identity(data.x()),
        _ => GramCache::squared(data.x()),
    };
    let hp = cfg.hyperparams(k);
    let trained = fit_with_gram(&data, &hp, &cfg.train, &gram)?;
    let thresholds = rejection::calibrate(&trained.params, &data, cfg.reject, cfg.q)?;
    let names = subclass_ids.iter().map(|&s| corpus.subclass_names()[s - 1].clone()).collect();
    let document = ModelDocument::new(trained.params.clone(), thresholds, featurizer, names)?;
    Ok(PipelineModel {
        document,
        trained,
        subclass_ids,
    })
}
