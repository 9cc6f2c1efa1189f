//! Rare-class recognition: a majority-vs-rare classifier trained jointly with
//! one-vs-rest subclass classifiers under a correlation penalty, rejection
//! thresholds for spotting emerging subclasses, and a word-cover analysis of
//! what separates the subclasses.
//!
//! The numerical core is generic over `f32`/`f64`; the aliases below fix `f64`.

pub mod cli;
pub mod coverage;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod featurize;
pub mod objective;
pub mod pipeline;
pub mod recognizer;
pub mod rejection;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type ModelParams = objective::ModelParams<f64>;
pub type Hyperparams = objective::Hyperparams<f64>;
pub type BoundData = objective::BoundData<f64>;
pub type GramCache = objective::GramCache<f64>;
pub type TrainedModel = trainer::TrainedModel<f64>;
pub type RejectionThresholds = rejection::RejectionThresholds<f64>;
pub type ModelDocument = recognizer::ModelDocument<f64>;
pub type Recognizer = recognizer::Recognizer<f64>;
pub type Decision = recognizer::Decision<f64>;

pub type ModelParamsF32 = objective::ModelParams<f32>;
pub type HyperparamsF32 = objective::Hyperparams<f32>;
pub type TrainedModelF32 = trainer::TrainedModel<f32>;
pub type RecognizerF32 = recognizer::Recognizer<f32>;
