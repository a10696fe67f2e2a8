//! Throughput modeling and uncertainty estimation for LLM inference
//! benchmark data.
//!
//! The pipeline has four stages:
//!
//! 1. [`expmodel`] fits the exponential throughput curve
//!    `thpt = c - a * e^(-b*bb)` per workload, building a parameter
//!    database per hardware/software configuration.
//! 2. [`predictor`] trains boosted-tree regressors ([`gbt`]) that predict
//!    the curve parameters for workloads missing from the database.
//! 3. [`anneal`] explores training-subset space with simulated annealing,
//!    logging how subset choice drives prediction error.
//! 4. [`uncertainty`] turns those logs into an error predictor and scores
//!    how far a new dataset sits from anything seen during training.
//!
//! # Example
//!
//! ```
//! use ala_core::data::{synth_generate, SynthSpec};
//! use ala_core::expmodel::build_param_db;
//! use ala_core::predictor::{predict_throughput, train_param_predictor, PredictionSource};
//! use ala_core::TrainConfig;
//!
//! // Noiseless synthetic benchmark over a workload grid.
//! let (dataset, truth) = synth_generate(&SynthSpec::default(), 42).unwrap();
//!
//! // Fit the exponential curve per workload, then train the parameter
//! // predictor on the fitted triples.
//! let build = build_param_db(&dataset).unwrap();
//! let predictor = train_param_predictor(&build.table, &TrainConfig::default()).unwrap();
//!
//! // Benchmarked workloads resolve by lookup and match the generator.
//! let p = predict_throughput(&build.database, &predictor, 16, 64, 64).unwrap();
//! assert_eq!(p.source, PredictionSource::Lookup);
//! let want = ala_core::expmodel::eval_throughput(truth[&(64, 64)], 16.0);
//! assert!((p.thpt - want).abs() / want < 1e-3);
//!
//! // Unseen workloads fall back to the learned parameters.
//! let p = predict_throughput(&build.database, &predictor, 16, 100, 100).unwrap();
//! assert_eq!(p.source, PredictionSource::Predicted);
//! ```

pub mod anneal;
pub mod data;
pub mod error;
pub mod expmodel;
pub mod gbt;
pub mod predictor;
pub mod uncertainty;

pub use anneal::{AnnealConfig, AnnealLog, AnnealLogEntry, SubsetSignature, ValueUniverse};
pub use data::{
    BenchmarkRecord, ConfigKey, Dataset, QueryDataset, QueryRecord, SynthSpec, TruthMap,
};
pub use error::{Error, Result};
pub use expmodel::{ExpParams, ParamDatabase, ParamDbBuild, TrainingTable};
pub use gbt::{TrainConfig, TreeEnsemble};
pub use predictor::{ConfigModel, ConfigModelSet, ParamPredictor, Prediction, PredictionSource};
pub use uncertainty::{ConfidenceReport, EncodingUniverse, ErrorPredictor};
