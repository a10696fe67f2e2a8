//! Feature engineering, per-configuration parameter-predictor training, and
//! end-to-end throughput prediction with database lookup and model fallback.
//!
//! A per-configuration artifact directory holds `params.json` (the
//! parameter database), `model_a.json` / `model_b.json` / `model_c.json`
//! (one boosted ensemble per exponential parameter), and `manifest.json`
//! (configuration identity, feature schema version, training stats).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{split_by_config, ConfigKey, Dataset};
use crate::error::{Error, Result};
use crate::expmodel::{
    build_param_db, eval_throughput, ExpParams, FitFailure, ParamDatabase, TrainingTable,
};
use crate::gbt::{self, TrainConfig, TreeEnsemble};

/// Version of the engineered feature layout. Stored predictors refuse
/// queries under a mismatched version.
pub const FEATURE_SCHEMA_VERSION: u32 = 1;

/// Width of the engineered feature vector.
pub const N_FEATURES: usize = 7;

/// Engineered features for one workload:
/// `[ii, oo, ln(1+ii), ln(1+oo), ln(1+ii/oo), ii/(oo+1), ii/(ii+1)]`.
///
/// The fifth entry is the ratio transform `ln(1 + ii/oo)` (despite being
/// batch-named elsewhere, it never sees the batch size); batch size enters
/// predictions only through the exponential model evaluation.
pub fn features(ii: u32, oo: u32) -> Result<[f64; N_FEATURES]> {
    if ii < 1 || oo < 1 {
        return Err(Error::InvalidInput(format!(
            "workload features need ii >= 1 and oo >= 1, got (ii={ii}, oo={oo})"
        )));
    }
    let fi = f64::from(ii);
    let fo = f64::from(oo);
    Ok([
        fi,
        fo,
        (1.0 + fi).ln(),
        (1.0 + fo).ln(),
        (1.0 + fi / fo).ln(),
        fi / (fo + 1.0),
        fi / (fi + 1.0),
    ])
}

/// Three boosted ensembles predicting the exponential parameters
/// `(a, b, c)` from workload features.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPredictor {
    pub model_a: TreeEnsemble,
    pub model_b: TreeEnsemble,
    pub model_c: TreeEnsemble,
    pub schema_version: u32,
}

impl ParamPredictor {
    /// Predict exponential parameters for a workload. The raw ensemble
    /// outputs are clamped into the feasible parameter box, so the
    /// returned triple always describes a monotone bounded curve.
    pub fn predict_params(&self, ii: u32, oo: u32) -> Result<ExpParams> {
        if self.schema_version != FEATURE_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: self.schema_version,
                expected: FEATURE_SCHEMA_VERSION,
            });
        }
        let x = features(ii, oo)?;
        Ok(ExpParams::clamped(
            self.model_a.predict(&x)?,
            self.model_b.predict(&x)?,
            self.model_c.predict(&x)?,
        ))
    }
}

/// Train the three parameter ensembles on a configuration's training
/// table. A single-row table produces constant predictors.
pub fn train_param_predictor(t: &TrainingTable, cfg: &TrainConfig) -> Result<ParamPredictor> {
    if t.is_empty() {
        return Err(Error::EmptyInput(
            "cannot train a parameter predictor on an empty training table".into(),
        ));
    }
    if t.rows.len() == 1 {
        let row = t.rows[0];
        return Ok(ParamPredictor {
            model_a: TreeEnsemble::constant(row.a, N_FEATURES, cfg),
            model_b: TreeEnsemble::constant(row.b, N_FEATURES, cfg),
            model_c: TreeEnsemble::constant(row.c, N_FEATURES, cfg),
            schema_version: FEATURE_SCHEMA_VERSION,
        });
    }

    let mut x = Vec::with_capacity(t.rows.len());
    for row in &t.rows {
        x.push(features(row.ii, row.oo)?.to_vec());
    }
    let targets_a: Vec<f64> = t.rows.iter().map(|r| r.a).collect();
    let targets_b: Vec<f64> = t.rows.iter().map(|r| r.b).collect();
    let targets_c: Vec<f64> = t.rows.iter().map(|r| r.c).collect();
    Ok(ParamPredictor {
        model_a: gbt::train(&x, &targets_a, cfg)?,
        model_b: gbt::train(&x, &targets_b, cfg)?,
        model_c: gbt::train(&x, &targets_c, cfg)?,
        schema_version: FEATURE_SCHEMA_VERSION,
    })
}

/// Database plus predictor for one configuration.
#[derive(Debug, Clone)]
pub struct ConfigModel {
    pub database: ParamDatabase,
    pub predictor: ParamPredictor,
    /// Workloads whose fit failed during database construction.
    pub fit_failures: Vec<FitFailure>,
}

/// Trained models for every configuration that yielded a non-empty
/// training table.
#[derive(Debug, Clone, Default)]
pub struct ConfigModelSet {
    pub entries: BTreeMap<ConfigKey, ConfigModel>,
    /// Configurations skipped because no workload produced parameters.
    pub skipped: Vec<ConfigKey>,
}

/// Group a dataset by configuration and train a database + predictor pair
/// per group. Groups with empty training tables are skipped with a notice.
pub fn train_all_configs(d: &Dataset, cfg: &TrainConfig) -> Result<ConfigModelSet> {
    let groups = split_by_config(d)?;
    let mut set = ConfigModelSet::default();
    for (key, group) in groups {
        let build = build_param_db(&group)?;
        if build.table.is_empty() {
            log::warn!("skipping configuration [{key}]: no workload produced parameters");
            set.skipped.push(key);
            continue;
        }
        let predictor = train_param_predictor(&build.table, cfg)?;
        set.entries.insert(
            key,
            ConfigModel {
                database: build.database,
                predictor,
                fit_failures: build.failures,
            },
        );
    }
    Ok(set)
}

/// Where a prediction's parameters came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionSource {
    /// The workload's parameters were in the database.
    Lookup,
    /// Parameters were predicted by the ensembles.
    Predicted,
}

impl std::fmt::Display for PredictionSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PredictionSource::Lookup => write!(f, "lookup"),
            PredictionSource::Predicted => write!(f, "predicted"),
        }
    }
}

/// A throughput prediction and the parameters that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    pub thpt: f64,
    pub source: PredictionSource,
    pub params: ExpParams,
}

/// Predict throughput: use stored parameters when the workload is in the
/// database, otherwise fall back to the parameter predictor.
pub fn predict_throughput(
    db: &ParamDatabase,
    m: &ParamPredictor,
    bb: u32,
    ii: u32,
    oo: u32,
) -> Result<Prediction> {
    if bb < 1 || ii < 1 || oo < 1 {
        return Err(Error::InvalidInput(format!(
            "prediction needs bb, ii, oo >= 1, got (bb={bb}, ii={ii}, oo={oo})"
        )));
    }
    let (params, source) = match db.get(ii, oo) {
        Some(entry) => (entry.params, PredictionSource::Lookup),
        None => (m.predict_params(ii, oo)?, PredictionSource::Predicted),
    };
    Ok(Prediction {
        thpt: eval_throughput(params, f64::from(bb)),
        source,
        params,
    })
}

// ---------------------------------------------------------------------------
// Artifact persistence
// ---------------------------------------------------------------------------

/// Per-configuration artifact manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigManifest {
    pub config: ConfigKey,
    pub feature_schema_version: u32,
    pub n_db_entries: usize,
    pub n_fitted: usize,
    pub n_failed: usize,
    pub failures: Vec<FitFailure>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Write one configuration's artifacts into `dir` (created if missing).
pub fn save_config_model(dir: &Path, key: &ConfigKey, model: &ConfigModel) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let params = serde_json::to_string_pretty(&model.database)
        .map_err(|e| Error::ModelFormat(format!("cannot serialize parameter database: {e}")))?;
    write_file(&dir.join("params.json"), params.as_bytes())?;
    write_file(&dir.join("model_a.json"), &model.predictor.model_a.save())?;
    write_file(&dir.join("model_b.json"), &model.predictor.model_b.save())?;
    write_file(&dir.join("model_c.json"), &model.predictor.model_c.save())?;

    let n_fitted = model
        .database
        .iter()
        .filter(|(_, e)| e.residual.is_some())
        .count();
    let manifest = ConfigManifest {
        config: key.clone(),
        feature_schema_version: model.predictor.schema_version,
        n_db_entries: model.database.len(),
        n_fitted,
        n_failed: model.fit_failures.len(),
        failures: model.fit_failures.clone(),
    };
    let manifest = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::ModelFormat(format!("cannot serialize manifest: {e}")))?;
    write_file(&dir.join("manifest.json"), manifest.as_bytes())
}

/// Load one configuration's artifacts from `dir`.
pub fn load_config_model(dir: &Path) -> Result<(ConfigKey, ConfigModel)> {
    let manifest: ConfigManifest = serde_json::from_slice(&read_file(&dir.join("manifest.json"))?)
        .map_err(|e| Error::ModelFormat(format!("bad manifest in {}: {e}", dir.display())))?;
    let database: ParamDatabase = serde_json::from_slice(&read_file(&dir.join("params.json"))?)
        .map_err(|e| Error::ModelFormat(format!("bad params.json in {}: {e}", dir.display())))?;
    let predictor = ParamPredictor {
        model_a: TreeEnsemble::load(&read_file(&dir.join("model_a.json"))?)?,
        model_b: TreeEnsemble::load(&read_file(&dir.join("model_b.json"))?)?,
        model_c: TreeEnsemble::load(&read_file(&dir.join("model_c.json"))?)?,
        schema_version: manifest.feature_schema_version,
    };
    for (name, m) in [
        ("model_a.json", &predictor.model_a),
        ("model_b.json", &predictor.model_b),
        ("model_c.json", &predictor.model_c),
    ] {
        if m.n_features() != N_FEATURES {
            return Err(Error::ModelFormat(format!(
                "{name} expects {} features, this build uses {N_FEATURES}",
                m.n_features()
            )));
        }
    }
    Ok((
        manifest.config.clone(),
        ConfigModel {
            database,
            predictor,
            fit_failures: manifest.failures,
        },
    ))
}
