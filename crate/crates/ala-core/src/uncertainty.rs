//! Error prediction and confidence estimation for unseen workloads.
//!
//! Subsets are encoded as presence bits over the training data's unique
//! values; a boosted ensemble trained on annealing logs maps encodings to
//! expected prediction error. Confidence comes from distribution
//! similarity: per-feature histograms of the new records are compared
//! against every logged subset's induced records by cosine distance, and
//! the score is `1 / (1 + d_min)`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::anneal::{median_percent_error, AnnealLog, SubsetSignature};
use crate::data::{BenchmarkRecord, Dataset, QueryRecord};
use crate::error::{Error, Result};
use crate::expmodel::build_param_db;
use crate::gbt::{self, TrainConfig, TreeEnsemble};
use crate::predictor::{predict_throughput, train_param_predictor};

/// Histogram bin count used by the subset distance.
pub const DEFAULT_HISTOGRAM_BINS: usize = 16;

/// Version tag of the serialized error-predictor artifact.
pub const ERROR_PREDICTOR_FORMAT_VERSION: u32 = 1;

/// The sorted unique values that define the binary encoding; width is the
/// sum of the three block lengths, ordered `ii`, `bb`, `oo`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingUniverse {
    pub unique_ii: Vec<u32>,
    pub unique_bb: Vec<u32>,
    pub unique_oo: Vec<u32>,
}

impl EncodingUniverse {
    pub fn from_dataset(d: &Dataset) -> Self {
        EncodingUniverse {
            unique_ii: d.unique_ii(),
            unique_bb: d.unique_bb(),
            unique_oo: d.unique_oo(),
        }
    }

    pub fn width(&self) -> usize {
        self.unique_ii.len() + self.unique_bb.len() + self.unique_oo.len()
    }
}

/// Encode a subset as presence bits over the universe. Values of the
/// subset outside the universe contribute nothing; unfamiliarity is
/// surfaced through the confidence score instead.
pub fn encode_signature(s: &SubsetSignature, u: &EncodingUniverse) -> Vec<f64> {
    let mut x = Vec::with_capacity(u.width());
    for v in &u.unique_ii {
        x.push(if s.s_ii.contains(v) { 1.0 } else { 0.0 });
    }
    for v in &u.unique_bb {
        x.push(if s.s_bb.contains(v) { 1.0 } else { 0.0 });
    }
    for v in &u.unique_oo {
        x.push(if s.s_oo.contains(v) { 1.0 } else { 0.0 });
    }
    x
}

/// Regression model from binary subset encodings to expected error.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorPredictor {
    pub ensemble: TreeEnsemble,
    pub universe: EncodingUniverse,
    /// Infinite-error log entries dropped during training.
    pub sentinel_dropped: usize,
}

#[derive(Serialize, Deserialize)]
struct ErrorPredictorFile {
    version: u32,
    universe: EncodingUniverse,
    sentinel_dropped: usize,
    ensemble: TreeEnsemble,
}

impl ErrorPredictor {
    /// Predicted error (percent) for a subset, floored at zero.
    pub fn predict(&self, s: &SubsetSignature) -> Result<f64> {
        let x = encode_signature(s, &self.universe);
        Ok(self.ensemble.predict(&x)?.max(0.0))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ErrorPredictorFile {
            version: ERROR_PREDICTOR_FORMAT_VERSION,
            universe: self.universe.clone(),
            sentinel_dropped: self.sentinel_dropped,
            ensemble: self.ensemble.clone(),
        };
        let body = serde_json::to_vec_pretty(&file)
            .map_err(|e| Error::ModelFormat(format!("cannot serialize error predictor: {e}")))?;
        fs::write(path, body).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let file: ErrorPredictorFile = serde_json::from_slice(&bytes)
            .map_err(|e| Error::ModelFormat(format!("cannot parse error predictor: {e}")))?;
        if file.version != ERROR_PREDICTOR_FORMAT_VERSION {
            return Err(Error::ModelVersion {
                found: file.version,
                expected: ERROR_PREDICTOR_FORMAT_VERSION,
            });
        }
        if file.ensemble.n_features() != file.universe.width() {
            return Err(Error::ModelFormat(format!(
                "ensemble width {} does not match universe width {}",
                file.ensemble.n_features(),
                file.universe.width()
            )));
        }
        Ok(ErrorPredictor {
            ensemble: file.ensemble,
            universe: file.universe,
            sentinel_dropped: file.sentinel_dropped,
        })
    }
}

/// Train the error predictor on an annealing log. Entries with an
/// infinite error sentinel are dropped; at least 2 finite entries are
/// required.
pub fn train_error_predictor(
    log: &AnnealLog,
    u: &EncodingUniverse,
    cfg: &TrainConfig,
) -> Result<ErrorPredictor> {
    let usable: Vec<&crate::anneal::AnnealLogEntry> =
        log.iter().filter(|e| e.error.is_finite()).collect();
    let dropped = log.len() - usable.len();
    if dropped > 0 {
        log::info!("dropped {dropped} log entries with unfittable (infinite) error");
    }
    if usable.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "error-predictor training needs at least 2 finite-error log entries, found {}",
            usable.len()
        )));
    }
    let x: Vec<Vec<f64>> = usable
        .iter()
        .map(|e| encode_signature(&e.signature, u))
        .collect();
    let y: Vec<f64> = usable.iter().map(|e| e.error).collect();
    Ok(ErrorPredictor {
        ensemble: gbt::train(&x, &y, cfg)?,
        universe: u.clone(),
        sentinel_dropped: dropped,
    })
}

/// Count values into `n_bins` equal-width bins over `[lo, hi]`; values
/// outside the range are clamped into the edge bins and the last bin is
/// right-closed.
pub fn feature_histogram(values: &[f64], lo: f64, hi: f64, n_bins: usize) -> Result<Vec<f64>> {
    if lo.is_nan() || hi.is_nan() || lo >= hi {
        return Err(Error::InvalidInput(format!(
            "histogram range must satisfy lo < hi, got [{lo}, {hi}]"
        )));
    }
    if n_bins == 0 {
        return Err(Error::InvalidInput("histogram needs at least 1 bin".into()));
    }
    let mut counts = vec![0.0; n_bins];
    let width = (hi - lo) / n_bins as f64;
    for &v in values {
        let idx = ((v - lo) / width).floor() as i64;
        let idx = idx.clamp(0, n_bins as i64 - 1) as usize;
        counts[idx] += 1.0;
    }
    Ok(counts)
}

/// Cosine distance between two count vectors: 0 for identical vectors,
/// 1 when either is all-zero, otherwise `1 - u.v / (|u||v|)` clamped to
/// `[0, 1]`.
fn cosine_distance(u: &[f64], v: &[f64]) -> f64 {
    let zero_u = u.iter().all(|&x| x == 0.0);
    let zero_v = v.iter().all(|&x| x == 0.0);
    if zero_u || zero_v {
        return 1.0;
    }
    if u == v {
        return 0.0;
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    (1.0 - dot / (nu * nv)).clamp(0.0, 1.0)
}

/// Numeric feature columns extracted from records. Throughput is present
/// only when every underlying record carries a measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureColumns {
    pub ii: Vec<f64>,
    pub oo: Vec<f64>,
    pub bb: Vec<f64>,
    pub thpt: Option<Vec<f64>>,
}

impl FeatureColumns {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a BenchmarkRecord>) -> Self {
        let mut cols = FeatureColumns {
            ii: Vec::new(),
            oo: Vec::new(),
            bb: Vec::new(),
            thpt: Some(Vec::new()),
        };
        for r in records {
            cols.ii.push(f64::from(r.ii));
            cols.oo.push(f64::from(r.oo));
            cols.bb.push(f64::from(r.bb));
            cols.thpt.as_mut().unwrap().push(r.thpt);
        }
        cols
    }

    pub fn from_query_records<'a>(records: impl IntoIterator<Item = &'a QueryRecord>) -> Self {
        let mut ii = Vec::new();
        let mut oo = Vec::new();
        let mut bb = Vec::new();
        let mut thpt = Vec::new();
        let mut all_thpt = true;
        for r in records {
            ii.push(f64::from(r.ii));
            oo.push(f64::from(r.oo));
            bb.push(f64::from(r.bb));
            match r.thpt {
                Some(t) => thpt.push(t),
                None => all_thpt = false,
            }
        }
        FeatureColumns {
            ii,
            oo,
            bb,
            thpt: (all_thpt && !thpt.is_empty()).then_some(thpt),
        }
    }

    fn len(&self) -> usize {
        self.ii.len()
    }
}

/// Distribution distance between two record sets: for each feature in
/// `{ii, oo, bb, thpt}` available on both sides, build histograms over the
/// shared range of the union and take the cosine distance; the result is
/// the mean over included features. Throughput is skipped when either
/// side lacks it.
pub fn subset_distance(a: &[BenchmarkRecord], b: &[BenchmarkRecord], n_bins: usize) -> Result<f64> {
    subset_distance_cols(
        &FeatureColumns::from_records(a),
        &FeatureColumns::from_records(b),
        n_bins,
    )
}

/// Column-level form of [`subset_distance`].
pub fn subset_distance_cols(a: &FeatureColumns, b: &FeatureColumns, n_bins: usize) -> Result<f64> {
    if a.len() == 0 || b.len() == 0 {
        return Err(Error::EmptyInput(
            "subset distance needs non-empty record sets".into(),
        ));
    }
    let mut pairs: Vec<(&[f64], &[f64])> = vec![(&a.ii, &b.ii), (&a.oo, &b.oo), (&a.bb, &b.bb)];
    if let (Some(ta), Some(tb)) = (&a.thpt, &b.thpt) {
        pairs.push((ta, tb));
    }

    let mut total = 0.0;
    for (va, vb) in &pairs {
        let lo = va
            .iter()
            .chain(vb.iter())
            .copied()
            .fold(f64::INFINITY, f64::min);
        let hi = va
            .iter()
            .chain(vb.iter())
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if lo == hi {
            // Every value on both sides is identical; the distributions match.
            continue;
        }
        let ha = feature_histogram(va, lo, hi, n_bins)?;
        let hb = feature_histogram(vb, lo, hi, n_bins)?;
        total += cosine_distance(&ha, &hb);
    }
    Ok(total / pairs.len() as f64)
}

/// Predicted error plus confidence for one query dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceReport {
    /// Label of the query dataset (file stem or configuration).
    pub dataset: String,
    /// Predicted median percent error.
    pub predicted_error: f64,
    /// `1 / (1 + d_min)`, in (0, 1].
    pub confidence: f64,
    /// Minimum distance to any logged subset's induced records.
    pub d_min: f64,
    /// Iteration index of the nearest logged subset.
    pub nearest_iteration: usize,
    /// Measured error, when the query carries throughput.
    pub actual_error: Option<f64>,
    pub n_records: usize,
}

/// Estimate error and confidence for a query dataset against an annealing
/// log: encode the query's unique-value signature, predict its error, and
/// take the minimum histogram distance between the query records and every
/// logged subset's records induced from the training dataset.
pub fn estimate_error_confidence(
    label: &str,
    new_records: &[QueryRecord],
    f: &ErrorPredictor,
    log: &AnnealLog,
    train_d: &Dataset,
) -> Result<ConfidenceReport> {
    if new_records.is_empty() {
        return Err(Error::EmptyInput("query dataset is empty".into()));
    }
    if log.is_empty() {
        return Err(Error::EmptyInput("annealing log is empty".into()));
    }

    let mut signature = SubsetSignature {
        s_ii: Default::default(),
        s_oo: Default::default(),
        s_bb: Default::default(),
    };
    for r in new_records {
        signature.s_ii.insert(r.ii);
        signature.s_oo.insert(r.oo);
        signature.s_bb.insert(r.bb);
    }
    let predicted_error = f.predict(&signature)?;

    let new_cols = FeatureColumns::from_query_records(new_records);
    let mut d_min = f64::INFINITY;
    let mut nearest_iteration = 0;
    for entry in log {
        let induced: Vec<&BenchmarkRecord> = train_d
            .records
            .iter()
            .filter(|r| entry.signature.contains(r))
            .collect();
        if induced.is_empty() {
            log::warn!(
                "log iteration {} induces no records in the training dataset; skipped",
                entry.iteration
            );
            continue;
        }
        let cols = FeatureColumns::from_records(induced.iter().copied());
        let d = subset_distance_cols(&cols, &new_cols, DEFAULT_HISTOGRAM_BINS)?;
        if d < d_min {
            d_min = d;
            nearest_iteration = entry.iteration;
        }
    }
    if !d_min.is_finite() {
        return Err(Error::InvalidInput(
            "no logged subset induces records in the training dataset".into(),
        ));
    }

    Ok(ConfidenceReport {
        dataset: label.to_string(),
        predicted_error,
        confidence: 1.0 / (1.0 + d_min),
        d_min,
        nearest_iteration,
        actual_error: None,
        n_records: new_records.len(),
    })
}

/// Measured median percent error of the pipeline trained on `train_d` and
/// evaluated on query records (all of which must carry throughput).
pub fn actual_percent_error(
    train_d: &Dataset,
    new_records: &[QueryRecord],
    cfg: &TrainConfig,
) -> Result<f64> {
    let build = build_param_db(train_d)?;
    if build.table.is_empty() {
        return Err(Error::FitFailed(
            "no workload in the training dataset produced parameters".into(),
        ));
    }
    let predictor = train_param_predictor(&build.table, cfg)?;
    let mut pred = Vec::with_capacity(new_records.len());
    let mut actual = Vec::with_capacity(new_records.len());
    for r in new_records {
        let t = r.thpt.ok_or_else(|| {
            Error::InvalidInput("actual error needs measured throughput on every record".into())
        })?;
        let p = predict_throughput(&build.database, &predictor, r.bb, r.ii, r.oo)?;
        pred.push(p.thpt);
        actual.push(t);
    }
    median_percent_error(&pred, &actual)
}

/// Render reports as a fixed-width table with columns
/// `Dataset | Predicted Error | Confidence | Actual Error`.
pub fn render_report_table(reports: &[ConfidenceReport]) -> String {
    let name_width = reports
        .iter()
        .map(|r| r.dataset.len())
        .chain(["Dataset".len()])
        .max()
        .unwrap_or(7)
        .max(7);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<name_width$}  {:>15}  {:>10}  {:>12}",
        "Dataset", "Predicted Error", "Confidence", "Actual Error"
    );
    let _ = writeln!(out, "{}", "-".repeat(name_width + 45));
    for r in reports {
        let actual = r
            .actual_error
            .map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
        let _ = writeln!(
            out,
            "{:<name_width$}  {:>15.2}  {:>10.2}  {:>12}",
            r.dataset, r.predicted_error, r.confidence, actual
        );
    }
    out
}
