//! Benchmark dataset ingestion, grouping, splitting, and synthetic generation.
//!
//! The on-disk format is a UTF-8 CSV with a header row. Workload columns
//! `bb`, `ii`, `oo`, `thpt` are required; the hardware/software configuration
//! columns (`model`, `back`, `dev`, `acc`, `acc_count`, `cpu`, `cpu_count`,
//! `mode`, `prec`) are optional and default to `"na"` / `0`, so minimal
//! workload-only CSVs load fine. Unknown extra columns are ignored.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expmodel::ExpParams;

/// Column order used when writing datasets.
pub const CSV_COLUMNS: [&str; 13] = [
    "model",
    "back",
    "dev",
    "acc",
    "acc_count",
    "cpu",
    "cpu_count",
    "mode",
    "prec",
    "bb",
    "ii",
    "oo",
    "thpt",
];

/// Floor applied to generated throughput so records stay strictly positive.
const MIN_SYNTH_THPT: f64 = 1e-9;

/// One hardware/software deployment configuration. Equality is field-wise;
/// string fields are trimmed and never empty (absent values are `"na"`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConfigKey {
    pub acc: String,
    pub acc_count: u32,
    pub back: String,
    pub cpu: String,
    pub cpu_count: u32,
    pub dev: String,
    pub mode: String,
    pub model: String,
    pub prec: String,
}

impl Default for ConfigKey {
    fn default() -> Self {
        ConfigKey {
            acc: "na".to_string(),
            acc_count: 0,
            back: "na".to_string(),
            cpu: "na".to_string(),
            cpu_count: 0,
            dev: "na".to_string(),
            mode: "na".to_string(),
            model: "na".to_string(),
            prec: "na".to_string(),
        }
    }
}

impl ConfigKey {
    /// Filesystem-safe identifier used for per-configuration artifact
    /// directories. Deterministic in the key's fields.
    pub fn slug(&self) -> String {
        let raw = format!(
            "{}_{}_{}_{}x{}_{}x{}_{}_{}",
            self.model,
            self.back,
            self.dev,
            self.acc,
            self.acc_count,
            self.cpu,
            self.cpu_count,
            self.mode,
            self.prec
        );
        raw.chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.' {
                    c
                } else {
                    '-'
                }
            })
            .collect()
    }
}

impl fmt::Display for ConfigKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "model={} back={} dev={} acc={}x{} cpu={}x{} mode={} prec={}",
            self.model,
            self.back,
            self.dev,
            self.acc,
            self.acc_count,
            self.cpu,
            self.cpu_count,
            self.mode,
            self.prec
        )
    }
}

/// One measured benchmark point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub config: ConfigKey,
    /// Input token count (>= 1).
    pub ii: u32,
    /// Output token count (>= 1).
    pub oo: u32,
    /// Batch size (>= 1).
    pub bb: u32,
    /// Measured throughput in tokens/second (> 0).
    pub thpt: f64,
}

/// An ordered collection of benchmark records.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<BenchmarkRecord>,
    /// File path the data came from, or `"synthetic"`.
    pub source: String,
}

impl Dataset {
    pub fn new(records: Vec<BenchmarkRecord>, source: impl Into<String>) -> Self {
        Dataset {
            records,
            source: source.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct input token counts, ascending.
    pub fn unique_ii(&self) -> Vec<u32> {
        unique_sorted(self.records.iter().map(|r| r.ii))
    }

    /// Distinct output token counts, ascending.
    pub fn unique_oo(&self) -> Vec<u32> {
        unique_sorted(self.records.iter().map(|r| r.oo))
    }

    /// Distinct batch sizes, ascending.
    pub fn unique_bb(&self) -> Vec<u32> {
        unique_sorted(self.records.iter().map(|r| r.bb))
    }
}

fn unique_sorted(values: impl Iterator<Item = u32>) -> Vec<u32> {
    let mut v: Vec<u32> = values.collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// A benchmark point whose throughput may be unknown (query datasets used
/// for error/confidence estimation need not carry measurements).
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub config: ConfigKey,
    pub ii: u32,
    pub oo: u32,
    pub bb: u32,
    pub thpt: Option<f64>,
}

/// Records loaded from a CSV that may or may not have a `thpt` column.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryDataset {
    pub records: Vec<QueryRecord>,
    pub source: String,
}

impl QueryDataset {
    /// True when every record carries a measured throughput.
    pub fn has_thpt(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.thpt.is_some())
    }
}

impl From<Dataset> for QueryDataset {
    fn from(d: Dataset) -> Self {
        QueryDataset {
            records: d
                .records
                .into_iter()
                .map(|r| QueryRecord {
                    config: r.config,
                    ii: r.ii,
                    oo: r.oo,
                    bb: r.bb,
                    thpt: Some(r.thpt),
                })
                .collect(),
            source: d.source,
        }
    }
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

struct HeaderMap {
    index: HashMap<String, usize>,
}

impl HeaderMap {
    fn new(headers: &csv::StringRecord) -> Self {
        HeaderMap {
            index: headers
                .iter()
                .enumerate()
                .map(|(i, name)| (name.trim().to_string(), i))
                .collect(),
        }
    }

    fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    fn get<'a>(&self, record: &'a csv::StringRecord, name: &str) -> Option<&'a str> {
        self.index.get(name).and_then(|&i| record.get(i))
    }
}

fn parse_positive_u32(field: Option<&str>, name: &str, line: u64) -> Result<u32> {
    let s = field.map(str::trim).unwrap_or("");
    let v: u64 = s.parse().map_err(|_| Error::BadRow {
        line,
        msg: format!("column '{name}': expected a positive integer, got '{s}'"),
    })?;
    if v < 1 || v > u64::from(u32::MAX) {
        return Err(Error::BadRow {
            line,
            msg: format!("column '{name}': value {v} out of range (must be >= 1)"),
        });
    }
    Ok(v as u32)
}

fn parse_positive_f64(field: Option<&str>, name: &str, line: u64) -> Result<f64> {
    let s = field.map(str::trim).unwrap_or("");
    let v: f64 = s.parse().map_err(|_| Error::BadRow {
        line,
        msg: format!("column '{name}': expected a positive number, got '{s}'"),
    })?;
    if !v.is_finite() || v <= 0.0 {
        return Err(Error::BadRow {
            line,
            msg: format!("column '{name}': value {v} must be finite and > 0"),
        });
    }
    Ok(v)
}

fn parse_config_string(field: Option<&str>) -> String {
    let s = field.map(str::trim).unwrap_or("");
    if s.is_empty() {
        "na".to_string()
    } else {
        s.to_string()
    }
}

fn parse_config_count(field: Option<&str>, name: &str, line: u64) -> Result<u32> {
    let s = field.map(str::trim).unwrap_or("");
    if s.is_empty() || s.eq_ignore_ascii_case("na") {
        return Ok(0);
    }
    s.parse().map_err(|_| Error::BadRow {
        line,
        msg: format!("column '{name}': expected a non-negative integer, got '{s}'"),
    })
}

fn parse_config(hmap: &HeaderMap, record: &csv::StringRecord, line: u64) -> Result<ConfigKey> {
    Ok(ConfigKey {
        acc: parse_config_string(hmap.get(record, "acc")),
        acc_count: parse_config_count(hmap.get(record, "acc_count"), "acc_count", line)?,
        back: parse_config_string(hmap.get(record, "back")),
        cpu: parse_config_string(hmap.get(record, "cpu")),
        cpu_count: parse_config_count(hmap.get(record, "cpu_count"), "cpu_count", line)?,
        dev: parse_config_string(hmap.get(record, "dev")),
        mode: parse_config_string(hmap.get(record, "mode")),
        model: parse_config_string(hmap.get(record, "model")),
        prec: parse_config_string(hmap.get(record, "prec")),
    })
}

fn open_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file))
}

fn read_header(reader: &mut csv::Reader<fs::File>, path: &Path) -> Result<HeaderMap> {
    let headers = reader
        .headers()
        .map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?
        .clone();
    Ok(HeaderMap::new(&headers))
}

/// Load a benchmark dataset. Requires `bb`, `ii`, `oo`, `thpt` columns;
/// configuration columns default when absent.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let mut reader = open_reader(path)?;
    let hmap = read_header(&mut reader, path)?;
    for col in ["bb", "ii", "oo", "thpt"] {
        if !hmap.contains(col) {
            return Err(Error::MissingColumn(col.to_string()));
        }
    }

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        records.push(BenchmarkRecord {
            config: parse_config(&hmap, &row, line)?,
            ii: parse_positive_u32(hmap.get(&row, "ii"), "ii", line)?,
            oo: parse_positive_u32(hmap.get(&row, "oo"), "oo", line)?,
            bb: parse_positive_u32(hmap.get(&row, "bb"), "bb", line)?,
            thpt: parse_positive_f64(hmap.get(&row, "thpt"), "thpt", line)?,
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no data rows in {}",
            path.display()
        )));
    }
    Ok(Dataset::new(records, path.display().to_string()))
}

/// Load a query dataset: like [`load_csv`] but the `thpt` column is
/// optional. When present, its values must still be positive numbers.
pub fn load_query_csv(path: &Path) -> Result<QueryDataset> {
    let mut reader = open_reader(path)?;
    let hmap = read_header(&mut reader, path)?;
    for col in ["bb", "ii", "oo"] {
        if !hmap.contains(col) {
            return Err(Error::MissingColumn(col.to_string()));
        }
    }
    let has_thpt = hmap.contains("thpt");

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let thpt = if has_thpt {
            Some(parse_positive_f64(hmap.get(&row, "thpt"), "thpt", line)?)
        } else {
            None
        };
        records.push(QueryRecord {
            config: parse_config(&hmap, &row, line)?,
            ii: parse_positive_u32(hmap.get(&row, "ii"), "ii", line)?,
            oo: parse_positive_u32(hmap.get(&row, "oo"), "oo", line)?,
            bb: parse_positive_u32(hmap.get(&row, "bb"), "bb", line)?,
            thpt,
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no data rows in {}",
            path.display()
        )));
    }
    Ok(QueryDataset {
        records,
        source: path.display().to_string(),
    })
}

/// Write a dataset with the full column set in [`CSV_COLUMNS`] order.
/// Throughput is written with shortest round-trip formatting, so
/// `load_csv(write_csv(d))` reproduces records exactly.
pub fn write_csv(d: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let write_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    writer.write_record(CSV_COLUMNS).map_err(write_err)?;
    for r in &d.records {
        let c = &r.config;
        writer
            .write_record([
                c.model.as_str(),
                c.back.as_str(),
                c.dev.as_str(),
                c.acc.as_str(),
                &c.acc_count.to_string(),
                c.cpu.as_str(),
                &c.cpu_count.to_string(),
                c.mode.as_str(),
                c.prec.as_str(),
                &r.bb.to_string(),
                &r.ii.to_string(),
                &r.oo.to_string(),
                &r.thpt.to_string(),
            ])
            .map_err(write_err)?;
    }
    writer.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

// ---------------------------------------------------------------------------
// Grouping and splitting
// ---------------------------------------------------------------------------

/// Partition records by configuration. Every record lands in exactly one
/// group; group order is the configs' natural ordering.
pub fn split_by_config(d: &Dataset) -> Result<BTreeMap<ConfigKey, Dataset>> {
    if d.is_empty() {
        return Err(Error::EmptyInput("cannot group an empty dataset".into()));
    }
    let mut groups: BTreeMap<ConfigKey, Dataset> = BTreeMap::new();
    for r in &d.records {
        groups
            .entry(r.config.clone())
            .or_insert_with(|| Dataset::new(Vec::new(), d.source.clone()))
            .records
            .push(r.clone());
    }
    Ok(groups)
}

/// Deterministic train/test split. `|test| = round(test_fraction * |d|)`,
/// clamped to `[1, |d| - 1]`; record order is preserved within each side.
pub fn train_test_split(d: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if d.len() < 2 {
        return Err(Error::InvalidInput(
            "train/test split needs at least 2 records".into(),
        ));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let n = d.len();
    let test_n = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng);
    let mut test_idx = indices[..test_n].to_vec();
    test_idx.sort_unstable();

    let mut is_test = vec![false; n];
    for &i in &test_idx {
        is_test[i] = true;
    }
    let mut train = Vec::with_capacity(n - test_n);
    let mut test = Vec::with_capacity(test_n);
    for (i, r) in d.records.iter().enumerate() {
        if is_test[i] {
            test.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    Ok((
        Dataset::new(train, d.source.clone()),
        Dataset::new(test, d.source.clone()),
    ))
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

/// Specification for synthetic benchmark data with known exponential ground
/// truth. The parameter surfaces are smooth in the workload:
///
/// ```text
/// a(ii, oo) = alpha * ln(1 + ii) + beta * ln(1 + oo)
/// b(ii, oo) = gamma / (1 + oo / 512)
/// c(ii, oo) = a(ii, oo) + delta
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub ii_values: Vec<u32>,
    pub oo_values: Vec<u32>,
    pub bb_values: Vec<u32>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    /// Relative Gaussian noise scale; 0 produces exact model values.
    pub noise_rel: f64,
    pub replicates: u32,
    /// Configuration stamped onto every generated record.
    pub config: ConfigKey,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            ii_values: vec![16, 32, 64, 128, 256],
            oo_values: vec![16, 32, 64, 128, 256],
            bb_values: vec![1, 2, 4, 8, 16, 32, 64],
            alpha: 8.0,
            beta: 4.0,
            gamma: 0.25,
            delta: 40.0,
            noise_rel: 0.0,
            replicates: 1,
            config: ConfigKey::default(),
        }
    }
}

impl SynthSpec {
    /// Ground-truth exponential parameters for one workload.
    pub fn truth_params(&self, ii: u32, oo: u32) -> ExpParams {
        let a = self.alpha * (1.0 + f64::from(ii)).ln() + self.beta * (1.0 + f64::from(oo)).ln();
        let b = self.gamma / (1.0 + f64::from(oo) / 512.0);
        let c = a + self.delta;
        ExpParams { a, b, c }
    }

    fn validate(&self) -> Result<()> {
        for (name, values) in [
            ("ii_values", &self.ii_values),
            ("oo_values", &self.oo_values),
            ("bb_values", &self.bb_values),
        ] {
            if values.is_empty() {
                return Err(Error::InvalidInput(format!("{name} is empty")));
            }
            if values.contains(&0) {
                return Err(Error::InvalidInput(format!("{name} contains 0")));
            }
        }
        if self.replicates < 1 {
            return Err(Error::InvalidInput("replicates must be >= 1".into()));
        }
        if !(self.noise_rel >= 0.0 && self.noise_rel.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "noise_rel must be a finite non-negative number, got {}",
                self.noise_rel
            )));
        }
        Ok(())
    }
}

/// Ground-truth parameters per workload for a synthetic dataset.
pub type TruthMap = BTreeMap<(u32, u32), ExpParams>;

/// Generate a synthetic dataset plus the exact parameter map that produced
/// it. Deterministic for a fixed spec and seed.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<(Dataset, TruthMap)> {
    spec.validate()?;
    let ii_values = unique_sorted(spec.ii_values.iter().copied());
    let oo_values = unique_sorted(spec.oo_values.iter().copied());
    let bb_values = unique_sorted(spec.bb_values.iter().copied());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise =
        if spec.noise_rel > 0.0 {
            Some(Normal::new(0.0, spec.noise_rel).map_err(|e| {
                Error::InvalidInput(format!("bad noise scale {}: {e}", spec.noise_rel))
            })?)
        } else {
            None
        };

    let mut truth = BTreeMap::new();
    let mut records = Vec::new();
    for &ii in &ii_values {
        for &oo in &oo_values {
            let params = spec.truth_params(ii, oo);
            if !(params.a > 0.0 && params.b > 0.0 && params.c > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "generator coefficients produce non-positive parameters at (ii={ii}, oo={oo})"
                )));
            }
            truth.insert((ii, oo), params);
            for &bb in &bb_values {
                let model = crate::expmodel::eval_throughput(params, f64::from(bb));
                for _ in 0..spec.replicates {
                    let eps = noise.as_ref().map_or(0.0, |n| n.sample(&mut rng));
                    let thpt = (model * (1.0 + eps)).max(MIN_SYNTH_THPT);
                    records.push(BenchmarkRecord {
                        config: spec.config.clone(),
                        ii,
                        oo,
                        bb,
                        thpt,
                    });
                }
            }
        }
    }
    Ok((Dataset::new(records, "synthetic"), truth))
}

/// Sidecar row for the ground-truth parameter map of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub ii: u32,
    pub oo: u32,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// Write the sidecar JSON holding a synthetic dataset's ground truth.
pub fn write_truth_json(truth: &TruthMap, path: &Path) -> Result<()> {
    let rows: Vec<TruthRow> = truth
        .iter()
        .map(|(&(ii, oo), p)| TruthRow {
            ii,
            oo,
            a: p.a,
            b: p.b,
            c: p.c,
        })
        .collect();
    let body = serde_json::to_string_pretty(&rows)
        .map_err(|e| Error::ModelFormat(format!("cannot serialize truth map: {e}")))?;
    fs::write(path, body).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Read a ground-truth sidecar written by [`write_truth_json`].
pub fn read_truth_json(path: &Path) -> Result<TruthMap> {
    let body = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let rows: Vec<TruthRow> = serde_json::from_str(&body)
        .map_err(|e| Error::ModelFormat(format!("bad truth sidecar: {e}")))?;
    Ok(rows
        .into_iter()
        .map(|r| {
            (
                (r.ii, r.oo),
                ExpParams {
                    a: r.a,
                    b: r.b,
                    c: r.c,
                },
            )
        })
        .collect())
}
