//! Simulated annealing over training-subset space.
//!
//! A subset is a triple of value sets over the dataset's unique `ii`, `oo`,
//! and `bb` values; the induced training set is every record matching all
//! three, and the evaluation set is its complement. Each iteration perturbs
//! the current best subset by one element, retrains the pipeline on the
//! induced records, and logs the resulting median percent error. The full
//! iteration history (including rejected proposals) later trains the error
//! predictor.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{BenchmarkRecord, Dataset};
use crate::error::{Error, Result};
use crate::expmodel::{build_param_db, percentile};
use crate::gbt::TrainConfig;
use crate::predictor::{predict_throughput, train_param_predictor};

/// The three unique-value pools a subset draws from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValueUniverse {
    pub ii: Vec<u32>,
    pub oo: Vec<u32>,
    pub bb: Vec<u32>,
}

impl ValueUniverse {
    pub fn from_dataset(d: &Dataset) -> Self {
        ValueUniverse {
            ii: d.unique_ii(),
            oo: d.unique_oo(),
            bb: d.unique_bb(),
        }
    }
}

/// A training subset: which unique `ii` / `oo` / `bb` values are kept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetSignature {
    pub s_ii: BTreeSet<u32>,
    pub s_oo: BTreeSet<u32>,
    pub s_bb: BTreeSet<u32>,
}

/// Minimum values a dimension must keep: 2 when its universe has at least
/// 2 values (a single batch size collapses the exponential fit), else 1.
fn min_dim_size(universe_len: usize) -> usize {
    universe_len.min(2)
}

impl SubsetSignature {
    /// The full-universe signature of a dataset.
    pub fn full(d: &Dataset) -> Self {
        SubsetSignature {
            s_ii: d.unique_ii().into_iter().collect(),
            s_oo: d.unique_oo().into_iter().collect(),
            s_bb: d.unique_bb().into_iter().collect(),
        }
    }

    /// Signature of the unique values present in arbitrary records.
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a BenchmarkRecord>) -> Self {
        let mut s = SubsetSignature {
            s_ii: BTreeSet::new(),
            s_oo: BTreeSet::new(),
            s_bb: BTreeSet::new(),
        };
        for r in records {
            s.s_ii.insert(r.ii);
            s.s_oo.insert(r.oo);
            s.s_bb.insert(r.bb);
        }
        s
    }

    pub fn contains(&self, r: &BenchmarkRecord) -> bool {
        self.s_ii.contains(&r.ii) && self.s_oo.contains(&r.oo) && self.s_bb.contains(&r.bb)
    }

    /// Split a dataset into the induced training records and their
    /// complement (the evaluation records).
    pub fn induced_split<'a>(
        &self,
        d: &'a Dataset,
    ) -> (Vec<&'a BenchmarkRecord>, Vec<&'a BenchmarkRecord>) {
        let mut train = Vec::new();
        let mut eval = Vec::new();
        for r in &d.records {
            if self.contains(r) {
                train.push(r);
            } else {
                eval.push(r);
            }
        }
        (train, eval)
    }

    fn structurally_valid(&self, universe: &ValueUniverse) -> bool {
        self.s_ii.len() >= min_dim_size(universe.ii.len())
            && self.s_oo.len() >= min_dim_size(universe.oo.len())
            && self.s_bb.len() >= min_dim_size(universe.bb.len())
            && !self.s_ii.is_empty()
            && !self.s_oo.is_empty()
            && !self.s_bb.is_empty()
    }

    /// Validate against a dataset: per-dimension minimum sizes hold and
    /// both the induced training set and its complement are non-empty.
    pub fn validate(&self, d: &Dataset) -> Result<()> {
        let universe = ValueUniverse::from_dataset(d);
        if !self.structurally_valid(&universe) {
            return Err(Error::InvalidInput(
                "subset keeps too few values in some dimension".into(),
            ));
        }
        let (train, eval) = self.induced_split(d);
        if train.is_empty() {
            return Err(Error::InvalidInput(
                "subset induces an empty training set".into(),
            ));
        }
        if eval.is_empty() {
            return Err(Error::InvalidInput(
                "subset induces an empty evaluation set".into(),
            ));
        }
        Ok(())
    }
}

/// Annealing schedule parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealConfig {
    /// Initial temperature.
    pub tau0: f64,
    /// Cooling rate in (0, 1).
    pub alpha: f64,
    /// Number of proposal iterations.
    pub n_iters: usize,
    pub seed: u64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        AnnealConfig {
            tau0: 1.0,
            alpha: 0.95,
            n_iters: 100,
            seed: 0,
        }
    }
}

impl AnnealConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau0 > 0.0 && self.tau0.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "tau0 must be positive, got {}",
                self.tau0
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidInput(format!(
                "alpha must be in (0, 1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// One logged iteration. Unfittable evaluations carry `f64::INFINITY`,
/// which serializes as `null` in the JSONL log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "LogLine", into = "LogLine")]
pub struct AnnealLogEntry {
    pub iteration: usize,
    pub temperature: f64,
    pub signature: SubsetSignature,
    pub error: f64,
    pub accepted: bool,
}

/// Wire format of one log line: `{iter, temp, s_ii, s_oo, s_bb, error,
/// accepted}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct LogLine {
    iter: usize,
    temp: f64,
    s_ii: Vec<u32>,
    s_oo: Vec<u32>,
    s_bb: Vec<u32>,
    error: Option<f64>,
    accepted: bool,
}

impl From<AnnealLogEntry> for LogLine {
    fn from(e: AnnealLogEntry) -> Self {
        LogLine {
            iter: e.iteration,
            temp: e.temperature,
            s_ii: e.signature.s_ii.iter().copied().collect(),
            s_oo: e.signature.s_oo.iter().copied().collect(),
            s_bb: e.signature.s_bb.iter().copied().collect(),
            error: e.error.is_finite().then_some(e.error),
            accepted: e.accepted,
        }
    }
}

impl From<LogLine> for AnnealLogEntry {
    fn from(l: LogLine) -> Self {
        AnnealLogEntry {
            iteration: l.iter,
            temperature: l.temp,
            signature: SubsetSignature {
                s_ii: l.s_ii.into_iter().collect(),
                s_oo: l.s_oo.into_iter().collect(),
                s_bb: l.s_bb.into_iter().collect(),
            },
            error: l.error.unwrap_or(f64::INFINITY),
            accepted: l.accepted,
        }
    }
}

/// The full iteration history of one annealing run.
pub type AnnealLog = Vec<AnnealLogEntry>;

/// Write a log as JSON Lines.
pub fn write_log_jsonl(log: &AnnealLog, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for entry in log {
        serde_json::to_writer(&mut out, entry)
            .map_err(|e| Error::ModelFormat(format!("cannot serialize log entry: {e}")))?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Read a JSON Lines log written by [`write_log_jsonl`].
pub fn read_log_jsonl(path: &Path) -> Result<AnnealLog> {
    let file = fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut log = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: AnnealLogEntry = serde_json::from_str(&line)
            .map_err(|e| Error::ModelFormat(format!("bad log line {}: {e}", i + 1)))?;
        log.push(entry);
    }
    if log.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no log entries in {}",
            path.display()
        )));
    }
    Ok(log)
}

/// Median of `100 * |pred - actual| / actual`, using the same linear
/// interpolation rule as [`percentile`].
pub fn median_percent_error(pred: &[f64], actual: &[f64]) -> Result<f64> {
    if pred.len() != actual.len() {
        return Err(Error::InvalidInput(format!(
            "prediction/actual length mismatch: {} vs {}",
            pred.len(),
            actual.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("no values to compare".into()));
    }
    let mut errors = Vec::with_capacity(pred.len());
    for (&p, &a) in pred.iter().zip(actual) {
        if a.is_nan() || a <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "actual values must be positive, got {a}"
            )));
        }
        errors.push(100.0 * (p - a).abs() / a);
    }
    percentile(&errors, 50.0)
}

/// Train on the subset's induced records and score the complement.
/// Returns `f64::INFINITY` when no workload in the induced set yields
/// parameters (logged by the caller, never accepted).
pub fn evaluate_subset(d: &Dataset, s: &SubsetSignature, cfg: &TrainConfig) -> Result<f64> {
    s.validate(d)?;
    let (train_records, eval_records) = s.induced_split(d);
    let train_ds = Dataset::new(
        train_records.into_iter().cloned().collect(),
        d.source.clone(),
    );
    let build = build_param_db(&train_ds)?;
    if build.table.is_empty() {
        return Ok(f64::INFINITY);
    }
    let predictor = train_param_predictor(&build.table, cfg)?;
    let mut pred = Vec::with_capacity(eval_records.len());
    let mut actual = Vec::with_capacity(eval_records.len());
    for r in eval_records {
        let p = predict_throughput(&build.database, &predictor, r.bb, r.ii, r.oo)?;
        pred.push(p.thpt);
        actual.push(r.thpt);
    }
    median_percent_error(&pred, &actual)
}

/// Perturb a subset by one element: pick a dimension uniformly, then with
/// equal probability add an absent universe value or remove a present one.
/// Moves that would shrink a dimension below its minimum (or have nothing
/// to add) are re-drawn, up to 100 attempts; exhaustion returns the input
/// unchanged.
pub fn modify_subset<R: Rng>(
    s: &SubsetSignature,
    universe: &ValueUniverse,
    rng: &mut R,
) -> SubsetSignature {
    for _ in 0..100 {
        let dim = rng.gen_range(0..3u8);
        let (set, pool) = match dim {
            0 => (&s.s_ii, &universe.ii),
            1 => (&s.s_oo, &universe.oo),
            _ => (&s.s_bb, &universe.bb),
        };
        let add = rng.gen_bool(0.5);
        let value = if add {
            let absent: Vec<u32> = pool.iter().copied().filter(|v| !set.contains(v)).collect();
            if absent.is_empty() {
                continue;
            }
            absent[rng.gen_range(0..absent.len())]
        } else {
            if set.len() <= min_dim_size(pool.len()) {
                continue;
            }
            let present: Vec<u32> = set.iter().copied().collect();
            present[rng.gen_range(0..present.len())]
        };
        let mut next = s.clone();
        let target = match dim {
            0 => &mut next.s_ii,
            1 => &mut next.s_oo,
            _ => &mut next.s_bb,
        };
        if add {
            target.insert(value);
        } else {
            target.remove(&value);
        }
        return next;
    }
    s.clone()
}

/// Metropolis acceptance: a proposal is taken when it improves the error
/// or with probability `exp((e_star - e_prime) / temp)` otherwise.
pub fn accept_proposal<R: Rng>(e_star: f64, e_prime: f64, temp: f64, rng: &mut R) -> bool {
    e_prime < e_star || ((e_star - e_prime) / temp).exp() > rng.gen::<f64>()
}

/// Temperature after `i` cooling steps: `alpha^i * tau0`, evaluated as a
/// left-to-right product so the value is bit-stable across call sites
/// (`powi` lowering is not).
pub fn temperature_at(tau0: f64, alpha: f64, i: usize) -> f64 {
    let mut t = tau0;
    for _ in 0..i {
        t *= alpha;
    }
    t
}

/// Run the annealing chain: evaluate the initial subset, then for each
/// iteration cool the temperature (`tau_i = alpha^i * tau0`), propose a
/// one-element modification of the current best subset, evaluate it, and
/// apply the acceptance criterion. Every proposal is logged, accepted or
/// not, so the returned log has `n_iters + 1` entries.
pub fn run_annealing(
    d: &Dataset,
    s0: &SubsetSignature,
    cfg: &AnnealConfig,
    train_cfg: &TrainConfig,
) -> Result<AnnealLog> {
    cfg.validate()?;
    let universe = ValueUniverse::from_dataset(d);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut best = s0.clone();
    let mut best_error = evaluate_subset(d, s0, train_cfg)?;
    let mut log = vec![AnnealLogEntry {
        iteration: 0,
        temperature: cfg.tau0,
        signature: s0.clone(),
        error: best_error,
        accepted: true,
    }];

    for i in 1..=cfg.n_iters {
        let temperature = temperature_at(cfg.tau0, cfg.alpha, i);

        // Proposals must stay evaluable against this dataset; structurally
        // legal moves that break the induced-split invariants are re-drawn.
        let mut proposal = best.clone();
        for _ in 0..100 {
            let candidate = modify_subset(&best, &universe, &mut rng);
            if candidate.validate(d).is_ok() {
                proposal = candidate;
                break;
            }
        }

        let error = evaluate_subset(d, &proposal, train_cfg)?;
        let accepted = accept_proposal(best_error, error, temperature, &mut rng);
        if accepted {
            best = proposal.clone();
            best_error = error;
        }
        log.push(AnnealLogEntry {
            iteration: i,
            temperature,
            signature: proposal,
            error,
            accepted,
        });
    }
    Ok(log)
}
