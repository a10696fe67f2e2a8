//! Generalized exponential throughput model and the per-configuration
//! parameter database.
//!
//! Throughput as a function of batch size follows `thpt = c - a * e^(-b*bb)`:
//! `a` scales the ramp-up, `b` controls how fast the curve approaches its
//! plateau, and `c` is the saturation throughput. For every unique
//! `(ii, oo)` workload the parameters are recovered by percentile-seeded,
//! box-bounded nonlinear least squares.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Lower bound for all three parameters.
pub const PARAM_MIN: f64 = 1e-8;
/// Upper bound for `a` and `c`.
pub const PARAM_MAX: f64 = 1e9;
/// Upper bound for the rate parameter `b`; keeps `e^(-b*bb)` well scaled.
pub const RATE_MAX: f64 = 1e3;

const MAX_FIT_ITERS: usize = 200;
const GRAD_TOL: f64 = 1e-8;
const STEP_TOL: f64 = 1e-10;

/// Parameters of the exponential throughput model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpParams {
    /// Scaling parameter (throughput units).
    pub a: f64,
    /// Rate parameter (1/batch-size units).
    pub b: f64,
    /// Saturation throughput (tokens/second).
    pub c: f64,
}

impl ExpParams {
    /// Clamp into the feasible box `a, c in [1e-8, 1e9]`, `b in [1e-8, 1e3]`.
    pub fn clamped(a: f64, b: f64, c: f64) -> Self {
        ExpParams {
            a: a.clamp(PARAM_MIN, PARAM_MAX),
            b: b.clamp(PARAM_MIN, RATE_MAX),
            c: c.clamp(PARAM_MIN, PARAM_MAX),
        }
    }
}

/// Evaluate `c - a * e^(-b * bb)`. Total on its domain; approaches `c`
/// from below as `bb` grows.
pub fn eval_throughput(p: ExpParams, bb: f64) -> f64 {
    p.c - p.a * (-p.b * bb).exp()
}

/// Quantile by sorted linear interpolation: for sorted `x_0..x_{n-1}` and
/// rank `r = (q/100)*(n-1)`, returns `x_floor(r)` interpolated toward its
/// successor by the fractional rank.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("percentile of an empty list".into()));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::InvalidInput(format!(
            "percentile rank must be in [0, 100], got {q}"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| a.total_cmp(b));
    let rank = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    if lo + 1 >= sorted.len() || frac == 0.0 {
        return Ok(sorted[lo]);
    }
    Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
}

fn distinct_bb_count(group: &[(f64, f64)]) -> usize {
    let mut bbs: Vec<f64> = group.iter().map(|&(bb, _)| bb).collect();
    bbs.sort_unstable_by(|a, b| a.total_cmp(b));
    bbs.dedup();
    bbs.len()
}

/// Percentile-based initial estimates for one `(bb, thpt)` group. Groups
/// with more than one distinct batch size seed from the 10th/90th
/// percentile spread; single-batch-size groups fall back to the defaults
/// `(1.0, 0.001, 0.0)` (then clamped into the feasible box).
pub fn init_estimates(group: &[(f64, f64)]) -> Result<ExpParams> {
    if group.is_empty() {
        return Err(Error::EmptyInput("cannot seed an empty group".into()));
    }
    if distinct_bb_count(group) > 1 {
        let thpt: Vec<f64> = group.iter().map(|&(_, t)| t).collect();
        let bbs: Vec<f64> = group.iter().map(|&(bb, _)| bb).collect();
        let t10 = percentile(&thpt, 10.0)?;
        let t90 = percentile(&thpt, 90.0)?;
        let b10 = percentile(&bbs, 10.0)?;
        let b90 = percentile(&bbs, 90.0)?.max(b10 + 1e-3);
        let a0 = (t90 - t10).max(1e-5);
        let b0 = 1.0 / (b90 - b10).max(1e-5);
        let c0 = t90.max(1e-5);
        Ok(ExpParams::clamped(a0, b0, c0))
    } else {
        Ok(ExpParams::clamped(1.0, 0.001, 0.0))
    }
}

fn sum_squared_residuals(group: &[(f64, f64)], p: ExpParams) -> f64 {
    group
        .iter()
        .map(|&(bb, thpt)| {
            let r = thpt - eval_throughput(p, bb);
            r * r
        })
        .sum()
}

/// Solve a symmetric 3x3 system by Gaussian elimination with partial
/// pivoting. Returns `None` when the system is numerically singular.
#[allow(clippy::needless_range_loop)]
fn solve3(mut m: [[f64; 3]; 3], mut rhs: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = [0.0; 3];
    for col in (0..3).rev() {
        let mut v = rhs[col];
        for k in col + 1..3 {
            v -= m[col][k] * x[k];
        }
        x[col] = v / m[col][col];
    }
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

/// Fit the exponential model to a group by damped Gauss-Newton
/// (Levenberg-Marquardt) with the step clamped into the parameter box.
/// Returns the fitted parameters and the achieved sum of squared
/// residuals, which never exceeds the residual at `init`.
#[allow(clippy::needless_range_loop)]
pub fn fit_group(group: &[(f64, f64)], init: ExpParams) -> Result<(ExpParams, f64)> {
    if distinct_bb_count(group) < 3 {
        return Err(Error::InvalidInput(
            "fitting needs at least 3 distinct batch sizes".into(),
        ));
    }
    let mut p = ExpParams::clamped(init.a, init.b, init.c);
    let mut sse = sum_squared_residuals(group, p);
    if !sse.is_finite() {
        return Err(Error::FitFailed(format!(
            "objective is not finite at the initial estimate (a={}, b={}, c={})",
            p.a, p.b, p.c
        )));
    }

    let mut lambda = 1e-3;
    for _ in 0..MAX_FIT_ITERS {
        // Gradient g = J^T r and normal matrix H = J^T J for residuals
        // r_i = thpt_i - (c - a*e^(-b*bb_i)).
        let mut g = [0.0f64; 3];
        let mut h = [[0.0f64; 3]; 3];
        for &(bb, thpt) in group {
            let e = (-p.b * bb).exp();
            let r = thpt - (p.c - p.a * e);
            let j = [e, -p.a * bb * e, -1.0];
            for k in 0..3 {
                g[k] += j[k] * r;
                for l in k..3 {
                    h[k][l] += j[k] * j[l];
                }
            }
        }
        for k in 0..3 {
            for l in 0..k {
                h[k][l] = h[l][k];
            }
        }
        if !g.iter().all(|v| v.is_finite()) {
            return Err(Error::FitFailed("gradient is not finite".into()));
        }
        let grad_norm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        if grad_norm < GRAD_TOL {
            break;
        }

        // Damped step, retried with stronger damping until it decreases
        // the objective or the damping saturates.
        let mut stalled = true;
        for _ in 0..25 {
            let mut damped = h;
            for k in 0..3 {
                damped[k][k] += lambda * h[k][k].max(1e-12);
            }
            let step = match solve3(damped, [-g[0], -g[1], -g[2]]) {
                Some(s) => s,
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let candidate = ExpParams::clamped(p.a + step[0], p.b + step[1], p.c + step[2]);
            let moved = [candidate.a - p.a, candidate.b - p.b, candidate.c - p.c];
            let step_norm =
                (moved[0] * moved[0] + moved[1] * moved[1] + moved[2] * moved[2]).sqrt();
            if step_norm < STEP_TOL {
                // Converged: the projected step no longer moves the point.
                return Ok((p, sse));
            }
            let candidate_sse = sum_squared_residuals(group, candidate);
            if candidate_sse.is_finite() && candidate_sse <= sse {
                p = candidate;
                sse = candidate_sse;
                lambda = (lambda / 3.0).max(1e-12);
                stalled = false;
                break;
            }
            lambda *= 10.0;
        }
        if stalled {
            break;
        }
    }
    Ok((p, sse))
}

/// One database entry: fitted (or seeded) parameters for a workload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbEntry {
    pub params: ExpParams,
    /// Number of benchmark points behind the entry.
    pub n_points: usize,
    /// Achieved sum of squared residuals; `None` when the entry stores
    /// initial estimates without optimization (fewer than 3 batch sizes).
    pub residual: Option<f64>,
}

/// Serialized form of one database entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbRow {
    pub ii: u32,
    pub oo: u32,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub n_points: usize,
    pub residual: Option<f64>,
}

/// Map from `(ii, oo)` workload to exponential parameters. Serializes to a
/// JSON array sorted by `(ii, oo)` for byte-stable output.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<DbRow>", into = "Vec<DbRow>")]
pub struct ParamDatabase {
    entries: BTreeMap<(u32, u32), DbEntry>,
}

impl ParamDatabase {
    pub fn get(&self, ii: u32, oo: u32) -> Option<&DbEntry> {
        self.entries.get(&(ii, oo))
    }

    pub fn insert(&mut self, ii: u32, oo: u32, entry: DbEntry) {
        self.entries.insert((ii, oo), entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(u32, u32), &DbEntry)> {
        self.entries.iter()
    }
}

impl From<ParamDatabase> for Vec<DbRow> {
    fn from(db: ParamDatabase) -> Self {
        db.entries
            .into_iter()
            .map(|((ii, oo), e)| DbRow {
                ii,
                oo,
                a: e.params.a,
                b: e.params.b,
                c: e.params.c,
                n_points: e.n_points,
                residual: e.residual,
            })
            .collect()
    }
}

impl From<Vec<DbRow>> for ParamDatabase {
    fn from(rows: Vec<DbRow>) -> Self {
        let mut db = ParamDatabase::default();
        for r in rows {
            db.insert(
                r.ii,
                r.oo,
                DbEntry {
                    params: ExpParams {
                        a: r.a,
                        b: r.b,
                        c: r.c,
                    },
                    n_points: r.n_points,
                    residual: r.residual,
                },
            );
        }
        db
    }
}

/// One row of the table that trains the parameter predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub ii: u32,
    pub oo: u32,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// Parameter rows mirroring the database, in `(ii, oo)` order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTable {
    pub rows: Vec<TrainingRow>,
}

impl TrainingTable {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }
}

/// A workload whose fit did not succeed. The group is reported rather than
/// silently dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFailure {
    pub ii: u32,
    pub oo: u32,
    pub reason: String,
}

/// Result of building the database for one configuration's dataset.
#[derive(Debug, Clone, Default)]
pub struct ParamDbBuild {
    pub database: ParamDatabase,
    pub table: TrainingTable,
    pub failures: Vec<FitFailure>,
}

/// Build the exponential parameter database for a single-configuration
/// dataset. Workloads with at least 3 distinct batch sizes are fitted;
/// those with 1-2 distinct batch sizes store their initial estimates
/// directly (3 parameters cannot be identified from 2 constraints).
/// Workloads whose fit fails are reported in `failures` and omitted.
pub fn build_param_db(d: &Dataset) -> Result<ParamDbBuild> {
    if d.is_empty() {
        return Err(Error::EmptyInput(
            "cannot build a parameter database from an empty dataset".into(),
        ));
    }
    let mut groups: BTreeMap<(u32, u32), Vec<(f64, f64)>> = BTreeMap::new();
    for r in &d.records {
        groups
            .entry((r.ii, r.oo))
            .or_default()
            .push((f64::from(r.bb), r.thpt));
    }

    let mut build = ParamDbBuild::default();
    for ((ii, oo), group) in groups {
        let init = init_estimates(&group)?;
        let (params, residual) = if distinct_bb_count(&group) >= 3 {
            match fit_group(&group, init) {
                Ok((p, sse)) => (p, Some(sse)),
                Err(e) => {
                    log::warn!("fit failed for workload (ii={ii}, oo={oo}): {e}");
                    build.failures.push(FitFailure {
                        ii,
                        oo,
                        reason: e.to_string(),
                    });
                    continue;
                }
            }
        } else {
            (init, None)
        };
        build.database.insert(
            ii,
            oo,
            DbEntry {
                params,
                n_points: group.len(),
                residual,
            },
        );
        build.table.rows.push(TrainingRow {
            ii,
            oo,
            a: params.a,
            b: params.b,
            c: params.c,
        });
    }
    Ok(build)
}
