//! Gradient-boosted regression trees.
//!
//! A small squared-error boosting engine shared by the parameter predictor
//! and the error predictor. Trees use exact greedy splits over sorted
//! feature values, limited by depth and leaf size; ties between candidate
//! splits resolve to the lowest feature index, then the lowest threshold,
//! so training is fully deterministic. Row subsampling (the only stochastic
//! element) draws from a seeded generator.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Version tag embedded in serialized models.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Boosting hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    /// Fraction of rows drawn (without replacement) per tree.
    pub subsample: f64,
    /// Seeds row subsampling; unused when `subsample == 1.0`.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_trees: 200,
            max_depth: 4,
            learning_rate: 0.1,
            min_samples_leaf: 2,
            subsample: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidInput("n_trees must be >= 1".into()));
        }
        if self.max_depth == 0 {
            return Err(Error::InvalidInput("max_depth must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "learning_rate must be in (0, 1], got {}",
                self.learning_rate
            )));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::InvalidInput("min_samples_leaf must be >= 1".into()));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "subsample must be in (0, 1], got {}",
                self.subsample
            )));
        }
        Ok(())
    }
}

/// One tree node; children are indices into the tree's node array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// A depth-limited binary regression tree stored as an index-linked array;
/// node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Unscaled tree output for one feature row.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

/// A trained boosted ensemble. Prediction is
/// `base_value + sum(learning_rate * tree_k(x))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    version: u32,
    base_value: f64,
    n_features: usize,
    config: TrainConfig,
    trees: Vec<Tree>,
}

impl TreeEnsemble {
    /// An ensemble with no trees that always predicts `value`. Used for
    /// degenerate single-row training tables.
    pub fn constant(value: f64, n_features: usize, config: &TrainConfig) -> Self {
        TreeEnsemble {
            version: MODEL_FORMAT_VERSION,
            base_value: value,
            n_features,
            config: config.clone(),
            trees: Vec::new(),
        }
    }

    pub fn base_value(&self) -> f64 {
        self.base_value
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    /// Predict one feature row, validating its width.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::InvalidInput(format!(
                "feature row has width {}, model expects {}",
                x.len(),
                self.n_features
            )));
        }
        Ok(self.predict_unchecked(x))
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        self.base_value
            + self.config.learning_rate * self.trees.iter().map(|t| t.eval(x)).sum::<f64>()
    }

    /// Prediction truncated to the first `k` trees; `k = 0` returns the
    /// base value. Useful for inspecting the staged training loss.
    pub fn predict_staged(&self, x: &[f64], k: usize) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::InvalidInput(format!(
                "feature row has width {}, model expects {}",
                x.len(),
                self.n_features
            )));
        }
        Ok(self.base_value
            + self.config.learning_rate * self.trees.iter().take(k).map(|t| t.eval(x)).sum::<f64>())
    }

    /// Serialize to JSON bytes.
    pub fn save(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("ensemble serialization cannot fail")
    }

    /// Deserialize an ensemble produced by [`TreeEnsemble::save`].
    pub fn load(bytes: &[u8]) -> Result<Self> {
        let ensemble: TreeEnsemble = serde_json::from_slice(bytes)
            .map_err(|e| Error::ModelFormat(format!("cannot parse model payload: {e}")))?;
        if ensemble.version != MODEL_FORMAT_VERSION {
            return Err(Error::ModelVersion {
                found: ensemble.version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        Ok(ensemble)
    }
}

fn validate_training_inputs(x: &[Vec<f64>], y: &[f64]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "feature matrix has {} rows but targets have {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InvalidInput("training needs at least 2 rows".into()));
    }
    let width = x[0].len();
    if width == 0 {
        return Err(Error::InvalidInput("feature rows are empty".into()));
    }
    for (i, row) in x.iter().enumerate() {
        if row.len() != width {
            return Err(Error::InvalidInput(format!(
                "row {i} has width {}, expected {width}",
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "row {i} contains a non-finite feature value"
            )));
        }
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("target {i} is not finite")));
    }
    Ok(width)
}

/// Train a boosted regression ensemble by stagewise squared-error fitting:
/// each round fits a tree to the current residuals and adds it scaled by
/// the learning rate.
pub fn train(x: &[Vec<f64>], y: &[f64], cfg: &TrainConfig) -> Result<TreeEnsemble> {
    cfg.validate()?;
    let width = validate_training_inputs(x, y)?;
    let n = x.len();

    let base_value = y.iter().sum::<f64>() / n as f64;
    let mut predictions = vec![base_value; n];
    let mut rng = (cfg.subsample < 1.0).then(|| ChaCha8Rng::seed_from_u64(cfg.seed));

    let all_rows: Vec<usize> = (0..n).collect();
    let mut trees = Vec::with_capacity(cfg.n_trees);
    for _ in 0..cfg.n_trees {
        let residuals: Vec<f64> = y.iter().zip(&predictions).map(|(yi, pi)| yi - pi).collect();

        let rows: Vec<usize> = match rng.as_mut() {
            Some(rng) => {
                let count = ((n as f64 * cfg.subsample).round() as usize).clamp(1, n);
                let mut pool = all_rows.clone();
                pool.shuffle(rng);
                pool.truncate(count);
                pool.sort_unstable();
                pool
            }
            None => all_rows.clone(),
        };

        let mut nodes = Vec::new();
        grow(x, &residuals, &rows, 0, cfg, &mut nodes);
        let tree = Tree { nodes };
        for (i, row) in x.iter().enumerate() {
            predictions[i] += cfg.learning_rate * tree.eval(row);
        }
        trees.push(tree);
    }

    Ok(TreeEnsemble {
        version: MODEL_FORMAT_VERSION,
        base_value,
        n_features: width,
        config: cfg.clone(),
        trees,
    })
}

fn mean(values: &[f64], rows: &[usize]) -> f64 {
    rows.iter().map(|&i| values[i]).sum::<f64>() / rows.len() as f64
}

/// Grow one subtree over `rows`; returns the new node's index.
fn grow(
    x: &[Vec<f64>],
    residuals: &[f64],
    rows: &[usize],
    depth: usize,
    cfg: &TrainConfig,
    nodes: &mut Vec<Node>,
) -> usize {
    let leaf_value = mean(residuals, rows);
    let constant = rows.iter().all(|&i| residuals[i] == residuals[rows[0]]);
    if depth >= cfg.max_depth || rows.len() < 2 * cfg.min_samples_leaf || constant {
        nodes.push(Node::Leaf { value: leaf_value });
        return nodes.len() - 1;
    }

    let split = match best_split(x, residuals, rows, cfg.min_samples_leaf) {
        Some(s) => s,
        None => {
            nodes.push(Node::Leaf { value: leaf_value });
            return nodes.len() - 1;
        }
    };

    let (mut left_rows, mut right_rows) = (Vec::new(), Vec::new());
    for &i in rows {
        if x[i][split.feature] <= split.threshold {
            left_rows.push(i);
        } else {
            right_rows.push(i);
        }
    }

    let node_idx = nodes.len();
    nodes.push(Node::Leaf { value: 0.0 }); // placeholder
    let left = grow(x, residuals, &left_rows, depth + 1, cfg, nodes);
    let right = grow(x, residuals, &right_rows, depth + 1, cfg, nodes);
    nodes[node_idx] = Node::Split {
        feature: split.feature,
        threshold: split.threshold,
        left,
        right,
    };
    node_idx
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Exact greedy search over all features and sorted unique values. Gain is
/// the SSE decrease `sum_L^2/n_L + sum_R^2/n_R - sum^2/n`; only strictly
/// positive gains split, and the first candidate seen wins ties (features
/// and thresholds are scanned in ascending order).
#[allow(clippy::needless_range_loop)]
fn best_split(
    x: &[Vec<f64>],
    residuals: &[f64],
    rows: &[usize],
    min_samples_leaf: usize,
) -> Option<Split> {
    let n = rows.len();
    let total: f64 = rows.iter().map(|&i| residuals[i]).sum();
    let parent_score = total * total / n as f64;

    let mut best: Option<Split> = None;
    let width = x[rows[0]].len();
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
    for feature in 0..width {
        pairs.clear();
        pairs.extend(rows.iter().map(|&i| (x[i][feature], residuals[i])));
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

        let mut left_sum = 0.0;
        for k in 0..n - 1 {
            left_sum += pairs[k].1;
            if pairs[k].0 == pairs[k + 1].0 {
                continue;
            }
            let left_n = k + 1;
            let right_n = n - left_n;
            if left_n < min_samples_leaf || right_n < min_samples_leaf {
                continue;
            }
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / left_n as f64 + right_sum * right_sum / right_n as f64
                - parent_score;
            if gain > 0.0 && best.as_ref().is_none_or(|b| gain > b.gain) {
                best = Some(Split {
                    feature,
                    threshold: 0.5 * (pairs[k].0 + pairs[k + 1].0),
                    gain,
                });
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rows(values: &[f64]) -> Vec<Vec<f64>> {
        values.iter().map(|&v| vec![v]).collect()
    }

    fn training_mse(m: &TreeEnsemble, x: &[Vec<f64>], y: &[f64]) -> f64 {
        x.iter()
            .zip(y)
            .map(|(row, &yi)| {
                let p = m.predict(row).unwrap();
                (p - yi) * (p - yi)
            })
            .sum::<f64>()
            / y.len() as f64
    }

    #[test]
    fn constant_targets_predict_the_constant() {
        let x = rows(&[1.0, 2.0, 3.0, 4.0]);
        let y = vec![7.0; 4];
        let m = train(&x, &y, &TrainConfig::default()).unwrap();
        for row in &x {
            assert!((m.predict(row).unwrap() - 7.0).abs() < 1e-9);
        }
        assert!((m.predict(&[100.0]).unwrap() - 7.0).abs() < 1e-9);
        // The base value absorbs everything; trees carry no structure.
        assert!(m
            .trees()
            .iter()
            .all(|t| matches!(t.nodes[..], [Node::Leaf { value }] if value == 0.0)));
    }

    #[test]
    fn step_function_is_learned() {
        let x: Vec<Vec<f64>> = (0..50).map(|k| vec![f64::from(k) - 25.0]).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|row| if row[0] < 0.0 { 0.0 } else { 10.0 })
            .collect();
        let cfg = TrainConfig {
            n_trees: 100,
            learning_rate: 0.3,
            ..TrainConfig::default()
        };
        let m = train(&x, &y, &cfg).unwrap();
        for (row, &yi) in x.iter().zip(&y) {
            assert!((m.predict(row).unwrap() - yi).abs() < 0.1);
        }
        assert!((m.predict(&[-5.0]).unwrap() - 0.0).abs() < 0.1);
    }

    #[test]
    fn identity_function_fits_within_half_unit_rmse() {
        let x: Vec<Vec<f64>> = (1..=20).map(|k| vec![f64::from(k)]).collect();
        let y: Vec<f64> = (1..=20).map(f64::from).collect();
        let m = train(&x, &y, &TrainConfig::default()).unwrap();
        let rmse = training_mse(&m, &x, &y).sqrt();
        assert!(rmse < 0.5, "rmse = {rmse}");
    }

    #[test]
    fn empty_ensemble_predicts_base_value() {
        let m = TreeEnsemble::constant(3.25, 2, &TrainConfig::default());
        assert_eq!(m.predict(&[0.0, 0.0]).unwrap(), 3.25);
        assert_eq!(m.predict(&[1e9, -1e9]).unwrap(), 3.25);
        // The same holds for a payload with an empty tree list.
        let m2 = TreeEnsemble::load(&m.save()).unwrap();
        assert_eq!(m2.predict(&[5.0, 5.0]).unwrap(), 3.25);
    }

    #[test]
    fn predict_rejects_width_mismatch() {
        let x = rows(&[1.0, 2.0, 3.0]);
        let y = vec![1.0, 2.0, 3.0];
        let m = train(&x, &y, &TrainConfig::default()).unwrap();
        assert!(m.predict(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn train_input_validation() {
        let cfg = TrainConfig::default();
        assert!(train(&rows(&[1.0]), &[1.0], &cfg).is_err());
        assert!(train(&rows(&[1.0, 2.0]), &[1.0], &cfg).is_err());
        assert!(train(&rows(&[1.0, f64::NAN]), &[1.0, 2.0], &cfg).is_err());
        assert!(train(&rows(&[1.0, 2.0]), &[1.0, f64::INFINITY], &cfg).is_err());
        let ragged = vec![vec![1.0, 2.0], vec![1.0]];
        assert!(train(&ragged, &[1.0, 2.0], &cfg).is_err());
    }

    #[test]
    fn save_load_round_trip_predicts_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<Vec<f64>> = (0..60)
            .map(|_| vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)])
            .collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] * r[0] + 0.5 * r[1]).collect();
        let m = train(&x, &y, &TrainConfig::default()).unwrap();
        let m2 = TreeEnsemble::load(&m.save()).unwrap();
        for _ in 0..100 {
            let row = vec![rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
            assert_eq!(m.predict(&row).unwrap(), m2.predict(&row).unwrap());
        }
    }

    #[test]
    fn load_rejects_truncated_payload() {
        let m = TreeEnsemble::constant(1.0, 1, &TrainConfig::default());
        let bytes = m.save();
        let truncated = &bytes[..bytes.len() / 2];
        assert!(matches!(
            TreeEnsemble::load(truncated),
            Err(Error::ModelFormat(_))
        ));
    }

    #[test]
    fn load_rejects_unknown_version() {
        let m = TreeEnsemble::constant(1.0, 1, &TrainConfig::default());
        let json = String::from_utf8(m.save()).unwrap();
        let bumped = json.replace("\"version\":1", "\"version\":99");
        assert!(matches!(
            TreeEnsemble::load(bumped.as_bytes()),
            Err(Error::ModelVersion { found: 99, .. })
        ));
    }

    #[test]
    fn training_mse_is_non_increasing_in_tree_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<Vec<f64>> = (0..80)
            .map(|_| vec![rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)])
            .collect();
        let y: Vec<f64> = x.iter().map(|r| (r[0] * 0.7).sin() * 5.0 + r[1]).collect();
        let cfg = TrainConfig {
            n_trees: 60,
            ..TrainConfig::default()
        };
        let m = train(&x, &y, &cfg).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..=cfg.n_trees {
            let mse = x
                .iter()
                .zip(&y)
                .map(|(row, &yi)| {
                    let p = m.predict_staged(row, k).unwrap();
                    (p - yi) * (p - yi)
                })
                .sum::<f64>()
                / y.len() as f64;
            assert!(
                mse <= prev + 1e-12,
                "mse increased at tree {k}: {prev} -> {mse}"
            );
            prev = mse;
        }
    }

    #[test]
    fn beats_mean_baseline_on_non_constant_targets() {
        let x = rows(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let y = vec![1.0, 1.0, 1.0, 1.0, 9.0, 9.0, 9.0, 9.0];
        let mean_y = y.iter().sum::<f64>() / y.len() as f64;
        let baseline = y.iter().map(|v| (v - mean_y) * (v - mean_y)).sum::<f64>() / y.len() as f64;
        let m = train(&x, &y, &TrainConfig::default()).unwrap();
        assert!(training_mse(&m, &x, &y) < baseline);
    }

    #[test]
    fn identical_inputs_produce_identical_bytes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<Vec<f64>> = (0..40)
            .map(|_| vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)])
            .collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] - r[1]).collect();
        let cfg = TrainConfig {
            subsample: 0.7,
            seed: 123,
            ..TrainConfig::default()
        };
        let m1 = train(&x, &y, &cfg).unwrap();
        let m2 = train(&x, &y, &cfg).unwrap();
        assert_eq!(m1.save(), m2.save());
    }

    #[test]
    fn split_children_partition_and_leaves_hold_mean_residuals() {
        // One depth-1 tree: the leaf values must be the mean residuals of
        // the rows each side receives.
        let x = rows(&[1.0, 2.0, 3.0, 10.0, 11.0, 12.0]);
        let y = vec![2.0, 4.0, 3.0, 20.0, 22.0, 21.0];
        let cfg = TrainConfig {
            n_trees: 1,
            max_depth: 1,
            learning_rate: 1.0,
            min_samples_leaf: 1,
            ..TrainConfig::default()
        };
        let m = train(&x, &y, &cfg).unwrap();
        let tree = &m.trees()[0];
        let (feature, threshold, left, right) = match tree.nodes[0] {
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => (feature, threshold, left, right),
            Node::Leaf { .. } => panic!("expected a split at the root"),
        };
        assert_eq!(feature, 0);
        let base = m.base_value();
        let (mut left_rows, mut right_rows) = (vec![], vec![]);
        for (row, &yi) in x.iter().zip(&y) {
            if row[0] <= threshold {
                left_rows.push(yi - base);
            } else {
                right_rows.push(yi - base);
            }
        }
        assert_eq!(left_rows.len() + right_rows.len(), y.len());
        assert!(!left_rows.is_empty() && !right_rows.is_empty());
        let mean_of = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        match (&tree.nodes[left], &tree.nodes[right]) {
            (Node::Leaf { value: lv }, Node::Leaf { value: rv }) => {
                assert!((lv - mean_of(&left_rows)).abs() < 1e-12);
                assert!((rv - mean_of(&right_rows)).abs() < 1e-12);
            }
            _ => panic!("children of a depth-1 root must be leaves"),
        }
    }
}
