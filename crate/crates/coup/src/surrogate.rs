//! Performance model: bagged gradient-boosted regression trees with
//! empirical 95% prediction intervals, and the local-search proposal that
//! picks the next configuration to try.

use crate::configspace::{ConfigurationSpace, ValueMap};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurrogateError {
    #[error("cannot fit a model on an empty dataset")]
    EmptyDataset,
    #[error("feature vectors must share one length, got {0} and {1}")]
    RaggedFeatures(usize, usize),
}

/// Knobs for the model and the proposal search. Defaults follow the
/// reference procedure; scenarios may scale them down for desk-size runs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SurrogateOptions {
    /// Bootstrap models in the ensemble.
    pub ensemble_size: usize,
    /// Boosting rounds (trees) per model.
    pub boost_rounds: usize,
    /// Maximum tree depth.
    pub max_depth: usize,
    pub learning_rate: f64,
    /// Local-search walks start from this many best configurations.
    pub local_search_starts: usize,
    /// Moves collected per walk before it stops.
    pub walk_budget: usize,
    /// Random candidates pooled with the walk results.
    pub random_pool: usize,
    /// Configurations with at least one run required before the model trains;
    /// below this the proposal falls back to random sampling.
    pub min_history: usize,
}

impl Default for SurrogateOptions {
    fn default() -> Self {
        Self {
            ensemble_size: 100,
            boost_rounds: 100,
            max_depth: 3,
            learning_rate: 0.1,
            local_search_starts: 10,
            walk_budget: 10,
            random_pool: 10_000,
            min_history: 10,
        }
    }
}

/// Bootstrap resamples have twice the training-set size.
const BOOTSTRAP_FACTOR: usize = 2;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        value: f64,
    },
}

impl TreeNode {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split { feature, threshold, left, right } => {
                    node = if x[*feature] < *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoostedModel {
    pub trees: Vec<TreeNode>,
    pub learning_rate: f64,
    pub base_prediction: f64,
}

impl BoostedModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.base_prediction
            + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

/// Greedy exact-split regression tree on the residuals. Splits minimize the
/// sum of squared errors; candidate thresholds are midpoints of consecutive
/// distinct feature values, which puts one-hot splits at 0.5.
fn fit_tree(xs: &[Vec<f64>], ys: &[f64], rows: &[usize], depth_left: usize) -> TreeNode {
    let mean = rows.iter().map(|&r| ys[r]).sum::<f64>() / rows.len() as f64;
    if depth_left == 0 || rows.len() < 2 {
        return TreeNode::Leaf { value: mean };
    }

    let n_features = xs[rows[0]].len();
    let mut best: Option<(f64, usize, f64)> = None; // (sse, feature, threshold)
    let total_sum: f64 = rows.iter().map(|&r| ys[r]).sum();
    let mut order: Vec<usize> = Vec::with_capacity(rows.len());
    for feature in 0..n_features {
        order.clear();
        order.extend_from_slice(rows);
        order.sort_by(|&a, &b| xs[a][feature].total_cmp(&xs[b][feature]));

        let mut left_sum = 0.0;
        let mut left_sq = 0.0;
        let total_sq: f64 = rows.iter().map(|&r| ys[r] * ys[r]).sum();
        for i in 0..order.len() - 1 {
            let y = ys[order[i]];
            left_sum += y;
            left_sq += y * y;
            let (xa, xb) = (xs[order[i]][feature], xs[order[i + 1]][feature]);
            if xa == xb {
                continue;
            }
            let nl = (i + 1) as f64;
            let nr = (order.len() - i - 1) as f64;
            let right_sum = total_sum - left_sum;
            let right_sq = total_sq - left_sq;
            // SSE = sum(y^2) - sum(y)^2 / n, per side
            let sse = (left_sq - left_sum * left_sum / nl) + (right_sq - right_sum * right_sum / nr);
            let threshold = 0.5 * (xa + xb);
            if best.map_or(true, |(b, _, _)| sse < b) {
                best = Some((sse, feature, threshold));
            }
        }
    }

    let base_sse: f64 = rows.iter().map(|&r| (ys[r] - mean) * (ys[r] - mean)).sum();
    match best {
        Some((sse, feature, threshold)) if sse < base_sse - 1e-12 => {
            let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
                rows.iter().partition(|&&r| xs[r][feature] < threshold);
            TreeNode::Split {
                feature,
                threshold,
                left: Box::new(fit_tree(xs, ys, &left_rows, depth_left - 1)),
                right: Box::new(fit_tree(xs, ys, &right_rows, depth_left - 1)),
            }
        }
        _ => TreeNode::Leaf { value: mean },
    }
}

/// Squared-error gradient boosting: the base prediction is the target mean
/// and each round fits a depth-limited tree to the current residuals.
pub fn fit_boosted(
    dataset: &[(Vec<f64>, f64)],
    rounds: usize,
    max_depth: usize,
    learning_rate: f64,
) -> Result<BoostedModel, SurrogateError> {
    if dataset.is_empty() {
        return Err(SurrogateError::EmptyDataset);
    }
    let width = dataset[0].0.len();
    for (x, _) in dataset {
        if x.len() != width {
            return Err(SurrogateError::RaggedFeatures(width, x.len()));
        }
    }
    let xs: Vec<Vec<f64>> = dataset.iter().map(|(x, _)| x.clone()).collect();
    let base_prediction = dataset.iter().map(|(_, y)| y).sum::<f64>() / dataset.len() as f64;
    let mut residuals: Vec<f64> = dataset.iter().map(|(_, y)| y - base_prediction).collect();
    let rows: Vec<usize> = (0..dataset.len()).collect();

    let mut trees = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let tree = fit_tree(&xs, &residuals, &rows, max_depth);
        for (r, x) in residuals.iter_mut().zip(xs.iter()) {
            *r -= learning_rate * tree.predict(x);
        }
        trees.push(tree);
    }
    Ok(BoostedModel { trees, learning_rate, base_prediction })
}

/// Mean squared error of a model on a dataset.
pub fn training_mse(model: &BoostedModel, dataset: &[(Vec<f64>, f64)]) -> f64 {
    dataset
        .iter()
        .map(|(x, y)| {
            let e = model.predict(x) - y;
            e * e
        })
        .sum::<f64>()
        / dataset.len() as f64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ensemble {
    pub models: Vec<BoostedModel>,
}

/// Per-model RNG stream, independent of fitting order so parallel training
/// is deterministic.
fn model_rng(seed: u64, training_round: u64, model_index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&training_round.to_le_bytes());
    key[16..24].copy_from_slice(&model_index.to_le_bytes());
    key[24..32].copy_from_slice(&0x5851_f42d_4c95_7f2du64.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Fit `ensemble_size` boosted models, each on a bootstrap resample of size
/// `2 * dataset.len()` drawn with replacement from its own seeded stream.
pub fn fit_ensemble(
    dataset: &[(Vec<f64>, f64)],
    opts: &SurrogateOptions,
    seed: u64,
    training_round: u64,
) -> Result<Ensemble, SurrogateError> {
    if dataset.is_empty() {
        return Err(SurrogateError::EmptyDataset);
    }
    let models = (0..opts.ensemble_size)
        .into_par_iter()
        .map(|i| {
            let mut rng = model_rng(seed, training_round, i as u64);
            let resample: Vec<(Vec<f64>, f64)> = (0..dataset.len() * BOOTSTRAP_FACTOR)
                .map(|_| dataset[rng.random_range(0..dataset.len())].clone())
                .collect();
            fit_boosted(&resample, opts.boost_rounds, opts.max_depth, opts.learning_rate)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Ensemble { models })
}

/// Linear interpolation between order statistics (the usual "type 7"
/// quantile): position `(n - 1) q` in the sorted sample.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let i = h.floor() as usize;
    if i + 1 >= n {
        return sorted[n - 1];
    }
    sorted[i] + (h - i as f64) * (sorted[i + 1] - sorted[i])
}

impl Ensemble {
    /// Mean prediction plus the empirical 2.5th / 97.5th percentile band over
    /// the per-model predictions.
    pub fn predict_ci(&self, x: &[f64]) -> (f64, f64, f64) {
        let mut preds: Vec<f64> = self.models.iter().map(|m| m.predict(x)).collect();
        let mean = preds.iter().sum::<f64>() / preds.len() as f64;
        preds.sort_by(f64::total_cmp);
        (mean, percentile(&preds, 0.025), percentile(&preds, 0.975))
    }

    fn predict_hi(&self, x: &[f64]) -> f64 {
        self.predict_ci(x).2
    }
}

/// Propose the next configuration: hill-climb from the best configurations
/// seen so far, moving while a neighbor improves the predicted 95% upper
/// bound, pool the visited points with `random_pool` fresh samples, and take
/// the pooled candidate with the highest predicted upper bound that is not
/// already in the history. `None` when every candidate duplicates history.
pub fn propose(
    ensemble: &Ensemble,
    history: &[(ValueMap, f64)],
    space: &ConfigurationSpace,
    rng: &mut ChaCha8Rng,
    opts: &SurrogateOptions,
) -> Option<ValueMap> {
    assert!(!history.is_empty(), "propose needs a non-empty history");
    let mut starts: Vec<usize> = (0..history.len()).collect();
    starts.sort_by(|&a, &b| history[b].1.total_cmp(&history[a].1).then(a.cmp(&b)));
    starts.truncate(opts.local_search_starts);

    let hi_of = |values: &ValueMap| -> f64 {
        let x = space.normalize(values).expect("candidates come from the space");
        ensemble.predict_hi(&x)
    };

    let mut pool: Vec<ValueMap> = Vec::new();
    for &s in &starts {
        let mut current = history[s].0.clone();
        let mut current_hi = hi_of(&current);
        for _ in 0..opts.walk_budget {
            let neighbors = space.neighbors(&current, rng).expect("history values are valid");
            let best = neighbors
                .into_iter()
                .map(|v| {
                    let h = hi_of(&v);
                    (v, h)
                })
                .max_by(|(_, a), (_, b)| a.total_cmp(b))?;
            if best.1 > current_hi {
                current = best.0.clone();
                current_hi = best.1;
                pool.push(best.0);
            } else {
                break;
            }
        }
    }
    for _ in 0..opts.random_pool {
        pool.push(space.sample_values(rng));
    }

    let scored: Vec<(usize, f64)> = pool
        .par_iter()
        .enumerate()
        .map(|(i, v)| (i, hi_of(v)))
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, h) in scored {
        if history.iter().any(|(hv, _)| hv == &pool[i]) {
            continue;
        }
        if best.map_or(true, |(_, bh)| h > bh) {
            best = Some((i, h));
        }
    }
    best.map(|(i, _)| pool.swap_remove(i))
}
