use serde::{Deserialize, Serialize};

use super::features::{check_training_set, AttackFeature, FeatureMode};
use crate::error::{Error, Result};
use crate::numerics::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// L2 penalty on leaf values.
    pub lambda: f64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        Self {
            n_trees: 50,
            max_depth: 3,
            learning_rate: 0.1,
            lambda: 1.0,
        }
    }
}

/// Splits with gain at or below this are not taken.
const MIN_SPLIT_GAIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    /// `x[feature] < threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TreeNode::Leaf { value } => *value,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] < *threshold {
                    left.eval(x)
                } else {
                    right.eval(x)
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

/// Gradient-boosted regression trees on the logistic loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub config: GbdtConfig,
    /// Log-odds of the positive rate.
    pub base_score: f64,
    pub trees: Vec<TreeNode>,
}

impl GbdtModel {
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.base_score
            + self
                .trees
                .iter()
                .map(|t| self.config.learning_rate * t.eval(x))
                .sum::<f64>()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.margin(x))
    }
}

pub fn train_gbdt(features: &[AttackFeature], labels: &[u8], config: &GbdtConfig) -> Result<GbdtModel> {
    let (mode, _) = check_training_set(features, labels)?;
    if mode != FeatureMode::Black {
        return Err(Error::ModeMismatch {
            expected: FeatureMode::Black.to_string(),
            got: mode.to_string(),
        });
    }
    if config.lambda < 0.0 || config.learning_rate.is_nan() || config.learning_rate <= 0.0 {
        return Err(Error::Config("gbdt needs lambda >= 0 and learning_rate > 0".into()));
    }
    let xs: Vec<&[f64]> = features.iter().map(|f| f.values.as_slice()).collect();
    let ys: Vec<f64> = labels.iter().map(|&y| f64::from(y)).collect();
    let rate = ys.iter().sum::<f64>() / ys.len() as f64;
    let base_score = (rate / (1.0 - rate)).ln();

    let mut margin = vec![base_score; xs.len()];
    let mut trees = Vec::with_capacity(config.n_trees);
    let all: Vec<usize> = (0..xs.len()).collect();
    for _ in 0..config.n_trees {
        let mut g = vec![0.0; xs.len()];
        let mut h = vec![0.0; xs.len()];
        for i in 0..xs.len() {
            let p = sigmoid(margin[i]);
            g[i] = p - ys[i];
            h[i] = p * (1.0 - p);
        }
        let tree = grow(&xs, &g, &h, &all, config.max_depth, config.lambda);
        for (m, x) in margin.iter_mut().zip(&xs) {
            *m += config.learning_rate * tree.eval(x);
        }
        trees.push(tree);
    }
    Ok(GbdtModel {
        config: *config,
        base_score,
        trees,
    })
}

fn leaf_value(g: f64, h: f64, lambda: f64) -> f64 {
    -g / (h + lambda)
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

/// Exact greedy growth: every midpoint between consecutive distinct values
/// of every feature is a candidate; the first best split wins.
fn grow(xs: &[&[f64]], g: &[f64], h: &[f64], idx: &[usize], depth: usize, lambda: f64) -> TreeNode {
    let gs: f64 = idx.iter().map(|&i| g[i]).sum();
    let hs: f64 = idx.iter().map(|&i| h[i]).sum();
    let leaf = TreeNode::Leaf {
        value: leaf_value(gs, hs, lambda),
    };
    if depth == 0 || idx.len() < 2 {
        return leaf;
    }
    let parent = score(gs, hs, lambda);
    let n_features = xs[idx[0]].len();
    let mut best: Option<(f64, usize, f64)> = None;
    for f in 0..n_features {
        let mut sorted = idx.to_vec();
        sorted.sort_by(|&a, &b| xs[a][f].total_cmp(&xs[b][f]).then(a.cmp(&b)));
        let (mut gl, mut hl) = (0.0, 0.0);
        for w in 0..sorted.len() - 1 {
            let i = sorted[w];
            gl += g[i];
            hl += h[i];
            let (lo, hi) = (xs[i][f], xs[sorted[w + 1]][f]);
            if lo == hi {
                continue;
            }
            let gain = score(gl, hl, lambda) + score(gs - gl, hs - hl, lambda) - parent;
            if gain > MIN_SPLIT_GAIN && best.is_none_or(|(b, _, _)| gain > b) {
                best = Some((gain, f, lo + (hi - lo) / 2.0));
            }
        }
    }
    let Some((_, feature, threshold)) = best else {
        return leaf;
    };
    let (left, right): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| xs[i][feature] < threshold);
    TreeNode::Split {
        feature,
        threshold,
        left: Box::new(grow(xs, g, h, &left, depth - 1, lambda)),
        right: Box::new(grow(xs, g, h, &right, depth - 1, lambda)),
    }
}
