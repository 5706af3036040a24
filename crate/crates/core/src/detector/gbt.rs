//! Gradient-boosted regression trees on the logistic loss, grown level by
//! level with second-order (Newton) split gains and leaf values.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::logistic::{sigmoid, softplus};
use super::{design, require_both_classes};
use crate::attribution::FeatureDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbtHyper {
    pub trees: usize,
    pub depth: usize,
    pub lr: f64,
    /// Fraction of rows drawn (without replacement) for each tree.
    pub subsample: f64,
    pub seed: u64,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    /// Minimum hessian sum on each side of a split.
    pub min_child_weight: f64,
}

impl Default for GbtHyper {
    fn default() -> Self {
        GbtHyper {
            trees: 100,
            depth: 3,
            lr: 0.1,
            subsample: 1.0,
            seed: 0,
            lambda: 1.0,
            min_child_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum TreeNode {
    /// Rows with `x[feature] < threshold` go left.
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Node 0 is the root.
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, x: &[f32]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if (x[feature] as f64) < threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], at: usize) -> usize {
            match nodes[at] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub dimension: usize,
    /// Log-odds of the training prior.
    pub base_score: f64,
    pub hyper: GbtHyper,
    pub trees: Vec<Tree>,
    /// Mean training loss before any tree and after each one.
    pub train_loss: Vec<f64>,
}

impl GbtModel {
    pub fn score(&self, features: &[f32]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict(features)).sum::<f64>()
    }
}

fn mean_loss(margins: &[f64], y: &[f64]) -> f64 {
    margins.iter().zip(y).map(|(&z, &t)| softplus(z) - t * z).sum::<f64>() / y.len() as f64
}

#[derive(Clone, Copy)]
struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Running left-side sums while scanning one feature for one node.
#[derive(Clone, Copy, Default)]
struct Scan {
    g: f64,
    h: f64,
    last: Option<f32>,
}

const NO_NODE: usize = usize::MAX;

fn grow_tree(
    x: &[Vec<f32>],
    order: &[Vec<usize>],
    grad: &[f64],
    hess: &[f64],
    sampled: &[bool],
    hyper: &GbtHyper,
) -> Tree {
    let n = x.len();
    let mut node_of: Vec<usize> = (0..n).map(|i| if sampled[i] { 0 } else { NO_NODE }).collect();
    // Per node: gradient and hessian sums; `None` once finalised.
    let mut nodes: Vec<Option<TreeNode>> = vec![None];
    let mut sums: Vec<(f64, f64)> = vec![(0.0, 0.0)];
    for i in (0..n).filter(|&i| sampled[i]) {
        sums[0].0 += grad[i];
        sums[0].1 += hess[i];
    }
    let lambda = hyper.lambda;
    let score = |g: f64, h: f64| g * g / (h + lambda);
    let mut frontier = vec![0usize];
    for level in 0..=hyper.depth {
        if frontier.is_empty() {
            break;
        }
        let mut best: Vec<Option<Best>> = vec![None; nodes.len()];
        if level < hyper.depth {
            let mut scan = vec![Scan::default(); nodes.len()];
            for (f, sorted) in order.iter().enumerate() {
                for &a in &frontier {
                    scan[a] = Scan::default();
                }
                for &i in sorted {
                    let a = node_of[i];
                    if a == NO_NODE || nodes[a].is_some() {
                        continue;
                    }
                    let v = x[i][f];
                    let s = &mut scan[a];
                    if let Some(last) = s.last {
                        let (g, h) = sums[a];
                        if v != last && s.h >= hyper.min_child_weight && h - s.h >= hyper.min_child_weight {
                            let gain = 0.5 * (score(s.g, s.h) + score(g - s.g, h - s.h) - score(g, h));
                            if gain > 1e-12 && best[a].is_none_or(|b| gain > b.gain) {
                                best[a] = Some(Best {
                                    gain,
                                    feature: f,
                                    threshold: (last as f64 + v as f64) / 2.0,
                                });
                            }
                        }
                    }
                    s.g += grad[i];
                    s.h += hess[i];
                    s.last = Some(v);
                }
            }
        }
        let mut next = Vec::new();
        for &a in &frontier {
            match best[a] {
                Some(b) => {
                    let (l, r) = (nodes.len(), nodes.len() + 1);
                    nodes.push(None);
                    nodes.push(None);
                    sums.push((0.0, 0.0));
                    sums.push((0.0, 0.0));
                    nodes[a] = Some(TreeNode::Split {
                        feature: b.feature,
                        threshold: b.threshold,
                        left: l,
                        right: r,
                    });
                    next.push(l);
                    next.push(r);
                }
                None => {
                    let (g, h) = sums[a];
                    nodes[a] = Some(TreeNode::Leaf {
                        value: -hyper.lr * g / (h + lambda),
                    });
                }
            }
        }
        for i in 0..n {
            let a = node_of[i];
            if a == NO_NODE {
                continue;
            }
            if let Some(TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            }) = nodes[a]
            {
                let child = if (x[i][feature] as f64) < threshold { left } else { right };
                node_of[i] = child;
                sums[child].0 += grad[i];
                sums[child].1 += hess[i];
            }
        }
        frontier = next;
    }
    Tree {
        nodes: nodes.into_iter().map(|n| n.expect("every node finalised")).collect(),
    }
}

/// Stage-wise boosting: each tree is fit to the gradient and hessian of the
/// logistic loss at the current margins and added with shrinkage `lr`.
pub fn train_gbt(train: &FeatureDataset, hyper: &GbtHyper) -> Result<GbtModel> {
    require_both_classes(train, "training set")?;
    if hyper.trees == 0 || !(hyper.lr > 0.0) || !(hyper.subsample > 0.0 && hyper.subsample <= 1.0) || !(hyper.lambda >= 0.0) {
        return Err(Error::Config(format!("bad GBT hyperparameters {hyper:?}")));
    }
    let (x, y) = design(train);
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("non-finite feature value".into()));
    }
    let n = x.len();
    let order: Vec<Vec<usize>> = (0..train.dimension)
        .map(|f| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
            idx
        })
        .collect();
    let prior = y.iter().sum::<f64>() / n as f64;
    let base_score = (prior / (1.0 - prior)).ln();
    let mut margins = vec![base_score; n];
    let mut train_loss = vec![mean_loss(&margins, &y)];
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let keep = ((hyper.subsample * n as f64).round() as usize).clamp(1, n);
    let mut trees = Vec::with_capacity(hyper.trees);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for _ in 0..hyper.trees {
        for i in 0..n {
            let p = sigmoid(margins[i]);
            grad[i] = p - y[i];
            hess[i] = p * (1.0 - p);
        }
        let mut sampled = vec![keep == n; n];
        if keep < n {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            for &i in &idx[..keep] {
                sampled[i] = true;
            }
        }
        let tree = grow_tree(&x, &order, &grad, &hess, &sampled, hyper);
        for (m, row) in margins.iter_mut().zip(&x) {
            *m += tree.predict(row);
        }
        train_loss.push(mean_loss(&margins, &y));
        trees.push(tree);
    }
    Ok(GbtModel {
        dimension: train.dimension,
        base_score,
        hyper: *hyper,
        trees,
        train_loss,
    })
}
