//! Regularized squared-loss gradient boosting with exact greedy splits.
//!
//! Two growth policies share one split engine: `Levelwise` expands every
//! frontier node up to a depth cap, `Leafwise` repeatedly splits the
//! best-gain leaf up to a leaf cap. With squared loss each row's hessian
//! is 1, so a node's hessian sum is its row count; leaf weights are
//! `-G / (H + lambda)` and split gains
//! `0.5 * (GL^2/(HL+l) + GR^2/(HR+l) - G^2/(H+l)) - gamma`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::matrix::FeatureMatrix;

use super::Algorithm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        weight: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    fn leaf_value(&self, row: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { weight } => return *weight,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if row[*feature] < *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

/// Boosted-tree model with per-feature accumulated split gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub algorithm: Algorithm,
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
    /// Summed split gain per feature across all trees.
    pub gain_by_feature: Vec<f64>,
    pub n_features: usize,
    /// Training MSE after each boosting round.
    pub train_loss: Vec<f64>,
}

impl GbtModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut out = self.base_score;
        for tree in &self.trees {
            out += self.learning_rate * tree.leaf_value(row);
        }
        out
    }

    /// Root-mean aggregated importance: `sqrt(total_gain / n_trees)` per
    /// feature; features never split on score exactly 0.
    pub fn feature_importance(&self) -> Vec<f64> {
        let e = self.trees.len();
        if e == 0 {
            return vec![0.0; self.n_features];
        }
        self.gain_by_feature
            .iter()
            .map(|&g| (g.max(0.0) / e as f64).sqrt())
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub(super) enum Growth {
    Levelwise { max_depth: usize },
    Leafwise { max_leaves: usize },
}

#[derive(Debug, Clone, Copy)]
pub(super) struct GbtParams {
    pub rounds: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub min_samples_leaf: usize,
    pub growth: Growth,
}

/// A frontier node during growth: its rows, pre-sorted per feature.
struct GrowNode {
    node_idx: usize,
    depth: usize,
    rows_by_feature: Vec<Vec<u32>>,
    grad_sum: f64,
}

#[derive(Debug, Clone, Copy)]
struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

struct Candidate {
    split: BestSplit,
    seq: usize,
    node: GrowNode,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.split.gain == other.split.gain && self.seq == other.seq
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        // Max-heap on gain; ties pop in insertion order.
        self.split
            .gain
            .total_cmp(&other.split.gain)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Trainer<'a> {
    cols: &'a [Vec<f64>],
    grad: Vec<f64>,
    params: GbtParams,
}

impl Trainer<'_> {
    fn node_score(&self, grad_sum: f64, count: usize) -> f64 {
        grad_sum * grad_sum / (count as f64 + self.params.lambda)
    }

    /// Exact greedy scan over midpoints of consecutive distinct values.
    /// Strict improvement comparisons break ties toward the lowest
    /// feature index, then the lowest threshold.
    fn best_split(&self, node: &GrowNode) -> Option<BestSplit> {
        let n = node.rows_by_feature[0].len();
        if n < 2 * self.params.min_samples_leaf {
            return None;
        }
        let parent = self.node_score(node.grad_sum, n);
        let mut best: Option<BestSplit> = None;
        for (f, rows) in node.rows_by_feature.iter().enumerate() {
            let col = &self.cols[f];
            let mut grad_left = 0.0;
            for (pos, &r) in rows[..n - 1].iter().enumerate() {
                grad_left += self.grad[r as usize];
                let v = col[r as usize];
                let v_next = col[rows[pos + 1] as usize];
                if v_next <= v {
                    continue;
                }
                let n_left = pos + 1;
                let n_right = n - n_left;
                if n_left < self.params.min_samples_leaf || n_right < self.params.min_samples_leaf {
                    continue;
                }
                let grad_right = node.grad_sum - grad_left;
                let gain = 0.5
                    * (self.node_score(grad_left, n_left) + self.node_score(grad_right, n_right)
                        - parent)
                    - self.params.gamma;
                if gain > best.map_or(0.0, |b| b.gain) {
                    best = Some(BestSplit {
                        gain,
                        feature: f,
                        threshold: 0.5 * (v + v_next),
                    });
                }
            }
        }
        best
    }

    fn leaf_weight(&self, grad_sum: f64, count: usize) -> f64 {
        -grad_sum / (count as f64 + self.params.lambda)
    }

    /// Partition the node's per-feature sorted rows by the chosen split;
    /// the filtered lists stay sorted.
    fn split_node(
        &self,
        node: GrowNode,
        split: &BestSplit,
        tree: &mut Tree,
    ) -> (GrowNode, GrowNode) {
        let fcol = &self.cols[split.feature];
        let goes_left = |r: u32| fcol[r as usize] < split.threshold;

        let mut left_rows = Vec::with_capacity(node.rows_by_feature.len());
        let mut right_rows = Vec::with_capacity(node.rows_by_feature.len());
        for rows in &node.rows_by_feature {
            let (l, r): (Vec<u32>, Vec<u32>) = rows.iter().partition(|&&r| goes_left(r));
            left_rows.push(l);
            right_rows.push(r);
        }
        let left_grad: f64 = left_rows[0].iter().map(|&r| self.grad[r as usize]).sum();
        let right_grad = node.grad_sum - left_grad;

        let left_idx = tree.nodes.len();
        tree.nodes.push(Node::Leaf {
            weight: self.leaf_weight(left_grad, left_rows[0].len()),
        });
        let right_idx = tree.nodes.len();
        tree.nodes.push(Node::Leaf {
            weight: self.leaf_weight(right_grad, right_rows[0].len()),
        });
        tree.nodes[node.node_idx] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: left_idx,
            right: right_idx,
        };

        (
            GrowNode {
                node_idx: left_idx,
                depth: node.depth + 1,
                rows_by_feature: left_rows,
                grad_sum: left_grad,
            },
            GrowNode {
                node_idx: right_idx,
                depth: node.depth + 1,
                rows_by_feature: right_rows,
                grad_sum: right_grad,
            },
        )
    }

    fn grow_tree(&self, root_rows: &[Vec<u32>], gain_by_feature: &mut [f64]) -> Tree {
        let root_grad: f64 = root_rows[0].iter().map(|&r| self.grad[r as usize]).sum();
        let mut tree = Tree {
            nodes: vec![Node::Leaf {
                weight: self.leaf_weight(root_grad, root_rows[0].len()),
            }],
        };
        let root = GrowNode {
            node_idx: 0,
            depth: 0,
            rows_by_feature: root_rows.to_vec(),
            grad_sum: root_grad,
        };

        match self.params.growth {
            Growth::Levelwise { max_depth } => {
                let mut frontier = vec![root];
                while let Some(node) = frontier.pop() {
                    if node.depth >= max_depth {
                        continue;
                    }
                    if let Some(split) = self.best_split(&node) {
                        gain_by_feature[split.feature] += split.gain;
                        let (l, r) = self.split_node(node, &split, &mut tree);
                        frontier.push(l);
                        frontier.push(r);
                    }
                }
            }
            Growth::Leafwise { max_leaves } => {
                let mut heap: BinaryHeap<Candidate> = BinaryHeap::new();
                let mut seq = 0usize;
                let mut n_leaves = 1usize;
                if let Some(split) = self.best_split(&root) {
                    heap.push(Candidate {
                        split,
                        seq,
                        node: root,
                    });
                }
                while n_leaves < max_leaves {
                    let Some(cand) = heap.pop() else { break };
                    gain_by_feature[cand.split.feature] += cand.split.gain;
                    let (l, r) = self.split_node(cand.node, &cand.split, &mut tree);
                    n_leaves += 1;
                    for child in [l, r] {
                        if let Some(split) = self.best_split(&child) {
                            seq += 1;
                            heap.push(Candidate {
                                split,
                                seq,
                                node: child,
                            });
                        }
                    }
                }
            }
        }
        tree
    }
}

pub(super) fn fit_gbt(algorithm: Algorithm, x: &FeatureMatrix, params: GbtParams) -> GbtModel {
    let n = x.n_rows();
    let p = x.n_cols();
    let cols: Vec<Vec<f64>> = (0..p).map(|c| x.column(c)).collect();

    // One argsort per feature, reused as every tree's root ordering.
    let root_rows: Vec<Vec<u32>> = cols
        .iter()
        .map(|col| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
            idx
        })
        .collect();

    let base_score = if n == 0 {
        0.0
    } else {
        x.target.iter().sum::<f64>() / n as f64
    };
    let mut preds = vec![base_score; n];
    let mut gain_by_feature = vec![0.0; p];
    let mut trees = Vec::with_capacity(params.rounds);
    let mut train_loss = Vec::with_capacity(params.rounds);

    for _ in 0..params.rounds {
        let grad: Vec<f64> = preds.iter().zip(&x.target).map(|(p, y)| p - y).collect();
        let trainer = Trainer {
            cols: &cols,
            grad,
            params,
        };
        let tree = if p == 0 {
            let g: f64 = trainer.grad.iter().sum();
            Tree {
                nodes: vec![Node::Leaf {
                    weight: trainer.leaf_weight(g, n),
                }],
            }
        } else {
            trainer.grow_tree(&root_rows, &mut gain_by_feature)
        };
        for (i, pred) in preds.iter_mut().enumerate() {
            *pred += params.learning_rate * tree.leaf_value(x.row(i));
        }
        trees.push(tree);
        let mse = preds
            .iter()
            .zip(&x.target)
            .map(|(p, y)| (p - y) * (p - y))
            .sum::<f64>()
            / n.max(1) as f64;
        train_loss.push(mse);
    }

    GbtModel {
        algorithm,
        base_score,
        learning_rate: params.learning_rate,
        trees,
        gain_by_feature,
        n_features: p,
        train_loss,
    }
}
