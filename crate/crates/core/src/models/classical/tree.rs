//! Weighted CART classification tree with Gini impurity.

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        positive: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    /// Features examined per split; all when `None`.
    pub max_features: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: None,
            max_features: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

struct Builder<'a, R> {
    x: ArrayView2<'a, f64>,
    y: &'a [u8],
    w: &'a [f64],
    params: TreeParams,
    rng: &'a mut R,
    nodes: Vec<Node>,
}

fn gini(pos: f64, total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    let p = pos / total;
    2.0 * p * (1.0 - p)
}

struct Best {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl<R: Rng> Builder<'_, R> {
    fn weights(&self, idx: &[usize]) -> (f64, f64) {
        idx.iter().fold((0.0, 0.0), |(t, p), &i| {
            (t + self.w[i], p + self.w[i] * f64::from(self.y[i]))
        })
    }

    /// Lowest weighted child impurity for `feature`, if any split is valid.
    fn best_for_feature(&self, idx: &[usize], feature: usize, total: f64, pos: f64) -> Option<(f64, f64)> {
        let mut order: Vec<(f64, usize)> = idx.iter().map(|&i| (self.x[[i, feature]], i)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        if order[0].0 == order[order.len() - 1].0 {
            return None;
        }
        let min_leaf = self.params.min_samples_leaf;
        let (mut lw, mut lp) = (0.0, 0.0);
        let mut best: Option<(f64, f64)> = None;
        for k in 0..order.len() - 1 {
            let i = order[k].1;
            lw += self.w[i];
            lp += self.w[i] * f64::from(self.y[i]);
            let (v, next) = (order[k].0, order[k + 1].0);
            if v == next || k + 1 < min_leaf || order.len() - k - 1 < min_leaf {
                continue;
            }
            let (rw, rp) = (total - lw, pos - lp);
            let score = lw * gini(lp, lw) + rw * gini(rp, rw);
            if best.is_none_or(|(s, _)| score < s) {
                let mut threshold = v + (next - v) / 2.0;
                if threshold >= next {
                    threshold = v;
                }
                best = Some((score, threshold));
            }
        }
        best
    }

    fn build(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let (total, pos) = self.weights(&idx);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            positive: if total > 0.0 { pos / total } else { 0.5 },
        });
        let pure = pos <= 0.0 || pos >= total;
        let deep = self.params.max_depth.is_some_and(|d| depth >= d);
        if pure || deep || idx.len() < self.params.min_samples_split.max(2) {
            return id;
        }

        let p = self.x.ncols();
        let mut features: Vec<usize> = (0..p).collect();
        features.shuffle(self.rng);
        let quota = self.params.max_features.unwrap_or(p).clamp(1, p);
        let mut best: Option<Best> = None;
        for (visited, &f) in features.iter().enumerate() {
            // Keep drawing past the quota until a valid split exists.
            if visited >= quota && best.is_some() {
                break;
            }
            if let Some((score, threshold)) = self.best_for_feature(&idx, f, total, pos) {
                if best.as_ref().is_none_or(|b| score < b.score) {
                    best = Some(Best {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }
        let Some(best) = best else { return id };
        let (left, right): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.x[[i, best.feature]] <= best.threshold);
        let l = self.build(left, depth + 1);
        let r = self.build(right, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left: l,
            right: r,
        };
        id
    }
}

impl DecisionTree {
    /// Grows a tree on the rows `idx` of `x` with per-row weights `w`.
    pub fn fit<R: Rng>(
        x: ArrayView2<'_, f64>,
        y: &[u8],
        w: &[f64],
        idx: Vec<usize>,
        params: TreeParams,
        rng: &mut R,
    ) -> Self {
        let mut b = Builder {
            x,
            y,
            w,
            params,
            rng,
            nodes: Vec::new(),
        };
        b.build(idx, 0);
        Self { nodes: b.nodes }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { positive } => return positive,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }
}
