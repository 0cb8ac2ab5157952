//! Second-order gradient-boosted trees for the logistic loss with exact
//! greedy split search and L2-regularised leaf weights.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::finetune::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoostingParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
}

impl Default for BoostingParams {
    fn default() -> Self {
        Self {
            n_estimators: 100,
            max_depth: 6,
            learning_rate: 0.3,
            lambda: 1.0,
            gamma: 0.0,
            min_child_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    fn predict_row(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(w) => return w,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[feature] < threshold { left } else { right },
            }
        }
    }
}

struct Grower<'a> {
    x: ArrayView2<'a, f64>,
    g: &'a [f64],
    h: &'a [f64],
    params: BoostingParams,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.params.lambda)
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let (gs, hs) = idx
            .iter()
            .fold((0.0, 0.0), |(a, b), &i| (a + self.g[i], b + self.h[i]));
        let id = self.nodes.len();
        self.nodes
            .push(Node::Leaf(-gs / (hs + self.params.lambda) * self.params.learning_rate));
        if depth >= self.params.max_depth || idx.len() < 2 {
            return id;
        }
        let parent = self.score(gs, hs);
        let mut best: Option<(f64, usize, f64)> = None;
        for f in 0..self.x.ncols() {
            let mut order: Vec<(f64, usize)> = idx.iter().map(|&i| (self.x[[i, f]], i)).collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (mut gl, mut hl) = (0.0, 0.0);
            for k in 0..order.len() - 1 {
                let i = order[k].1;
                gl += self.g[i];
                hl += self.h[i];
                let (v, next) = (order[k].0, order[k + 1].0);
                if v == next {
                    continue;
                }
                let (gr, hr) = (gs - gl, hs - hl);
                if hl < self.params.min_child_weight || hr < self.params.min_child_weight {
                    continue;
                }
                let gain = 0.5 * (self.score(gl, hl) + self.score(gr, hr) - parent) - self.params.gamma;
                if gain > 1e-12 && best.is_none_or(|(b, _, _)| gain > b) {
                    best = Some((gain, f, v + (next - v) / 2.0));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return id;
        };
        let (left, right): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.x[[i, feature]] < threshold);
        let l = self.grow(left, depth + 1);
        let r = self.grow(right, depth + 1);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left: l,
            right: r,
        };
        id
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBoosting {
    base_margin: f64,
    trees: Vec<RegressionTree>,
}

impl GradientBoosting {
    /// The initial margin is the log-odds of the positive rate.
    pub fn fit(x: ArrayView2<'_, f64>, y: &[u8], params: BoostingParams) -> Self {
        let n = x.nrows();
        let rate = y.iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64;
        let rate = rate.clamp(1e-6, 1.0 - 1e-6);
        let base_margin = (rate / (1.0 - rate)).ln();
        let mut margin = vec![base_margin; n];
        let mut trees = Vec::with_capacity(params.n_estimators);
        let mut g = vec![0.0; n];
        let mut h = vec![0.0; n];
        for _ in 0..params.n_estimators {
            for i in 0..n {
                let p = sigmoid(margin[i]);
                g[i] = p - f64::from(y[i]);
                h[i] = (p * (1.0 - p)).max(1e-16);
            }
            let mut grower = Grower {
                x,
                g: &g,
                h: &h,
                params,
                nodes: Vec::new(),
            };
            grower.grow((0..n).collect(), 0);
            let tree = RegressionTree {
                nodes: grower.nodes,
            };
            for (i, row) in x.rows().into_iter().enumerate() {
                margin[i] += tree.predict_row(&row.to_vec());
            }
            trees.push(tree);
        }
        Self { base_margin, trees }
    }

    pub fn margin(&self, row: &[f64]) -> f64 {
        self.base_margin + self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        sigmoid(self.margin(row))
    }
}
