//! Random forest: bootstrap-weighted Gini trees on `floor(sqrt(p))`
//! candidate features per split, with averaged leaf probabilities.

use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::tree::{DecisionTree, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub max_depth: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_estimators: 100,
            max_depth: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RandomForest {
    trees: Vec<DecisionTree>,
}

impl RandomForest {
    pub fn fit(x: ArrayView2<'_, f64>, y: &[u8], params: ForestParams) -> Self {
        let n = x.nrows();
        let max_features = ((x.ncols() as f64).sqrt().floor() as usize).max(1);
        let tree_params = TreeParams {
            max_depth: params.max_depth,
            max_features: Some(max_features),
            ..TreeParams::default()
        };
        let trees = (0..params.n_estimators)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
                rng.set_stream(t as u64 + 1);
                let mut w = vec![0.0; n];
                for _ in 0..n {
                    w[rng.random_range(0..n)] += 1.0;
                }
                let idx: Vec<usize> = (0..n).filter(|&i| w[i] > 0.0).collect();
                DecisionTree::fit(x, y, &w, idx, tree_params, &mut rng)
            })
            .collect();
        Self { trees }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}
