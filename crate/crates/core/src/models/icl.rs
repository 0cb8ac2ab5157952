//! In-context classification with a pretrained foundation model.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::classifier::{require_fittable, require_width, Classifier, ClassifierKind, Hyperparameters};
use super::tfm::InContextModel;
use crate::dataset::TabularDataset;
use crate::error::{Error, Result};
use crate::finetune::sigmoid;

/// Labelled rows shown to the model at inference time.
#[derive(Debug, Clone, PartialEq)]
pub struct IclContext {
    pub features: Array2<f64>,
    pub labels: Vec<u8>,
    pub proportion: f64,
    /// Rows of the source split, ascending.
    pub indices: Vec<usize>,
}

/// Class-stratified, seeded subsample of `proportion` of the rows.
///
/// The total is `round(n * proportion)`, split across classes by largest
/// remainder. Rows keep their original order.
pub fn subsample_context(train: &TabularDataset, proportion: f64, seed: u64) -> Result<IclContext> {
    if !(proportion > 0.0 && proportion <= 1.0) {
        return Err(Error::invalid(format!(
            "context proportion must lie in (0, 1], got {proportion}"
        )));
    }
    require_fittable(train)?;
    let n = train.n_rows();
    let labels = train.labels();
    let indices = if proportion == 1.0 {
        (0..n).collect()
    } else {
        let target = ((n as f64 * proportion).round() as usize).max(1);
        let by_class: [Vec<usize>; 2] =
            [0u8, 1].map(|c| (0..n).filter(|&i| labels[i] == c).collect());
        let exact: [f64; 2] = [0, 1].map(|c| by_class[c].len() as f64 * target as f64 / n as f64);
        let mut quota: [usize; 2] = exact.map(|e| e.floor() as usize);
        let mut order = [0usize, 1];
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
        let mut left = target - quota[0] - quota[1];
        for c in order {
            if left == 0 {
                break;
            }
            quota[c] += 1;
            left -= 1;
        }
        if quota.contains(&0) {
            return Err(Error::invalid(format!(
                "context proportion {proportion} leaves a class without rows"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = Vec::with_capacity(target);
        for c in 0..2 {
            let mut rows = by_class[c].clone();
            rows.shuffle(&mut rng);
            picked.extend_from_slice(&rows[..quota[c]]);
        }
        picked.sort_unstable();
        picked
    };
    Ok(IclContext {
        features: train.features().select(Axis(0), &indices),
        labels: indices.iter().map(|&i| labels[i]).collect(),
        proportion,
        indices,
    })
}

/// Stores a (possibly subsampled) training split and predicts each query
/// batch in one forward pass; weights are never updated.
pub struct IclClassifier {
    name: String,
    model: Arc<dyn InContextModel>,
    proportion: f64,
    seed: u64,
    context: Option<IclContext>,
}

impl IclClassifier {
    pub fn new(name: impl Into<String>, model: Arc<dyn InContextModel>, proportion: f64, seed: u64) -> Self {
        Self {
            name: name.into(),
            model,
            proportion,
            seed,
            context: None,
        }
    }

    pub fn context(&self) -> Option<&IclContext> {
        self.context.as_ref()
    }
}

impl Classifier for IclClassifier {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> ClassifierKind {
        ClassifierKind::TfmIcl
    }

    fn hyperparameters(&self) -> Hyperparameters {
        [
            ("context_proportion".to_string(), json!(self.proportion)),
            ("seed".to_string(), json!(self.seed)),
        ]
        .into()
    }

    fn backend_version(&self) -> String {
        self.model.version()
    }

    fn fit(&mut self, train: &TabularDataset) -> Result<()> {
        let before = self.model.parameter_checksum();
        let context = subsample_context(train, self.proportion, self.seed)?;
        if self.model.parameter_checksum() != before {
            return Err(Error::Backend("model weights changed during in-context fit".into()));
        }
        self.context = Some(context);
        Ok(())
    }

    fn predict_proba(&self, query: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let ctx = self.context.as_ref().ok_or(Error::NotFitted)?;
        require_width(ctx.features.ncols(), query)?;
        let z = self.model.predict_logits(ctx.features.view(), &ctx.labels, query)?;
        Ok(z.into_iter().map(sigmoid).collect())
    }

    fn checkpoint_digest(&self) -> Option<String> {
        Some(self.model.parameter_checksum())
    }
}
