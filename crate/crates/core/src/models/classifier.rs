use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::TabularDataset;
use crate::error::{Error, Result};
use crate::protocol::predict_label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Classical,
    TfmIcl,
    TfmFinetuned,
}

pub type Hyperparameters = BTreeMap<String, Value>;

/// A binary classifier over tabular rows.
///
/// Fitting is exclusive; a fitted classifier is read-only and may serve
/// concurrent predictions.
pub trait Classifier: Send + Sync {
    fn name(&self) -> &str;

    fn kind(&self) -> ClassifierKind;

    fn hyperparameters(&self) -> Hyperparameters;

    fn backend_version(&self) -> String;

    fn fit(&mut self, train: &TabularDataset) -> Result<()>;

    /// Positive-class probability per query row.
    fn predict_proba(&self, query: ArrayView2<'_, f64>) -> Result<Vec<f64>>;

    /// Columns `[p(0), p(1)]`.
    fn predict_proba_both(&self, query: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let p = self.predict_proba(query)?;
        Ok(Array2::from_shape_fn((p.len(), 2), |(i, c)| {
            if c == 1 {
                p[i]
            } else {
                1.0 - p[i]
            }
        }))
    }

    fn predict(&self, query: ArrayView2<'_, f64>) -> Result<Vec<u8>> {
        Ok(self
            .predict_proba(query)?
            .into_iter()
            .map(|p| predict_label(p, 0.5))
            .collect())
    }

    /// Digest of pretrained weights, when the backend has any.
    fn checkpoint_digest(&self) -> Option<String> {
        None
    }

    /// Backend-specific record of the last fit.
    fn fit_report(&self) -> Option<Value> {
        None
    }
}

pub(crate) fn require_fittable(train: &TabularDataset) -> Result<()> {
    if train.n_rows() == 0 || train.n_features() == 0 {
        return Err(Error::invalid("training data is empty"));
    }
    if !train.has_both_classes() {
        return Err(Error::SingleClass);
    }
    Ok(())
}

pub(crate) fn require_width(expected: usize, query: ArrayView2<'_, f64>) -> Result<()> {
    if query.ncols() != expected {
        return Err(Error::WidthMismatch {
            expected,
            actual: query.ncols(),
        });
    }
    if query.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("query contains non-finite values"));
    }
    Ok(())
}

/// Typed access to a hyperparameter map with unknown-key rejection.
pub(crate) struct ParamReader<'a> {
    backend: &'a str,
    params: &'a Hyperparameters,
}

impl<'a> ParamReader<'a> {
    pub fn new(backend: &'a str, params: &'a Hyperparameters, allowed: &[&str]) -> Result<Self> {
        if let Some(k) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::Config(format!(
                "backend {backend} does not accept hyperparameter {k:?}; allowed: {}",
                allowed.join(", ")
            )));
        }
        Ok(Self { backend, params })
    }

    fn bad(&self, key: &str, want: &str) -> Error {
        Error::Config(format!(
            "hyperparameter {key:?} of {} must be {want}, got {}",
            self.backend, self.params[key]
        ))
    }

    pub fn f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.params.get(key) {
            None => Ok(default),
            Some(v) => v.as_f64().ok_or_else(|| self.bad(key, "a number")),
        }
    }

    pub fn usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.params.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_u64()
                .map(|n| n as usize)
                .ok_or_else(|| self.bad(key, "a non-negative integer")),
        }
    }

    pub fn opt_usize(&self, key: &str) -> Result<Option<usize>> {
        match self.params.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(_) => self.usize(key, 0).map(Some),
        }
    }

    pub fn value(&self, key: &str) -> Option<&Value> {
        self.params.get(key)
    }
}
