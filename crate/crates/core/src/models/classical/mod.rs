//! Classical baselines behind the [`Classifier`] interface.

use ndarray::{Array2, ArrayView2};
use serde_json::{json, Value};

use super::classifier::{require_fittable, require_width, Classifier, ClassifierKind, Hyperparameters, ParamReader};
use crate::dataset::TabularDataset;
use crate::error::{Error, Result};

pub mod boosting;
pub mod forest;
pub mod svm;
pub mod tree;

pub use boosting::{BoostingParams, GradientBoosting};
pub use forest::{ForestParams, RandomForest};
pub use svm::{Gamma, Svm, SvmParams};
pub use tree::{DecisionTree, TreeParams};

const VERSION: &str = concat!("empathy-bench-classical/", env!("CARGO_PKG_VERSION"));

fn rows_proba(query: ArrayView2<'_, f64>, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let q: Array2<f64> = query.as_standard_layout().into_owned();
    q.rows()
        .into_iter()
        .map(|r| f(r.as_slice().expect("standard layout")).clamp(0.0, 1.0))
        .collect()
}

#[derive(Debug, Clone)]
pub struct XgboostClassifier {
    params: BoostingParams,
    model: Option<(GradientBoosting, usize)>,
}

impl XgboostClassifier {
    pub const NAME: &'static str = "xgboost";

    pub fn new(params: BoostingParams) -> Self {
        Self { params, model: None }
    }

    pub fn from_hyperparameters(h: &Hyperparameters) -> Result<Self> {
        let r = ParamReader::new(Self::NAME, h, &["max_depth", "learning_rate", "n_estimators"])?;
        let d = BoostingParams::default();
        let params = BoostingParams {
            max_depth: r.usize("max_depth", d.max_depth)?,
            learning_rate: r.f64("learning_rate", d.learning_rate)?,
            n_estimators: r.usize("n_estimators", d.n_estimators)?,
            ..d
        };
        if !(params.learning_rate > 0.0) || params.n_estimators == 0 {
            return Err(Error::Config("xgboost needs learning_rate > 0 and n_estimators > 0".into()));
        }
        Ok(Self::new(params))
    }
}

impl Classifier for XgboostClassifier {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn kind(&self) -> ClassifierKind {
        ClassifierKind::Classical
    }

    fn hyperparameters(&self) -> Hyperparameters {
        let p = &self.params;
        [
            ("max_depth", json!(p.max_depth)),
            ("learning_rate", json!(p.learning_rate)),
            ("n_estimators", json!(p.n_estimators)),
            ("lambda", json!(p.lambda)),
            ("gamma", json!(p.gamma)),
            ("min_child_weight", json!(p.min_child_weight)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    fn backend_version(&self) -> String {
        VERSION.into()
    }

    fn fit(&mut self, train: &TabularDataset) -> Result<()> {
        require_fittable(train)?;
        let m = GradientBoosting::fit(train.features().view(), train.labels(), self.params);
        self.model = Some((m, train.n_features()));
        Ok(())
    }

    fn predict_proba(&self, query: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let (m, width) = self.model.as_ref().ok_or(Error::NotFitted)?;
        require_width(*width, query)?;
        Ok(rows_proba(query, |r| m.predict_row(r)))
    }
}

#[derive(Debug, Clone)]
pub struct RandomForestClassifier {
    params: ForestParams,
    model: Option<(RandomForest, usize)>,
}

impl RandomForestClassifier {
    pub const NAME: &'static str = "random_forest";

    pub fn new(params: ForestParams) -> Self {
        Self { params, model: None }
    }

    pub fn from_hyperparameters(h: &Hyperparameters, seed: u64) -> Result<Self> {
        let r = ParamReader::new(Self::NAME, h, &["n_estimators", "max_depth"])?;
        let d = ForestParams::default();
        let params = ForestParams {
            n_estimators: r.usize("n_estimators", d.n_estimators)?,
            max_depth: r.opt_usize("max_depth")?,
            seed,
        };
        if params.n_estimators == 0 {
            return Err(Error::Config("random_forest needs n_estimators > 0".into()));
        }
        Ok(Self::new(params))
    }
}

impl Classifier for RandomForestClassifier {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn kind(&self) -> ClassifierKind {
        ClassifierKind::Classical
    }

    fn hyperparameters(&self) -> Hyperparameters {
        let p = &self.params;
        [
            ("n_estimators", json!(p.n_estimators)),
            ("max_depth", json!(p.max_depth)),
            ("max_features", json!("sqrt")),
            ("seed", json!(p.seed)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    fn backend_version(&self) -> String {
        VERSION.into()
    }

    fn fit(&mut self, train: &TabularDataset) -> Result<()> {
        require_fittable(train)?;
        let m = RandomForest::fit(train.features().view(), train.labels(), self.params);
        self.model = Some((m, train.n_features()));
        Ok(())
    }

    fn predict_proba(&self, query: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let (m, width) = self.model.as_ref().ok_or(Error::NotFitted)?;
        require_width(*width, query)?;
        Ok(rows_proba(query, |r| m.predict_row(r)))
    }
}

#[derive(Debug, Clone)]
pub struct SvmClassifier {
    params: SvmParams,
    model: Option<(Svm, usize)>,
}

impl SvmClassifier {
    pub const NAME: &'static str = "svm";

    pub fn new(params: SvmParams) -> Self {
        Self { params, model: None }
    }

    pub fn from_hyperparameters(h: &Hyperparameters, seed: u64) -> Result<Self> {
        let r = ParamReader::new(Self::NAME, h, &["C", "gamma"])?;
        let gamma = match r.value("gamma") {
            None => Gamma::Scale,
            Some(Value::String(s)) if s == "scale" => Gamma::Scale,
            Some(v) => match v.as_f64() {
                Some(g) if g > 0.0 => Gamma::Value(g),
                _ => return Err(Error::Config(format!("svm gamma must be \"scale\" or > 0, got {v}"))),
            },
        };
        let c = r.f64("C", 1.0)?;
        if !(c > 0.0) {
            return Err(Error::Config(format!("svm C must be > 0, got {c}")));
        }
        Ok(Self::new(SvmParams { c, gamma, seed }))
    }
}

impl Classifier for SvmClassifier {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn kind(&self) -> ClassifierKind {
        ClassifierKind::Classical
    }

    fn hyperparameters(&self) -> Hyperparameters {
        let p = &self.params;
        let gamma = match p.gamma {
            Gamma::Scale => json!("scale"),
            Gamma::Value(g) => json!(g),
        };
        [("C", json!(p.c)), ("gamma", gamma), ("kernel", json!("rbf")), ("seed", json!(p.seed))]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    fn backend_version(&self) -> String {
        VERSION.into()
    }

    fn fit(&mut self, train: &TabularDataset) -> Result<()> {
        require_fittable(train)?;
        let m = Svm::fit(train.features().view(), train.labels(), self.params);
        self.model = Some((m, train.n_features()));
        Ok(())
    }

    fn predict_proba(&self, query: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let (m, width) = self.model.as_ref().ok_or(Error::NotFitted)?;
        require_width(*width, query)?;
        Ok(rows_proba(query, |r| m.predict_row(r)))
    }
}
