//! A foundation model fine-tuned on each training split, then used
//! in-context with the whole split as context.

use std::path::PathBuf;

use ndarray::{Array2, ArrayView2};
use serde_json::{json, Value};

use super::classifier::{require_fittable, require_width, Classifier, ClassifierKind, Hyperparameters};
use super::tfm::TrainableModel;
use crate::dataset::TabularDataset;
use crate::error::{Error, Result};
use crate::finetune::{finetune, sigmoid, FinetuneConfig, FinetuneOutcome, ParameterSet};

pub struct FinetunedClassifier {
    name: String,
    model: Box<dyn TrainableModel>,
    pretrained: ParameterSet,
    config: FinetuneConfig,
    checkpoint_dir: Option<PathBuf>,
    context: Option<(Array2<f64>, Vec<u8>)>,
    outcome: Option<FinetuneOutcome>,
}

impl FinetunedClassifier {
    pub fn new(
        name: impl Into<String>,
        model: Box<dyn TrainableModel>,
        config: FinetuneConfig,
        checkpoint_dir: Option<PathBuf>,
    ) -> Result<Self> {
        config.validate()?;
        let pretrained = model.parameters().clone();
        Ok(Self {
            name: name.into(),
            model,
            pretrained,
            config,
            checkpoint_dir,
            context: None,
            outcome: None,
        })
    }

    pub fn outcome(&self) -> Option<&FinetuneOutcome> {
        self.outcome.as_ref()
    }

    pub fn model(&self) -> &dyn TrainableModel {
        self.model.as_ref()
    }

    pub fn config(&self) -> &FinetuneConfig {
        &self.config
    }
}

impl Classifier for FinetunedClassifier {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> ClassifierKind {
        ClassifierKind::TfmFinetuned
    }

    fn hyperparameters(&self) -> Hyperparameters {
        match serde_json::to_value(&self.config) {
            Ok(Value::Object(m)) => m.into_iter().collect(),
            _ => Hyperparameters::new(),
        }
    }

    fn backend_version(&self) -> String {
        self.model.version()
    }

    /// Restarts from the pretrained weights on every call.
    fn fit(&mut self, train: &TabularDataset) -> Result<()> {
        require_fittable(train)?;
        self.model.set_parameters(self.pretrained.clone())?;
        let outcome = finetune(
            self.model.as_mut(),
            train.features().view(),
            train.labels(),
            &self.config,
            self.checkpoint_dir.as_deref(),
        )?;
        self.context = Some((train.features().clone(), train.labels().to_vec()));
        self.outcome = Some(outcome);
        Ok(())
    }

    fn predict_proba(&self, query: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let (cx, cy) = self.context.as_ref().ok_or(Error::NotFitted)?;
        require_width(cx.ncols(), query)?;
        let tau = self.config.temperature;
        let z = self.model.predict_logits(cx.view(), cy, query)?;
        Ok(z.into_iter().map(|z| sigmoid(z / tau)).collect())
    }

    fn checkpoint_digest(&self) -> Option<String> {
        Some(self.pretrained.checksum())
    }

    fn fit_report(&self) -> Option<Value> {
        let o = self.outcome.as_ref()?;
        Some(json!({
            "best_step": o.checkpoint.step,
            "best_validation_accuracy": o.checkpoint.validation_accuracy,
            "initial_validation_accuracy": o.initial_validation_accuracy(),
            "steps_run": o.steps.len(),
            "stopped_early": o.stopped_early,
            "mean_step_seconds": o.steps.iter().map(|s| s.wall_seconds).sum::<f64>() / o.steps.len().max(1) as f64,
            "first_step_displacement": o.first_step_displacement,
            "checkpoint": o.checkpoint_path,
        }))
    }
}
