use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::ExperimentConfig;
use crate::dataset::TabularDataset;
use crate::error::{Error, Result};
use crate::featurize::{apply_selector, fit_anova_selector};
use crate::finetune::FinetuneConfig;
use crate::models::{BackendContext, BackendRegistry, ClassifierKind, Hyperparameters};
use crate::protocol::{
    aggregate_mean_std, aggregate_pooled, compute_metrics, predict_label, FoldMetrics, FoldResult, MetricReport,
    Protocol, SplitPlan, DEFAULT_THRESHOLD,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub result: FoldResult,
    pub metrics: FoldMetrics,
    pub seed: u64,
    pub n_train: usize,
    pub n_selected: usize,
    /// Names of the retained columns, in selector order.
    pub selected_features: Vec<String>,
    pub backend_version: String,
    pub checkpoint_digest: Option<String>,
    pub hyperparameters: Hyperparameters,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_report: Option<Value>,
}

/// One finished run as persisted in the results store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub created_unix: u64,
    /// Fully resolved configuration, sufficient to rerun.
    pub config: ExperimentConfig,
    pub config_hash: String,
    /// Free-form labels, e.g. the sweep proportion or ablation cell.
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
    pub backend: String,
    pub backend_kind: ClassifierKind,
    pub backend_versions: BTreeSet<String>,
    pub checkpoint_digests: BTreeSet<String>,
    pub dataset_fingerprint: String,
    pub n_samples: usize,
    pub n_features: usize,
    pub n_subjects: usize,
    pub protocol: Protocol,
    pub split_fingerprint: String,
    /// Folds whose train and test sets share a subject.
    pub subject_overlap_folds: usize,
    pub folds: Vec<FoldRecord>,
    pub report: MetricReport,
    pub total_seconds: f64,
    pub mean_fit_seconds: f64,
    pub mean_predict_seconds: f64,
}

/// A validated config with its data loaded and folds planned, ready to run
/// any subset of folds.
#[derive(Clone)]
pub struct Experiment {
    config: ExperimentConfig,
    registry: BackendRegistry,
    data: Arc<TabularDataset>,
    plan: Arc<SplitPlan>,
    pool: Arc<rayon::ThreadPool>,
}

impl std::fmt::Debug for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Experiment")
            .field("name", &self.config.name)
            .field("backend", &self.config.model.backend)
            .field("folds", &self.plan.len())
            .finish()
    }
}

impl Experiment {
    pub fn prepare(config: ExperimentConfig, registry: &BackendRegistry) -> Result<Self> {
        config.validate(registry)?;
        let data = config.load_dataset()?;
        Self::with_data(config, registry, Arc::new(data))
    }

    /// Reuses already loaded rows; the config's data section is recorded
    /// but not re-read.
    pub fn with_data(config: ExperimentConfig, registry: &BackendRegistry, data: Arc<TabularDataset>) -> Result<Self> {
        config.validate(registry)?;
        let plan = Arc::new(config.split_plan(&data)?);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        Ok(Self {
            config,
            registry: registry.clone(),
            data,
            plan,
            pool: Arc::new(pool),
        })
    }

    /// Same data and folds under a modified config. Changing the data
    /// source or protocol requires a fresh `prepare`.
    pub fn derive(&self, edit: impl FnOnce(&mut ExperimentConfig)) -> Result<Self> {
        let mut config = self.config.clone();
        edit(&mut config);
        if config.protocol != self.config.protocol || config.data != self.config.data {
            return Err(Error::Config("derived experiments must keep data and protocol".into()));
        }
        config.validate(&self.registry)?;
        Ok(Self {
            config,
            ..self.clone()
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn registry(&self) -> &BackendRegistry {
        &self.registry
    }

    pub fn data(&self) -> &TabularDataset {
        &self.data
    }

    pub fn plan(&self) -> &SplitPlan {
        &self.plan
    }

    /// Fits and scores one fold. Selection is fitted on the training rows only.
    pub fn run_fold(&self, fold: usize, checkpoint_root: Option<&Path>) -> Result<FoldRecord> {
        let wrap = |cause: Error| Error::FoldFailed {
            fold,
            cause: Box::new(cause),
        };
        let split = self
            .plan
            .folds
            .get(fold)
            .ok_or_else(|| Error::invalid(format!("fold {fold} out of range")))?;
        let train_raw = self.data.select_rows(&split.train).map_err(wrap)?;
        let test_raw = self.data.select_rows(&split.test).map_err(wrap)?;
        let selector = fit_anova_selector(&train_raw, self.config.k_features).map_err(wrap)?;
        let train = apply_selector(&selector, &train_raw).map_err(wrap)?;
        let test = apply_selector(&selector, &test_raw).map_err(wrap)?;

        let seed = self.config.seed.wrapping_add(fold as u64);
        let finetune = FinetuneConfig {
            seed: self.config.finetune.seed.wrapping_add(fold as u64),
            ..self.config.finetune.clone()
        };
        let checkpoint_dir: Option<PathBuf> = checkpoint_root.map(|r| r.join(format!("fold-{fold:03}")));
        let ctx = BackendContext {
            hyperparameters: &self.config.model.hyperparameters,
            seed,
            finetune: &finetune,
            tfm: &self.config.tfm,
            checkpoint_dir: checkpoint_dir.as_deref(),
        };
        let mut model = self.registry.create(&self.config.model.backend, &ctx).map_err(wrap)?;

        let t0 = Instant::now();
        model.fit(&train).map_err(wrap)?;
        let fit_seconds = t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        let probabilities = model.predict_proba(test.features().view()).map_err(wrap)?;
        let predict_seconds = t1.elapsed().as_secs_f64();
        if probabilities.len() != test.n_rows() || probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(wrap(Error::Backend(format!(
                "{} returned malformed probabilities",
                model.name()
            ))));
        }
        let labels = test.labels().to_vec();
        let metrics = compute_metrics(&probabilities, &labels, DEFAULT_THRESHOLD).map_err(wrap)?;
        let held_out_subject = match self.plan.protocol {
            Protocol::Loso => self.plan.held_out_subjects.get(fold).cloned(),
            Protocol::StratifiedKfoldRepeated => None,
        };
        Ok(FoldRecord {
            result: FoldResult {
                fold,
                test_indices: split.test.clone(),
                predicted: probabilities.iter().map(|&p| predict_label(p, DEFAULT_THRESHOLD)).collect(),
                probabilities,
                labels,
                fit_seconds,
                predict_seconds,
                held_out_subject,
            },
            metrics,
            seed,
            n_train: train.n_rows(),
            n_selected: selector.n_selected(),
            selected_features: selector.selected_names,
            backend_version: model.backend_version(),
            checkpoint_digest: model.checkpoint_digest(),
            hyperparameters: model.hyperparameters(),
            fit_report: model.fit_report(),
        })
    }

    /// Runs the given folds on the worker pool. On failure the lowest
    /// failing fold id is reported.
    pub fn run_folds(&self, folds: &[usize], checkpoint_root: Option<&Path>) -> Result<Vec<FoldRecord>> {
        let results: Vec<Result<FoldRecord>> = self
            .pool
            .install(|| folds.par_iter().map(|&f| self.run_fold(f, checkpoint_root)).collect());
        results.into_iter().collect()
    }

    pub fn aggregate(&self, folds: &[FoldRecord]) -> Result<MetricReport> {
        match self.plan.protocol {
            Protocol::StratifiedKfoldRepeated => {
                aggregate_mean_std(&folds.iter().map(|f| f.metrics.clone()).collect::<Vec<_>>())
            }
            Protocol::Loso => aggregate_pooled(&folds.iter().map(|f| f.result.clone()).collect::<Vec<_>>()),
        }
    }

    /// Assembles the persisted record from completed folds.
    pub fn finish(&self, run_id: &str, mut folds: Vec<FoldRecord>, total_seconds: f64) -> Result<RunRecord> {
        folds.sort_by_key(|f| f.result.fold);
        let report = self.aggregate(&folds)?;
        let n = folds.len().max(1) as f64;
        Ok(RunRecord {
            run_id: run_id.to_string(),
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            config: self.config.clone(),
            config_hash: self.config.hash(),
            tags: BTreeMap::new(),
            backend: self.config.model.backend.clone(),
            backend_kind: self.registry.kind(&self.config.model.backend)?,
            backend_versions: folds.iter().map(|f| f.backend_version.clone()).collect(),
            checkpoint_digests: folds.iter().filter_map(|f| f.checkpoint_digest.clone()).collect(),
            dataset_fingerprint: self.data.fingerprint(),
            n_samples: self.data.n_rows(),
            n_features: self.data.n_features(),
            n_subjects: self.data.n_subjects(),
            protocol: self.plan.protocol,
            split_fingerprint: self.plan.fingerprint(),
            subject_overlap_folds: self.plan.subject_overlap_count(self.data.subject_ids()),
            mean_fit_seconds: folds.iter().map(|f| f.result.fit_seconds).sum::<f64>() / n,
            mean_predict_seconds: folds.iter().map(|f| f.result.predict_seconds).sum::<f64>() / n,
            folds,
            report,
            total_seconds,
        })
    }

    /// Runs every fold and aggregates.
    pub fn run(&self, run_id: &str) -> Result<RunRecord> {
        let start = Instant::now();
        let checkpoint_root = self
            .config
            .save_checkpoints
            .then(|| self.config.output_dir.join("checkpoints").join(run_id));
        let ids: Vec<usize> = (0..self.plan.len()).collect();
        log::info!(
            "run {run_id}: {} on {} folds ({})",
            self.config.model.backend,
            ids.len(),
            self.plan.protocol.name()
        );
        let folds = self.run_folds(&ids, checkpoint_root.as_deref())?;
        self.finish(run_id, folds, start.elapsed().as_secs_f64())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::test_support::synth_config;

    #[test]
    fn kfold_run_is_reproducible_and_leak_audited() {
        let registry = BackendRegistry::with_defaults();
        let config = synth_config("random_forest", Protocol::StratifiedKfoldRepeated);
        let a = Experiment::prepare(config.clone(), &registry).unwrap().run("a").unwrap();
        let b = Experiment::prepare(config, &registry).unwrap().run("b").unwrap();
        assert_eq!(a.folds.len(), 6);
        assert_eq!(a.split_fingerprint, b.split_fingerprint);
        assert_eq!(a.report.scores, b.report.scores);
        assert!(a.report.std.is_some());
        // Random k-fold over 6 subjects with 4 samples each mixes subjects.
        assert!(a.subject_overlap_folds > 0);
        assert!(a.folds.iter().all(|f| f.n_selected == a.n_features.min(500)));
    }

    #[test]
    fn loso_pools_and_reports_held_out_subjects() {
        let registry = BackendRegistry::with_defaults();
        let r = Experiment::prepare(synth_config("random_forest", Protocol::Loso), &registry)
            .unwrap()
            .run("l")
            .unwrap();
        assert_eq!(r.folds.len(), 6);
        assert_eq!(r.subject_overlap_folds, 0);
        assert!(r.report.std.is_none());
        assert!(r.folds.iter().all(|f| f.result.held_out_subject.is_some()));
    }

    #[test]
    fn fold_failure_names_the_fold() {
        let registry = BackendRegistry::with_defaults();
        let mut config = synth_config("mock_icl", Protocol::StratifiedKfoldRepeated);
        config.model.hyperparameters = [("context_proportion".to_string(), Value::from(0.01))].into_iter().collect();
        let err = Experiment::prepare(config, &registry).unwrap().run("x").unwrap_err();
        assert!(matches!(err, Error::FoldFailed { fold: 0, .. }), "{err}");
    }
}
