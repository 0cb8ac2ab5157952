//! Name-based construction of classifiers.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::classical::{RandomForestClassifier, SvmClassifier, XgboostClassifier};
use super::classifier::{Classifier, ClassifierKind, Hyperparameters, ParamReader};
use super::finetuned::FinetunedClassifier;
use super::icl::IclClassifier;
use super::tfm::{
    BridgeConfig, BridgeModel, CheckpointCache, CheckpointSpec, HttpDownloader, InContextModel, MockTfm,
    MockTfmConfig,
};
use crate::error::{Error, Result};
use crate::finetune::FinetuneConfig;

/// Where foundation-model weights come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TfmSource {
    /// The seeded mock transformer.
    Mock,
    /// Released checkpoints served through an external inference process.
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalTfm {
    #[serde(default)]
    pub bridge: Option<BridgeConfig>,
    pub checkpoint: CheckpointSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TfmSettings {
    pub source: TfmSource,
    pub mock: MockTfmConfig,
    pub tabpfn: ExternalTfm,
    pub tabicl: ExternalTfm,
    pub cache_dir: Option<PathBuf>,
    pub allow_download: bool,
}

impl Default for TfmSettings {
    fn default() -> Self {
        Self {
            source: TfmSource::External,
            mock: MockTfmConfig::default(),
            tabpfn: ExternalTfm {
                bridge: None,
                checkpoint: CheckpointSpec::tabpfn_v2_classifier(),
            },
            tabicl: ExternalTfm {
                bridge: None,
                checkpoint: CheckpointSpec::tabicl_classifier(),
            },
            cache_dir: None,
            allow_download: true,
        }
    }
}

impl TfmSettings {
    pub fn cache(&self) -> CheckpointCache {
        let downloader = self
            .allow_download
            .then(|| Box::new(HttpDownloader) as Box<dyn super::tfm::Downloader>);
        CheckpointCache::new(CheckpointCache::default_root(self.cache_dir.as_deref()), downloader)
    }
}

/// Everything a factory may use to build one classifier instance.
#[derive(Debug, Clone, Copy)]
pub struct BackendContext<'a> {
    pub hyperparameters: &'a Hyperparameters,
    pub seed: u64,
    pub finetune: &'a FinetuneConfig,
    pub tfm: &'a TfmSettings,
    /// Where a fine-tuning backend stores its best checkpoint.
    pub checkpoint_dir: Option<&'a std::path::Path>,
}

pub type BackendFactory =
    Arc<dyn Fn(&BackendContext<'_>) -> Result<Box<dyn Classifier>> + Send + Sync>;

#[derive(Clone)]
struct Entry {
    kind: ClassifierKind,
    factory: BackendFactory,
}

#[derive(Clone, Default)]
pub struct BackendRegistry {
    entries: BTreeMap<String, Entry>,
}

impl std::fmt::Debug for BackendRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.entries.keys()).finish()
    }
}

fn icl_proportion(name: &str, h: &Hyperparameters) -> Result<f64> {
    let r = ParamReader::new(name, h, &["context_proportion"])?;
    r.f64("context_proportion", 1.0)
}

fn finetune_config(name: &str, ctx: &BackendContext<'_>) -> Result<FinetuneConfig> {
    let r = ParamReader::new(name, ctx.hyperparameters, &["learning_rate", "batch_size", "temperature"])?;
    let base = ctx.finetune;
    let config = FinetuneConfig {
        learning_rate: r.f64("learning_rate", base.learning_rate)?,
        batch_size: r.usize("batch_size", base.batch_size)?,
        temperature: r.f64("temperature", base.temperature)?,
        ..base.clone()
    };
    config.validate()?;
    Ok(config)
}

fn mock_model(ctx: &BackendContext<'_>, seed_offset: u64) -> Result<MockTfm> {
    let mut config = ctx.tfm.mock.clone();
    config.seed = config.seed.wrapping_add(seed_offset);
    MockTfm::new(config)
}

fn external_model(name: &str, ext: &ExternalTfm, settings: &TfmSettings) -> Result<BridgeModel> {
    let bridge = ext.bridge.clone().ok_or_else(|| {
        Error::Backend(format!(
            "{name} needs an inference bridge command in the tfm settings, or tfm.source = \"mock\""
        ))
    })?;
    let checkpoint = settings.cache().ensure(&ext.checkpoint)?;
    Ok(BridgeModel::new(name, bridge, Some(checkpoint)))
}

fn icl_factory(name: &'static str, seed_offset: u64, pick: fn(&TfmSettings) -> &ExternalTfm) -> BackendFactory {
    Arc::new(move |ctx| {
        let proportion = icl_proportion(name, ctx.hyperparameters)?;
        let model: Arc<dyn InContextModel> = match ctx.tfm.source {
            TfmSource::Mock => Arc::new(mock_model(ctx, seed_offset)?),
            TfmSource::External => Arc::new(external_model(name, pick(ctx.tfm), ctx.tfm)?),
        };
        Ok(Box::new(IclClassifier::new(name, model, proportion, ctx.seed)))
    })
}

fn finetune_factory(name: &'static str, force_mock: bool) -> BackendFactory {
    Arc::new(move |ctx| {
        if !force_mock && ctx.tfm.source == TfmSource::External {
            return Err(Error::Backend(format!(
                "{name}: gradient fine-tuning of released checkpoints needs a native model runtime, \
                 which this build does not provide; use tfm.source = \"mock\" or the mock_finetune backend"
            )));
        }
        let config = finetune_config(name, ctx)?;
        let model = mock_model(ctx, 0)?;
        Ok(Box::new(FinetunedClassifier::new(
            name,
            Box::new(model),
            config,
            ctx.checkpoint_dir.map(PathBuf::from),
        )?))
    })
}

impl BackendRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Classical baselines, foundation-model backends and their mock twins.
    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        let classical: [(&str, BackendFactory); 3] = [
            (
                XgboostClassifier::NAME,
                Arc::new(|ctx| Ok(Box::new(XgboostClassifier::from_hyperparameters(ctx.hyperparameters)?))),
            ),
            (
                RandomForestClassifier::NAME,
                Arc::new(|ctx| {
                    Ok(Box::new(RandomForestClassifier::from_hyperparameters(ctx.hyperparameters, ctx.seed)?))
                }),
            ),
            (
                SvmClassifier::NAME,
                Arc::new(|ctx| Ok(Box::new(SvmClassifier::from_hyperparameters(ctx.hyperparameters, ctx.seed)?))),
            ),
        ];
        for (name, f) in classical {
            r.register_backend(name, ClassifierKind::Classical, f).expect("fresh registry");
        }
        let icl = ClassifierKind::TfmIcl;
        let ft = ClassifierKind::TfmFinetuned;
        r.register_backend("tabpfn_icl", icl, icl_factory("tabpfn_icl", 0, |s| &s.tabpfn))
            .expect("fresh registry");
        r.register_backend("tabicl_icl", icl, icl_factory("tabicl_icl", 1, |s| &s.tabicl))
            .expect("fresh registry");
        r.register_backend("tabpfn_finetune", ft, finetune_factory("tabpfn_finetune", false))
            .expect("fresh registry");
        let mock_icl: BackendFactory = Arc::new(|ctx| {
            let proportion = icl_proportion("mock_icl", ctx.hyperparameters)?;
            let model = Arc::new(mock_model(ctx, 0)?);
            Ok(Box::new(IclClassifier::new("mock_icl", model, proportion, ctx.seed)))
        });
        r.register_backend("mock_icl", icl, mock_icl).expect("fresh registry");
        r.register_backend("mock_finetune", ft, finetune_factory("mock_finetune", true))
            .expect("fresh registry");
        r
    }

    pub fn register_backend(&mut self, name: &str, kind: ClassifierKind, factory: BackendFactory) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::DuplicateBackend(name.to_string()));
        }
        self.entries.insert(name.to_string(), Entry { kind, factory });
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn kind(&self, name: &str) -> Result<ClassifierKind> {
        self.entry(name).map(|e| e.kind)
    }

    fn entry(&self, name: &str) -> Result<&Entry> {
        self.entries.get(name).ok_or_else(|| Error::UnknownBackend {
            name: name.to_string(),
            available: self.names(),
        })
    }

    pub fn create(&self, name: &str, ctx: &BackendContext<'_>) -> Result<Box<dyn Classifier>> {
        (self.entry(name)?.factory)(ctx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx<'a>(h: &'a Hyperparameters, f: &'a FinetuneConfig, t: &'a TfmSettings) -> BackendContext<'a> {
        BackendContext {
            hyperparameters: h,
            seed: 0,
            finetune: f,
            tfm: t,
            checkpoint_dir: None,
        }
    }

    #[test]
    fn defaults_cover_the_benchmark_rows() {
        let r = BackendRegistry::with_defaults();
        for name in ["xgboost", "random_forest", "svm", "tabpfn_icl", "tabicl_icl", "tabpfn_finetune"] {
            assert!(r.names().contains(&name.to_string()), "{name}");
        }
        assert_eq!(r.kind("tabpfn_finetune").unwrap(), ClassifierKind::TfmFinetuned);
    }

    #[test]
    fn unknown_and_duplicate_names() {
        let mut r = BackendRegistry::with_defaults();
        let (h, f, t) = (Hyperparameters::new(), FinetuneConfig::default(), TfmSettings::default());
        match r.create("lightgbm", &ctx(&h, &f, &t)) {
            Err(Error::UnknownBackend { available, .. }) => assert!(available.contains(&"svm".to_string())),
            other => panic!("unexpected {:?}", other.map(|c| c.name().to_string())),
        }
        let factory: BackendFactory =
            Arc::new(|ctx| Ok(Box::new(SvmClassifier::from_hyperparameters(ctx.hyperparameters, 0)?)));
        assert!(matches!(
            r.register_backend("svm", ClassifierKind::Classical, factory.clone()),
            Err(Error::DuplicateBackend(_))
        ));
        r.register_backend("svm2", ClassifierKind::Classical, factory).unwrap();
        assert_eq!(r.create("svm2", &ctx(&h, &f, &t)).unwrap().name(), "svm");
    }

    #[test]
    fn external_sources_fail_clearly_without_runtime() {
        let r = BackendRegistry::with_defaults();
        let (h, f) = (Hyperparameters::new(), FinetuneConfig::default());
        let t = TfmSettings {
            allow_download: false,
            cache_dir: Some(tempfile::tempdir().unwrap().path().to_path_buf()),
            ..TfmSettings::default()
        };
        let msg = |name: &str| r.create(name, &ctx(&h, &f, &t)).err().unwrap().to_string();
        assert!(msg("tabpfn_finetune").contains("native model runtime"));
        assert!(msg("tabpfn_icl").contains("bridge"));
        let mock = TfmSettings {
            source: TfmSource::Mock,
            ..t
        };
        let c = r.create("tabpfn_finetune", &ctx(&h, &f, &mock)).unwrap();
        assert_eq!(c.kind(), ClassifierKind::TfmFinetuned);
        assert!(c.backend_version().starts_with("mock-tfm"));
    }
}
