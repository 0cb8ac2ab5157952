use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    load_manifest, load_tabular, load_temporal_samples, SynthSpec, TabularDataset,
};
use crate::error::{Error, Result};
use crate::featurize::{drop_constant_features, tabularize, AttributeSet, MAX_SELECTED_FEATURES};
use crate::finetune::FinetuneConfig;
use crate::models::{BackendRegistry, Hyperparameters, TfmSettings};
use crate::protocol::{leave_one_subject_out, stratified_kfold_repeated, Protocol, SplitPlan};

/// Exactly one source must be set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// CSV manifest of per-sample frame files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Previously aggregated rows written by `save_tabular`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tabular: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SynthSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub kind: Protocol,
    pub k: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            kind: Protocol::StratifiedKfoldRepeated,
            k: 5,
            repeats: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub backend: String,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
}

fn default_k_features() -> usize {
    MAX_SELECTED_FEATURES
}

fn default_attributes() -> AttributeSet {
    AttributeSet::standard()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    /// Seeds model construction and fine-tuning; each fold offsets it by its id.
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default = "default_attributes")]
    pub attributes: AttributeSet,
    #[serde(default = "default_k_features")]
    pub k_features: usize,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub finetune: FinetuneConfig,
    #[serde(default)]
    pub tfm: TfmSettings,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Folds evaluated concurrently; 0 uses every core.
    #[serde(default)]
    pub workers: usize,
    /// Writes each fine-tuning checkpoint under `output_dir/checkpoints`.
    #[serde(default)]
    pub save_checkpoints: bool,
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses a config file; relative data, output and cache paths resolve
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut config.data.manifest);
        resolve(base, &mut config.data.tabular);
        resolve(base, &mut config.tfm.cache_dir);
        if config.output_dir.is_relative() {
            config.output_dir = base.join(&config.output_dir);
        }
        if config.name.is_empty() {
            config.name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form of the resolved config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn validate(&self, registry: &BackendRegistry) -> Result<()> {
        let sources = [
            self.data.manifest.is_some(),
            self.data.tabular.is_some(),
            self.data.synthetic.is_some(),
        ];
        if sources.iter().filter(|&&s| s).count() != 1 {
            return Err(Error::Config(
                "data needs exactly one of manifest, tabular or synthetic".into(),
            ));
        }
        for p in [&self.data.manifest, &self.data.tabular].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::Config(format!("data path {} does not exist", p.display())));
            }
        }
        if self.k_features == 0 || self.k_features > MAX_SELECTED_FEATURES {
            return Err(Error::Config(format!(
                "k_features must be in 1..={MAX_SELECTED_FEATURES}, got {}",
                self.k_features
            )));
        }
        if self.protocol.kind == Protocol::StratifiedKfoldRepeated
            && (self.protocol.k < 2 || self.protocol.repeats == 0)
        {
            return Err(Error::Config("k-fold needs k >= 2 and repeats >= 1".into()));
        }
        registry.kind(&self.model.backend).map_err(|e| Error::Config(e.to_string()))?;
        self.finetune.validate()?;
        Ok(())
    }

    /// Loads the configured data as aggregated rows with constant columns
    /// removed.
    pub fn load_dataset(&self) -> Result<TabularDataset> {
        if let Some(path) = &self.data.tabular {
            return drop_constant_features(&load_tabular(path)?);
        }
        let temporal = if let Some(path) = &self.data.manifest {
            load_temporal_samples(&load_manifest(path)?)?
        } else if let Some(spec) = &self.data.synthetic {
            spec.generate()?
        } else {
            return Err(Error::Config("no data source configured".into()));
        };
        drop_constant_features(&tabularize(&temporal, &self.attributes)?)
    }

    pub fn split_plan(&self, data: &TabularDataset) -> Result<SplitPlan> {
        match self.protocol.kind {
            Protocol::StratifiedKfoldRepeated => stratified_kfold_repeated(
                data.labels(),
                self.protocol.k,
                self.protocol.repeats,
                self.protocol.seed,
            ),
            Protocol::Loso => leave_one_subject_out(data.subject_ids()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [data.synthetic]
        n_subjects = 4
        samples_per_subject = 2
        d = 3
        separability = 1.0
        seed = 0

        [model]
        backend = "random_forest"
        hyperparameters = { n_estimators = 10 }
    "#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.k_features, 500);
        assert_eq!(c.protocol.k, 5);
        assert_eq!(c.protocol.repeats, 10);
        assert_eq!(c.attributes, AttributeSet::standard());
        c.validate(&BackendRegistry::with_defaults()).unwrap();
        let again = ExperimentConfig::from_toml_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.hash(), c.hash());
    }

    #[test]
    fn invalid_configs_rejected() {
        let r = BackendRegistry::with_defaults();
        let mut c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        c.k_features = 501;
        assert!(c.validate(&r).is_err());
        let mut c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        c.data.manifest = Some("/definitely/missing.csv".into());
        assert!(c.validate(&r).is_err());
        c.data.synthetic = None;
        assert!(c.validate(&r).unwrap_err().to_string().contains("does not exist"));
        let mut c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        c.model.backend = "catboost".into();
        assert!(c.validate(&r).unwrap_err().to_string().contains("random_forest"));
        assert!(ExperimentConfig::from_toml_str(&format!("{MINIMAL}\nbogus = 1")).is_err());
    }
}
