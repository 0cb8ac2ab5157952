use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::params::ParameterSet;
use crate::error::{Error, Result};

pub const PARAMS_FILE: &str = "best.params.json";
pub const METADATA_FILE: &str = "checkpoint.json";

/// The single best snapshot of a fine-tuning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: usize,
    pub validation_accuracy: f64,
    pub parameters: ParameterSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetadata {
    pub step: usize,
    pub validation_accuracy: f64,
    pub config_hash: String,
    pub backend_version: String,
    pub parameter_checksum: String,
    pub parameters_file: String,
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

impl Checkpoint {
    /// Stores parameters and metadata under `dir`; returns the metadata path.
    pub fn save(&self, dir: &Path, config_hash: &str, backend_version: &str) -> Result<PathBuf> {
        let params_path = dir.join(PARAMS_FILE);
        atomic_write(&params_path, &serde_json::to_vec(&self.parameters)?)?;
        let meta = CheckpointMetadata {
            step: self.step,
            validation_accuracy: self.validation_accuracy,
            config_hash: config_hash.to_string(),
            backend_version: backend_version.to_string(),
            parameter_checksum: self.parameters.checksum(),
            parameters_file: PARAMS_FILE.to_string(),
        };
        let meta_path = dir.join(METADATA_FILE);
        atomic_write(&meta_path, &serde_json::to_vec_pretty(&meta)?)?;
        Ok(meta_path)
    }

    /// Loads a checkpoint and verifies its parameter checksum.
    pub fn load(dir: &Path) -> Result<(Self, CheckpointMetadata)> {
        let meta_path = dir.join(METADATA_FILE);
        let meta: CheckpointMetadata = serde_json::from_slice(
            &fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?,
        )?;
        let params_path = dir.join(&meta.parameters_file);
        let parameters: ParameterSet = serde_json::from_slice(
            &fs::read(&params_path).map_err(|e| Error::io(&params_path, e))?,
        )?;
        if parameters.checksum() != meta.parameter_checksum {
            return Err(Error::invalid(format!(
                "checkpoint {} does not match its recorded checksum",
                params_path.display()
            )));
        }
        let ckpt = Checkpoint {
            step: meta.step,
            validation_accuracy: meta.validation_accuracy,
            parameters,
        };
        Ok((ckpt, meta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finetune::params::{ParamGroup, Tensor};

    #[test]
    fn save_load_round_trip_and_tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Tensor::zeros("w", ParamGroup::Decoder, vec![3]);
        t.data = vec![0.1, -2.5, 1e-300];
        let ckpt = Checkpoint {
            step: 12,
            validation_accuracy: 0.75,
            parameters: ParameterSet::new(vec![t]),
        };
        ckpt.save(dir.path(), "abc", "mock").unwrap();
        let (back, meta) = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(meta.config_hash, "abc");
        let leftovers: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().contains(".tmp-"))
            .collect();
        assert!(leftovers.is_empty());

        let p = dir.path().join(PARAMS_FILE);
        let text = fs::read_to_string(&p).unwrap().replace("0.1", "0.2");
        fs::write(&p, text).unwrap();
        assert!(Checkpoint::load(dir.path()).is_err());
    }
}
