use std::collections::BTreeSet;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use super::experiment::RunRecord;
use crate::error::{Error, Result};

pub const RUNS_FILE: &str = "runs.jsonl";

/// Append-only log of finalized runs, one JSON record per line.
///
/// Records are never rewritten; rerunning a config produces a new id.
#[derive(Debug)]
pub struct ResultsStore {
    root: PathBuf,
    lock: Mutex<BTreeSet<String>>,
}

impl ResultsStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        let store = Self {
            root,
            lock: Mutex::new(BTreeSet::new()),
        };
        let ids = store.load_all()?.into_iter().map(|r| r.run_id).collect();
        *store.lock.lock().expect("store lock") = ids;
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn runs_path(&self) -> PathBuf {
        self.root.join(RUNS_FILE)
    }

    /// Reserves a fresh id derived from the name, config hash and a counter.
    pub fn allocate_id(&self, name: &str, config_hash: &str) -> String {
        let mut ids = self.lock.lock().expect("store lock");
        let stem: String = name
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '-' })
            .collect();
        let stem = if stem.is_empty() { "run".to_string() } else { stem };
        let short = &config_hash[..config_hash.len().min(8)];
        let mut n = ids.len();
        loop {
            let id = format!("{stem}-{short}-{n:04}");
            if ids.insert(id.clone()) {
                return id;
            }
            n += 1;
        }
    }

    /// Appends one record in a single write and syncs it to disk.
    pub fn append(&self, record: &RunRecord) -> Result<()> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        let _guard = self.lock.lock().expect("store lock");
        if self.contains_on_disk(&record.run_id)? {
            return Err(Error::invalid(format!("run {} is already finalized", record.run_id)));
        }
        let path = self.runs_path();
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        file.write_all(&line).map_err(|e| Error::io(&path, e))?;
        file.sync_data().map_err(|e| Error::io(&path, e))
    }

    fn contains_on_disk(&self, run_id: &str) -> Result<bool> {
        Ok(self.load_all()?.iter().any(|r| r.run_id == run_id))
    }

    pub fn load_all(&self) -> Result<Vec<RunRecord>> {
        let path = self.runs_path();
        let file = match fs::File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let mut out = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if !line.trim().is_empty() {
                out.push(serde_json::from_str(&line)?);
            }
        }
        Ok(out)
    }

    pub fn get(&self, run_id: &str) -> Result<RunRecord> {
        self.load_all()?
            .into_iter()
            .find(|r| r.run_id == run_id)
            .ok_or_else(|| Error::UnknownRun(run_id.to_string()))
    }

    /// Records in the requested order; any unknown id is an error.
    pub fn get_many(&self, run_ids: &[String]) -> Result<Vec<RunRecord>> {
        let all = self.load_all()?;
        run_ids
            .iter()
            .map(|id| {
                all.iter()
                    .find(|r| &r.run_id == id)
                    .cloned()
                    .ok_or_else(|| Error::UnknownRun(id.clone()))
            })
            .collect()
    }

    /// Digest of the whole log, for checking that nothing was rewritten.
    pub fn digest(&self) -> Result<String> {
        let path = self.runs_path();
        match fs::read(&path) {
            Ok(bytes) => Ok(hex::encode(Sha256::digest(bytes))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(hex::encode(Sha256::digest([]))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::BackendRegistry;
    use crate::protocol::Protocol;
    use crate::runner::experiment::Experiment;
    use crate::runner::test_support::synth_config;

    #[test]
    fn append_only_with_unique_ids() {
        let dir = tempfile::tempdir().unwrap();
        let store = ResultsStore::open(dir.path()).unwrap();
        let config = synth_config("random_forest", Protocol::Loso);
        let exp = Experiment::prepare(config.clone(), &BackendRegistry::with_defaults()).unwrap();
        let id1 = store.allocate_id(&config.name, &config.hash());
        let id2 = store.allocate_id(&config.name, &config.hash());
        assert_ne!(id1, id2);
        let r1 = exp.run(&id1).unwrap();
        store.append(&r1).unwrap();
        let before = fs::read(store.runs_path()).unwrap();
        assert!(store.append(&r1).is_err());
        store.append(&exp.run(&id2).unwrap()).unwrap();
        let after = fs::read(store.runs_path()).unwrap();
        assert_eq!(&after[..before.len()], &before[..]);
        assert_eq!(store.get(&id1).unwrap(), r1);
        assert!(matches!(store.get("nope"), Err(Error::UnknownRun(_))));

        let reopened = ResultsStore::open(dir.path()).unwrap();
        let id3 = reopened.allocate_id(&config.name, &config.hash());
        assert!(id3 != id1 && id3 != id2);
    }
}
