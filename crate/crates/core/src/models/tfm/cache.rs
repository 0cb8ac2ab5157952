//! Local cache of pretrained checkpoints with a pluggable downloader.

use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Environment variable naming the checkpoint cache directory.
pub const CACHE_ENV: &str = "EMPATHY_BENCH_CACHE";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointSpec {
    /// Subdirectory of the cache.
    pub name: String,
    pub url: String,
    pub file_name: String,
    /// Expected SHA-256; unchecked when absent.
    #[serde(default)]
    pub sha256: Option<String>,
}

impl CheckpointSpec {
    pub fn huggingface(repo: &str, file_name: &str) -> Self {
        Self {
            name: repo.replace('/', "--"),
            url: format!("https://huggingface.co/{repo}/resolve/main/{file_name}"),
            file_name: file_name.to_string(),
            sha256: None,
        }
    }

    pub fn tabpfn_v2_classifier() -> Self {
        Self::huggingface("Prior-Labs/TabPFN-v2-clf", "tabpfn-v2-classifier.ckpt")
    }

    pub fn tabicl_classifier() -> Self {
        Self::huggingface("jingang/TabICL-clf", "tabicl-classifier-v1.1-0506.ckpt")
    }
}

pub trait Downloader: Send + Sync {
    fn fetch(&self, url: &str, dest: &Path) -> Result<()>;
}

/// Blocking HTTP(S) downloader.
#[derive(Debug, Default, Clone, Copy)]
pub struct HttpDownloader;

impl Downloader for HttpDownloader {
    fn fetch(&self, url: &str, dest: &Path) -> Result<()> {
        let response = ureq::get(url)
            .call()
            .map_err(|e| Error::Backend(format!("download of {url} failed: {e}")))?;
        let mut reader = response.into_body().into_reader();
        let mut file = fs::File::create(dest).map_err(|e| Error::io(dest, e))?;
        io::copy(&mut reader, &mut file).map_err(|e| Error::io(dest, e))?;
        Ok(())
    }
}

pub struct CheckpointCache {
    root: PathBuf,
    downloader: Option<Box<dyn Downloader>>,
}

impl std::fmt::Debug for CheckpointCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CheckpointCache")
            .field("root", &self.root)
            .field("online", &self.downloader.is_some())
            .finish()
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

impl CheckpointCache {
    pub fn new(root: impl Into<PathBuf>, downloader: Option<Box<dyn Downloader>>) -> Self {
        Self {
            root: root.into(),
            downloader,
        }
    }

    /// Root from `explicit`, else the environment variable, else
    /// `$HOME/.cache/empathy-bench`.
    pub fn default_root(explicit: Option<&Path>) -> PathBuf {
        if let Some(p) = explicit {
            return p.to_path_buf();
        }
        if let Some(p) = std::env::var_os(CACHE_ENV) {
            return PathBuf::from(p);
        }
        let home = std::env::var_os("HOME").map(PathBuf::from).unwrap_or_else(|| ".".into());
        home.join(".cache").join("empathy-bench")
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, spec: &CheckpointSpec) -> PathBuf {
        self.root.join(&spec.name).join(&spec.file_name)
    }

    /// Returns the cached file and its digest, downloading it if missing.
    pub fn ensure(&self, spec: &CheckpointSpec) -> Result<(PathBuf, String)> {
        let path = self.path_for(spec);
        if !path.exists() {
            let Some(downloader) = &self.downloader else {
                return Err(Error::Backend(format!(
                    "checkpoint {} is not cached at {} and downloads are disabled",
                    spec.file_name,
                    path.display()
                )));
            };
            let dir = path.parent().expect("cache path has a parent");
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let tmp = dir.join(format!(".{}.part-{}", spec.file_name, std::process::id()));
            let fetched = downloader.fetch(&spec.url, &tmp);
            if let Err(e) = fetched {
                let _ = fs::remove_file(&tmp);
                return Err(e);
            }
            fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        }
        let digest = sha256_file(&path)?;
        if let Some(expected) = &spec.sha256 {
            if !expected.eq_ignore_ascii_case(&digest) {
                return Err(Error::Backend(format!(
                    "checkpoint {} has digest {digest}, expected {expected}",
                    path.display()
                )));
            }
        }
        Ok((path, digest))
    }
}
