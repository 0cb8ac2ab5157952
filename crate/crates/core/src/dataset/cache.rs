//! Tabular dataset cache.
//!
//! A cache is two files:
//!
//! * `<name>.csv`: header `subject_id,label,<feature names...>`, one row per
//!   sample, floats in shortest round-trip decimal form;
//! * `<name>.csv.meta.json`: [`TabularMetadata`] sidecar with the feature
//!   names, subject ids and labels, used to cross-check the CSV on load.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::TabularDataset;
use crate::error::{Error, Result};

pub const CACHE_FORMAT: &str = "empathy-bench/tabular-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMetadata {
    pub format: String,
    pub n_rows: usize,
    pub feature_names: Vec<String>,
    pub subject_ids: Vec<String>,
    pub labels: Vec<u8>,
    pub fingerprint: String,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn save_tabular(data: &TabularDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["subject_id".to_string(), "label".to_string()];
    header.extend(data.feature_names().iter().cloned());
    writer.write_record(&header)?;
    for i in 0..data.n_rows() {
        let mut record = vec![data.subject_ids()[i].clone(), data.labels()[i].to_string()];
        record.extend(data.features().row(i).iter().map(|v| v.to_string()));
        writer.write_record(&record)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;

    let meta = TabularMetadata {
        format: CACHE_FORMAT.into(),
        n_rows: data.n_rows(),
        feature_names: data.feature_names().to_vec(),
        subject_ids: data.subject_ids().to_vec(),
        labels: data.labels().to_vec(),
        fingerprint: data.fingerprint(),
    };
    let sidecar = sidecar_path(path);
    fs::write(&sidecar, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&sidecar, e))
}

pub fn load_tabular(path: impl AsRef<Path>) -> Result<TabularDataset> {
    let path = path.as_ref();
    let sidecar = sidecar_path(path);
    let meta: TabularMetadata =
        serde_json::from_slice(&fs::read(&sidecar).map_err(|e| Error::io(&sidecar, e))?)?;
    if meta.format != CACHE_FORMAT {
        return Err(Error::invalid(format!(
            "unsupported cache format {:?}",
            meta.format
        )));
    }

    let source_name = path.display().to_string();
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.len() < 2 || header[0] != "subject_id" || header[1] != "label" {
        return Err(Error::Ingest {
            source_name,
            row: 0,
            message: "expected header starting with subject_id,label".into(),
        });
    }
    if header[2..] != meta.feature_names[..] {
        return Err(Error::Ingest {
            source_name,
            row: 0,
            message: "feature names differ from sidecar".into(),
        });
    }

    let p = meta.feature_names.len();
    let mut values = Vec::with_capacity(meta.n_rows * p);
    let mut subject_ids = Vec::with_capacity(meta.n_rows);
    let mut labels = Vec::with_capacity(meta.n_rows);
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let ingest = |message: String| Error::Ingest {
            source_name: source_name.clone(),
            row,
            message,
        };
        let record = record.map_err(|e| ingest(e.to_string()))?;
        subject_ids.push(record[0].to_string());
        labels.push(
            record[1]
                .parse::<u8>()
                .map_err(|_| ingest(format!("bad label {:?}", &record[1])))?,
        );
        for cell in record.iter().skip(2) {
            values.push(
                cell.parse::<f64>()
                    .map_err(|_| ingest(format!("non-numeric value {cell:?}")))?,
            );
        }
    }
    if subject_ids != meta.subject_ids || labels != meta.labels {
        return Err(Error::invalid(format!(
            "{} disagrees with its sidecar metadata",
            path.display()
        )));
    }
    let features = Array2::from_shape_vec((labels.len(), p), values)
        .map_err(|e| Error::invalid(e.to_string()))?;
    let data = TabularDataset::new(features, labels, subject_ids, meta.feature_names)?;
    if data.fingerprint() != meta.fingerprint {
        return Err(Error::invalid(format!(
            "{} fingerprint does not match sidecar",
            path.display()
        )));
    }
    Ok(data)
}
