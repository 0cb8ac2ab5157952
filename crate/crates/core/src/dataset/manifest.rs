use std::collections::HashSet;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;

use super::{TemporalDataset, TemporalSample};
use crate::error::{Error, Result};

const COLUMNS: [&str; 4] = ["sample_id", "frames_path", "subject_id", "label"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub sample_id: String,
    /// Resolved against the manifest's directory when relative.
    pub frames_path: PathBuf,
    pub subject_id: String,
    pub label: u8,
}

/// Validated sample manifest, in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub path: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_subjects(&self) -> usize {
        self.rows
            .iter()
            .map(|r| r.subject_id.as_str())
            .collect::<HashSet<_>>()
            .len()
    }
}

/// Reads `sample_id,frames_path,subject_id,label` rows.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let source_name = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
            _ => Error::Csv(e),
        })?;
    let headers = reader.headers()?.clone();
    let mut col = [0usize; 4];
    for (slot, name) in col.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Ingest {
                source_name: source_name.clone(),
                row: 0,
                message: format!("missing column {name:?}"),
            })?;
    }

    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let ingest = |message: String| Error::Ingest {
            source_name: source_name.clone(),
            row,
            message,
        };
        let record = record.map_err(|e| ingest(e.to_string()))?;
        let field = |j: usize| record.get(col[j]).unwrap_or("").to_string();

        let sample_id = field(0);
        if sample_id.is_empty() {
            return Err(ingest("empty sample_id".into()));
        }
        if !seen.insert(sample_id.clone()) {
            return Err(ingest(format!("duplicate sample_id {sample_id:?}")));
        }
        let subject_id = field(2);
        if subject_id.is_empty() {
            return Err(ingest(format!("sample {sample_id:?} has an empty subject_id")));
        }
        let raw_label = field(3);
        let label = match raw_label.parse::<i64>() {
            Ok(0) => 0,
            Ok(1) => 1,
            _ => {
                return Err(ingest(format!(
                    "sample {sample_id:?} has label {raw_label:?}, expected 0 or 1"
                )))
            }
        };
        let frames_path = {
            let p = PathBuf::from(field(1));
            if p.is_relative() {
                base.join(p)
            } else {
                p
            }
        };
        if !frames_path.is_file() {
            return Err(ingest(format!(
                "frames file {} does not exist",
                frames_path.display()
            )));
        }
        rows.push(ManifestRow {
            sample_id,
            frames_path,
            subject_id,
            label,
        });
    }

    Ok(Manifest {
        path: path.to_path_buf(),
        rows,
    })
}

/// Loads every frames file referenced by `manifest`, preserving manifest order.
pub fn load_temporal_samples(manifest: &Manifest) -> Result<TemporalDataset> {
    let loaded: Vec<(Vec<String>, Array2<f64>)> = manifest
        .rows
        .par_iter()
        .map(|row| read_frames(&row.frames_path))
        .collect::<Result<_>>()?;

    let Some((first_names, _)) = loaded.first() else {
        return TemporalDataset::new(Vec::new(), Vec::new());
    };
    let first_path = &manifest.rows[0].frames_path;
    for (row, (names, _)) in manifest.rows.iter().zip(&loaded).skip(1) {
        if names.len() != first_names.len() {
            return Err(Error::InconsistentWidth {
                first: first_path.clone(),
                first_width: first_names.len(),
                second: row.frames_path.clone(),
                second_width: names.len(),
            });
        }
        if names != first_names {
            return Err(Error::Ingest {
                source_name: row.frames_path.display().to_string(),
                row: 0,
                message: format!(
                    "header differs from {} although both have {} columns",
                    first_path.display(),
                    names.len()
                ),
            });
        }
    }

    let feature_names = first_names.clone();
    let samples = manifest
        .rows
        .iter()
        .zip(loaded)
        .map(|(row, (_, frames))| TemporalSample {
            sample_id: row.sample_id.clone(),
            subject_id: row.subject_id.clone(),
            label: row.label,
            frames,
        })
        .collect();
    TemporalDataset::new(feature_names, samples)
}

fn read_frames(path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    let source_name = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    let names: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if names.is_empty() || names.iter().all(String::is_empty) {
        return Err(Error::Ingest {
            source_name,
            row: 0,
            message: "missing header row".into(),
        });
    }
    let d = names.len();
    let mut values = Vec::new();
    let mut n_frames = 0;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Ingest {
            source_name: source_name.clone(),
            row,
            message: e.to_string(),
        })?;
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Ingest {
                source_name: source_name.clone(),
                row,
                message: format!("column {:?} holds non-numeric value {cell:?}", names[j]),
            })?;
            if !v.is_finite() {
                return Err(Error::Ingest {
                    source_name: source_name.clone(),
                    row,
                    message: format!("column {:?} holds non-finite value {cell:?}", names[j]),
                });
            }
            values.push(v);
        }
        n_frames += 1;
    }
    if n_frames == 0 {
        return Err(Error::Ingest {
            source_name,
            row: 0,
            message: "frames file has no data rows".into(),
        });
    }
    let frames = Array2::from_shape_vec((n_frames, d), values)
        .map_err(|e| Error::invalid(e.to_string()))?;
    Ok((names, frames))
}
