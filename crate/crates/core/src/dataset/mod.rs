//! Sample ingestion and in-memory datasets.
//!
//! A [`TemporalDataset`] holds one frame matrix per interaction sample. After
//! statistical aggregation (see [`crate::featurize`]) the samples become rows
//! of a fixed-width [`TabularDataset`].

mod cache;
mod manifest;
mod synth;

use std::collections::BTreeSet;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use cache::{load_tabular, save_tabular, TabularMetadata};
pub use manifest::{load_manifest, load_temporal_samples, Manifest, ManifestRow};
pub use synth::{synth_dataset, SynthSpec};

/// One interaction: a `frames × features` matrix with its subject and label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalSample {
    pub sample_id: String,
    pub subject_id: String,
    pub label: u8,
    pub frames: Array2<f64>,
}

impl TemporalSample {
    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.frames.ncols()
    }
}

/// Temporal samples sharing one feature layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalDataset {
    pub feature_names: Vec<String>,
    pub samples: Vec<TemporalSample>,
}

impl TemporalDataset {
    pub fn new(feature_names: Vec<String>, samples: Vec<TemporalSample>) -> Result<Self> {
        let d = feature_names.len();
        for s in &samples {
            if s.n_features() != d {
                return Err(Error::invalid(format!(
                    "sample {} has {} features, expected {}",
                    s.sample_id,
                    s.n_features(),
                    d
                )));
            }
            if s.n_frames() == 0 {
                return Err(Error::UnusableSample {
                    sample_id: s.sample_id.clone(),
                    reason: "no frames".into(),
                });
            }
            check_label(s.label)?;
        }
        Ok(Self {
            feature_names,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Number of distinct subjects (`M`).
    pub fn n_subjects(&self) -> usize {
        self.samples
            .iter()
            .map(|s| s.subject_id.as_str())
            .collect::<BTreeSet<_>>()
            .len()
    }
}

/// Fixed-width feature matrix with per-row labels and subject ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularDataset {
    features: Array2<f64>,
    labels: Vec<u8>,
    subject_ids: Vec<String>,
    feature_names: Vec<String>,
}

impl TabularDataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<u8>,
        subject_ids: Vec<String>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n || subject_ids.len() != n {
            return Err(Error::invalid(format!(
                "row count mismatch: {} feature rows, {} labels, {} subject ids",
                n,
                labels.len(),
                subject_ids.len()
            )));
        }
        if feature_names.len() != features.ncols() {
            return Err(Error::invalid(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                features.ncols()
            )));
        }
        let mut seen = BTreeSet::new();
        for name in &feature_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::invalid(format!("duplicate feature name {name:?}")));
            }
        }
        for &l in &labels {
            check_label(l)?;
        }
        if let Some(i) = subject_ids.iter().position(|s| s.is_empty()) {
            return Err(Error::invalid(format!("row {i} has an empty subject id")));
        }
        Ok(Self {
            features,
            labels,
            subject_ids,
            feature_names,
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_ids
            .iter()
            .map(String::as_str)
            .collect::<BTreeSet<_>>()
            .len()
    }

    pub fn has_both_classes(&self) -> bool {
        has_both_classes(&self.labels)
    }

    /// Rows at `indices`, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n_rows()) {
            return Err(Error::invalid(format!(
                "row index {bad} out of range for {} rows",
                self.n_rows()
            )));
        }
        Ok(Self {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            subject_ids: indices.iter().map(|&i| self.subject_ids[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
        })
    }

    /// Columns at `indices`, in the given order.
    pub fn select_columns(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&j| j >= self.n_features()) {
            return Err(Error::WidthMismatch {
                expected: bad + 1,
                actual: self.n_features(),
            });
        }
        Ok(Self {
            features: self.features.select(Axis(1), indices),
            labels: self.labels.clone(),
            subject_ids: self.subject_ids.clone(),
            feature_names: indices.iter().map(|&j| self.feature_names[j].clone()).collect(),
        })
    }

    /// SHA-256 over the exact feature bits, labels and subject ids.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n_rows() as u64).to_le_bytes());
        h.update((self.n_features() as u64).to_le_bytes());
        for v in self.features.iter() {
            h.update(v.to_bits().to_le_bytes());
        }
        h.update(&self.labels);
        for s in &self.subject_ids {
            h.update((s.len() as u64).to_le_bytes());
            h.update(s.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

pub(crate) fn check_label(label: u8) -> Result<()> {
    if label > 1 {
        return Err(Error::invalid(format!("label {label} is not in {{0, 1}}")));
    }
    Ok(())
}

pub(crate) fn has_both_classes(labels: &[u8]) -> bool {
    labels.contains(&0) && labels.contains(&1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny() -> TabularDataset {
        TabularDataset::new(
            array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]],
            vec![0, 1, 1],
            vec!["a".into(), "b".into(), "a".into()],
            vec!["x".into(), "y".into(), "z".into()],
        )
        .unwrap()
    }

    #[test]
    fn rejects_duplicate_feature_names() {
        let err = TabularDataset::new(
            array![[1.0, 2.0]],
            vec![0],
            vec!["s".into()],
            vec!["x".into(), "x".into()],
        );
        assert!(err.is_err());
    }

    #[test]
    fn rejects_label_outside_binary() {
        let err = TabularDataset::new(array![[1.0]], vec![2], vec!["s".into()], vec!["x".into()]);
        assert!(err.is_err());
    }

    #[test]
    fn select_rows_and_columns() {
        let d = tiny();
        let r = d.select_rows(&[2, 0]).unwrap();
        assert_eq!(r.features().row(0).to_vec(), vec![7.0, 8.0, 9.0]);
        assert_eq!(r.labels(), &[1, 0]);
        let c = d.select_columns(&[0, 2]).unwrap();
        assert_eq!(c.n_features(), 2);
        assert_eq!(c.feature_names(), &["x".to_string(), "z".to_string()]);
        assert!(d.select_columns(&[3]).is_err());
    }

    #[test]
    fn subject_count_matches_distinct() {
        assert_eq!(tiny().n_subjects(), 2);
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = tiny();
        let mut b = tiny();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.features[[0, 0]] = 1.0000000001;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
