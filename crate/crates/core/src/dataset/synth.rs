use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{TemporalDataset, TemporalSample};
use crate::error::{Error, Result};

/// Half the class-conditional mean gap per feature at `separability = 1`.
const CLASS_SHIFT: f64 = 1.5;
const SUBJECT_BIAS_STD: f64 = 0.5;
const MIN_FRAMES: usize = 8;
const MAX_FRAMES: usize = 16;
const ZERO_FRAME_RATE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_subjects: usize,
    pub samples_per_subject: usize,
    pub d: usize,
    pub separability: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn generate(&self) -> Result<TemporalDataset> {
        synth_dataset(
            self.n_subjects,
            self.samples_per_subject,
            self.d,
            self.separability,
            self.seed,
        )
    }
}

/// Generates subject-structured temporal samples with a class-conditional
/// mean shift proportional to `separability`.
///
/// Every feature carries the shift (with a per-feature random sign), each
/// subject adds its own bias, and roughly one frame in ten is an all-zero
/// tracking dropout.
pub fn synth_dataset(
    n_subjects: usize,
    samples_per_subject: usize,
    d: usize,
    separability: f64,
    seed: u64,
) -> Result<TemporalDataset> {
    if n_subjects == 0 || samples_per_subject == 0 || d == 0 {
        return Err(Error::invalid("synthetic dataset counts must be >= 1"));
    }
    if !(0.0..=1.0).contains(&separability) {
        return Err(Error::invalid(format!(
            "separability {separability} outside [0, 1]"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_subjects * samples_per_subject;
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i >= n / 2)).collect();
    labels.shuffle(&mut rng);

    let signs: Vec<f64> = (0..d)
        .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    let bias = Normal::new(0.0, SUBJECT_BIAS_STD).expect("valid std");

    let mut samples = Vec::with_capacity(n);
    for subject in 0..n_subjects {
        let subject_bias: Vec<f64> = (0..d).map(|_| bias.sample(&mut rng)).collect();
        for k in 0..samples_per_subject {
            let label = labels[subject * samples_per_subject + k];
            let class_sign = if label == 1 { 1.0 } else { -1.0 };
            let n_valid = rng.random_range(MIN_FRAMES..=MAX_FRAMES);
            let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n_valid + 2);
            let mut valid = 0;
            while valid < n_valid {
                if rng.random_bool(ZERO_FRAME_RATE) {
                    rows.push(vec![0.0; d]);
                    continue;
                }
                let row = (0..d)
                    .map(|j| {
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        subject_bias[j] + signs[j] * class_sign * separability * CLASS_SHIFT + noise
                    })
                    .collect();
                rows.push(row);
                valid += 1;
            }
            let t = rows.len();
            let frames = Array2::from_shape_vec((t, d), rows.into_iter().flatten().collect())
                .expect("rectangular frames");
            samples.push(TemporalSample {
                sample_id: format!("subj{subject:03}_s{k}"),
                subject_id: format!("subj{subject:03}"),
                label,
                frames,
            });
        }
    }

    let names = (0..d).map(|j| format!("f{j}")).collect();
    TemporalDataset::new(names, samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_subjects_and_samples() {
        let data = synth_dataset(4, 3, 5, 1.0, 7).unwrap();
        assert_eq!(data.len(), 12);
        assert_eq!(data.n_subjects(), 4);
        assert_eq!(data.n_features(), 5);
    }

    #[test]
    fn deterministic_for_seed() {
        let a = serde_json::to_vec(&synth_dataset(4, 3, 5, 1.0, 7).unwrap()).unwrap();
        let b = serde_json::to_vec(&synth_dataset(4, 3, 5, 1.0, 7).unwrap()).unwrap();
        assert_eq!(a, b);
        let c = serde_json::to_vec(&synth_dataset(4, 3, 5, 1.0, 8).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn class_balanced_within_rounding() {
        let data = synth_dataset(5, 3, 2, 0.5, 1).unwrap();
        let ones = data.samples.iter().filter(|s| s.label == 1).count();
        let zeros = data.len() - ones;
        assert!(ones.abs_diff(zeros) <= 1);
    }

    #[test]
    fn every_sample_keeps_enough_nonzero_frames() {
        let data = synth_dataset(6, 4, 3, 1.0, 3).unwrap();
        for s in &data.samples {
            let nonzero = s
                .frames
                .rows()
                .into_iter()
                .filter(|r| r.iter().any(|&v| v != 0.0))
                .count();
            assert!(nonzero >= MIN_FRAMES);
        }
    }

    #[test]
    fn rejects_zero_counts() {
        assert!(synth_dataset(0, 1, 1, 1.0, 0).is_err());
        assert!(synth_dataset(1, 1, 1, 1.5, 0).is_err());
    }
}
