use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    StratifiedKfoldRepeated,
    Loso,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::StratifiedKfoldRepeated => "stratified_kfold_repeated",
            Protocol::Loso => "loso",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    /// Sorted ascending.
    pub train: Vec<usize>,
    /// Sorted ascending.
    pub test: Vec<usize>,
}

/// Ordered folds produced by one evaluation protocol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub protocol: Protocol,
    pub k: usize,
    pub repeats: usize,
    pub seed: u64,
    pub n_samples: usize,
    /// For LOSO, the held-out subject of each fold.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub held_out_subjects: Vec<String>,
    pub folds: Vec<Fold>,
}

impl SplitPlan {
    pub fn len(&self) -> usize {
        self.folds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folds.is_empty()
    }

    /// Text record: protocol, seed and every index list.
    pub fn to_record(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_record(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// SHA-256 of the text record; equal fingerprints mean identical folds.
    pub fn fingerprint(&self) -> String {
        let record = self.to_record().expect("split plan serializes");
        hex::encode(Sha256::digest(record.as_bytes()))
    }

    /// Folds whose train and test sides share at least one subject.
    pub fn subject_overlap_count(&self, subject_ids: &[String]) -> usize {
        self.folds
            .iter()
            .filter(|f| {
                let test: HashSet<&str> = f.test.iter().map(|&i| subject_ids[i].as_str()).collect();
                f.train.iter().any(|&i| test.contains(subject_ids[i].as_str()))
            })
            .count()
    }
}

/// Repeated stratified k-fold.
///
/// Each class is shuffled with a generator seeded by `seed + repeat`, then
/// dealt round-robin into folds, continuing the deal position from one class
/// to the next so fold sizes also stay within one of each other.
pub fn stratified_kfold_repeated(
    labels: &[u8],
    k: usize,
    repeats: usize,
    seed: u64,
) -> Result<SplitPlan> {
    if k < 2 {
        return Err(Error::invalid(format!("k must be at least 2, got {k}")));
    }
    if repeats == 0 {
        return Err(Error::invalid("repeats must be at least 1"));
    }
    let mut by_class: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    for (class, members) in &by_class {
        if members.len() < k {
            return Err(Error::invalid(format!(
                "class {class} has {} member(s), fewer than k = {k}",
                members.len()
            )));
        }
    }

    let n = labels.len();
    let mut folds = Vec::with_capacity(k * repeats);
    for r in 0..repeats {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
        let mut assignment = vec![0usize; n];
        let mut position = 0usize;
        for members in by_class.values() {
            let mut shuffled = members.clone();
            shuffled.shuffle(&mut rng);
            for i in shuffled {
                assignment[i] = position % k;
                position += 1;
            }
        }
        for f in 0..k {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..n).partition(|&i| assignment[i] == f);
            folds.push(Fold { train, test });
        }
    }

    Ok(SplitPlan {
        protocol: Protocol::StratifiedKfoldRepeated,
        k,
        repeats,
        seed,
        n_samples: n,
        held_out_subjects: Vec::new(),
        folds,
    })
}

/// One fold per distinct subject, in sorted subject order.
pub fn leave_one_subject_out(subject_ids: &[String]) -> Result<SplitPlan> {
    let mut subjects: Vec<&str> = subject_ids.iter().map(String::as_str).collect();
    subjects.sort_unstable();
    subjects.dedup();
    if subjects.len() < 2 {
        return Err(Error::invalid(format!(
            "leave-one-subject-out needs at least 2 subjects, found {}",
            subjects.len()
        )));
    }
    let folds = subjects
        .iter()
        .map(|s| {
            let (test, train) = (0..subject_ids.len()).partition(|&i| subject_ids[i] == *s);
            Fold { train, test }
        })
        .collect();
    Ok(SplitPlan {
        protocol: Protocol::Loso,
        k: subjects.len(),
        repeats: 1,
        seed: 0,
        n_samples: subject_ids.len(),
        held_out_subjects: subjects.into_iter().map(str::to_string).collect(),
        folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn stratified_counts() {
        let labels = [0, 0, 0, 0, 0, 0, 1, 1, 1, 1];
        let plan = stratified_kfold_repeated(&labels, 2, 1, 3).unwrap();
        assert_eq!(plan.len(), 2);
        for f in &plan.folds {
            let ones = f.test.iter().filter(|&&i| labels[i] == 1).count();
            assert_eq!(f.test.len() - ones, 3);
            assert_eq!(ones, 2);
        }
    }

    #[test]
    fn fifty_folds() {
        let labels: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
        let plan = stratified_kfold_repeated(&labels, 5, 10, 0).unwrap();
        assert_eq!(plan.len(), 50);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let labels: Vec<u8> = (0..30).map(|i| (i % 3 == 0) as u8).collect();
        let a = stratified_kfold_repeated(&labels, 5, 3, 11).unwrap();
        let b = stratified_kfold_repeated(&labels, 5, 3, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = stratified_kfold_repeated(&labels, 5, 3, 12).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
        // repeat r uses seed + r
        let shifted = stratified_kfold_repeated(&labels, 5, 1, 12).unwrap();
        assert_eq!(shifted.folds[..], a.folds[5..10]);
    }

    #[test]
    fn too_few_members_rejected() {
        assert!(stratified_kfold_repeated(&[0, 0, 0, 1], 2, 1, 0).is_err());
        assert!(stratified_kfold_repeated(&[0, 1], 1, 1, 0).is_err());
    }

    #[test]
    fn loso_definition() {
        let subjects = ids(&["A", "A", "B", "C"]);
        let plan = leave_one_subject_out(&subjects).unwrap();
        let sizes: Vec<usize> = plan.folds.iter().map(|f| f.test.len()).collect();
        assert_eq!(sizes, vec![2, 1, 1]);
        assert_eq!(plan.held_out_subjects, ids(&["A", "B", "C"]));
        assert_eq!(plan.subject_overlap_count(&subjects), 0);
    }

    #[test]
    fn loso_42_subjects() {
        let subjects: Vec<String> = (0..122).map(|i| format!("p{:02}", i % 42)).collect();
        assert_eq!(leave_one_subject_out(&subjects).unwrap().len(), 42);
    }

    #[test]
    fn loso_single_subject_rejected() {
        assert!(leave_one_subject_out(&ids(&["A", "A"])).is_err());
    }

    #[test]
    fn kfold_leaks_subjects() {
        let subjects: Vec<String> = (0..24).map(|i| format!("p{}", i / 3)).collect();
        let labels: Vec<u8> = (0..24).map(|i| (i % 2) as u8).collect();
        let plan = stratified_kfold_repeated(&labels, 5, 2, 0).unwrap();
        assert!(plan.subject_overlap_count(&subjects) > 0);
    }

    #[test]
    fn record_round_trip() {
        let plan = leave_one_subject_out(&ids(&["x", "y", "x"])).unwrap();
        assert_eq!(SplitPlan::from_record(&plan.to_record().unwrap()).unwrap(), plan);
    }
}
