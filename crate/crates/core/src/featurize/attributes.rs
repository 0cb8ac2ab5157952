use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{TabularDataset, TemporalDataset, TemporalSample};
use crate::error::{Error, Result};

/// A per-feature temporal summary statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Mean,
    Median,
    Std,
    Autocorr,
}

impl Attribute {
    pub fn name(self) -> &'static str {
        match self {
            Attribute::Mean => "mean",
            Attribute::Median => "median",
            Attribute::Std => "std",
            Attribute::Autocorr => "autocorr",
        }
    }

    /// Minimum number of frames the statistic is defined for.
    pub fn min_frames(self) -> usize {
        match self {
            Attribute::Autocorr => 2,
            _ => 1,
        }
    }

    pub fn compute(self, column: ArrayView1<f64>) -> f64 {
        match self {
            Attribute::Mean => mean(column),
            Attribute::Median => median(column),
            Attribute::Std => population_std(column),
            Attribute::Autocorr => lag1_autocorrelation(column),
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Attribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Attribute::Mean),
            "median" => Ok(Attribute::Median),
            "std" => Ok(Attribute::Std),
            "autocorr" => Ok(Attribute::Autocorr),
            other => Err(Error::invalid(format!("unknown attribute {other:?}"))),
        }
    }
}

/// Ordered, duplicate-free list of attributes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Attribute>", into = "Vec<Attribute>")]
pub struct AttributeSet(Vec<Attribute>);

impl AttributeSet {
    pub fn new(attrs: Vec<Attribute>) -> Result<Self> {
        if attrs.is_empty() {
            return Err(Error::invalid("attribute set is empty"));
        }
        for (i, a) in attrs.iter().enumerate() {
            if attrs[..i].contains(a) {
                return Err(Error::invalid(format!("duplicate attribute {a}")));
            }
        }
        Ok(Self(attrs))
    }

    /// mean, median, std, autocorr.
    pub fn standard() -> Self {
        Self(vec![
            Attribute::Mean,
            Attribute::Median,
            Attribute::Std,
            Attribute::Autocorr,
        ])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Attribute> + '_ {
        self.0.iter().copied()
    }

    fn min_frames(&self) -> usize {
        self.iter().map(Attribute::min_frames).max().unwrap_or(1)
    }

    /// Output names, attribute-major: `<feature>_<attribute>`.
    pub fn feature_names(&self, base: &[String]) -> Vec<String> {
        self.iter()
            .flat_map(|a| base.iter().map(move |n| format!("{n}_{a}")))
            .collect()
    }
}

impl Default for AttributeSet {
    fn default() -> Self {
        Self::standard()
    }
}

impl TryFrom<Vec<Attribute>> for AttributeSet {
    type Error = Error;

    fn try_from(v: Vec<Attribute>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<AttributeSet> for Vec<Attribute> {
    fn from(s: AttributeSet) -> Self {
        s.0
    }
}

fn mean(x: ArrayView1<f64>) -> f64 {
    x.sum() / x.len() as f64
}

fn median(x: ArrayView1<f64>) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn population_std(x: ArrayView1<f64>) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Lag-1 sample autocorrelation; zero for a constant series.
fn lag1_autocorrelation(x: ArrayView1<f64>) -> f64 {
    let m = mean(x);
    let denom: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
    if denom == 0.0 {
        return 0.0;
    }
    let num: f64 = x
        .iter()
        .zip(x.iter().skip(1))
        .map(|(a, b)| (a - m) * (b - m))
        .sum();
    num / denom
}

/// Removes frames whose every feature is exactly zero.
pub fn drop_zero_frames(sample: &TemporalSample) -> Result<TemporalSample> {
    let keep: Vec<usize> = sample
        .frames
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(_, r)| r.iter().any(|&v| v != 0.0))
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(Error::UnusableSample {
            sample_id: sample.sample_id.clone(),
            reason: "every frame is all-zero".into(),
        });
    }
    Ok(TemporalSample {
        frames: sample.frames.select(Axis(0), &keep),
        ..sample.clone()
    })
}

/// Summarises each feature column over time: `n·d` values, attribute-major.
pub fn aggregate(sample: &TemporalSample, attrs: &AttributeSet) -> Result<Vec<f64>> {
    let needed = attrs.min_frames();
    if sample.n_frames() < needed {
        return Err(Error::UnusableSample {
            sample_id: sample.sample_id.clone(),
            reason: format!(
                "{} frame(s) after filtering, {needed} required by the attribute set",
                sample.n_frames()
            ),
        });
    }
    let mut out = Vec::with_capacity(attrs.len() * sample.n_features());
    for attr in attrs.iter() {
        out.extend(sample.frames.columns().into_iter().map(|c| attr.compute(c)));
    }
    Ok(out)
}

/// Zero-frame filtering plus aggregation for every sample, in order.
pub fn tabularize(data: &TemporalDataset, attrs: &AttributeSet) -> Result<TabularDataset> {
    let rows: Vec<Vec<f64>> = data
        .samples
        .par_iter()
        .map(|s| drop_zero_frames(s).and_then(|f| aggregate(&f, attrs)))
        .collect::<Result<_>>()?;
    let width = attrs.len() * data.n_features();
    let features = Array2::from_shape_vec((rows.len(), width), rows.concat())
        .map_err(|e| Error::invalid(e.to_string()))?;
    TabularDataset::new(
        features,
        data.samples.iter().map(|s| s.label).collect(),
        data.samples.iter().map(|s| s.subject_id.clone()).collect(),
        attrs.feature_names(&data.feature_names),
    )
}

/// Drops columns whose value is identical across every row.
pub fn drop_constant_features(data: &TabularDataset) -> Result<TabularDataset> {
    if data.n_rows() == 0 {
        return Err(Error::invalid("cannot drop constant features of an empty dataset"));
    }
    let keep: Vec<usize> = data
        .features()
        .columns()
        .into_iter()
        .enumerate()
        .filter(|(_, c)| c.iter().any(|&v| v != c[0]))
        .map(|(j, _)| j)
        .collect();
    if keep.is_empty() {
        return Err(Error::invalid("every feature is constant across samples"));
    }
    data.select_columns(&keep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use proptest::prelude::*;

    fn sample(frames: Array2<f64>) -> TemporalSample {
        TemporalSample {
            sample_id: "s".into(),
            subject_id: "p".into(),
            label: 0,
            frames,
        }
    }

    #[test]
    fn zero_frames_removed_in_order() {
        let s = sample(array![[0.0, 0.0], [1.0, 2.0], [0.0, 3.0], [0.0, 0.0]]);
        let f = drop_zero_frames(&s).unwrap();
        assert_eq!(f.frames, array![[1.0, 2.0], [0.0, 3.0]]);
    }

    #[test]
    fn no_zero_frames_is_identity() {
        let s = sample(array![[1.0, 0.0], [1.0, 2.0]]);
        assert_eq!(drop_zero_frames(&s).unwrap(), s);
    }

    #[test]
    fn all_zero_frames_rejected() {
        let s = sample(array![[0.0, 0.0], [0.0, 0.0]]);
        assert!(drop_zero_frames(&s).is_err());
    }

    #[test]
    fn hand_arithmetic() {
        let c = Array1::from(vec![1.0, 2.0, 3.0]);
        assert_eq!(Attribute::Mean.compute(c.view()), 2.0);
        assert_eq!(Attribute::Median.compute(c.view()), 2.0);
        let c = Array1::from(vec![4.0, 1.0, 3.0, 2.0]);
        assert_eq!(Attribute::Median.compute(c.view()), 2.5);
        let c = Array1::from(vec![2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(Attribute::Std.compute(c.view()), 2.0);
    }

    // r1 = sum (x_t - m)(x_{t+1} - m) / sum (x_t - m)^2, evaluated by hand:
    // deviations -1.5, -0.5, 0.5, 1.5 -> (0.75 - 0.25 + 0.75) / 5 = 0.25
    #[test]
    fn autocorrelation_oracle() {
        let c = Array1::from(vec![1.0, 2.0, 3.0, 4.0]);
        assert!((Attribute::Autocorr.compute(c.view()) - 0.25).abs() < 1e-15);
        let flat = Array1::from(vec![3.0, 3.0, 3.0]);
        assert_eq!(Attribute::Autocorr.compute(flat.view()), 0.0);
    }

    #[test]
    fn aggregate_is_attribute_major() {
        let s = sample(array![[1.0, 10.0], [2.0, 20.0], [3.0, 30.0], [4.0, 40.0]]);
        let v = aggregate(&s, &AttributeSet::standard()).unwrap();
        assert_eq!(v.len(), 8);
        assert_eq!(&v[0..2], &[2.5, 25.0]);
        assert_eq!(&v[2..4], &[2.5, 25.0]);
        assert!((v[6] - 0.25).abs() < 1e-15 && (v[7] - 0.25).abs() < 1e-15);
        let names = AttributeSet::standard().feature_names(&["a".into(), "b".into()]);
        assert_eq!(names[0], "a_mean");
        assert_eq!(names[3], "b_median");
        assert_eq!(names[7], "b_autocorr");
    }

    #[test]
    fn openface_width_gives_2836() {
        let s = sample(Array2::from_shape_fn((5, 709), |(i, j)| (i * j) as f64 + 1.0));
        assert_eq!(aggregate(&s, &AttributeSet::standard()).unwrap().len(), 2836);
    }

    #[test]
    fn autocorr_needs_two_frames() {
        let s = sample(array![[1.0, 2.0]]);
        assert!(aggregate(&s, &AttributeSet::standard()).is_err());
        let mean_only = AttributeSet::new(vec![Attribute::Mean]).unwrap();
        assert_eq!(aggregate(&s, &mean_only).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn attribute_set_rejects_duplicates_and_empty() {
        assert!(AttributeSet::new(vec![]).is_err());
        assert!(AttributeSet::new(vec![Attribute::Mean, Attribute::Mean]).is_err());
    }

    fn tab(features: Array2<f64>) -> TabularDataset {
        let n = features.nrows();
        let p = features.ncols();
        TabularDataset::new(
            features,
            (0..n).map(|i| (i % 2) as u8).collect(),
            (0..n).map(|i| format!("s{i}")).collect(),
            (0..p).map(|j| format!("c{j}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn constant_column_removed() {
        let d = tab(array![[1.0, 5.0, 2.0], [2.0, 5.0, 2.5], [3.0, 5.0, 0.0]]);
        let out = drop_constant_features(&d).unwrap();
        assert_eq!(out.feature_names(), &["c0".to_string(), "c2".to_string()]);
    }

    #[test]
    fn no_constant_columns_is_identity() {
        let d = tab(array![[1.0, 2.0], [2.0, 1.0]]);
        assert_eq!(drop_constant_features(&d).unwrap(), d);
    }

    #[test]
    fn single_row_is_all_constant() {
        let d = tab(array![[1.0, 2.0]]);
        assert!(drop_constant_features(&d).is_err());
    }

    proptest! {
        #[test]
        fn aggregate_permutation_equivariant(
            t in 2usize..8,
            d in 1usize..5,
            vals in proptest::collection::vec(-5.0f64..5.0, 64),
            rot in 0usize..5,
        ) {
            let frames = Array2::from_shape_fn((t, d), |(i, j)| vals[(i * d + j) % 64] + j as f64);
            let perm: Vec<usize> = (0..d).map(|j| (j + rot) % d).collect();
            let permuted = frames.select(Axis(1), &perm);
            let attrs = AttributeSet::standard();
            let a = aggregate(&sample(frames), &attrs).unwrap();
            let b = aggregate(&sample(permuted), &attrs).unwrap();
            for block in 0..attrs.len() {
                for (k, &src) in perm.iter().enumerate() {
                    prop_assert_eq!(b[block * d + k].to_bits(), a[block * d + src].to_bits());
                }
            }
        }
    }
}
