use std::cmp::Ordering;

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::dataset::TabularDataset;
use crate::error::{Error, Result};

/// Upper bound on retained features (foundation-model input capacity).
pub const MAX_SELECTED_FEATURES: usize = 500;

/// Fitted top-k ANOVA selector.
///
/// `selected_indices` is ordered by descending F-value, ties by ascending
/// column index; `apply_selector` emits columns in exactly this order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionModel {
    pub selected_indices: Vec<usize>,
    /// One F-value per input column. Infinite values serialize as `null`.
    #[serde(with = "f_value_serde")]
    pub f_values: Vec<f64>,
    pub input_width: usize,
    pub selected_names: Vec<String>,
    /// Fingerprint of the training split the selector was fitted on.
    pub fitted_on: String,
}

impl SelectionModel {
    pub fn n_selected(&self) -> usize {
        self.selected_indices.len()
    }

    /// Compact text record for audit logs.
    pub fn to_record(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_record(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

mod f_value_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|x| x.is_finite().then_some(*x))
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<Option<f64>>::deserialize(d)?
            .into_iter()
            .map(|x| x.unwrap_or(f64::INFINITY))
            .collect())
    }
}

/// One-way ANOVA F statistic of `x` between label groups 0 and 1.
///
/// Zero total variance gives 0; zero within-group variance with non-zero
/// between-group variance gives `+inf`.
pub fn anova_f_value(x: ArrayView1<f64>, labels: &[u8]) -> f64 {
    let (mut n0, mut n1, mut s0, mut s1) = (0usize, 0usize, 0.0, 0.0);
    for (&v, &y) in x.iter().zip(labels) {
        if y == 1 {
            n1 += 1;
            s1 += v;
        } else {
            n0 += 1;
            s0 += v;
        }
    }
    let n = n0 + n1;
    if n0 == 0 || n1 == 0 {
        return 0.0;
    }
    let (m0, m1) = (s0 / n0 as f64, s1 / n1 as f64);
    let grand = (s0 + s1) / n as f64;
    let ss_between = n0 as f64 * (m0 - grand).powi(2) + n1 as f64 * (m1 - grand).powi(2);
    let ss_within: f64 = x
        .iter()
        .zip(labels)
        .map(|(&v, &y)| (v - if y == 1 { m1 } else { m0 }).powi(2))
        .sum();
    if ss_between == 0.0 {
        return 0.0;
    }
    if ss_within == 0.0 {
        return f64::INFINITY;
    }
    let df_between = 1.0;
    let df_within = (n - 2) as f64;
    if df_within == 0.0 {
        return f64::INFINITY;
    }
    (ss_between / df_between) / (ss_within / df_within)
}

/// Ranks columns of `train` by F-value and keeps the top `min(k, p)`.
pub fn fit_anova_selector(train: &TabularDataset, k: usize) -> Result<SelectionModel> {
    if k == 0 || k > MAX_SELECTED_FEATURES {
        return Err(Error::invalid(format!(
            "k must be in 1..={MAX_SELECTED_FEATURES}, got {k}"
        )));
    }
    if !train.has_both_classes() {
        return Err(Error::SingleClass);
    }
    let labels = train.labels();
    let f_values: Vec<f64> = train
        .features()
        .columns()
        .into_iter()
        .map(|c| anova_f_value(c, labels))
        .collect();

    let mut order: Vec<usize> = (0..f_values.len()).collect();
    order.sort_by(|&a, &b| {
        f_values[b]
            .partial_cmp(&f_values[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k.min(f_values.len()));

    Ok(SelectionModel {
        selected_names: order
            .iter()
            .map(|&j| train.feature_names()[j].clone())
            .collect(),
        selected_indices: order,
        input_width: train.n_features(),
        f_values,
        fitted_on: train.fingerprint(),
    })
}

/// Projects `data` onto the stored column subset without refitting.
pub fn apply_selector(model: &SelectionModel, data: &TabularDataset) -> Result<TabularDataset> {
    if data.n_features() != model.input_width {
        return Err(Error::WidthMismatch {
            expected: model.input_width,
            actual: data.n_features(),
        });
    }
    data.select_columns(&model.selected_indices)
}
