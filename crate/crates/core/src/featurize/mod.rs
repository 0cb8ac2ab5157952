//! Temporal aggregation into fixed-width rows and leakage-safe feature
//! selection.
//!
//! Selection is always fitted on a training split only; the fitted
//! [`SelectionModel`] is then applied unchanged to the matching test split.

mod anova;
mod attributes;

pub use anova::{
    anova_f_value, apply_selector, fit_anova_selector, SelectionModel, MAX_SELECTED_FEATURES,
};
pub use attributes::{
    aggregate, drop_constant_features, drop_zero_frames, tabularize, Attribute, AttributeSet,
};
