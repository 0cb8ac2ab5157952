//! Tabular foundation model backends.

use ndarray::ArrayView2;

use crate::error::Result;
use crate::finetune::{Gradients, ParameterGroupMap, ParameterSet};

pub mod bridge;
pub mod cache;
pub mod mock;

pub use bridge::{BridgeConfig, BridgeModel};
pub use cache::{CheckpointCache, CheckpointSpec, Downloader, HttpDownloader};
pub use mock::{MockTfm, MockTfmConfig};

/// A pretrained model that predicts query labels from a labelled context in
/// one forward pass, without parameter updates.
pub trait InContextModel: Send + Sync {
    fn model_name(&self) -> String;

    fn version(&self) -> String;

    /// Positive-class logits `z+` for every query row.
    fn predict_logits(
        &self,
        context_x: ArrayView2<'_, f64>,
        context_y: &[u8],
        query_x: ArrayView2<'_, f64>,
    ) -> Result<Vec<f64>>;

    /// Digest identifying the current weights.
    fn parameter_checksum(&self) -> String;
}

/// A foundation model whose weights can be trained by gradient descent.
pub trait TrainableModel: InContextModel {
    fn parameters(&self) -> &ParameterSet;

    /// Replaces all weights; the layout must match.
    fn set_parameters(&mut self, params: ParameterSet) -> Result<()>;

    fn group_map(&self) -> ParameterGroupMap {
        self.parameters().group_map()
    }

    /// Logits for the queries and the gradient of a scalar objective whose
    /// derivative with respect to the logits is `dlogits(logits)`.
    fn logits_and_gradients(
        &self,
        context_x: ArrayView2<'_, f64>,
        context_y: &[u8],
        query_x: ArrayView2<'_, f64>,
        dlogits: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<(Vec<f64>, Gradients)>;

    fn boxed_clone(&self) -> Box<dyn TrainableModel>;
}
