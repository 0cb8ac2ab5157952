use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::experiment::Experiment;
use super::store::ResultsStore;
use super::{run_cell, CellResult};
use crate::error::{Error, Result};
use crate::finetune::{OptimizerKind, ParamGroup};
use crate::models::ClassifierKind;

pub const AXIS_TAG: &str = "ablation.axis";
pub const CELL_TAG: &str = "ablation.cell";
pub const ABLATION_ID_TAG: &str = "ablation.id";

/// One varied setting applied on top of the matrix base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", content = "value", rename_all = "snake_case")]
pub enum AblationCell {
    Optimizer(OptimizerKind),
    BatchSize(usize),
    Frozen(BTreeSet<ParamGroup>),
    Temperature(f64),
    KFeatures(usize),
}

impl AblationCell {
    pub fn axis(&self) -> &'static str {
        match self {
            AblationCell::Optimizer(_) => "optimizer",
            AblationCell::BatchSize(_) => "batch_size",
            AblationCell::Frozen(_) => "frozen",
            AblationCell::Temperature(_) => "temperature",
            AblationCell::KFeatures(_) => "k_features",
        }
    }

    pub fn label(&self) -> String {
        match self {
            AblationCell::Optimizer(o) => match o {
                OptimizerKind::AdamW => "adamw".into(),
                OptimizerKind::AdamWOneCycle => "adamw_one_cycle".into(),
                OptimizerKind::ScheduleFree => "schedule_free".into(),
            },
            AblationCell::BatchSize(b) => b.to_string(),
            AblationCell::Frozen(g) if g.is_empty() => "none".into(),
            AblationCell::Frozen(g) => g.iter().map(|g| g.name()).collect::<Vec<_>>().join("+"),
            AblationCell::Temperature(t) => format!("{t:.1}"),
            AblationCell::KFeatures(k) => k.to_string(),
        }
    }

    /// Applies the setting. Backend hyperparameters that would shadow the
    /// fine-tuning config are removed so the cell value takes effect.
    pub fn apply(&self, c: &mut ExperimentConfig) {
        match self {
            AblationCell::Optimizer(o) => c.finetune.optimizer = *o,
            AblationCell::BatchSize(b) => {
                c.model.hyperparameters.remove("batch_size");
                c.finetune.batch_size = *b;
            }
            AblationCell::Frozen(g) => c.finetune.frozen = g.clone(),
            AblationCell::Temperature(t) => {
                c.model.hyperparameters.remove("temperature");
                c.finetune.temperature = *t;
            }
            AblationCell::KFeatures(k) => c.k_features = *k,
        }
    }
}

/// Shared starting point: one-cycle AdamW, batch 8, frozen X and Y
/// encoders, temperature 1.0, 500 features.
pub fn ablation_base(config: &ExperimentConfig) -> ExperimentConfig {
    let mut c = config.clone();
    for cell in [
        AblationCell::Optimizer(OptimizerKind::AdamWOneCycle),
        AblationCell::BatchSize(8),
        AblationCell::Frozen(BTreeSet::from([ParamGroup::XEncoder, ParamGroup::YEncoder])),
        AblationCell::Temperature(1.0),
        AblationCell::KFeatures(500),
    ] {
        cell.apply(&mut c);
    }
    c
}

/// Every cell of the matrix, one axis varied at a time.
pub fn ablation_cells() -> Vec<AblationCell> {
    use ParamGroup::*;
    let mut cells = vec![
        AblationCell::Optimizer(OptimizerKind::ScheduleFree),
        AblationCell::Optimizer(OptimizerKind::AdamW),
        AblationCell::Optimizer(OptimizerKind::AdamWOneCycle),
        AblationCell::BatchSize(8),
        AblationCell::BatchSize(32),
    ];
    for frozen in [
        vec![],
        vec![XEncoder, YEncoder, TransformerBlocks],
        vec![XEncoder],
        vec![YEncoder],
        vec![TransformerBlocks],
        vec![XEncoder, YEncoder],
    ] {
        cells.push(AblationCell::Frozen(frozen.into_iter().collect()));
    }
    cells.extend([0.9, 1.0, 1.1, 1.5].map(AblationCell::Temperature));
    cells.extend([25, 100, 200, 500].map(AblationCell::KFeatures));
    cells
}

/// Runs `cells` from the matrix base; failed cells are recorded and the
/// matrix continues.
pub fn ablation_matrix(experiment: &Experiment, cells: &[AblationCell], store: &ResultsStore) -> Result<Vec<CellResult>> {
    let backend = &experiment.config().model.backend;
    if experiment.registry().kind(backend)? != ClassifierKind::TfmFinetuned {
        return Err(Error::Config(format!("ablations need a fine-tuning backend, got {backend:?}")));
    }
    let base = ablation_base(experiment.config());
    let matrix_id = store.allocate_id(&format!("{}-ablation", base.name), &base.hash());
    Ok(cells
        .iter()
        .map(|cell| {
            let tags = BTreeMap::from([
                (AXIS_TAG.to_string(), cell.axis().to_string()),
                (CELL_TAG.to_string(), cell.label()),
                (ABLATION_ID_TAG.to_string(), matrix_id.clone()),
            ]);
            let mut config = base.clone();
            cell.apply(&mut config);
            let fallback = config.clone();
            let exp = experiment.derive(move |c| *c = config);
            run_cell(exp, store, tags, &fallback)
        })
        .collect())
}
