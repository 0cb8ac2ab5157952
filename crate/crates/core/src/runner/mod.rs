//! Config-driven orchestration: single runs, hyperparameter search, context
//! sweeps, ablation matrices, persistence and reports.

pub mod ablation;
pub mod config;
pub mod experiment;
pub mod report;
pub mod search;
pub mod store;
pub mod sweep;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use ablation::{ablation_cells, ablation_matrix, AblationCell};
pub use config::{DataConfig, ExperimentConfig, ModelConfig, ProtocolConfig};
pub use experiment::{Experiment, FoldRecord, RunRecord};
pub use report::{emit_report, ReportFiles};
pub use search::{search_hyperparameters, SearchOutcome, SearchSettings, SearchSpace, TrialRecord, TrialState};
pub use store::ResultsStore;
pub use sweep::context_sweep;

use crate::error::Result;
use crate::models::BackendRegistry;
use crate::protocol::MetricReport;

/// One cell of a sweep or ablation table. Failed cells keep their error
/// and the config they would have run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub tags: BTreeMap<String, String>,
    pub config: ExperimentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<MetricReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Runs one tagged cell and persists it. Errors are captured in the cell.
pub(crate) fn run_cell(experiment: Result<Experiment>, store: &ResultsStore, tags: BTreeMap<String, String>, fallback: &ExperimentConfig) -> CellResult {
    let config = experiment.as_ref().map(|e| e.config().clone()).unwrap_or_else(|_| fallback.clone());
    let outcome = experiment.and_then(|exp| {
        let id = store.allocate_id(&exp.config().name, &exp.config().hash());
        let mut record = exp.run(&id)?;
        record.tags = tags.clone();
        store.append(&record)?;
        Ok(record)
    });
    match outcome {
        Ok(r) => CellResult {
            tags,
            config,
            run_id: Some(r.run_id),
            report: Some(r.report),
            error: None,
        },
        Err(e) => {
            log::warn!("cell {tags:?} failed: {e}");
            CellResult {
                tags,
                config,
                run_id: None,
                report: None,
                error: Some(e.to_string()),
            }
        }
    }
}

/// Validates, runs and stores one experiment.
pub fn run_experiment(config: ExperimentConfig, registry: &BackendRegistry, store: &ResultsStore) -> Result<RunRecord> {
    let exp = Experiment::prepare(config, registry)?;
    let id = store.allocate_id(&exp.config().name, &exp.config().hash());
    let record = exp.run(&id)?;
    store.append(&record)?;
    Ok(record)
}
