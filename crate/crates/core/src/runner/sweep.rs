use std::collections::BTreeMap;

use serde_json::Value;

use super::experiment::Experiment;
use super::store::ResultsStore;
use super::{run_cell, CellResult};
use crate::error::{Error, Result};
use crate::models::ClassifierKind;

pub const SWEEP_TAG: &str = "sweep.proportion";
pub const SWEEP_ID_TAG: &str = "sweep.id";

/// One run per context proportion on the same folds. A proportion that
/// loses a class in some fold becomes a failed cell; the sweep continues.
pub fn context_sweep(experiment: &Experiment, proportions: &[f64], store: &ResultsStore) -> Result<Vec<CellResult>> {
    if proportions.is_empty() {
        return Err(Error::Config("no proportions given".into()));
    }
    if let Some(p) = proportions.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(Error::Config(format!("proportion {p} is outside (0, 1]")));
    }
    let backend = &experiment.config().model.backend;
    if experiment.registry().kind(backend)? != ClassifierKind::TfmIcl {
        return Err(Error::Config(format!("context sweeps need an in-context backend, got {backend:?}")));
    }
    let sweep_id = store.allocate_id(&format!("{}-sweep", experiment.config().name), &experiment.config().hash());
    Ok(proportions
        .iter()
        .map(|&p| {
            let tags = BTreeMap::from([
                (SWEEP_TAG.to_string(), p.to_string()),
                (SWEEP_ID_TAG.to_string(), sweep_id.clone()),
            ]);
            let mut fallback = experiment.config().clone();
            fallback.model.hyperparameters.insert("context_proportion".into(), Value::from(p));
            let cell = experiment.derive(|c| {
                c.model.hyperparameters.insert("context_proportion".into(), Value::from(p));
            });
            run_cell(cell, store, tags, &fallback)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::BackendRegistry;
    use crate::protocol::Protocol;
    use crate::runner::test_support::synth_config;

    #[test]
    fn full_context_matches_plain_run_and_failures_are_cells() {
        let dir = tempfile::tempdir().unwrap();
        let store = ResultsStore::open(dir.path()).unwrap();
        let registry = BackendRegistry::with_defaults();
        let exp = Experiment::prepare(synth_config("mock_icl", Protocol::StratifiedKfoldRepeated), &registry).unwrap();
        let cells = context_sweep(&exp, &[0.02, 0.5, 1.0], &store).unwrap();
        assert_eq!(cells.len(), 3);
        assert!(cells[0].error.is_some() && cells[0].run_id.is_none());
        assert!(cells[1].report.is_some());
        let plain = exp.run("plain").unwrap();
        assert_eq!(cells[2].report.as_ref().unwrap().scores, plain.report.scores);
        assert_eq!(store.load_all().unwrap().len(), 2);

        assert!(context_sweep(&exp, &[1.5], &store).is_err());
        let rf = Experiment::prepare(synth_config("random_forest", Protocol::Loso), &registry).unwrap();
        assert!(context_sweep(&rf, &[0.5], &store).is_err());
    }
}
