//! Sequential model-based hyperparameter search with median pruning.

pub mod pruner;
pub mod space;
pub mod tpe;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use pruner::MedianPruner;
pub use space::{Assignment, Condition, Distribution, ParamSpec, SearchSpace};
pub use tpe::{TpeSampler, TpeSettings};

use super::experiment::Experiment;
use crate::error::{Error, Result};
use crate::models::Hyperparameters;
use crate::protocol::Protocol;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialState {
    Complete,
    Pruned,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    /// Raw sampled values, including inactive-branch selectors.
    pub params: Assignment,
    pub hyperparameters: Hyperparameters,
    pub state: TrialState,
    /// Mean cross-validated accuracy; set only for completed trials.
    pub objective: Option<f64>,
    /// Running mean fold accuracy after each reporting step.
    pub intermediate: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub seconds: f64,
}

impl TrialRecord {
    pub fn pruned(&self) -> bool {
        self.state == TrialState::Pruned
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSettings {
    pub n_trials: usize,
    pub sampler: TpeSettings,
    pub pruner: MedianPruner,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            n_trials: 50,
            sampler: TpeSettings::default(),
            pruner: MedianPruner::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub backend: String,
    pub space: SearchSpace,
    pub settings: SearchSettings,
    pub best_trial: usize,
    pub best_value: f64,
    /// Base hyperparameters from the config overlaid with the best trial's.
    pub best_hyperparameters: Hyperparameters,
    pub trials: Vec<TrialRecord>,
}

/// Indices of folds reported together: one repeat for k-fold, all folds
/// for LOSO.
fn report_steps(experiment: &Experiment) -> Vec<Vec<usize>> {
    let plan = experiment.plan();
    let ids: Vec<usize> = (0..plan.len()).collect();
    match plan.protocol {
        Protocol::StratifiedKfoldRepeated => ids.chunks(plan.k.max(1)).map(<[usize]>::to_vec).collect(),
        Protocol::Loso => vec![ids],
    }
}

fn merged(base: &Hyperparameters, overlay: Hyperparameters) -> Hyperparameters {
    let mut h = base.clone();
    h.extend(overlay);
    h
}

fn run_trial(
    experiment: &Experiment,
    space: &SearchSpace,
    pruner: &MedianPruner,
    history: &[TrialRecord],
    trial: usize,
    params: Assignment,
) -> TrialRecord {
    let start = Instant::now();
    let hyperparameters = merged(&experiment.config().model.hyperparameters, space.to_hyperparameters(&params));
    let mut record = TrialRecord {
        trial,
        params,
        hyperparameters: hyperparameters.clone(),
        state: TrialState::Failed,
        objective: None,
        intermediate: Vec::new(),
        error: None,
        seconds: 0.0,
    };
    let outcome = (|| -> Result<Option<f64>> {
        let exp = experiment.derive(|c| c.model.hyperparameters = hyperparameters)?;
        let mut folds = Vec::new();
        for step in report_steps(&exp) {
            folds.extend(exp.run_folds(&step, None)?);
            let running = folds.iter().map(|f| f.metrics.accuracy).sum::<f64>() / folds.len() as f64;
            record.intermediate.push(running);
            if folds.len() < exp.plan().len() && pruner.should_prune(history, &record.intermediate) {
                return Ok(None);
            }
        }
        Ok(Some(exp.aggregate(&folds)?.scores.accuracy))
    })();
    match outcome {
        Ok(Some(v)) => {
            record.state = TrialState::Complete;
            record.objective = Some(v);
        }
        Ok(None) => record.state = TrialState::Pruned,
        Err(e) => record.error = Some(e.to_string()),
    }
    record.seconds = start.elapsed().as_secs_f64();
    record
}

/// Maximizes mean cross-validated accuracy over `space`. Trials run one
/// after another; folds within a trial use the experiment's worker pool.
/// Ties on the objective go to the earlier trial.
pub fn search_hyperparameters(
    experiment: &Experiment,
    space: &SearchSpace,
    settings: &SearchSettings,
) -> Result<SearchOutcome> {
    space.validate()?;
    if settings.n_trials == 0 {
        return Err(Error::Config("search needs at least one trial".into()));
    }
    let mut sampler = TpeSampler::new(settings.sampler);
    let mut trials: Vec<TrialRecord> = Vec::with_capacity(settings.n_trials);
    for t in 0..settings.n_trials {
        let params = sampler.sample(space, &trials);
        let record = run_trial(experiment, space, &settings.pruner, &trials, t, params);
        log::info!(
            "trial {t}: {:?} objective={:?} {}",
            record.state,
            record.objective,
            record.error.as_deref().unwrap_or("")
        );
        trials.push(record);
    }
    let best = trials
        .iter()
        .filter_map(|t| t.objective.map(|v| (t.trial, v)))
        .fold(None::<(usize, f64)>, |acc, (t, v)| match acc {
            Some((_, bv)) if v <= bv => acc,
            _ => Some((t, v)),
        })
        .ok_or_else(|| {
            let reason = trials.iter().find_map(|t| t.error.clone()).unwrap_or_default();
            Error::Config(format!("no trial completed; first failure: {reason}"))
        })?;
    Ok(SearchOutcome {
        backend: experiment.config().model.backend.clone(),
        space: space.clone(),
        settings: *settings,
        best_trial: best.0,
        best_value: best.1,
        best_hyperparameters: trials[best.0].hyperparameters.clone(),
        trials,
    })
}
