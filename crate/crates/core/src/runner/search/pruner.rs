use serde::{Deserialize, Serialize};

use super::{TrialRecord, TrialState};

/// Median stopping rule: a trial is pruned at a step when its best
/// intermediate value so far is below the median of completed trials'
/// values at that step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MedianPruner {
    /// Completed trials required before any pruning.
    pub n_startup_trials: usize,
    /// Steps below this index are never pruned.
    pub n_warmup_steps: usize,
}

impl Default for MedianPruner {
    fn default() -> Self {
        Self {
            n_startup_trials: 5,
            n_warmup_steps: 0,
        }
    }
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

impl MedianPruner {
    /// `intermediate` holds the current trial's values for steps `0..=step`.
    pub fn should_prune(&self, history: &[TrialRecord], intermediate: &[f64]) -> bool {
        let Some(step) = intermediate.len().checked_sub(1) else {
            return false;
        };
        if step < self.n_warmup_steps {
            return false;
        }
        let completed: Vec<&TrialRecord> = history.iter().filter(|t| t.state == TrialState::Complete).collect();
        if completed.len() < self.n_startup_trials {
            return false;
        }
        let at_step: Vec<f64> = completed
            .iter()
            .filter_map(|t| t.intermediate.get(step).copied())
            .filter(|v| v.is_finite())
            .collect();
        let Some(m) = median(at_step) else {
            return false;
        };
        let best = intermediate.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
        best < m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Hyperparameters;
    use crate::runner::search::space::Assignment;

    fn done(trial: usize, curve: Vec<f64>) -> TrialRecord {
        TrialRecord {
            trial,
            params: Assignment::new(),
            hyperparameters: Hyperparameters::new(),
            state: TrialState::Complete,
            objective: curve.last().copied(),
            intermediate: curve,
            error: None,
            seconds: 0.0,
        }
    }

    #[test]
    fn waits_for_startup_then_applies_median() {
        let p = MedianPruner::default();
        let mut h: Vec<TrialRecord> = (0..4).map(|t| done(t, vec![0.6, 0.7])).collect();
        assert!(!p.should_prune(&h, &[0.1]));
        h.push(done(4, vec![0.5, 0.9]));
        // Median at step 0 over {0.6 x4, 0.5} is 0.6.
        assert!(p.should_prune(&h, &[0.59]));
        assert!(!p.should_prune(&h, &[0.6]));
        // Best-so-far is compared, not the latest value.
        assert!(!p.should_prune(&h, &[0.8, 0.1]));
        assert!(!p.should_prune(&h, &[]));
    }

    #[test]
    fn even_count_median_averages() {
        assert_eq!(median(vec![1.0, 4.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(vec![]), None);
    }
}
