use serde::{Deserialize, Serialize};

use super::FinetuneConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopDecision {
    Continue,
    Stop,
}

/// `max(min_patience, ceil(scale * best_step))`.
///
/// Products within 1e-9 of an integer are treated as that integer so that
/// e.g. `0.3 * 100` yields 30 rather than 31.
pub fn adaptive_patience(best_step: usize, min_patience: usize, scale: f64) -> usize {
    let raw = scale * best_step as f64;
    let nearest = raw.round();
    let scaled = if (raw - nearest).abs() <= 1e-9 * nearest.abs().max(1.0) {
        nearest
    } else {
        raw.ceil()
    };
    min_patience.max(scaled.max(0.0) as usize)
}

/// Index into `history` of the best entry: the first step reaching the
/// maximum validation accuracy.
pub fn best_entry(history: &[(usize, f64)]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &(_, acc)) in history.iter().enumerate() {
        if best.is_none_or(|b| acc > history[b].1) {
            best = Some(i);
        }
    }
    best
}

/// Stops once the steps since the best validation accuracy reach the
/// adaptive patience.
pub fn adaptive_early_stop(history: &[(usize, f64)], config: &FinetuneConfig) -> StopDecision {
    let (Some(best), Some(&(current, _))) = (best_entry(history), history.last()) else {
        return StopDecision::Continue;
    };
    let best_step = history[best].0;
    let patience = adaptive_patience(best_step, config.min_patience, config.patience_scale);
    if current.saturating_sub(best_step) >= patience {
        StopDecision::Stop
    } else {
        StopDecision::Continue
    }
}
