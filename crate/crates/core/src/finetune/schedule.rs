use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{FinetuneConfig, OptimizerKind};

/// Per-step learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant {
        lr: f64,
    },
    /// Linear warm-up then cosine annealing.
    OneCycle {
        peak_lr: f64,
        initial_lr: f64,
        min_lr: f64,
        warmup_steps: usize,
        total_steps: usize,
    },
    /// Linear warm-up then constant, for schedule-free optimisation.
    Warmup {
        peak_lr: f64,
        warmup_steps: usize,
    },
}

impl LrSchedule {
    /// Rate applied by update `step` (0-based).
    pub fn lr(&self, step: usize) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::OneCycle {
                peak_lr,
                initial_lr,
                min_lr,
                warmup_steps,
                total_steps,
            } => {
                if step <= warmup_steps {
                    let t = step as f64 / warmup_steps as f64;
                    initial_lr + (peak_lr - initial_lr) * t
                } else {
                    let span = (total_steps - 1 - warmup_steps) as f64;
                    let t = ((step - warmup_steps) as f64 / span).min(1.0);
                    min_lr + (peak_lr - min_lr) * 0.5 * (1.0 + (PI * t).cos())
                }
            }
            LrSchedule::Warmup {
                peak_lr,
                warmup_steps,
            } => {
                if warmup_steps == 0 {
                    peak_lr
                } else {
                    peak_lr * ((step + 1) as f64 / warmup_steps as f64).min(1.0)
                }
            }
        }
    }

    pub fn peak(&self) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::OneCycle { peak_lr, .. } | LrSchedule::Warmup { peak_lr, .. } => peak_lr,
        }
    }
}

/// Warm-up length: `ceil(warmup_fraction * max_steps)`, kept inside
/// `1..=max_steps - 2` so both phases exist.
pub fn warmup_steps(config: &FinetuneConfig) -> usize {
    let raw = (config.warmup_fraction * config.max_steps as f64).ceil() as usize;
    raw.clamp(1, config.max_steps.saturating_sub(2).max(1))
}

pub fn build_schedule(config: &FinetuneConfig) -> LrSchedule {
    let peak_lr = config.learning_rate;
    match config.optimizer {
        OptimizerKind::AdamW => LrSchedule::Constant { lr: peak_lr },
        OptimizerKind::AdamWOneCycle => {
            let initial_lr = peak_lr / config.div_factor;
            LrSchedule::OneCycle {
                peak_lr,
                initial_lr,
                min_lr: initial_lr / config.final_div_factor,
                warmup_steps: warmup_steps(config),
                total_steps: config.max_steps.max(2),
            }
        }
        OptimizerKind::ScheduleFree => LrSchedule::Warmup {
            peak_lr,
            warmup_steps: warmup_steps(config),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(max_steps: usize) -> FinetuneConfig {
        FinetuneConfig {
            max_steps,
            ..FinetuneConfig::default()
        }
    }

    #[test]
    fn warmup_starts_below_and_reaches_peak() {
        let c = config(200);
        let s = build_schedule(&c);
        let w = warmup_steps(&c);
        assert_eq!(w, 20);
        assert!(s.lr(0) < s.peak());
        assert_eq!(s.lr(0), c.learning_rate / 25.0);
        assert_eq!(s.lr(w), c.learning_rate);
    }

    // Closed form at the last step: min_lr = peak / 25 / 1e4 = 4e-6 * peak.
    #[test]
    fn final_rate_below_one_percent_of_peak() {
        let c = config(100);
        let s = build_schedule(&c);
        let last = s.lr(99);
        assert!((last - c.learning_rate / 25.0 / 1e4).abs() < 1e-18);
        assert!(last < 0.01 * s.peak());
    }

    #[test]
    fn monotone_up_then_down() {
        for steps in [2usize, 3, 10, 57, 400] {
            let c = config(steps);
            let s = build_schedule(&c);
            let w = warmup_steps(&c);
            for t in 1..=w {
                assert!(s.lr(t) >= s.lr(t - 1), "steps={steps} t={t}");
            }
            for t in w + 1..steps {
                assert!(s.lr(t) <= s.lr(t - 1), "steps={steps} t={t}");
            }
        }
    }

    #[test]
    fn constant_and_warmup_variants() {
        let c = FinetuneConfig {
            optimizer: OptimizerKind::AdamW,
            ..config(50)
        };
        assert_eq!(build_schedule(&c).lr(0), c.learning_rate);
        let c = FinetuneConfig {
            optimizer: OptimizerKind::ScheduleFree,
            ..config(50)
        };
        let s = build_schedule(&c);
        assert!(s.lr(0) < s.lr(4));
        assert_eq!(s.lr(4), c.learning_rate);
        assert_eq!(s.lr(40), c.learning_rate);
    }
}
