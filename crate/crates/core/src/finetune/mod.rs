//! Gradient fine-tuning of a tabular foundation model.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub mod checkpoint;
pub mod early_stop;
pub mod engine;
pub mod loss;
pub mod optimizer;
pub mod params;
pub mod schedule;

pub use checkpoint::{Checkpoint, CheckpointMetadata};
pub use early_stop::{adaptive_early_stop, adaptive_patience, StopDecision};
pub use engine::{finetune, FinetuneOutcome, StepLog};
pub use loss::{sigmoid, temperature_bce_grad, temperature_bce_loss};
pub use optimizer::{make_optimizer, AdamW, Optimizer, ScheduleFreeAdamW};
pub use params::{Gradients, ParamGroup, ParameterGroupMap, ParameterSet, Tensor};
pub use schedule::{build_schedule, LrSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// AdamW at a constant rate.
    #[serde(rename = "adamw")]
    AdamW,
    /// AdamW with linear warm-up and cosine annealing.
    #[serde(rename = "adamw_one_cycle")]
    AdamWOneCycle,
    /// Schedule-free AdamW with linear warm-up.
    ScheduleFree,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adamw" => Ok(Self::AdamW),
            "adamw_one_cycle" => Ok(Self::AdamWOneCycle),
            "schedule_free" => Ok(Self::ScheduleFree),
            other => Err(Error::invalid(format!(
                "unknown optimizer {other:?}; expected adamw, adamw_one_cycle or schedule_free"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub temperature: f64,
    pub frozen: BTreeSet<ParamGroup>,
    pub max_steps: usize,
    pub warmup_fraction: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
    pub min_patience: usize,
    pub patience_scale: f64,
    pub validation_fraction: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub weight_decay: f64,
    /// Validation accuracy is evaluated every this many steps.
    pub eval_every: usize,
    /// Aborts if the first update moves parameters further than this.
    pub first_step_displacement_cap: Option<f64>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 32,
            temperature: 1.0,
            frozen: [ParamGroup::XEncoder, ParamGroup::YEncoder].into(),
            max_steps: 200,
            warmup_fraction: 0.1,
            div_factor: 25.0,
            final_div_factor: 1e4,
            min_patience: 16,
            patience_scale: 0.3,
            validation_fraction: 0.2,
            seed: 0,
            optimizer: OptimizerKind::AdamWOneCycle,
            weight_decay: 0.01,
            eval_every: 1,
            first_step_displacement_cap: None,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return fail(format!("temperature must be > 0, got {}", self.temperature));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return fail(format!(
                "warmup_fraction must lie in (0, 1), got {}",
                self.warmup_fraction
            ));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 0.5) {
            return fail(format!(
                "validation_fraction must lie in (0, 0.5), got {}",
                self.validation_fraction
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.max_steps < 2 {
            return fail(format!("max_steps must be >= 2, got {}", self.max_steps));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return fail("batch_size and eval_every must be positive".into());
        }
        if !(self.div_factor > 0.0 && self.final_div_factor > 0.0) {
            return fail("div_factor and final_div_factor must be > 0".into());
        }
        if !(self.patience_scale >= 0.0) || !(self.weight_decay >= 0.0) {
            return fail("patience_scale and weight_decay must be >= 0".into());
        }
        if let Some(cap) = self.first_step_displacement_cap {
            if !(cap > 0.0) {
                return fail(format!("first_step_displacement_cap must be > 0, got {cap}"));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optimizer_names_agree_between_serde_and_from_str() {
        for kind in [OptimizerKind::AdamW, OptimizerKind::AdamWOneCycle, OptimizerKind::ScheduleFree] {
            let name = serde_json::to_value(kind).unwrap();
            assert_eq!(name.as_str().unwrap().parse::<OptimizerKind>().unwrap(), kind);
        }
    }

    #[test]
    fn defaults_are_valid() {
        let c = FinetuneConfig::default();
        c.validate().unwrap();
        assert_eq!(c.learning_rate, 1e-4);
        assert_eq!(c.batch_size, 32);
        assert_eq!(c.temperature, 1.0);
    }

    #[test]
    fn invariants_enforced() {
        let bad = [
            FinetuneConfig { temperature: 0.0, ..Default::default() },
            FinetuneConfig { warmup_fraction: 1.0, ..Default::default() },
            FinetuneConfig { validation_fraction: 0.5, ..Default::default() },
            FinetuneConfig { max_steps: 1, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn toml_round_trip_with_partial_fields() {
        let c: FinetuneConfig =
            toml::from_str("learning_rate = 0.001\nfrozen = []\noptimizer = \"schedule_free\"")
                .unwrap();
        assert!(c.frozen.is_empty());
        assert_eq!(c.optimizer, OptimizerKind::ScheduleFree);
        assert_eq!(c.batch_size, 32);
        assert!(toml::from_str::<FinetuneConfig>("lr = 1").is_err());
    }
}
