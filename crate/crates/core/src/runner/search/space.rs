use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::models::Hyperparameters;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Distribution {
    /// Grid `low, low + step, ..., high`.
    Int { low: i64, high: i64, step: i64 },
    Float { low: f64, high: f64, log: bool },
    Categorical { choices: Vec<Value> },
}

impl Distribution {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Distribution::Int { low, high, step } => low <= high && *step > 0 && (high - low) % step == 0,
            Distribution::Float { low, high, log } => {
                low.is_finite() && high.is_finite() && low <= high && (!log || *low > 0.0)
            }
            Distribution::Categorical { choices } => !choices.is_empty(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid distribution {self:?}")))
        }
    }
}

/// Activates a parameter only when `parent` took the value `equals`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub parent: String,
    pub equals: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub distribution: Distribution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<Condition>,
    /// Hyperparameter key written instead of `name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub writes: Option<String>,
}

impl ParamSpec {
    fn new(name: &str, distribution: Distribution) -> Self {
        Self {
            name: name.into(),
            distribution,
            condition: None,
            writes: None,
        }
    }
}

/// Ordered parameters; a conditional parameter follows its parent.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SearchSpace {
    pub params: Vec<ParamSpec>,
}

pub type Assignment = BTreeMap<String, Value>;

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.params.is_empty() {
            return Err(Error::Config("search space is empty".into()));
        }
        for (i, p) in self.params.iter().enumerate() {
            p.distribution.validate()?;
            if let Some(c) = &p.condition {
                if !self.params[..i].iter().any(|q| q.name == c.parent) {
                    return Err(Error::Config(format!(
                        "{} is conditioned on {}, which must come earlier",
                        p.name, c.parent
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_active(spec: &ParamSpec, partial: &Assignment) -> bool {
        match &spec.condition {
            None => true,
            Some(c) => partial.get(&c.parent) == Some(&c.equals),
        }
    }

    /// Maps sampled values to backend hyperparameters.
    pub fn to_hyperparameters(&self, assignment: &Assignment) -> Hyperparameters {
        let mut h = Hyperparameters::new();
        for p in &self.params {
            if let Some(v) = assignment.get(&p.name) {
                h.insert(p.writes.clone().unwrap_or_else(|| p.name.clone()), v.clone());
            }
        }
        h
    }

    /// Built-in ranges for a backend, if it is tunable.
    pub fn for_backend(backend: &str) -> Result<Self> {
        let int = |low, high, step| Distribution::Int { low, high, step };
        let params = match backend {
            "xgboost" => vec![
                ParamSpec::new("max_depth", int(3, 50, 1)),
                ParamSpec::new(
                    "learning_rate",
                    Distribution::Float {
                        low: 0.01,
                        high: 0.5,
                        log: false,
                    },
                ),
            ],
            "random_forest" => vec![
                ParamSpec::new("n_estimators", int(50, 500, 50)),
                ParamSpec::new("max_depth", int(3, 50, 1)),
            ],
            "svm" => vec![
                ParamSpec::new(
                    "C",
                    Distribution::Float {
                        low: 0.1,
                        high: 100.0,
                        log: true,
                    },
                ),
                ParamSpec::new(
                    "gamma",
                    Distribution::Categorical {
                        choices: vec![Value::from("scale"), Value::from("log_uniform")],
                    },
                ),
                ParamSpec {
                    condition: Some(Condition {
                        parent: "gamma".into(),
                        equals: Value::from("log_uniform"),
                    }),
                    writes: Some("gamma".into()),
                    ..ParamSpec::new(
                        "gamma_value",
                        Distribution::Float {
                            low: 0.001,
                            high: 10.0,
                            log: true,
                        },
                    )
                },
            ],
            "tabpfn_finetune" | "mock_finetune" => vec![
                ParamSpec::new(
                    "learning_rate",
                    Distribution::Float {
                        low: 1e-6,
                        high: 1e-2,
                        log: true,
                    },
                ),
                ParamSpec::new("batch_size", int(8, 64, 8)),
            ],
            other => {
                return Err(Error::Config(format!(
                    "no search space defined for backend {other:?}; search space is empty"
                )))
            }
        };
        let space = Self { params };
        space.validate()?;
        Ok(space)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_spaces_validate() {
        for b in ["xgboost", "random_forest", "svm", "tabpfn_finetune"] {
            SearchSpace::for_backend(b).unwrap();
        }
        assert!(SearchSpace::for_backend("tabicl_icl").is_err());
        assert!(SearchSpace::default().validate().is_err());
    }

    #[test]
    fn conditional_gamma_overrides_choice() {
        let s = SearchSpace::for_backend("svm").unwrap();
        let mut a = Assignment::new();
        a.insert("C".into(), Value::from(1.0));
        a.insert("gamma".into(), Value::from("log_uniform"));
        a.insert("gamma_value".into(), Value::from(0.5));
        let h = s.to_hyperparameters(&a);
        assert_eq!(h["gamma"], Value::from(0.5));
        assert_eq!(h.len(), 2);
        a.insert("gamma".into(), Value::from("scale"));
        a.remove("gamma_value");
        assert_eq!(s.to_hyperparameters(&a)["gamma"], Value::from("scale"));
    }
}
