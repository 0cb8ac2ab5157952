//! Decoupled-weight-decay optimizers over a [`ParameterSet`].
//!
//! Frozen groups are skipped entirely: no update, no weight decay and no
//! optimizer state.

use std::collections::BTreeSet;

use super::params::{Gradients, ParamGroup, ParameterSet};
use super::OptimizerKind;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

pub trait Optimizer: Send {
    /// Applies one update. `params` hold the point gradients are taken at.
    fn step(
        &mut self,
        params: &mut ParameterSet,
        grads: &Gradients,
        lr: f64,
        frozen: &BTreeSet<ParamGroup>,
    );

    /// Parameters to evaluate and checkpoint for the current state.
    fn eval_parameters(&self, params: &ParameterSet) -> ParameterSet {
        params.clone()
    }
}

pub fn make_optimizer(
    kind: OptimizerKind,
    params: &ParameterSet,
    weight_decay: f64,
) -> Box<dyn Optimizer> {
    match kind {
        OptimizerKind::AdamW | OptimizerKind::AdamWOneCycle => {
            Box::new(AdamW::new(params, weight_decay))
        }
        OptimizerKind::ScheduleFree => Box::new(ScheduleFreeAdamW::new(params, weight_decay)),
    }
}

pub struct AdamW {
    weight_decay: f64,
    t: i32,
    m: Gradients,
    v: Gradients,
}

impl AdamW {
    pub fn new(params: &ParameterSet, weight_decay: f64) -> Self {
        Self {
            weight_decay,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

impl Optimizer for AdamW {
    fn step(
        &mut self,
        params: &mut ParameterSet,
        grads: &Gradients,
        lr: f64,
        frozen: &BTreeSet<ParamGroup>,
    ) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t);
        let bc2 = 1.0 - BETA2.powi(self.t);
        for (ti, tensor) in params.tensors.iter_mut().enumerate() {
            if frozen.contains(&tensor.group) {
                continue;
            }
            let (m, v, g) = (&mut self.m[ti], &mut self.v[ti], &grads[ti]);
            for (j, p) in tensor.data.iter_mut().enumerate() {
                *p -= lr * self.weight_decay * *p;
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * g[j];
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + EPS);
            }
        }
    }
}

/// Schedule-free AdamW: gradients are taken at an interpolation `y` between
/// the fast iterate `z` and the averaged iterate `x`, which is evaluated.
pub struct ScheduleFreeAdamW {
    weight_decay: f64,
    k: i32,
    lr_max: f64,
    weight_sum: f64,
    z: Vec<Vec<f64>>,
    v: Gradients,
}

impl ScheduleFreeAdamW {
    pub fn new(params: &ParameterSet, weight_decay: f64) -> Self {
        Self {
            weight_decay,
            k: 0,
            lr_max: 0.0,
            weight_sum: 0.0,
            z: params.tensors.iter().map(|t| t.data.clone()).collect(),
            v: params.zeros_like(),
        }
    }
}

impl Optimizer for ScheduleFreeAdamW {
    fn step(
        &mut self,
        params: &mut ParameterSet,
        grads: &Gradients,
        lr: f64,
        frozen: &BTreeSet<ParamGroup>,
    ) {
        let bc2 = 1.0 - BETA2.powi(self.k + 1);
        self.lr_max = self.lr_max.max(lr);
        let weight = self.lr_max * self.lr_max;
        self.weight_sum += weight;
        let ckp1 = if self.weight_sum > 0.0 {
            weight / self.weight_sum
        } else {
            0.0
        };
        for (ti, tensor) in params.tensors.iter_mut().enumerate() {
            if frozen.contains(&tensor.group) {
                continue;
            }
            let (z, v, g) = (&mut self.z[ti], &mut self.v[ti], &grads[ti]);
            for (j, y) in tensor.data.iter_mut().enumerate() {
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * g[j] * g[j];
                let denom = (v[j] / bc2).sqrt() + EPS;
                let gn = g[j] / denom + self.weight_decay * *y;
                *y += ckp1 * (z[j] - *y);
                *y += lr * (BETA1 * (1.0 - ckp1) - 1.0) * gn;
                z[j] -= lr * gn;
            }
        }
        self.k += 1;
    }

    fn eval_parameters(&self, params: &ParameterSet) -> ParameterSet {
        let mut x = params.clone();
        let w = 1.0 - 1.0 / BETA1;
        for (ti, tensor) in x.tensors.iter_mut().enumerate() {
            for (j, p) in tensor.data.iter_mut().enumerate() {
                *p += w * (self.z[ti][j] - *p);
            }
        }
        x
    }
}
