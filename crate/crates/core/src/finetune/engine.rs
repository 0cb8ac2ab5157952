//! The fine-tuning loop.
//!
//! A stratified, seeded fraction of the training rows is held out for
//! checkpoint selection. Every step draws `batch_size` query rows from the
//! remaining rows and uses the rest as in-context examples. Validation
//! accuracy is measured with every non-validation row as context.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::early_stop::{adaptive_early_stop, StopDecision};
use super::loss::{temperature_bce_grad, temperature_bce_loss};
use super::optimizer::make_optimizer;
use super::schedule::build_schedule;
use super::FinetuneConfig;
use crate::dataset::has_both_classes;
use crate::error::{Error, Result};
use crate::models::tfm::TrainableModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub learning_rate: f64,
    pub wall_seconds: f64,
    pub validation_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinetuneOutcome {
    /// The restored best snapshot.
    pub checkpoint: Checkpoint,
    /// `(step, validation accuracy)`, starting with step 0 before any update.
    pub history: Vec<(usize, f64)>,
    pub steps: Vec<StepLog>,
    pub stopped_early: bool,
    pub first_step_displacement: f64,
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
    pub checkpoint_path: Option<PathBuf>,
}

impl FinetuneOutcome {
    pub fn initial_validation_accuracy(&self) -> f64 {
        self.history[0].1
    }
}

/// Stratified split of `0..labels.len()` into (train, validation); each
/// class with at least two rows contributes at least one validation row.
pub fn validation_split(labels: &[u8], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n_val = if idx.len() >= 2 {
            ((fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1)
        } else {
            0
        };
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Splits `pool` into (context, query) with at most `batch_size` queries
/// while keeping one row of each class in the context.
fn draw_batch(
    pool: &[usize],
    labels: &[u8],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>) {
    let mut context = Vec::with_capacity(pool.len());
    let mut rest = Vec::with_capacity(pool.len());
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = pool.iter().copied().filter(|&i| labels[i] == class).collect();
        idx.shuffle(rng);
        if let Some((&first, tail)) = idx.split_first() {
            context.push(first);
            rest.extend_from_slice(tail);
        }
    }
    rest.shuffle(rng);
    let b = batch_size.min(rest.len());
    let query = rest[..b].to_vec();
    context.extend_from_slice(&rest[b..]);
    context.sort_unstable();
    (context, query)
}

fn accuracy(
    model: &dyn TrainableModel,
    x: ArrayView2<'_, f64>,
    labels: &[u8],
    context: &[usize],
    query: &[usize],
) -> Result<f64> {
    let cx = x.select(Axis(0), context);
    let cy: Vec<u8> = context.iter().map(|&i| labels[i]).collect();
    let qx = x.select(Axis(0), query);
    let z = model.predict_logits(cx.view(), &cy, qx.view())?;
    let correct = z
        .iter()
        .zip(query)
        .filter(|(&z, &i)| u8::from(z > 0.0) == labels[i])
        .count();
    Ok(correct as f64 / query.len() as f64)
}

/// Fine-tunes `model` in place on `(x, labels)` and leaves it holding the
/// best validation checkpoint. When `checkpoint_dir` is given the best
/// checkpoint is also written there.
pub fn finetune(
    model: &mut dyn TrainableModel,
    x: ArrayView2<'_, f64>,
    labels: &[u8],
    config: &FinetuneConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<FinetuneOutcome> {
    config.validate()?;
    if x.nrows() != labels.len() {
        return Err(Error::invalid(format!(
            "{} rows but {} labels",
            x.nrows(),
            labels.len()
        )));
    }
    if !has_both_classes(labels) {
        return Err(Error::SingleClass);
    }
    let (train, val) = validation_split(labels, config.validation_fraction, config.seed);
    let train_labels: Vec<u8> = train.iter().map(|&i| labels[i]).collect();
    if val.is_empty() || train.len() < 3 || !has_both_classes(&train_labels) {
        return Err(Error::invalid(format!(
            "too few rows to fine-tune: {} train and {} validation",
            train.len(),
            val.len()
        )));
    }

    let schedule = build_schedule(config);
    let mut params = model.parameters().clone();
    let mut optimizer = make_optimizer(config.optimizer, &params, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));

    let acc0 = accuracy(model, x, labels, &train, &val)?;
    let mut history = vec![(0, acc0)];
    let mut best = Checkpoint {
        step: 0,
        validation_accuracy: acc0,
        parameters: params.clone(),
    };
    let mut steps = Vec::new();
    let mut stopped_early = false;
    let mut first_step_displacement = 0.0;

    for step in 1..=config.max_steps {
        let started = Instant::now();
        let (context, query) = draw_batch(&train, labels, config.batch_size, &mut rng);
        let cx = x.select(Axis(0), &context);
        let cy: Vec<u8> = context.iter().map(|&i| labels[i]).collect();
        let qx = x.select(Axis(0), &query);
        let qy: Vec<u8> = query.iter().map(|&i| labels[i]).collect();
        let tau = config.temperature;
        let (logits, grads) = model.logits_and_gradients(cx.view(), &cy, qx.view(), &|z| {
            temperature_bce_grad(z, &qy, tau)
        })?;
        let loss = temperature_bce_loss(&logits, &qy, tau)?;
        let lr = schedule.lr(step - 1);
        if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                step,
                detail: format!("loss {loss} at learning rate {lr:e}"),
            });
        }
        let before = (step == 1).then(|| params.clone());
        optimizer.step(&mut params, &grads, lr, &config.frozen);
        if let Some(before) = before {
            first_step_displacement = params.distance(&before);
            if let Some(cap) = config.first_step_displacement_cap {
                if first_step_displacement > cap {
                    return Err(Error::Diverged {
                        step,
                        detail: format!(
                            "first update moved parameters by {first_step_displacement:e}, above the cap {cap:e}"
                        ),
                    });
                }
            }
        }

        let mut validation_accuracy = None;
        if step % config.eval_every == 0 || step == config.max_steps {
            let eval = optimizer.eval_parameters(&params);
            model.set_parameters(eval.clone())?;
            let acc = accuracy(model, x, labels, &train, &val)?;
            validation_accuracy = Some(acc);
            history.push((step, acc));
            if acc > best.validation_accuracy {
                best = Checkpoint {
                    step,
                    validation_accuracy: acc,
                    parameters: eval,
                };
            }
        }
        model.set_parameters(params.clone())?;

        let wall_seconds = started.elapsed().as_secs_f64();
        log::debug!(
            "finetune step {step}: loss {loss:.6} lr {lr:.3e} {wall_seconds:.3}s val {validation_accuracy:?}"
        );
        steps.push(StepLog {
            step,
            loss,
            learning_rate: lr,
            wall_seconds,
            validation_accuracy,
        });
        if validation_accuracy.is_some()
            && adaptive_early_stop(&history, config) == StopDecision::Stop
        {
            stopped_early = true;
            break;
        }
    }

    model.set_parameters(best.parameters.clone())?;
    let checkpoint_path = match checkpoint_dir {
        Some(dir) => Some(best.save(dir, &config.hash(), &model.version())?),
        None => None,
    };
    log::info!(
        "finetune finished after {} steps; best step {} with validation accuracy {:.4}",
        steps.len(),
        best.step,
        best.validation_accuracy
    );
    Ok(FinetuneOutcome {
        checkpoint: best,
        history,
        steps,
        stopped_early,
        first_step_displacement,
        train_indices: train,
        validation_indices: val,
        checkpoint_path,
    })
}
