//! Meta-training driver.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::eval::adapted_prediction;
use super::{
    meta_step, AdaptConfig, BatchExecutor, LabelProvider, MetaConfig, MetaError, MetaModel, MetaOptimizer, Task,
};
use crate::data::{Ev, SceneRecord};
use crate::loss::ssim;
use crate::scalar::Real;

pub struct TrainSet<'a> {
    pub train: &'a [SceneRecord],
    pub val: &'a [SceneRecord],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<T: Real> {
    pub final_params: Vec<Vec<T>>,
    /// Parameters with the highest validation SSIM (ties keep the earliest).
    pub best_params: Vec<Vec<T>>,
    pub best_iteration: usize,
    pub best_val_ssim: Option<f64>,
    /// Mean pre-step meta-loss of iterations 1, 2, ...
    pub history: Vec<f64>,
    /// `(completed iterations, mean validation SSIM)`.
    pub validation: Vec<(usize, f64)>,
}

/// Training callbacks.
pub trait Progress {
    fn iteration(&mut self, _iteration: usize, _loss: f64) {}
    fn validation(&mut self, _iteration: usize, _ssim: f64) {}
}

impl Progress for () {}

/// Query exposure of validation scene `i`; rotates so every exposure is held out.
fn val_query(i: usize) -> Ev {
    Ev::ALL[i % 3]
}

fn validate<T: Real, M: MetaModel<T> + ?Sized>(
    model: &M,
    theta: &[Vec<T>],
    scenes: &[SceneRecord],
    acfg: &AdaptConfig,
    labels: &dyn LabelProvider,
    exec: &dyn BatchExecutor,
) -> Result<f64, MetaError> {
    let tasks = scenes
        .iter()
        .enumerate()
        .map(|(i, s)| Task::from_scene(s, val_query(i), labels))
        .collect::<Result<Vec<_>, _>>()?;
    let scores = exec.run(tasks.len(), &|i| {
        let pred = adapted_prediction(model, theta, &tasks[i], acfg)?;
        Ok(vec![ssim(&pred, &tasks[i].query.label)?])
    });
    let mut total = 0.0;
    for s in scores {
        total += s?[0];
    }
    Ok(total / tasks.len() as f64)
}

/// Runs `mcfg.iterations` meta-steps from `theta0`.
///
/// Each step draws `meta_batch` training scenes (without replacement when the
/// split is large enough) and a uniformly random query exposure per scene,
/// all from a ChaCha8 stream seeded with `mcfg.seed`.
#[allow(clippy::too_many_arguments)]
pub fn train<T: Real, M: MetaModel<T> + ?Sized>(
    model: &M,
    theta0: Vec<Vec<T>>,
    data: TrainSet<'_>,
    mcfg: &MetaConfig,
    acfg: &AdaptConfig,
    labels: &dyn LabelProvider,
    exec: &dyn BatchExecutor,
    progress: &mut dyn Progress,
) -> Result<TrainOutcome<T>, MetaError> {
    mcfg.validate()?;
    acfg.validate()?;
    if data.train.is_empty() {
        return Err(MetaError::Config("meta-train split is empty".into()));
    }
    if data.val.is_empty() {
        return Err(MetaError::Config("meta-validation split is empty".into()));
    }
    if data
        .train
        .iter()
        .any(|t| data.val.iter().any(|v| v.scene_id == t.scene_id))
    {
        return Err(MetaError::Config(
            "meta-train and meta-validation splits overlap".into(),
        ));
    }
    let mut outcome = TrainOutcome {
        final_params: theta0.clone(),
        best_params: theta0,
        best_iteration: 0,
        best_val_ssim: None,
        history: Vec::new(),
        validation: Vec::new(),
    };
    if mcfg.iterations == 0 {
        return Ok(outcome);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(mcfg.seed);
    let mut opt = MetaOptimizer::new(mcfg.optimizer);
    let mut theta = outcome.final_params.clone();
    let record = |out: &mut TrainOutcome<T>, it: usize, theta: &[Vec<T>], progress: &mut dyn Progress| {
        let score = validate(model, theta, data.val, acfg, labels, exec)?;
        progress.validation(it, score);
        out.validation.push((it, score));
        if out.best_val_ssim.is_none_or(|b| score > b) {
            out.best_val_ssim = Some(score);
            out.best_iteration = it;
            out.best_params = theta.to_vec();
        }
        Ok::<_, MetaError>(())
    };
    record(&mut outcome, 0, &theta, progress)?;

    let n = data.train.len();
    for it in 1..=mcfg.iterations {
        let picks: Vec<usize> = if n >= mcfg.meta_batch {
            sample(&mut rng, n, mcfg.meta_batch).into_vec()
        } else {
            (0..mcfg.meta_batch).map(|_| rng.random_range(0..n)).collect()
        };
        let batch = picks
            .into_iter()
            .map(|i| Task::from_scene(&data.train[i], Ev::ALL[rng.random_range(0..3)], labels))
            .collect::<Result<Vec<_>, _>>()?;
        let (next, loss) = meta_step(model, &theta, &batch, mcfg, acfg, &mut opt, exec)?;
        theta = next;
        outcome.history.push(loss);
        progress.iteration(it, loss);
        let due = mcfg.val_every > 0 && it % mcfg.val_every == 0;
        if due || it == mcfg.iterations {
            record(&mut outcome, it, &theta, progress)?;
        }
    }
    outcome.final_params = theta;
    Ok(outcome)
}
