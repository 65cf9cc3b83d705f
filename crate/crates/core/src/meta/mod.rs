//! MAML over per-scene tasks: inner adaptation, meta-objective and the outer
//! update, plus the training driver and the hold-out evaluation protocol.

mod eval;
mod exec;
mod labels;
mod optim;
mod train;

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{DataError, Ev, SceneRecord};
use crate::image::{Image, ImageError};
use crate::loss::{expandnet_loss, LossConfig, MetricError};
use crate::scalar::Real;
use crate::tensor::{backward, Tensor, TensorError};
use crate::unet::{forward, Architecture, ModelError, ParamTensors};

pub use eval::{adapted_prediction, evaluate, single_shot_prediction, EvalOptions};
pub use exec::{BatchExecutor, JobResult, Sequential};
pub use labels::{IdentityLabels, LabelError, LabelProvider, LabelScheme, MapLabels, TrueHdr};
pub use optim::{MetaOptimizer, OptimizerKind};
pub use train::{train, Progress, TrainOutcome, TrainSet};

#[derive(Debug, thiserror::Error)]
pub enum MetaError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error("adaptation failed at inner step {step}: {source}")]
    Adaptation {
        step: usize,
        #[source]
        source: Box<MetaError>,
    },
    #[error("non-finite meta-loss in batch [{}]: {detail}", .tasks.join(", "))]
    Training { tasks: Vec<String>, detail: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffMode {
    SecondOrder,
    FirstOrder,
}

impl DiffMode {
    pub fn parse(s: &str) -> Option<DiffMode> {
        match s {
            "so" | "second_order" => Some(DiffMode::SecondOrder),
            "fo" | "first_order" => Some(DiffMode::FirstOrder),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DiffMode::SecondOrder => "so",
            DiffMode::FirstOrder => "fo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptConfig {
    /// Inner learning rate.
    pub alpha: f64,
    pub steps: usize,
    pub mode: DiffMode,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            alpha: 0.01,
            steps: 3,
            mode: DiffMode::SecondOrder,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<(), MetaError> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(MetaError::Config(format!(
                "inner learning rate must be >= 0, got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    fn is_noop(&self) -> bool {
        self.alpha == 0.0 || self.steps == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetaConfig {
    pub outer_lr: f64,
    pub meta_batch: usize,
    pub iterations: usize,
    pub seed: u64,
    pub loss_lambda: f64,
    pub optimizer: OptimizerKind,
    /// Validation period in iterations; 0 validates only after the last one.
    pub val_every: usize,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            outer_lr: 0.005,
            meta_batch: 5,
            iterations: 200,
            seed: 0,
            loss_lambda: LossConfig::default().lambda,
            optimizer: OptimizerKind::default(),
            val_every: 20,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<(), MetaError> {
        if !(self.outer_lr >= 0.0 && self.outer_lr.is_finite()) {
            return Err(MetaError::Config(format!(
                "outer learning rate must be >= 0, got {}",
                self.outer_lr
            )));
        }
        if self.meta_batch == 0 {
            return Err(MetaError::Config("meta_batch must be at least 1".into()));
        }
        if !(self.loss_lambda >= 0.0 && self.loss_lambda.is_finite()) {
            return Err(MetaError::Config(format!(
                "lambda must be >= 0, got {}",
                self.loss_lambda
            )));
        }
        self.optimizer.validate()
    }
}

/// One (input, label) image pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub ev: Ev,
    pub ldr: Image,
    pub label: Image,
}

/// One episode: adapt on `support`, score on `query`.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub scene_id: String,
    pub support: Vec<Pair>,
    pub query: Pair,
    pub label_scheme: LabelScheme,
}

impl Task {
    /// Support = the two other exposures labelled by `labels`; query label is
    /// always the scene's normalized HDR.
    pub fn from_scene(scene: &SceneRecord, query_ev: Ev, labels: &dyn LabelProvider) -> Result<Task, MetaError> {
        let support = query_ev
            .others()
            .into_iter()
            .map(|ev| {
                Ok(Pair {
                    ev,
                    ldr: scene.ldr(ev).clone(),
                    label: labels.label(scene, ev)?,
                })
            })
            .collect::<Result<Vec<_>, MetaError>>()?;
        Ok(Task {
            scene_id: scene.scene_id.clone(),
            support,
            query: Pair {
                ev: query_ev,
                ldr: scene.ldr(query_ev).clone(),
                label: scene.target().clone(),
            },
            label_scheme: labels.scheme(),
        })
    }
}

/// `(input, label)` tensors, each `[1, C, H, W]`.
pub type TensorPair<T> = (Tensor<T>, Tensor<T>);

pub fn pair_tensors<T: Real>(p: &Pair) -> Result<TensorPair<T>, MetaError> {
    Ok((p.ldr.to_tensor()?, p.label.to_tensor()?))
}

/// The learner being meta-trained. Parameters are passed as a flat list of
/// tensors in a fixed order so toy models and the UNet share one code path.
pub trait MetaModel<T: Real>: Sync {
    fn param_dims(&self) -> Vec<Vec<usize>>;

    fn predict(&self, params: &[Tensor<T>], input: &Tensor<T>) -> Result<Tensor<T>, MetaError>;

    fn pair_loss(&self, params: &[Tensor<T>], input: &Tensor<T>, label: &Tensor<T>) -> Result<Tensor<T>, MetaError>;
}

/// The UNet (or identity stub) scored with the ExpandNet loss.
#[derive(Debug, Clone)]
pub struct HdrModel {
    arch: Architecture,
    names: Vec<String>,
    dims: Vec<Vec<usize>>,
    pub loss: LossConfig,
}

impl HdrModel {
    pub fn new(arch: Architecture, loss: LossConfig) -> HdrModel {
        let (names, dims) = arch.param_schema().into_iter().unzip();
        HdrModel {
            arch,
            names,
            dims,
            loss,
        }
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }
}

impl<T: Real> MetaModel<T> for HdrModel {
    fn param_dims(&self) -> Vec<Vec<usize>> {
        self.dims.clone()
    }

    fn predict(&self, params: &[Tensor<T>], input: &Tensor<T>) -> Result<Tensor<T>, MetaError> {
        let bound = ParamTensors::from_parts(self.arch, self.names.clone(), params.to_vec())?;
        Ok(forward(&bound, input)?)
    }

    fn pair_loss(&self, params: &[Tensor<T>], input: &Tensor<T>, label: &Tensor<T>) -> Result<Tensor<T>, MetaError> {
        let pred = self.predict(params, input)?;
        Ok(expandnet_loss(&pred, label, &self.loss)?)
    }
}

/// Mean loss over `pairs`.
pub fn mean_loss<T: Real, M: MetaModel<T> + ?Sized>(
    model: &M,
    params: &[Tensor<T>],
    pairs: &[TensorPair<T>],
) -> Result<Tensor<T>, MetaError> {
    if pairs.is_empty() {
        return Err(MetaError::Config("empty support set".into()));
    }
    let mut total: Option<Tensor<T>> = None;
    for (x, y) in pairs {
        let l = model.pair_loss(params, x, y)?;
        total = Some(match total {
            None => l,
            Some(t) => t.add(&l)?,
        });
    }
    let total = total.expect("non-empty");
    Ok(total.scale(T::of(1.0 / pairs.len() as f64))?)
}

/// Inner loop: `steps` gradient steps of size `alpha` on the support loss.
///
/// In second-order mode the result stays differentiable with respect to
/// `theta` through the gradients themselves; in first-order mode each step's
/// gradient is a constant.
pub fn adapt<T: Real, M: MetaModel<T> + ?Sized>(
    model: &M,
    theta: &[Tensor<T>],
    support: &[TensorPair<T>],
    cfg: &AdaptConfig,
) -> Result<Vec<Tensor<T>>, MetaError> {
    cfg.validate()?;
    if support.is_empty() {
        return Err(MetaError::Config("empty support set".into()));
    }
    if cfg.is_noop() {
        return Ok(theta.to_vec());
    }
    let alpha = T::of(cfg.alpha);
    let create_graph = cfg.mode == DiffMode::SecondOrder;
    let mut phi = theta.to_vec();
    for step in 0..cfg.steps {
        let wrap = |e: MetaError| MetaError::Adaptation {
            step,
            source: Box::new(e),
        };
        let loss = mean_loss(model, &phi, support).map_err(wrap)?;
        let grads = backward(&loss, &phi, create_graph).map_err(|e| wrap(e.into()))?;
        if let Some(&i) = grads.detached.first() {
            return Err(wrap(MetaError::Config(format!(
                "parameter tensor {i} is not tracked by the graph"
            ))));
        }
        let grads = grads.into_vec();
        phi = phi
            .iter()
            .zip(&grads)
            .map(|(p, g)| p.sub(&g.scale(alpha)?))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| wrap(e.into()))?;
    }
    Ok(phi)
}

/// Query loss under the parameters adapted on the task's support set.
pub fn meta_objective<T: Real, M: MetaModel<T> + ?Sized>(
    model: &M,
    theta: &[Tensor<T>],
    task: &Task,
    cfg: &AdaptConfig,
) -> Result<Tensor<T>, MetaError> {
    let support = task.support.iter().map(pair_tensors).collect::<Result<Vec<_>, _>>()?;
    let (qx, qy) = pair_tensors(&task.query)?;
    let phi = adapt(model, theta, &support, cfg)?;
    model.pair_loss(&phi, &qx, &qy)
}

/// Meta-loss and its gradient with respect to `theta`, as plain values.
pub fn task_meta_gradient<T: Real, M: MetaModel<T> + ?Sized>(
    model: &M,
    theta: &[Vec<T>],
    task: &Task,
    cfg: &AdaptConfig,
) -> Result<(f64, Vec<Vec<T>>), MetaError> {
    let leaves = eval::leaves(theta, &model.param_dims())?;
    let loss = meta_objective(model, &leaves, task, cfg)?;
    let grads = backward(&loss, &leaves, false)?.into_vec();
    Ok((loss.item().as_f64(), grads.iter().map(|g| g.to_vec()).collect()))
}

/// One outer update on `batch`. Returns the new parameters and the mean
/// pre-step meta-loss.
pub fn meta_step<T: Real, M: MetaModel<T> + ?Sized>(
    model: &M,
    theta: &[Vec<T>],
    batch: &[Task],
    mcfg: &MetaConfig,
    acfg: &AdaptConfig,
    opt: &mut MetaOptimizer,
    exec: &dyn BatchExecutor,
) -> Result<(Vec<Vec<T>>, f64), MetaError> {
    mcfg.validate()?;
    acfg.validate()?;
    if batch.len() != mcfg.meta_batch {
        return Err(MetaError::Config(format!(
            "batch holds {} tasks, meta_batch is {}",
            batch.len(),
            mcfg.meta_batch
        )));
    }
    let ids = || batch.iter().map(|t| t.scene_id.clone()).collect::<Vec<_>>();
    let results = exec.run(batch.len(), &|i| {
        let (loss, grads) = task_meta_gradient(model, theta, &batch[i], acfg)?;
        let mut packed = Vec::with_capacity(1 + grads.iter().map(Vec::len).sum::<usize>());
        packed.push(loss);
        grads.iter().flatten().for_each(|g| packed.push(g.as_f64()));
        Ok(packed)
    });

    // Reduce in task order so thread count never changes the result.
    let n: usize = theta.iter().map(Vec::len).sum();
    let mut loss_sum = 0.0;
    let mut grad_sum = alloc::vec![0.0f64; n];
    for r in results {
        let packed = r.map_err(|e| match e {
            MetaError::Tensor(TensorError::NonFinite { .. }) | MetaError::Adaptation { .. } => MetaError::Training {
                tasks: ids(),
                detail: format!("{e}"),
            },
            other => other,
        })?;
        loss_sum += packed[0];
        grad_sum.iter_mut().zip(&packed[1..]).for_each(|(s, g)| *s += g);
    }
    let scale = 1.0 / batch.len() as f64;
    let mean_loss = loss_sum * scale;
    if !mean_loss.is_finite() || grad_sum.iter().any(|g| !g.is_finite()) {
        return Err(MetaError::Training {
            tasks: ids(),
            detail: format!("mean loss {mean_loss}"),
        });
    }
    grad_sum.iter_mut().for_each(|g| *g *= scale);
    let mut next = theta.to_vec();
    opt.step(&mut next, &grad_sum, mcfg.outer_lr);
    Ok((next, mean_loss))
}
