//! Hold-out evaluation: for each scene and each exposure, adapt on the other
//! two and score the prediction for the held-out one against the true HDR.

use alloc::format;
use alloc::vec::Vec;

use super::{adapt, pair_tensors, AdaptConfig, DiffMode, LabelProvider, MetaError, MetaModel, Task, TrueHdr};
use crate::data::{Ev, SceneRecord};
use crate::image::Image;
use crate::loss::{psnr, ssim, EvalMode, MetricItem, MetricReport};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub modes: Vec<EvalMode>,
    pub adapt: AdaptConfig,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            modes: EvalMode::ALL.to_vec(),
            adapt: AdaptConfig::default(),
        }
    }
}

pub(crate) fn constants<T: Real>(theta: &[Vec<T>], dims: &[Vec<usize>]) -> Result<Vec<Tensor<T>>, MetaError> {
    Ok(theta
        .iter()
        .zip(dims)
        .map(|(v, d)| Tensor::from_vec(v.clone(), d))
        .collect::<Result<Vec<_>, _>>()?)
}

pub(crate) fn leaves<T: Real>(theta: &[Vec<T>], dims: &[Vec<usize>]) -> Result<Vec<Tensor<T>>, MetaError> {
    Ok(theta
        .iter()
        .zip(dims)
        .map(|(v, d)| Tensor::param(v.clone(), d))
        .collect::<Result<Vec<_>, _>>()?)
}

/// Prediction for `task.query.ldr` after adapting on `task.support`.
/// Adaptation here never needs second-order terms.
pub fn adapted_prediction<T: Real, M: MetaModel<T> + ?Sized>(
    model: &M,
    theta: &[Vec<T>],
    task: &Task,
    cfg: &AdaptConfig,
) -> Result<Image, MetaError> {
    let cfg = AdaptConfig {
        mode: DiffMode::FirstOrder,
        ..*cfg
    };
    let theta = leaves(theta, &model.param_dims())?;
    let support = task.support.iter().map(pair_tensors).collect::<Result<Vec<_>, _>>()?;
    let phi = adapt(model, &theta, &support, &cfg)?;
    let out = model.predict(&phi, &task.query.ldr.to_tensor()?)?;
    Ok(Image::from_tensor(&out, 0)?)
}

pub fn single_shot_prediction<T: Real, M: MetaModel<T> + ?Sized>(
    model: &M,
    theta: &[Vec<T>],
    ldr: &Image,
) -> Result<Image, MetaError> {
    let theta = constants(theta, &model.param_dims())?;
    let out = model.predict(&theta, &ldr.to_tensor()?)?;
    Ok(Image::from_tensor(&out, 0)?)
}

fn item(scene: &SceneRecord, ev: Ev, mode: EvalMode, pred: &Image) -> Result<MetricItem, MetaError> {
    Ok(MetricItem {
        scene_id: scene.scene_id.clone(),
        holdout_ev: ev,
        mode,
        ssim: ssim(pred, scene.target())?,
        psnr_db: psnr(pred, scene.target(), 1.0)?,
    })
}

/// Scores every scene under each requested mode. Scenes whose pseudo-labels
/// cannot be loaded are listed in `skipped` and get no `adapt_pseudo` rows.
pub fn evaluate<T: Real, M: MetaModel<T> + ?Sized>(
    model: &M,
    theta: &[Vec<T>],
    scenes: &[SceneRecord],
    opts: &EvalOptions,
    pseudo: &dyn LabelProvider,
) -> Result<MetricReport, MetaError> {
    let mut report = MetricReport::default();
    let wants = |m: EvalMode| opts.modes.contains(&m);
    for scene in scenes {
        let pseudo_ok = if wants(EvalMode::AdaptPseudo) {
            match Ev::ALL.iter().try_for_each(|&ev| pseudo.label(scene, ev).map(drop)) {
                Ok(()) => true,
                Err(e) => {
                    report.skipped.push((scene.scene_id.clone(), format!("{e}")));
                    false
                }
            }
        } else {
            false
        };
        for ev in Ev::ALL {
            for mode in EvalMode::ALL {
                if !wants(mode) || (mode == EvalMode::AdaptPseudo && !pseudo_ok) {
                    continue;
                }
                let pred = match mode {
                    EvalMode::LdrNoRecon => scene.ldr(ev).clone(),
                    EvalMode::SingleShot => single_shot_prediction(model, theta, scene.ldr(ev))?,
                    EvalMode::AdaptTrueHdr => {
                        adapted_prediction(model, theta, &Task::from_scene(scene, ev, &TrueHdr)?, &opts.adapt)?
                    }
                    EvalMode::AdaptPseudo => {
                        adapted_prediction(model, theta, &Task::from_scene(scene, ev, pseudo)?, &opts.adapt)?
                    }
                };
                report.items.push(item(scene, ev, mode, &pred)?);
            }
        }
    }
    Ok(report)
}
