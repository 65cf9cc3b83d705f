//! Subcommand bodies. Each takes a validated [`RunConfig`] and a sink for
//! progress text, writes its files under `cfg.out` and returns what it
//! computed.
//!
//! Files written by `train`:
//!
//! * `final.params`, `best.params`: checkpoints (see `ParamSet::to_bytes`);
//! * `loss_history.csv`: `iteration,meta_loss`, one row per meta-iteration;
//! * `validation.csv`: `iteration,val_ssim`;
//! * `config.txt`: the effective configuration, loadable with `--config`;
//! * `manifest.txt`: the configuration followed by run results.
//!
//! `eval` writes `metrics.csv` (`mode,ssim,psnr_db,count`),
//! `metrics_per_scene.csv` (`scene_id,holdout_ev,mode,ssim,psnr_db`) and,
//! when scenes were skipped, `skipped.csv` (`scene_id,reason`).

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use metahdr_core::data::{split, synth_dataset, synth_scene, Ev, ExposureSimConfig, Preprocess, SceneRecord, Split};
use metahdr_core::gradcheck::{run_suite, Fault, SuiteOptions, SuiteReport};
use metahdr_core::image::Image;
use metahdr_core::loss::{psnr, ssim, EvalMode, MetricReport};
use metahdr_core::meta::{
    adapted_prediction, evaluate, single_shot_prediction, train, EvalOptions, HdrModel, IdentityLabels, LabelProvider,
    LabelScheme, Progress, Task, TrainSet, TrueHdr,
};
use metahdr_core::unet::ParamSet;

use crate::config::RunConfig;
use crate::exec::ThreadedExecutor;
use crate::io::{self, ldr_file, HDR_FILE};
use crate::labels::FileLabels;
use crate::Error;

pub const FINAL_CHECKPOINT: &str = "final.params";
pub const BEST_CHECKPOINT: &str = "best.params";
pub const LOSS_CSV: &str = "loss_history.csv";

const SYNTH_PREFIX: &str = "synth-";

/// Scene ids of the whole pool, split into train/val/test.
pub fn scene_split(cfg: &RunConfig) -> Result<Split, Error> {
    let ids = if cfg.synthetic {
        (0..cfg.synth_scenes as u64)
            .map(|i| format!("{SYNTH_PREFIX}{}", cfg.synth_seed + i))
            .collect()
    } else {
        let root = cfg
            .dataset
            .as_deref()
            .ok_or_else(|| Error::Config("no dataset root".into()))?;
        io::list_scenes(root)?
    };
    Ok(split(&ids, &cfg.split)?)
}

/// Generated scenes ignore crop and downscale; they are made at `synth_size`.
pub fn load_scenes(cfg: &RunConfig, ids: &[String]) -> Result<Vec<SceneRecord>, Error> {
    if cfg.synthetic {
        return ids
            .iter()
            .map(|id| {
                let seed = id
                    .strip_prefix(SYNTH_PREFIX)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Config(format!("{id} is not a synthetic scene id")))?;
                Ok(synth_scene(seed, cfg.synth_size)?)
            })
            .collect();
    }
    let root = cfg
        .dataset
        .as_deref()
        .ok_or_else(|| Error::Config("no dataset root".into()))?;
    io::load_scenes(root, ids, &cfg.preprocess())
}

fn label_provider(cfg: &RunConfig, scheme: LabelScheme, ids: &[String]) -> Result<Box<dyn LabelProvider>, Error> {
    Ok(match scheme {
        LabelScheme::TrueHdr => Box::new(TrueHdr),
        LabelScheme::Identity => Box::new(IdentityLabels),
        LabelScheme::FilePseudo => {
            let dir = cfg
                .labels_dir
                .as_deref()
                .ok_or_else(|| Error::Config("file_pseudo labels need labels_dir".into()))?;
            let prep = if cfg.synthetic {
                Preprocess::NONE
            } else {
                cfg.preprocess()
            };
            Box::new(FileLabels::load(dir, ids, &prep))
        }
    })
}

/// Loads a checkpoint and checks it against the configured network.
pub fn load_checkpoint(cfg: &RunConfig, path: &Path) -> Result<ParamSet<f32>, Error> {
    let params = io::load_params(path)?;
    params
        .check_against(&cfg.architecture())
        .map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            source: e,
        })?;
    Ok(params)
}

struct Console<'a>(&'a mut dyn Write);

impl Progress for Console<'_> {
    fn iteration(&mut self, iteration: usize, loss: f64) {
        let _ = writeln!(self.0, "iter {iteration} meta_loss {loss:.6}");
    }

    fn validation(&mut self, iteration: usize, ssim: f64) {
        let _ = writeln!(self.0, "val {iteration} ssim {ssim:.6}");
    }
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub history: Vec<f64>,
    pub validation: Vec<(usize, f64)>,
    pub best_iteration: usize,
    pub best_val_ssim: Option<f64>,
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
}

pub fn loss_history_csv(history: &[f64]) -> String {
    let mut out = String::from("iteration,meta_loss\n");
    for (i, l) in history.iter().enumerate() {
        let _ = writeln!(out, "{},{l}", i + 1);
    }
    out
}

pub fn cmd_train(cfg: &RunConfig, log: &mut dyn Write) -> Result<TrainSummary, Error> {
    cfg.validate()?;
    let ids = scene_split(cfg)?;
    let train_scenes = load_scenes(cfg, &ids.train)?;
    let val_scenes = load_scenes(cfg, &ids.val)?;
    let mut labelled = ids.train.clone();
    labelled.extend(ids.val.iter().cloned());
    let labels = label_provider(cfg, cfg.label_scheme, &labelled)?;
    let arch = cfg.architecture();
    let model = HdrModel::new(arch, cfg.loss());
    let init = ParamSet::<f32>::init(arch, cfg.seed)?;
    let _ = writeln!(
        log,
        "training on {} scenes ({} validation), {} parameters",
        train_scenes.len(),
        val_scenes.len(),
        init.scalar_count()
    );
    let outcome = train(
        &model,
        init.to_values(),
        TrainSet {
            train: &train_scenes,
            val: &val_scenes,
        },
        &cfg.meta(),
        &cfg.adapt(),
        labels.as_ref(),
        &ThreadedExecutor { threads: cfg.threads },
        &mut Console(log),
    )?;

    let out = &cfg.out;
    let final_checkpoint = out.join(FINAL_CHECKPOINT);
    let best_checkpoint = out.join(BEST_CHECKPOINT);
    io::save_params(&final_checkpoint, &init.with_values(outcome.final_params)?)?;
    io::save_params(&best_checkpoint, &init.with_values(outcome.best_params)?)?;
    io::write_bytes(&out.join(LOSS_CSV), loss_history_csv(&outcome.history).as_bytes())?;
    let mut val = String::from("iteration,val_ssim\n");
    for (i, s) in &outcome.validation {
        let _ = writeln!(val, "{i},{s}");
    }
    io::write_bytes(&out.join("validation.csv"), val.as_bytes())?;
    io::write_bytes(&out.join("config.txt"), cfg.to_text().as_bytes())?;

    let mut manifest = String::from("# metahdr training run\n");
    manifest.push_str(&cfg.to_text());
    let _ = writeln!(manifest, "\n# results");
    let _ = writeln!(manifest, "completed_iterations = {}", outcome.history.len());
    let _ = writeln!(manifest, "param_count = {}", init.scalar_count());
    let _ = writeln!(
        manifest,
        "scenes = {} train, {} val, {} test",
        ids.train.len(),
        ids.val.len(),
        ids.test.len()
    );
    let _ = writeln!(manifest, "best_iteration = {}", outcome.best_iteration);
    let best = outcome.best_val_ssim.map_or("none".into(), |s| s.to_string());
    let _ = writeln!(manifest, "best_val_ssim = {best}");
    if let Some(l) = outcome.history.last() {
        let _ = writeln!(manifest, "final_meta_loss = {l}");
    }
    io::write_bytes(&out.join("manifest.txt"), manifest.as_bytes())?;
    let _ = writeln!(
        log,
        "wrote {} and {}",
        final_checkpoint.display(),
        best_checkpoint.display()
    );

    Ok(TrainSummary {
        history: outcome.history,
        validation: outcome.validation,
        best_iteration: outcome.best_iteration,
        best_val_ssim: outcome.best_val_ssim,
        final_checkpoint,
        best_checkpoint,
    })
}

/// Scores the test split. `adapt_pseudo` is dropped when no label
/// directory is configured.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, log: &mut dyn Write) -> Result<MetricReport, Error> {
    cfg.validate()?;
    let params = load_checkpoint(cfg, checkpoint)?;
    let ids = scene_split(cfg)?;
    let scenes = load_scenes(cfg, &ids.test)?;
    let mut modes = cfg.eval_modes.clone();
    if cfg.labels_dir.is_none() {
        modes.retain(|&m| m != EvalMode::AdaptPseudo);
    }
    if modes.is_empty() {
        return Err(Error::Config("adapt_pseudo needs labels_dir".into()));
    }
    let pseudo = label_provider(cfg, LabelScheme::FilePseudo, &ids.test).unwrap_or_else(|_| Box::new(IdentityLabels));
    let model = HdrModel::new(cfg.architecture(), cfg.loss());
    let theta = params.to_values();
    let opts = EvalOptions {
        modes,
        adapt: cfg.adapt(),
    };

    // Scenes are independent; chunks are merged back in scene order.
    let chunk = scenes.len().div_ceil(cfg.threads.max(1)).max(1);
    let parts: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = scenes
            .chunks(chunk)
            .map(|part| s.spawn(|| evaluate(&model, &theta, part, &opts, pseudo.as_ref())))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    });
    let mut report = MetricReport::default();
    for p in parts {
        report.extend(p?);
    }

    let out = &cfg.out;
    io::write_bytes(&out.join("metrics.csv"), report.summary_csv().as_bytes())?;
    io::write_bytes(&out.join("metrics_per_scene.csv"), report.to_csv().as_bytes())?;
    if !report.skipped.is_empty() {
        let mut sk = String::from("scene_id,reason\n");
        for (id, reason) in &report.skipped {
            let _ = writeln!(log, "skipped {id}: {reason}");
            let _ = writeln!(sk, "{id},\"{}\"", reason.replace('"', "'"));
        }
        io::write_bytes(&out.join("skipped.csv"), sk.as_bytes())?;
    }
    if cfg.previews {
        for scene in &scenes {
            write_previews(&model, &theta, scene, cfg, &out.join("previews"))?;
        }
    }
    let _ = writeln!(log, "{:<16} {:>8} {:>10} {:>6}", "mode", "ssim", "psnr_db", "n");
    for s in report.summaries() {
        let _ = writeln!(
            log,
            "{:<16} {:>8.4} {:>10.3} {:>6}",
            s.mode.label(),
            s.ssim,
            s.psnr_db,
            s.count
        );
    }
    Ok(report)
}

fn write_previews(
    model: &HdrModel,
    theta: &[Vec<f32>],
    scene: &SceneRecord,
    cfg: &RunConfig,
    dir: &Path,
) -> Result<(), Error> {
    let dir = dir.join(&scene.scene_id);
    io::write_preview(&dir.join("target.png"), scene.target())?;
    for ev in Ev::ALL {
        let stem = ev.file_stem();
        io::write_png(&dir.join(format!("{stem}_input.png")), scene.ldr(ev))?;
        let single = single_shot_prediction(model, theta, scene.ldr(ev))?;
        io::write_preview(&dir.join(format!("{stem}_single_shot.png")), &single)?;
        let task = Task::from_scene(scene, ev, &TrueHdr)?;
        let adapted = adapted_prediction(model, theta, &task, &cfg.adapt())?;
        io::write_preview(&dir.join(format!("{stem}_adapt_true_hdr.png")), &adapted)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct AdaptOutput {
    pub prediction: Image,
    pub hdr_path: PathBuf,
    pub preview_path: PathBuf,
    /// `(ssim, psnr_db)` against `gt.hdr`, when present.
    pub metrics: Option<(f64, f64)>,
}

/// Adapts on the two exposures other than `holdout` found in `scene_dir`
/// and predicts the held-out one.
pub fn cmd_adapt(
    cfg: &RunConfig,
    checkpoint: &Path,
    scene_dir: &Path,
    holdout: Ev,
    log: &mut dyn Write,
) -> Result<AdaptOutput, Error> {
    let params = load_checkpoint(cfg, checkpoint)?;
    cfg.adapt().validate()?;
    let scene_id = scene_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| Error::Usage(format!("{} does not name a scene directory", scene_dir.display())))?;
    let missing: Vec<String> = holdout
        .others()
        .iter()
        .map(|&ev| ldr_file(ev))
        .filter(|f| !scene_dir.join(f).is_file())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Usage(format!(
            "adaptation needs 2 support exposures besides {}; missing {} in {}",
            ldr_file(holdout),
            missing.join(", "),
            scene_dir.display()
        )));
    }
    let query_path = scene_dir.join(ldr_file(holdout));
    if !query_path.is_file() {
        return Err(Error::Usage(format!(
            "held-out exposure {} not found",
            query_path.display()
        )));
    }
    let [a, b, c] = Ev::ALL.map(|ev| io::read_png(&scene_dir.join(ldr_file(ev))));
    let ldr = [a?, b?, c?];
    let gt_path = scene_dir.join(HDR_FILE);
    let has_gt = gt_path.is_file();
    if cfg.label_scheme == LabelScheme::TrueHdr && !has_gt {
        return Err(Error::Usage(format!(
            "label scheme true_hdr needs {}; use --label-scheme file_pseudo with --labels-dir",
            gt_path.display()
        )));
    }
    // Without a reference the held-out LDR stands in; it is never scored.
    let hdr = if has_gt {
        io::read_hdr(&gt_path)?
    } else {
        ldr[holdout.index()].clone()
    };
    let prep = cfg.preprocess();
    let scene = SceneRecord::new(scene_id.clone(), ldr, hdr, &prep)?;
    let labels = label_provider(cfg, cfg.label_scheme, std::slice::from_ref(&scene_id))?;
    let task = Task::from_scene(&scene, holdout, labels.as_ref())?;
    let model = HdrModel::new(cfg.architecture(), cfg.loss());
    let prediction = adapted_prediction(&model, &params.to_values(), &task, &cfg.adapt())?;

    let stem = format!("{scene_id}_{}", holdout.file_stem());
    let hdr_path = cfg.out.join(format!("{stem}.hdr"));
    let preview_path = cfg.out.join(format!("{stem}_preview.png"));
    io::write_hdr(&hdr_path, &prediction)?;
    io::write_preview(&preview_path, &prediction)?;
    let _ = writeln!(log, "wrote {} and {}", hdr_path.display(), preview_path.display());
    let metrics = if has_gt {
        let m = (
            ssim(&prediction, scene.target())?,
            psnr(&prediction, scene.target(), 1.0)?,
        );
        let _ = writeln!(log, "ssim {:.4} psnr_db {:.3}", m.0, m.1);
        Some(m)
    } else {
        None
    };
    Ok(AdaptOutput {
        prediction,
        hdr_path,
        preview_path,
        metrics,
    })
}

/// Runs the finite-difference suite and prints one line per category plus
/// every failing check.
pub fn cmd_gradcheck(fault: Option<Fault>, log: &mut dyn Write) -> Result<SuiteReport, Error> {
    let report = run_suite(&SuiteOptions {
        fault,
        ..SuiteOptions::default()
    })?;
    for (cat, n, worst, tol, ok) in report.summary() {
        let _ = writeln!(
            log,
            "{:<13} {n:>3} checks  max rel err {worst:.3e}  tol {tol:.0e}  {}",
            cat.label(),
            if ok { "ok" } else { "FAIL" }
        );
    }
    for c in report.failures() {
        let _ = writeln!(
            log,
            "FAIL {}/{}: rel err {:.3e} > {:.0e}",
            c.category.label(),
            c.name,
            c.max_rel_err,
            c.tolerance
        );
    }
    Ok(report)
}

/// Renders `input` (Radiance `.hdr`) through the exposure window and
/// writes an 8-bit PNG.
pub fn simulate_file(input: &Path, output: &Path, sim: &ExposureSimConfig, prep: &Preprocess) -> Result<Image, Error> {
    let hdr = prep.apply(&io::read_hdr(input)?)?;
    let ldr = metahdr_core::data::simulate_exposure(&hdr, sim)?;
    io::write_png(output, &ldr)?;
    Ok(ldr)
}

/// Writes `cfg.synth_scenes` generated scenes in the dataset layout under
/// `cfg.out`.
pub fn write_synthetic_dataset(cfg: &RunConfig, root: &Path, log: &mut dyn Write) -> Result<Vec<String>, Error> {
    let scenes = synth_dataset(cfg.synth_seed, cfg.synth_scenes, cfg.synth_size)?;
    for s in &scenes {
        io::write_scene(root, s)?;
    }
    let _ = writeln!(log, "wrote {} scenes to {}", scenes.len(), root.display());
    Ok(scenes.into_iter().map(|s| s.scene_id).collect())
}
