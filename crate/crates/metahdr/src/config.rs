//! Run configuration and its plain-text `key = value` file form.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Keys match the long command-line flags with `-` replaced by `_`
//! (`outer_lr`, `meta_batch`, ...). Flags given on the command line
//! override the file. [`RunConfig::to_text`] writes every key and is
//! accepted back by [`RunConfig::parse`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use metahdr_core::data::{Preprocess, SplitSpec};
use metahdr_core::loss::{EvalMode, LossConfig};
use metahdr_core::meta::{AdaptConfig, DiffMode, LabelScheme, MetaConfig, OptimizerKind};
use metahdr_core::unet::{Architecture, UNetConfig};

use crate::io::read_bytes;
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchKind {
    UNet,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub out: PathBuf,
    /// Initialization and task-sampling seed.
    pub seed: u64,
    pub arch: ArchKind,
    pub depth: usize,
    pub base_channels: usize,
    pub outer_lr: f64,
    pub meta_batch: usize,
    pub iterations: usize,
    pub optimizer: OptimizerKind,
    pub val_every: usize,
    pub alpha: f64,
    pub steps: usize,
    pub mode: DiffMode,
    pub lambda: f64,
    pub split: SplitSpec,
    pub crop: Option<usize>,
    pub downscale: usize,
    /// Support labels used during training.
    pub label_scheme: LabelScheme,
    pub eval_modes: Vec<EvalMode>,
    pub labels_dir: Option<PathBuf>,
    /// Use generated scenes instead of a dataset root.
    pub synthetic: bool,
    pub synth_scenes: usize,
    pub synth_size: usize,
    pub synth_seed: u64,
    pub threads: usize,
    pub previews: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let net = UNetConfig::default();
        let meta = MetaConfig::default();
        let adapt = AdaptConfig::default();
        RunConfig {
            dataset: None,
            out: PathBuf::from("runs/latest"),
            seed: 0,
            arch: ArchKind::UNet,
            depth: net.depth,
            base_channels: net.base_channels,
            outer_lr: meta.outer_lr,
            meta_batch: meta.meta_batch,
            iterations: meta.iterations,
            optimizer: meta.optimizer,
            val_every: meta.val_every,
            alpha: adapt.alpha,
            steps: adapt.steps,
            mode: adapt.mode,
            lambda: LossConfig::default().lambda,
            split: SplitSpec::default(),
            crop: Preprocess::default().crop,
            downscale: 1,
            label_scheme: LabelScheme::TrueHdr,
            eval_modes: EvalMode::ALL.to_vec(),
            labels_dir: None,
            synthetic: false,
            synth_scenes: 150,
            synth_size: 64,
            synth_seed: 10_000,
            threads: 1,
            previews: false,
        }
    }
}

/// An empty value unsets the path.
fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn bad(key: &str, value: &str, want: &str) -> Error {
    Error::Config(format!("{key} = {value:?}: expected {want}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str, want: &str) -> Result<T, Error> {
    value.parse().map_err(|_| bad(key, value, want))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, Error> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad(key, value, "true or false")),
    }
}

fn parse_modes(key: &str, value: &str) -> Result<Vec<EvalMode>, Error> {
    if value == "all" {
        return Ok(EvalMode::ALL.to_vec());
    }
    let mut modes = value
        .split(',')
        .map(|s| {
            EvalMode::parse(s.trim()).ok_or_else(|| {
                bad(
                    key,
                    value,
                    "all or a comma list of ldr_no_recon, single_shot, adapt_true_hdr, adapt_pseudo",
                )
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    modes.sort();
    modes.dedup();
    Ok(modes)
}

impl RunConfig {
    pub const KEYS: [&'static str; 30] = [
        "dataset",
        "out",
        "seed",
        "arch",
        "depth",
        "base_channels",
        "outer_lr",
        "meta_batch",
        "iterations",
        "optimizer",
        "val_every",
        "alpha",
        "steps",
        "mode",
        "lambda",
        "split_train",
        "split_val",
        "split_test",
        "split_seed",
        "crop",
        "downscale",
        "label_scheme",
        "eval_mode",
        "labels_dir",
        "synthetic",
        "synth_scenes",
        "synth_size",
        "synth_seed",
        "threads",
        "previews",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), Error> {
        let v = value.trim();
        match key {
            "dataset" => self.dataset = opt_path(v),
            "out" => self.out = PathBuf::from(v),
            "seed" => self.seed = num(key, v, "an unsigned integer")?,
            "arch" => {
                self.arch = match v {
                    "unet" => ArchKind::UNet,
                    "identity" => ArchKind::Identity,
                    _ => return Err(bad(key, v, "unet or identity")),
                }
            }
            "depth" => self.depth = num(key, v, "a positive integer")?,
            "base_channels" => self.base_channels = num(key, v, "a positive integer")?,
            "outer_lr" => self.outer_lr = num(key, v, "a number")?,
            "meta_batch" => self.meta_batch = num(key, v, "a positive integer")?,
            "iterations" => self.iterations = num(key, v, "an unsigned integer")?,
            "optimizer" => {
                self.optimizer = match v {
                    "adam" => OptimizerKind::default(),
                    "sgd" => OptimizerKind::Sgd,
                    _ => return Err(bad(key, v, "adam or sgd")),
                }
            }
            "val_every" => self.val_every = num(key, v, "an unsigned integer")?,
            "alpha" => self.alpha = num(key, v, "a number")?,
            "steps" => self.steps = num(key, v, "an unsigned integer")?,
            "mode" => self.mode = DiffMode::parse(v).ok_or_else(|| bad(key, v, "fo or so"))?,
            "lambda" => self.lambda = num(key, v, "a number")?,
            "split_train" => self.split.train = num(key, v, "a fraction")?,
            "split_val" => self.split.val = num(key, v, "a fraction")?,
            "split_test" => self.split.test = num(key, v, "a fraction")?,
            "split_seed" => self.split.seed = num(key, v, "an unsigned integer")?,
            "crop" => {
                self.crop = match v {
                    "none" => None,
                    _ => Some(num(key, v, "a positive integer or none")?),
                }
            }
            "downscale" => self.downscale = num(key, v, "a positive integer")?,
            "label_scheme" => {
                self.label_scheme =
                    LabelScheme::parse(v).ok_or_else(|| bad(key, v, "true_hdr, file_pseudo or identity"))?
            }
            "eval_mode" => self.eval_modes = parse_modes(key, v)?,
            "labels_dir" => self.labels_dir = opt_path(v),
            "synthetic" => self.synthetic = parse_bool(key, v)?,
            "synth_scenes" => self.synth_scenes = num(key, v, "an unsigned integer")?,
            "synth_size" => self.synth_size = num(key, v, "a positive integer")?,
            "synth_seed" => self.synth_seed = num(key, v, "an unsigned integer")?,
            "threads" => self.threads = num(key, v, "a positive integer")?,
            "previews" => self.previews = parse_bool(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), Error> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {line:?}", n + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<RunConfig, Error> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, Error> {
        let bytes = read_bytes(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))?;
        RunConfig::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn value(&self, key: &str) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        match key {
            "dataset" => path(&self.dataset),
            "out" => self.out.display().to_string(),
            "seed" => self.seed.to_string(),
            "arch" => match self.arch {
                ArchKind::UNet => "unet".into(),
                ArchKind::Identity => "identity".into(),
            },
            "depth" => self.depth.to_string(),
            "base_channels" => self.base_channels.to_string(),
            "outer_lr" => self.outer_lr.to_string(),
            "meta_batch" => self.meta_batch.to_string(),
            "iterations" => self.iterations.to_string(),
            "optimizer" => self.optimizer.label().into(),
            "val_every" => self.val_every.to_string(),
            "alpha" => self.alpha.to_string(),
            "steps" => self.steps.to_string(),
            "mode" => self.mode.label().into(),
            "lambda" => self.lambda.to_string(),
            "split_train" => self.split.train.to_string(),
            "split_val" => self.split.val.to_string(),
            "split_test" => self.split.test.to_string(),
            "split_seed" => self.split.seed.to_string(),
            "crop" => self.crop.map_or("none".into(), |c| c.to_string()),
            "downscale" => self.downscale.to_string(),
            "label_scheme" => self.label_scheme.label().into(),
            "eval_mode" => self.eval_modes.iter().map(|m| m.label()).collect::<Vec<_>>().join(","),
            "labels_dir" => path(&self.labels_dir),
            "synthetic" => self.synthetic.to_string(),
            "synth_scenes" => self.synth_scenes.to_string(),
            "synth_size" => self.synth_size.to_string(),
            "synth_seed" => self.synth_seed.to_string(),
            "threads" => self.threads.to_string(),
            "previews" => self.previews.to_string(),
            _ => String::new(),
        }
    }

    /// Every key, one `key = value` line each. Unset paths are omitted.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            let v = self.value(key);
            if v.is_empty() && matches!(key, "dataset" | "labels_dir") {
                continue;
            }
            let _ = writeln!(out, "{key} = {v}");
        }
        out
    }

    pub fn architecture(&self) -> Architecture {
        match self.arch {
            ArchKind::UNet => Architecture::UNet(UNetConfig {
                depth: self.depth,
                base_channels: self.base_channels,
                ..UNetConfig::default()
            }),
            ArchKind::Identity => Architecture::Identity,
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            lambda: self.lambda,
            ..LossConfig::default()
        }
    }

    pub fn meta(&self) -> MetaConfig {
        MetaConfig {
            outer_lr: self.outer_lr,
            meta_batch: self.meta_batch,
            iterations: self.iterations,
            seed: self.seed,
            loss_lambda: self.lambda,
            optimizer: self.optimizer,
            val_every: self.val_every,
        }
    }

    pub fn adapt(&self) -> AdaptConfig {
        AdaptConfig {
            alpha: self.alpha,
            steps: self.steps,
            mode: self.mode,
        }
    }

    pub fn preprocess(&self) -> Preprocess {
        Preprocess {
            crop: self.crop,
            downscale: self.downscale,
        }
    }

    /// Checks everything that does not need the filesystem.
    pub fn validate(&self) -> Result<(), Error> {
        self.architecture().validate()?;
        self.meta().validate()?;
        self.adapt().validate()?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.downscale == 0 || self.crop == Some(0) {
            return Err(Error::Config("crop and downscale must be positive".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if self.eval_modes.is_empty() {
            return Err(Error::Config("eval_mode selects no rows".into()));
        }
        if self.synthetic && self.synth_size < 11 {
            return Err(Error::Config(format!(
                "synth_size {} is below the 11-pixel SSIM window",
                self.synth_size
            )));
        }
        if !self.synthetic && self.dataset.is_none() {
            return Err(Error::Config(
                "no dataset given; pass --dataset <root> or --synthetic".into(),
            ));
        }
        if self.label_scheme == LabelScheme::FilePseudo && self.labels_dir.is_none() {
            return Err(Error::Config("label_scheme file_pseudo needs labels_dir".into()));
        }
        Ok(())
    }
}
