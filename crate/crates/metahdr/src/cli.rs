//! Argument parsing and dispatch for the `metahdr` binary.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use metahdr_core::data::{Ev, ExposureSimConfig};
use metahdr_core::gradcheck::Fault;

use crate::commands::{
    cmd_adapt, cmd_eval, cmd_gradcheck, cmd_train, simulate_file, write_synthetic_dataset, BEST_CHECKPOINT,
};
use crate::config::RunConfig;
use crate::Error;

#[derive(Debug, Parser)]
#[command(
    name = "metahdr",
    version,
    about = "Meta-learned single-exposure LDR to HDR reconstruction"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Meta-train a network and write checkpoints, manifest and loss history.
    Train(Settings),
    /// Score a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        settings: Settings,
        /// Defaults to `<out>/best.params`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Adapt on one scene's support exposures and predict the held-out one.
    Adapt {
        #[command(flatten)]
        settings: Settings,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scene directory holding ev-2.png, ev0.png, ev+2.png and optionally gt.hdr.
        #[arg(long)]
        scene: PathBuf,
        /// Held-out exposure: ev-2, ev0 or ev+2.
        #[arg(long, default_value = "ev0", allow_hyphen_values = true)]
        holdout: String,
    },
    /// Run the 64-bit finite-difference gradient suite.
    Gradcheck {
        /// Corrupt the analytic side on purpose (`conv-sign`).
        #[arg(long)]
        inject_fault: Option<String>,
    },
    /// Render an HDR file through the exposure simulator, or write a
    /// generated dataset with --synthetic.
    Simulate {
        #[command(flatten)]
        settings: Settings,
        /// Radiance `.hdr` input.
        #[arg(long, conflicts_with = "synthetic")]
        input: Option<PathBuf>,
        /// Output PNG, defaulting to `<out>/<input stem>_sim.png`; with
        /// --synthetic, the dataset root (default `<out>`).
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = ExposureSimConfig::default().low_percentile)]
        low_percentile: f64,
        #[arg(long, default_value_t = ExposureSimConfig::default().high_percentile)]
        high_percentile: f64,
        #[arg(long, default_value_t = ExposureSimConfig::default().gamma)]
        gamma: f64,
    },
}

/// Flags shared by the data-driven subcommands. Each overrides the key of
/// the same name in the `--config` file.
#[derive(Debug, Clone, Default, Args)]
pub struct Settings {
    /// `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub iterations: Option<String>,
    #[arg(long)]
    pub meta_batch: Option<String>,
    #[arg(long)]
    pub outer_lr: Option<String>,
    #[arg(long)]
    pub alpha: Option<String>,
    #[arg(long)]
    pub steps: Option<String>,
    /// `so` (second order) or `fo` (first order).
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub lambda: Option<String>,
    #[arg(long)]
    pub depth: Option<String>,
    #[arg(long)]
    pub base_channels: Option<String>,
    /// Square center crop side, or `none`.
    #[arg(long)]
    pub crop: Option<String>,
    #[arg(long)]
    pub downscale: Option<String>,
    /// `all` or a comma list of table rows.
    #[arg(long)]
    pub eval_mode: Option<String>,
    #[arg(long)]
    pub labels_dir: Option<String>,
    /// `true_hdr`, `file_pseudo` or `identity`.
    #[arg(long)]
    pub label_scheme: Option<String>,
    /// Use generated scenes instead of a dataset root.
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long)]
    pub synth_scenes: Option<String>,
    #[arg(long)]
    pub synth_size: Option<String>,
    #[arg(long)]
    pub synth_seed: Option<String>,
    /// `unet` or `identity`.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub val_every: Option<String>,
    #[arg(long)]
    pub threads: Option<String>,
    /// Write PNG previews during eval.
    #[arg(long)]
    pub previews: bool,
}

impl Settings {
    /// The `--config` file (or defaults) with command-line flags applied.
    pub fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let flags = [
            ("dataset", &self.dataset),
            ("out", &self.out),
            ("seed", &self.seed),
            ("iterations", &self.iterations),
            ("meta_batch", &self.meta_batch),
            ("outer_lr", &self.outer_lr),
            ("alpha", &self.alpha),
            ("steps", &self.steps),
            ("mode", &self.mode),
            ("lambda", &self.lambda),
            ("depth", &self.depth),
            ("base_channels", &self.base_channels),
            ("crop", &self.crop),
            ("downscale", &self.downscale),
            ("eval_mode", &self.eval_mode),
            ("labels_dir", &self.labels_dir),
            ("label_scheme", &self.label_scheme),
            ("synth_scenes", &self.synth_scenes),
            ("synth_size", &self.synth_size),
            ("synth_seed", &self.synth_seed),
            ("arch", &self.arch),
            ("optimizer", &self.optimizer),
            ("val_every", &self.val_every),
            ("threads", &self.threads),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)
                    .map_err(|e| Error::Usage(format!("--{}: {e}", key.replace('_', "-"))))?;
            }
        }
        if self.synthetic {
            cfg.synthetic = true;
        }
        if self.previews {
            cfg.previews = true;
        }
        Ok(cfg)
    }
}

fn execute(command: Command, log: &mut dyn Write) -> Result<bool, Error> {
    match command {
        Command::Train(s) => {
            cmd_train(&s.resolve()?, log)?;
        }
        Command::Eval { settings, checkpoint } => {
            let cfg = settings.resolve()?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.out.join(BEST_CHECKPOINT));
            cmd_eval(&cfg, &ckpt, log)?;
        }
        Command::Adapt {
            settings,
            checkpoint,
            scene,
            holdout,
        } => {
            let ev = Ev::parse(&holdout)
                .ok_or_else(|| Error::Usage(format!("--holdout {holdout:?}: expected ev-2, ev0 or ev+2")))?;
            cmd_adapt(&settings.resolve()?, &checkpoint, &scene, ev, log)?;
        }
        Command::Gradcheck { inject_fault } => {
            let fault = match inject_fault.as_deref() {
                None => None,
                Some(f) => Some(
                    Fault::parse(f).ok_or_else(|| Error::Usage(format!("--inject-fault {f:?}: expected conv-sign")))?,
                ),
            };
            return Ok(cmd_gradcheck(fault, log)?.passed());
        }
        Command::Simulate {
            settings,
            input,
            output,
            low_percentile,
            high_percentile,
            gamma,
        } => {
            let cfg = settings.resolve()?;
            if settings.synthetic {
                write_synthetic_dataset(&cfg, output.as_deref().unwrap_or(&cfg.out), log)?;
                return Ok(true);
            }
            let input = input.ok_or_else(|| Error::Usage("simulate needs --input <file.hdr> or --synthetic".into()))?;
            let output = output.unwrap_or_else(|| {
                let stem = input
                    .file_stem()
                    .map_or("input".into(), |s| s.to_string_lossy().into_owned());
                cfg.out.join(format!("{stem}_sim.png"))
            });
            let sim = ExposureSimConfig {
                low_percentile,
                high_percentile,
                gamma,
            };
            simulate_file(&input, &output, &sim, &cfg.preprocess())?;
            let _ = writeln!(log, "wrote {}", output.display());
        }
    }
    Ok(true)
}

pub fn run(cli: Cli) -> ExitCode {
    let mut stdout = std::io::stdout();
    match execute(cli.command, &mut stdout) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: gradient check failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
