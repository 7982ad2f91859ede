use std::path::{Path, PathBuf};

use serde::Deserialize;

use msnet_core::network::{load_checkpoint, Checkpoint, MsNetConfig, Variant};

use crate::{Failure, TrainArgs};

/// Everything `train` needs, after merging file, preset, checkpoint and flags.
pub struct RunConfig {
    pub model: MsNetConfig,
    pub data: PathBuf,
    pub out_dir: PathBuf,
    pub checkpoint_every: usize,
    pub threads: usize,
    pub resume: Option<Checkpoint>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RunFile {
    model: MsNetConfig,
    #[serde(default)]
    run: RunSection,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RunSection {
    data: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    checkpoint_every: Option<usize>,
}

const DEFAULT_OUT_DIR: &str = "msnet-run";

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn read_run_file(path: &Path) -> Result<RunFile, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
}

impl RunConfig {
    pub fn resolve(args: &TrainArgs) -> Result<RunConfig, Failure> {
        let mut run = RunSection::default();
        let mut resume = None;
        let mut model = if let Some(path) = &args.config {
            let file = read_run_file(path)?;
            run = file.run;
            file.model
        } else if let Some(name) = &args.preset {
            MsNetConfig::preset(name)?
        } else if let Some(path) = &args.resume {
            let ckpt = load_checkpoint(path)
                .map_err(|e| usage(format!("cannot resume from {}: {e}", path.display())))?;
            let cfg = ckpt.model.config.clone();
            resume = Some(ckpt);
            cfg
        } else {
            return Err(usage("one of --config, --preset or --resume is required"));
        };

        if let Some(v) = &args.variant {
            model.variant = v.parse::<Variant>()?;
        }
        if let Some(e) = args.epochs {
            model.epochs = e;
        }
        if let Some(s) = args.seed {
            model.seed = s;
        }
        if let Some(b) = args.batch_size {
            model.batch_size = b;
        }
        if let Some(s) = &args.scales {
            model.scales = s.clone();
        }
        if let Some(e) = args.epsilon {
            model.epsilon = e;
        }
        if let Some(c) = args.num_classes {
            model.num_classes = c;
        }
        if let Some(lr) = args.lr {
            model.schedule.initial = lr;
        }
        model.validate()?;
        model.schedule.validate()?;

        if let Some(ckpt) = &resume {
            let old = &ckpt.model.config;
            let same_arch = MsNetConfig {
                epochs: old.epochs,
                ..model.clone()
            } == *old;
            if !same_arch {
                return Err(usage("only --epochs may be overridden when resuming"));
            }
        }
        if let Some(ckpt) = resume.as_mut() {
            ckpt.model.config.epochs = model.epochs;
        }

        let data = args
            .data
            .clone()
            .or(run.data)
            .ok_or_else(|| usage("no dataset given (--data or [run] data)"))?;
        let out_dir = args
            .out_dir
            .clone()
            .or(run.out_dir)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
        let checkpoint_every = args.checkpoint_every.or(run.checkpoint_every).unwrap_or(0);
        if args.threads.threads == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        Ok(RunConfig {
            model,
            data,
            out_dir,
            checkpoint_every,
            threads: args.threads.threads,
            resume,
        })
    }
}
