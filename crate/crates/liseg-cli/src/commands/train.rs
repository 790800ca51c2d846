//! `liseg train`: run the (semi-)supervised trainer against a manifest.

use std::path::Path;

use liseg_core::data::Manifest;
use liseg_core::net::ModelScaleConfig;
use liseg_core::train::{default_rampup, train_loop, TrainConfig, TrainMode};

use crate::config::RunConfig;
use crate::lock::DirLock;
use crate::{CliError, TrainArgs};

fn defaults() -> Vec<(&'static str, String)> {
    vec![
        ("manifest", "data/manifest.json".into()),
        ("run", "runs/default".into()),
        ("seed", "42".into()),
        ("mode", "cps".into()),
        ("scale", "toy".into()),
        ("lr", "0.001".into()),
        ("batch_size", "4".into()),
        ("epochs", "36".into()),
        ("steps_per_epoch", "10".into()),
        ("lambda_max", "1".into()),
        ("lambda_rampup_epochs", "auto".into()),
        ("patch", "32".into()),
        ("val_interval", "1".into()),
    ]
}

pub fn run(args: TrainArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::new("train", &defaults());
    if let Some(path) = &args.config {
        cfg.load_file(path)?;
    }
    cfg.apply_env();
    cfg.set("manifest", args.manifest);
    cfg.set("run", args.run);
    cfg.set("seed", args.seed);
    cfg.set("mode", args.mode);
    cfg.set("scale", args.scale);
    cfg.set("lr", args.lr);
    cfg.set("batch_size", args.batch_size);
    cfg.set("epochs", args.epochs);
    cfg.set("steps_per_epoch", args.steps_per_epoch);
    cfg.set("lambda_max", args.lambda_max);
    cfg.set("lambda_rampup_epochs", args.lambda_rampup_epochs);
    cfg.set("patch", args.patch);
    cfg.set("val_interval", args.val_interval);

    let epochs = cfg.usize("epochs")?;
    if cfg.str("lambda_rampup_epochs") == "auto" {
        cfg.put("lambda_rampup_epochs", default_rampup(epochs));
    }

    let mode: TrainMode = cfg
        .str("mode")
        .parse()
        .map_err(|e: liseg_core::error::Error| CliError::Usage(e.to_string()))?;
    let scale = ModelScaleConfig::by_name(cfg.str("scale"))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let patch = cfg.usize("patch")?;
    let mut train_cfg = TrainConfig::new(scale, mode, cfg.u64("seed")?);
    train_cfg.lr = cfg.f64("lr")?;
    train_cfg.batch_size = cfg.usize("batch_size")?;
    train_cfg.max_epochs = epochs;
    train_cfg.steps_per_epoch = cfg.usize("steps_per_epoch")?;
    train_cfg.lambda_max = cfg.f64("lambda_max")?;
    train_cfg.lambda_rampup_epochs = cfg.usize("lambda_rampup_epochs")?;
    train_cfg.patch = [patch; 3];
    train_cfg.val_interval = cfg.usize("val_interval")?;
    train_cfg
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;

    let manifest = Manifest::load(Path::new(cfg.str("manifest")))?;
    let run_dir = Path::new(cfg.str("run")).to_path_buf();
    let _lock = DirLock::acquire(&run_dir)?;
    cfg.write_resolved(&run_dir)?;

    let summary = train_loop(&train_cfg, &manifest, &run_dir, args.resume)?;

    println!(
        "trained {} epochs ({} steps logged); latest checkpoint {}",
        summary.epochs_run,
        summary.steps_logged,
        summary.latest_net1.display()
    );
    match &summary.final_validation {
        Some(val) => {
            let hd = val
                .mean_hd
                .map(|mm| format!("{mm:.2} mm"))
                .unwrap_or_else(|| "n/a".into());
            println!(
                "final validation (epoch {}): mean DSC {:.4}, mean HD {hd}",
                val.epoch, val.mean_dsc
            );
        }
        None => println!("final validation: none (no labeled validation cases)"),
    }
    if let (Some(e), Some(d), Some(p)) = (summary.best_epoch, summary.best_dsc, &summary.best_net1)
    {
        println!("best validation: DSC {d:.4} at epoch {e} ({})", p.display());
    }
    Ok(())
}
