//! `liseg eval`: score a checkpoint on a manifest split and emit reports.

use std::path::{Path, PathBuf};

use liseg_core::data::{Manifest, Modality, Split};
use liseg_core::metrics::{evaluate_dataset, EvalOptions, HdMode};
use liseg_core::net::load_network;

use crate::config::RunConfig;
use crate::lock::DirLock;
use crate::{CliError, EvalArgs};

fn defaults() -> Vec<(&'static str, String)> {
    vec![
        ("checkpoint", "runs/default/checkpoints/net1-best.ckpt".into()),
        ("manifest", "data/manifest.json".into()),
        ("split", "test".into()),
        ("modality", "all".into()),
        ("patch", "32".into()),
        ("hd", "full".into()),
        ("csv", "true".into()),
        ("out", "auto".into()),
    ]
}

fn parse_split(s: &str) -> Result<Split, CliError> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(CliError::Usage(format!(
            "unknown split {other:?} (expected train|val|test)"
        ))),
    }
}

fn parse_modality(s: &str) -> Result<Option<Modality>, CliError> {
    if s == "all" {
        return Ok(None);
    }
    serde_json::from_value::<Modality>(serde_json::Value::String(s.into()))
        .map(Some)
        .map_err(|_| {
            CliError::Usage(format!(
                "unknown modality {s:?} (expected all, GED4-like, T1-like, T2-like, or raw)"
            ))
        })
}

/// Default report location: `reports/` beside the run's `checkpoints/`
/// directory, or `./reports` for a checkpoint kept elsewhere.
fn derive_out(checkpoint: &Path) -> PathBuf {
    match checkpoint.parent() {
        Some(dir) if dir.file_name().is_some_and(|n| n == "checkpoints") => {
            dir.parent().unwrap_or(Path::new(".")).join("reports")
        }
        _ => PathBuf::from("reports"),
    }
}

pub fn run(args: EvalArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::new("eval", &defaults());
    if let Some(path) = &args.config {
        cfg.load_file(path)?;
    }
    cfg.apply_env();
    cfg.set("checkpoint", args.checkpoint);
    cfg.set("manifest", args.manifest);
    cfg.set("split", args.split);
    cfg.set("modality", args.modality);
    cfg.set("patch", args.patch);
    cfg.set("hd", args.hd);
    cfg.set("csv", args.csv);
    cfg.set("out", args.out);

    let split = parse_split(cfg.str("split"))?;
    let modality = parse_modality(cfg.str("modality"))?;
    let hd_mode = match cfg.str("hd") {
        "full" => HdMode::Full,
        "hd95" => HdMode::Percentile95,
        other => {
            return Err(CliError::Usage(format!(
                "unknown hd mode {other:?} (expected full|hd95)"
            )))
        }
    };
    let patch = cfg.usize("patch")?;
    let checkpoint = PathBuf::from(cfg.str("checkpoint"));
    if cfg.str("out") == "auto" {
        cfg.put("out", derive_out(&checkpoint).display());
    }

    let (net, _) = load_network(&checkpoint)?;
    let mut manifest = Manifest::load(Path::new(cfg.str("manifest")))?;
    if let Some(want) = modality {
        manifest.cases.retain(|c| c.modality == want);
    }

    let out = PathBuf::from(cfg.str("out"));
    let _lock = DirLock::acquire(&out)?;
    let options = EvalOptions {
        patch: [patch; 3],
        hd_mode,
    };
    let report = evaluate_dataset(
        &net,
        &manifest,
        split,
        &options,
        &checkpoint.display().to_string(),
    )?;

    let json_path = out.join("report.json");
    std::fs::write(&json_path, report.to_json()?)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", json_path.display())))?;
    if cfg.bool("csv")? {
        let csv_path = out.join("report.csv");
        std::fs::write(&csv_path, report.to_csv())
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", csv_path.display())))?;
    }
    cfg.write_resolved(&out)?;

    let agg = &report.aggregates;
    let hd = agg
        .mean_hd
        .map(|mm| format!("{mm:.2} mm"))
        .unwrap_or_else(|| "n/a".into());
    println!(
        "{} cases: mean DSC {:.4}, mean HD ({}) {hd}{}; report at {}",
        agg.count,
        agg.mean_dsc,
        report.metadata.hd_mode.as_str(),
        if agg.hd_excluded > 0 {
            format!(" [{} cases HD-excluded]", agg.hd_excluded)
        } else {
            String::new()
        },
        json_path.display()
    );
    Ok(())
}
