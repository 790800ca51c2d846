//! `liseg synth`: phantom dataset generation.

use std::path::Path;

use liseg_core::data::{build_manifest, CaseCounts, PhantomSpec, Polarity};

use crate::config::RunConfig;
use crate::lock::DirLock;
use crate::{CliError, SynthArgs};

fn defaults() -> Vec<(&'static str, String)> {
    let spec = PhantomSpec::with_polarity([32; 3], Polarity::BrightLiver);
    vec![
        ("out", "data".into()),
        ("seed", "42".into()),
        ("labeled", "3".into()),
        ("unlabeled_bright", "30".into()),
        ("unlabeled_dark", "3".into()),
        ("val", "10".into()),
        ("test", "10".into()),
        ("grid", "32".into()),
        ("noise_sigma", spec.noise_sigma.to_string()),
    ]
}

pub fn run(args: SynthArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::new("synth", &defaults());
    if let Some(path) = &args.config {
        cfg.load_file(path)?;
    }
    cfg.apply_env();
    cfg.set("out", args.out);
    cfg.set("seed", args.seed);
    cfg.set("labeled", args.labeled);
    cfg.set("unlabeled_bright", args.unlabeled_bright);
    cfg.set("unlabeled_dark", args.unlabeled_dark);
    cfg.set("val", args.val);
    cfg.set("test", args.test);
    cfg.set("grid", args.grid);
    cfg.set("noise_sigma", args.noise_sigma);

    let counts = CaseCounts {
        labeled: cfg.usize("labeled")?,
        unlabeled_bright: cfg.usize("unlabeled_bright")?,
        unlabeled_dark: cfg.usize("unlabeled_dark")?,
        val: cfg.usize("val")?,
        test: cfg.usize("test")?,
    };
    let grid = cfg.usize("grid")?;
    let noise = cfg.f64("noise_sigma")?;
    let mut bright = PhantomSpec::with_polarity([grid; 3], Polarity::BrightLiver);
    bright.noise_sigma = noise;
    let mut dark = PhantomSpec::with_polarity([grid; 3], Polarity::DarkLiver);
    dark.noise_sigma = noise;
    bright.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    dark.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let dir = Path::new(cfg.str("out")).to_path_buf();
    let _lock = DirLock::acquire(&dir)?;
    let manifest = build_manifest(&dir, &counts, &bright, &dark, cfg.u64("seed")?)?;
    cfg.write_resolved(&dir)?;

    println!(
        "wrote {} cases ({} labeled / {} unlabeled train, {} val, {} test) to {}",
        manifest.cases.len(),
        counts.labeled,
        counts.unlabeled_bright + counts.unlabeled_dark,
        counts.val,
        counts.test,
        dir.join("manifest.json").display()
    );
    Ok(())
}
