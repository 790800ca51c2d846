//! `liseg verify`: self-verification suites — finite-difference gradient
//! checks, parameter-count reconciliation against the published scales, and
//! metric comparisons against direct-scan oracles.

use liseg_core::data::SegMask;
use liseg_core::metrics::{dice, hausdorff, oracle, HdMode, Hausdorff};
use liseg_core::net::{gradient_suite, reconcile_reference_scales, GRADIENT_TOLERANCE};
use liseg_core::rng::named_rng;
use rand::Rng;

use crate::config::RunConfig;
use crate::{CliError, VerifyArgs};

fn defaults() -> Vec<(&'static str, String)> {
    vec![
        ("suite", "all".into()),
        ("seeds", "2".into()),
        ("pairs", "100".into()),
    ]
}

fn suite_gradcheck(seeds: u64) -> Result<bool, CliError> {
    println!("suite gradcheck ({seeds} seeds, tolerance {GRADIENT_TOLERANCE:.0e}):");
    let mut ok = true;
    let mut worst: Vec<(&'static str, f64)> = Vec::new();
    for seed in 0..seeds {
        for check in gradient_suite(seed)? {
            match worst.iter_mut().find(|(n, _)| *n == check.name) {
                Some((_, e)) => *e = e.max(check.report.max_rel_err),
                None => worst.push((check.name, check.report.max_rel_err)),
            }
            if !check.passes() {
                ok = false;
                println!(
                    "  FAIL {} (seed {seed}): max rel err {:.3e}, worst element {:?}",
                    check.name, check.report.max_rel_err, check.report.worst
                );
            }
        }
    }
    for (name, err) in &worst {
        println!("  {name:<26} max rel err {err:.3e}");
    }
    println!("  gradcheck: {}", if ok { "PASS" } else { "FAIL" });
    Ok(ok)
}

fn suite_params() -> Result<bool, CliError> {
    println!("suite params (tolerance ±10% of the published totals):");
    let mut ok = true;
    for r in reconcile_reference_scales()? {
        let pass = r.within(0.10);
        ok &= pass;
        println!(
            "  {}: computed {} vs published {:.2}M ({:+.2}%) — encoder {} / decoder {} / head {} — {}",
            r.name,
            r.computed,
            r.reference / 1e6,
            100.0 * r.residual_fraction,
            r.breakdown.encoder,
            r.breakdown.decoder,
            r.breakdown.head,
            if pass { "PASS" } else { "FAIL" }
        );
        println!(
            "    forward FLOPs {:.3}T (published {:.2}T; report-only, patch size unstated)",
            r.flops as f64 / 1e12,
            r.reference_flops / 1e12
        );
    }
    println!("  params: {}", if ok { "PASS" } else { "FAIL" });
    Ok(ok)
}

/// Dyadic spacings keep every distance-transform quantity exactly
/// representable, so oracle agreement is required to be bitwise.
const SPACINGS: [f64; 5] = [1.0, 0.5, 2.0, 1.25, 0.75];

fn random_mask(rng: &mut impl Rng, dims: [usize; 3], fg_prob: f64) -> SegMask {
    let labels = (0..dims.iter().product::<usize>())
        .map(|_| rng.gen_bool(fg_prob) as u8)
        .collect();
    SegMask::new(dims, labels, 2).expect("binary labels fit")
}

fn suite_metrics(pairs: usize) -> Result<bool, CliError> {
    let mut rng = named_rng(2024, "verify-metrics");
    let mut dice_ok = 0usize;
    let mut hd_ok = 0usize;
    for i in 0..pairs {
        let dims = [
            rng.gen_range(2..=12),
            rng.gen_range(2..=12),
            rng.gen_range(2..=12),
        ];
        let spacing = [
            SPACINGS[rng.gen_range(0..SPACINGS.len())],
            SPACINGS[rng.gen_range(0..SPACINGS.len())],
            SPACINGS[rng.gen_range(0..SPACINGS.len())],
        ];
        let mode = if i % 2 == 0 {
            HdMode::Full
        } else {
            HdMode::Percentile95
        };
        let a = random_mask(&mut rng, dims, 0.3);
        let b = random_mask(&mut rng, dims, 0.3);

        let d = dice(&a, &b)?;
        let d_oracle = oracle::dice_scan(&a, &b)?;
        if d.to_bits() == d_oracle.to_bits() {
            dice_ok += 1;
        }

        let h = hausdorff(&a, &b, spacing, mode)?;
        let h_oracle = oracle::hausdorff_scan(&a, &b, spacing, mode)?;
        let matches = match (h, h_oracle) {
            (Hausdorff::Value { mm: x }, Hausdorff::Value { mm: y }) => x.to_bits() == y.to_bits(),
            (x, y) => x == y,
        };
        if matches {
            hd_ok += 1;
        }
    }
    let ok = dice_ok == pairs && hd_ok == pairs;
    println!("suite metrics ({pairs} random mask pairs <= 12^3, exact comparison):");
    println!("  dice vs counting oracle:      {dice_ok}/{pairs}");
    println!("  hausdorff vs scanning oracle: {hd_ok}/{pairs}");
    println!("  metrics: {}", if ok { "PASS" } else { "FAIL" });
    Ok(ok)
}

pub fn run(args: VerifyArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::new("verify", &defaults());
    if let Some(path) = &args.config {
        cfg.load_file(path)?;
    }
    cfg.apply_env();
    cfg.set("suite", args.suite);
    cfg.set("seeds", args.seeds);
    cfg.set("pairs", args.pairs);

    let suite = cfg.str("suite").to_string();
    let all = suite == "all";
    if !all && !["gradcheck", "params", "metrics"].contains(&suite.as_str()) {
        return Err(CliError::Usage(format!(
            "unknown suite {suite:?} (expected gradcheck|params|metrics|all)"
        )));
    }

    let mut failed = Vec::new();
    if all || suite == "gradcheck" {
        if !suite_gradcheck(cfg.u64("seeds")?)? {
            failed.push("gradcheck");
        }
    }
    if all || suite == "params" {
        if !suite_params()? {
            failed.push("params");
        }
    }
    if all || suite == "metrics" {
        if !suite_metrics(cfg.usize("pairs")?)? {
            failed.push("metrics");
        }
    }

    if failed.is_empty() {
        println!("verify: PASS");
        Ok(())
    } else {
        Err(CliError::Verification(failed.join(", ")))
    }
}
