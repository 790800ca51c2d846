//! End-to-end tests of the `liseg` binary: artifact layout, exit codes,
//! determinism, and the supervised/cps equivalence at zero consistency
//! weight. Training invocations use the toy scale with one or two steps so
//! the whole file stays in CI budget.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn liseg() -> Command {
    Command::new(env!("CARGO_BIN_EXE_liseg"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("liseg binary runs")
}

fn assert_ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

/// Generate a small dataset: 2 labeled + 1 unlabeled train, 1 val, 2 test.
fn small_dataset(dir: &Path, seed: u64) -> PathBuf {
    let out = run(liseg().args([
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--seed",
        &seed.to_string(),
        "--labeled",
        "2",
        "--unlabeled-bright",
        "1",
        "--unlabeled-dark",
        "0",
        "--val",
        "1",
        "--test",
        "2",
    ]));
    assert_ok(&out);
    dir.join("manifest.json")
}

fn train_args(manifest: &Path, run_dir: &Path, epochs: &str, extra: &[&str]) -> Vec<String> {
    let mut args = vec![
        "train".to_string(),
        "--manifest".into(),
        manifest.display().to_string(),
        "--run".into(),
        run_dir.display().to_string(),
        "--seed".into(),
        "11".into(),
        "--scale".into(),
        "toy".into(),
        "--batch-size".into(),
        "2".into(),
        "--steps-per-epoch".into(),
        "2".into(),
        "--epochs".into(),
        epochs.into(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    args
}

#[test]
fn synth_is_deterministic_and_writes_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    small_dataset(&a, 3);
    small_dataset(&b, 3);
    let ma = std::fs::read(a.join("manifest.json")).unwrap();
    let mb = std::fs::read(b.join("manifest.json")).unwrap();
    assert_eq!(ma, mb);
    assert!(a.join("config.resolved").is_file());
    assert!(!a.join(".lock").exists(), "lock released");

    // Re-running from the emitted config reproduces the dataset.
    let c = tmp.path().join("c");
    let resolved = std::fs::read_to_string(a.join("config.resolved")).unwrap();
    let redirected = resolved.replace(&a.display().to_string(), &c.display().to_string());
    let cfg = tmp.path().join("replay.cfg");
    std::fs::write(&cfg, redirected).unwrap();
    assert_ok(&run(liseg().args(["synth", "--config", cfg.to_str().unwrap()])));
    assert_eq!(ma, std::fs::read(c.join("manifest.json")).unwrap());
}

#[test]
fn synth_zero_cases_gives_an_empty_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("empty");
    let out = run(liseg().args([
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--labeled",
        "0",
        "--unlabeled-bright",
        "0",
        "--unlabeled-dark",
        "0",
        "--val",
        "0",
        "--test",
        "0",
    ]));
    assert_ok(&out);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["cases"].as_array().unwrap().len(), 0);
}

#[test]
fn config_file_env_and_flags_layer_in_that_order() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("ds");
    let cfg = tmp.path().join("synth.cfg");
    std::fs::write(
        &cfg,
        format!(
            "# comment line\nseed=5\nout={}\nlabeled=0\nunlabeled_bright=0\nunlabeled_dark=0\nval=0\ntest=0\n",
            dir.display()
        ),
    )
    .unwrap();
    let resolved_seed = |out: &Path| {
        std::fs::read_to_string(out.join("config.resolved"))
            .unwrap()
            .lines()
            .find(|l| l.starts_with("seed="))
            .unwrap()
            .to_string()
    };

    assert_ok(&run(liseg().args(["synth", "--config", cfg.to_str().unwrap()])));
    assert_eq!(resolved_seed(&dir), "seed=5");

    assert_ok(&run(liseg()
        .args(["synth", "--config", cfg.to_str().unwrap()])
        .env("LISEG_SEED", "6")));
    assert_eq!(resolved_seed(&dir), "seed=6");

    assert_ok(&run(liseg()
        .args(["synth", "--config", cfg.to_str().unwrap(), "--seed", "7"])
        .env("LISEG_SEED", "6")));
    assert_eq!(resolved_seed(&dir), "seed=7");
}

#[test]
fn train_writes_the_run_layout_and_reports_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = small_dataset(&tmp.path().join("ds"), 4);
    let run_dir = tmp.path().join("run");
    let stdout = assert_ok(&run(liseg().args(train_args(&manifest, &run_dir, "1", &[]))));
    assert!(stdout.contains("final validation"), "{stdout}");
    assert!(stdout.contains("mean DSC"), "{stdout}");
    for rel in [
        "config.resolved",
        "checkpoints/net1-latest.ckpt",
        "checkpoints/net2-latest.ckpt",
        "checkpoints/trainer-state.json",
        "logs/loss.csv",
        "logs/val.jsonl",
    ] {
        assert!(run_dir.join(rel).is_file(), "missing {rel}");
    }
    let csv = std::fs::read_to_string(run_dir.join("logs/loss.csv")).unwrap();
    assert!(csv.starts_with("step,epoch,lambda,l_sup,l_cps_labeled,l_cps_unlabeled,total\n"));
    assert_eq!(csv.lines().count(), 3, "header + 2 steps");
}

#[test]
fn supervised_mode_equals_cps_at_zero_lambda() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = small_dataset(&tmp.path().join("ds"), 5);
    let sup_dir = tmp.path().join("sup");
    let cps_dir = tmp.path().join("cps");
    assert_ok(&run(liseg().args(train_args(
        &manifest,
        &sup_dir,
        "1",
        &["--mode", "supervised"],
    ))));
    assert_ok(&run(liseg().args(train_args(
        &manifest,
        &cps_dir,
        "1",
        &["--mode", "cps", "--lambda-max", "0"],
    ))));
    let sup_csv = std::fs::read(sup_dir.join("logs/loss.csv")).unwrap();
    let cps_csv = std::fs::read(cps_dir.join("logs/loss.csv")).unwrap();
    assert_eq!(sup_csv, cps_csv);
}

#[test]
fn resume_reproduces_the_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = small_dataset(&tmp.path().join("ds"), 6);
    let full = tmp.path().join("full");
    let resumed = tmp.path().join("resumed");

    assert_ok(&run(liseg().args(train_args(&manifest, &full, "2", &[]))));
    assert_ok(&run(liseg().args(train_args(&manifest, &resumed, "1", &[]))));
    assert_ok(&run(liseg().args(train_args(
        &manifest,
        &resumed,
        "2",
        &["--resume"],
    ))));

    for rel in ["logs/loss.csv", "logs/val.jsonl"] {
        assert_eq!(
            std::fs::read(full.join(rel)).unwrap(),
            std::fs::read(resumed.join(rel)).unwrap(),
            "{rel} differs after resume"
        );
    }
}

#[test]
fn eval_writes_reports_and_filters_by_modality() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = small_dataset(&tmp.path().join("ds"), 8);
    let run_dir = tmp.path().join("run");
    assert_ok(&run(liseg().args(train_args(&manifest, &run_dir, "1", &[]))));
    let ckpt = run_dir.join("checkpoints/net1-best.ckpt");

    let eval_args = |extra: &[&str]| {
        let mut args = vec![
            "eval".to_string(),
            "--checkpoint".into(),
            ckpt.display().to_string(),
            "--manifest".into(),
            manifest.display().to_string(),
            "--split".into(),
            "test".into(),
        ];
        args.extend(extra.iter().map(|s| s.to_string()));
        args
    };

    assert_ok(&run(liseg().args(eval_args(&[]))));
    let reports = run_dir.join("reports");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(reports.join("report.json")).unwrap())
            .unwrap();
    // The 2 test cases alternate polarity: one GED4-like, one T2-like.
    assert_eq!(report["per_case"].as_array().unwrap().len(), 2);
    assert!(reports.join("report.csv").is_file());
    assert!(reports.join("config.resolved").is_file());

    // Same command again: identical report apart from the timestamp.
    let strip = |mut v: serde_json::Value| {
        v["metadata"]["timestamp_unix"] = 0.into();
        v
    };
    assert_ok(&run(liseg().args(eval_args(&[]))));
    let again: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(reports.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(strip(report), strip(again));

    let stdout = assert_ok(&run(liseg().args(eval_args(&["--modality", "T2-like"]))));
    assert!(stdout.contains("1 cases"), "{stdout}");
    let filtered: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(reports.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(filtered["per_case"].as_array().unwrap().len(), 1);
    assert_eq!(filtered["per_case"][0]["modality"], "T2-like");
}

#[test]
fn verify_suites_pass_quickly() {
    let stdout = assert_ok(&run(liseg().args([
        "verify", "--seeds", "1", "--pairs", "25",
    ])));
    assert!(stdout.contains("gradcheck: PASS"), "{stdout}");
    assert!(stdout.contains("params: PASS"), "{stdout}");
    assert!(stdout.contains("metrics: PASS"), "{stdout}");
    assert!(stdout.contains("verify: PASS"), "{stdout}");
    // The reconciliation itemizes each published scale.
    let params = assert_ok(&run(liseg().args(["verify", "params"])));
    for needle in ["14548617", "58166441", "440110569", "encoder", "decoder", "head"] {
        assert!(params.contains(needle), "missing {needle} in:\n{params}");
    }
}

#[test]
fn exit_codes_distinguish_usage_runtime_and_verification() {
    let tmp = tempfile::tempdir().unwrap();

    // Usage: bad flag value and unknown config key.
    let out = run(liseg().args(["train", "--scale", "XXL"]));
    assert_eq!(exit_code(&out), 1);
    let cfg = tmp.path().join("bad.cfg");
    std::fs::write(&cfg, "not_a_key=1\n").unwrap();
    let out = run(liseg().args(["synth", "--config", cfg.to_str().unwrap()]));
    assert_eq!(exit_code(&out), 1);
    let out = run(liseg().args(["verify", "nosuchsuite"]));
    assert_eq!(exit_code(&out), 1);

    // Runtime: missing inputs and a held lock.
    let out = run(liseg().args(["eval", "--checkpoint", "/nonexistent.ckpt"]));
    assert_eq!(exit_code(&out), 2);
    let locked = tmp.path().join("locked");
    std::fs::create_dir_all(&locked).unwrap();
    std::fs::write(locked.join(".lock"), "0\n").unwrap();
    let manifest = small_dataset(&tmp.path().join("ds"), 9);
    let out = run(liseg().args(train_args(&manifest, &locked, "1", &[])));
    assert_eq!(exit_code(&out), 2);
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains(".lock"), "{msg}");
}
