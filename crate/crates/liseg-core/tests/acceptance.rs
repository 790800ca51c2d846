//! Release acceptance suite: eight gates, one test per gate, each printing a
//! `criterion N PASS — …` line with its measured numbers (visible with
//! `--nocapture`). The label-efficiency and polarity gates (5, 6) share one
//! trained study, so whichever runs first pays the training cost.

use std::sync::OnceLock;
use std::time::Instant;

use liseg_core::data::{
    build_manifest, generate_phantom, read_nifti, read_nifti_mask, write_nifti_mask,
    write_nifti_volume, zscore_normalize, CaseCounts, Modality, PhantomSpec, Polarity, Sample,
    SegMask, Volume,
};
use liseg_core::metrics::{dice, hausdorff, predict_volume, HdMode, Hausdorff};
use liseg_core::net::{
    build_stunet, forward, gradient_suite, reconcile_reference_scales, stage_network,
    ModelScaleConfig, NetworkParams, GRADIENT_TOLERANCE,
};
use liseg_core::rng::{case_seed, named_rng};
use liseg_core::tensor::{Tape, Tensor};
use liseg_core::train::{
    cps_loss, pseudo_labels, supervised_loss, train_loop, SingleTrainer, TrainConfig, TrainMode,
    Trainer,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Smallest legal six-stage network, for gates that only need graph shape.
fn minimal_scale() -> ModelScaleConfig {
    ModelScaleConfig {
        name: "minimal".into(),
        widths: [2; 6],
        depths: [1; 6],
        num_classes: 2,
        in_channels: 1,
    }
}

fn bright_pool(count: usize, seed: u64, role: &str) -> Vec<Sample> {
    let spec = PhantomSpec::with_polarity([32; 3], Polarity::BrightLiver);
    (0..count)
        .map(|i| generate_phantom(&spec, case_seed(seed, role, i)).unwrap())
        .collect()
}

// --- criterion 1: gradient correctness ---

#[test]
fn criterion_1_gradient_correctness() {
    let t0 = Instant::now();
    let seeds = 5u64;
    let mut checks = 0usize;
    let mut worst = (f64::MIN, String::new(), 0u64);
    for seed in 0..seeds {
        for check in gradient_suite(seed).unwrap() {
            checks += 1;
            let err = check.report.max_rel_err;
            if err > worst.0 {
                worst = (err, check.name.to_string(), seed);
            }
            assert!(
                check.report.passes(GRADIENT_TOLERANCE),
                "criterion 1 FAIL — {} at seed {seed}: max rel err {err:.3e} >= {GRADIENT_TOLERANCE:.0e} ({:?})",
                check.name,
                check.report.worst,
            );
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 600.0, "criterion 1 FAIL — {secs:.0}s exceeds the 10 min budget");
    println!(
        "criterion 1 PASS — {checks} gradient checks over {seeds} seeds, worst rel err \
         {:.3e} ({} @ seed {}) < {GRADIENT_TOLERANCE:.0e}, {secs:.1}s",
        worst.0, worst.1, worst.2
    );
}

// --- criterion 2: published parameter totals ---

#[test]
fn criterion_2_parameter_reconciliation() {
    let t0 = Instant::now();
    let recs = reconcile_reference_scales().unwrap();
    assert_eq!(recs.len(), 3, "expected the S/B/L reconciliation rows");
    for r in &recs {
        println!(
            "  scale {}: computed {} vs published {:.2}M ({:+.3}%) — encoder {} / decoder {} / head {}",
            r.name,
            r.computed,
            r.reference / 1e6,
            100.0 * r.residual_fraction,
            r.breakdown.encoder,
            r.breakdown.decoder,
            r.breakdown.head,
        );
        assert_eq!(
            r.breakdown.total(),
            r.computed,
            "breakdown must itemize the whole computed count"
        );
        assert!(
            r.within(0.10),
            "criterion 2 FAIL — scale {} residual {:+.2}% exceeds ±10%",
            r.name,
            100.0 * r.residual_fraction
        );
    }
    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 1.0, "criterion 2 FAIL — {secs:.2}s exceeds the 1 s budget");
    let worst = recs
        .iter()
        .map(|r| r.residual_fraction.abs())
        .fold(0.0, f64::max);
    println!(
        "criterion 2 PASS — S/B/L within ±10% of published totals (worst residual {:.2}%), {secs:.3}s",
        100.0 * worst
    );
}

// --- criterion 3: loss decomposition and the lambda = 0 equivalence ---

/// Bit pattern of every parameter of a network, keyed by name.
fn param_bits(net: &NetworkParams) -> Vec<(String, Vec<u64>)> {
    net.params
        .iter()
        .map(|(name, t)| (name.clone(), t.values().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

#[test]
fn criterion_3_loss_decomposition_and_lambda_zero_equivalence() {
    // Part 1: on a freshly assembled tape, the scalar the graph evaluates for
    // the total objective is bit-identical to l_sup + lambda·(cps_l + cps_u)
    // recomputed from the logged component values.
    let scale = minimal_scale();
    let mut rng = named_rng(402, "acceptance-decomposition");
    let net1 = build_stunet(&scale, &mut rng).unwrap();
    let net2 = build_stunet(&scale, &mut rng).unwrap();
    let batch = |rng: &mut ChaCha8Rng| -> (Tensor, Vec<u8>) {
        let voxels = 32 * 32 * 32;
        let data: Vec<f64> = (0..voxels).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let gt: Vec<u8> = (0..voxels).map(|_| rng.gen_bool(0.3) as u8).collect();
        (Tensor::new(vec![1, 1, 32, 32, 32], data).unwrap(), gt)
    };
    for lambda in [0.25, 0.5, 0.75, 1.0, 1.5] {
        let (lab, gt) = batch(&mut rng);
        let (unl, _) = batch(&mut rng);
        let mut tape = Tape::new();
        let s1 = stage_network(&mut tape, &net1, true);
        let s2 = stage_network(&mut tape, &net2, true);
        let lab = tape.leaf(lab);
        let unl = tape.leaf(unl);
        let p1 = forward(&mut tape, &s1, lab).unwrap();
        let p1 = tape.softmax_channels(p1).unwrap();
        let p2 = forward(&mut tape, &s2, lab).unwrap();
        let p2 = tape.softmax_channels(p2).unwrap();
        let q1 = forward(&mut tape, &s1, unl).unwrap();
        let q1 = tape.softmax_channels(q1).unwrap();
        let q2 = forward(&mut tape, &s2, unl).unwrap();
        let q2 = tape.softmax_channels(q2).unwrap();
        let l_sup = supervised_loss(&mut tape, p1, p2, &gt).unwrap();
        let cps_l = cps_loss(&mut tape, p1, p2).unwrap();
        let cps_u = cps_loss(&mut tape, q1, q2).unwrap();
        let cps = tape.add(cps_l, cps_u).unwrap();
        let weighted = tape.scale(cps, lambda).unwrap();
        let total = tape.add(l_sup, weighted).unwrap();
        let recomposed = tape.value(l_sup).item()
            + lambda * (tape.value(cps_l).item() + tape.value(cps_u).item());
        assert_eq!(
            tape.value(total).item().to_bits(),
            recomposed.to_bits(),
            "criterion 3 FAIL — tape total differs from the recomposed sum at lambda {lambda}"
        );
    }

    // Part 2: with the co-training weight at zero, the dual-network run and
    // the supervised mode produce identical loss logs, and network 1 follows
    // the single-network supervised parameter trajectory bitwise.
    let labeled = bright_pool(3, 31, "decomp-lab");
    let unlabeled = bright_pool(4, 31, "decomp-unlb");
    let steps_per_epoch = 10;
    let epochs = 2; // 20 steps
    let cfg = |mode: TrainMode| {
        let mut cfg = TrainConfig::new(minimal_scale(), mode, 31);
        cfg.steps_per_epoch = steps_per_epoch;
        cfg.max_epochs = epochs;
        cfg.lambda_max = 0.0;
        cfg
    };
    let mut dual = Trainer::from_pools(cfg(TrainMode::Cps), labeled.clone(), unlabeled).unwrap();
    let mut sup = Trainer::from_pools(cfg(TrainMode::Supervised), labeled.clone(), Vec::new()).unwrap();
    let mut single = SingleTrainer::from_pool(cfg(TrainMode::Supervised), labeled).unwrap();
    let mut steps = 0usize;
    for _ in 0..epochs {
        let ld = dual.run_epoch().unwrap();
        let ls = sup.run_epoch().unwrap();
        single.run_epoch().unwrap();
        steps += ld.len();
        for (d, s) in ld.iter().zip(&ls) {
            assert_eq!(
                d.total.to_bits(),
                s.total.to_bits(),
                "criterion 3 FAIL — lambda=0 loss log diverges from supervised mode"
            );
            assert_eq!(d.l_cps_labeled, 0.0);
            assert_eq!(d.l_cps_unlabeled, 0.0);
        }
    }
    assert!(steps >= 20, "need at least 20 compared steps, got {steps}");
    let dual_bits = param_bits(&dual.net1);
    assert_eq!(
        dual_bits,
        param_bits(&sup.net1),
        "criterion 3 FAIL — lambda=0 and supervised-mode parameters differ"
    );
    assert_eq!(
        dual_bits,
        param_bits(&single.net),
        "criterion 3 FAIL — lambda=0 network 1 departs from the single-network trajectory"
    );
    println!(
        "criterion 3 PASS — tape total bit-equals l_sup + lambda·(cps_l + cps_u) for 5 lambdas; \
         lambda=0 matched the single-network parameter trajectory over {steps} steps"
    );
}

// --- criterion 4: metric oracles ---

/// Foreground coordinates of a mask.
fn fg_coords(mask: &SegMask) -> Vec<[usize; 3]> {
    let [_, h, w] = [mask.dims[0], mask.dims[1], mask.dims[2]];
    mask.labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l != 0)
        .map(|(i, _)| [i / (h * w), (i / w) % h, i % w])
        .collect()
}

fn brute_dice(pred: &SegMask, reference: &SegMask) -> f64 {
    let mut inter = 0u64;
    let mut total = 0u64;
    for (&p, &r) in pred.labels.iter().zip(&reference.labels) {
        inter += (p == 1 && r == 1) as u64;
        total += (p == 1) as u64 + (r == 1) as u64;
    }
    if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    }
}

/// Nearest-foreground squared distances for every foreground voxel of `from`,
/// by exhaustive search over the other mask's foreground.
fn brute_directed_sq(from: &[[usize; 3]], to: &[[usize; 3]], spacing: [f64; 3]) -> Vec<f64> {
    from.iter()
        .map(|a| {
            to.iter()
                .map(|b| {
                    (0..3)
                        .map(|k| {
                            let d = (a[k] as f64 - b[k] as f64) * spacing[k];
                            d * d
                        })
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn brute_reduce(mut sq: Vec<f64>, mode: HdMode) -> f64 {
    match mode {
        HdMode::Full => sq.iter().copied().fold(0.0, f64::max),
        HdMode::Percentile95 => {
            sq.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = sq.len();
            let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
            sq[rank - 1]
        }
    }
}

fn brute_hausdorff(pred: &SegMask, reference: &SegMask, spacing: [f64; 3], mode: HdMode) -> Hausdorff {
    let p = fg_coords(pred);
    let r = fg_coords(reference);
    if r.is_empty() {
        return Hausdorff::EmptyReference;
    }
    if p.is_empty() {
        return Hausdorff::EmptyPrediction;
    }
    let forward = brute_reduce(brute_directed_sq(&p, &r, spacing), mode);
    let backward = brute_reduce(brute_directed_sq(&r, &p, spacing), mode);
    Hausdorff::Value { mm: forward.max(backward).sqrt() }
}

/// Random mask with foreground probability 0.3. Spacings are dyadic
/// rationals so exhaustive and transform-based squared distances are both
/// exact in f64 and the comparison can demand bit equality.
fn random_mask(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> SegMask {
    let n = dims.iter().product();
    let labels = (0..n).map(|_| rng.gen_bool(0.3) as u8).collect();
    SegMask::new(dims, labels, 2).unwrap()
}

const DYADIC_SPACINGS: [[f64; 3]; 5] = [
    [1.0, 1.0, 1.0],
    [0.5, 0.5, 2.0],
    [2.0, 1.0, 0.5],
    [1.25, 0.75, 1.0],
    [0.75, 1.25, 0.5],
];

#[test]
fn criterion_4_metric_oracles() {
    let t0 = Instant::now();
    let mut rng = named_rng(404, "acceptance-metrics");
    let dims = |rng: &mut ChaCha8Rng| {
        [
            rng.gen_range(2..=12usize),
            rng.gen_range(2..=12usize),
            rng.gen_range(2..=12usize),
        ]
    };
    let mut value_pairs = 0usize;
    for pair in 0..100 {
        let d = dims(&mut rng);
        let pred = random_mask(&mut rng, d);
        let reference = random_mask(&mut rng, d);
        let spacing = DYADIC_SPACINGS[pair % DYADIC_SPACINGS.len()];
        let mode = if pair % 2 == 0 { HdMode::Full } else { HdMode::Percentile95 };

        let fast = dice(&pred, &reference).unwrap();
        let slow = brute_dice(&pred, &reference);
        assert_eq!(
            fast.to_bits(),
            slow.to_bits(),
            "criterion 4 FAIL — dice mismatch on pair {pair}: {fast} vs {slow}"
        );

        let fast = hausdorff(&pred, &reference, spacing, mode).unwrap();
        let slow = brute_hausdorff(&pred, &reference, spacing, mode);
        match (fast, slow) {
            (Hausdorff::Value { mm: a }, Hausdorff::Value { mm: b }) => {
                value_pairs += 1;
                assert_eq!(
                    a.to_bits(),
                    b.to_bits(),
                    "criterion 4 FAIL — hausdorff mismatch on pair {pair} ({mode:?}): {a} vs {b}"
                );
            }
            (f, s) => assert_eq!(f, s, "criterion 4 FAIL — status mismatch on pair {pair}"),
        }
    }

    // Triangle inequality of the full symmetric distance on nonempty masks.
    let mut triples = 0usize;
    while triples < 50 {
        let d = dims(&mut rng);
        let masks: Vec<SegMask> = (0..3).map(|_| random_mask(&mut rng, d)).collect();
        if masks.iter().any(|m| m.foreground_count() == 0) {
            continue;
        }
        triples += 1;
        let spacing = DYADIC_SPACINGS[triples % DYADIC_SPACINGS.len()];
        let h = |a: &SegMask, b: &SegMask| {
            hausdorff(a, b, spacing, HdMode::Full).unwrap().value().unwrap()
        };
        let (ab, bc, ac) = (h(&masks[0], &masks[1]), h(&masks[1], &masks[2]), h(&masks[0], &masks[2]));
        assert!(
            ac <= ab + bc + 1e-9,
            "criterion 4 FAIL — triangle inequality violated: H(A,C)={ac} > H(A,B)+H(B,C)={}",
            ab + bc
        );
    }
    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 120.0, "criterion 4 FAIL — {secs:.0}s exceeds the 2 min budget");
    println!(
        "criterion 4 PASS — 100 mask pairs bit-equal to exhaustive oracles ({value_pairs} with \
         finite distances), triangle inequality on 50 triples, {secs:.1}s"
    );
}

// --- criteria 5 and 6: the trained study they share ---

/// Operating point for the label-efficiency study: scarce supervision (one
/// labeled patch per step), a learning rate high enough that both arms
/// approach their plateau inside the step budget, a one-epoch warm-up before
/// the co-training weight turns on, and a labeled pool whose liver sizes
/// cover only part of the test distribution — the situation the unlabeled
/// pool exists to fix.
mod study {
    pub const SEEDS: [u64; 3] = [1, 2, 3];
    pub const NOISE_SIGMA: f64 = 0.25;
    pub const LABELED: usize = 3;
    pub const UNLABELED: usize = 30;
    pub const HELD_OUT: usize = 6;
    pub const EPOCHS: usize = 9;
    pub const STEPS_PER_EPOCH: usize = 6;
    pub const BATCH: usize = 2;
    pub const LR: f64 = 3e-3;
    pub const LAMBDA_MAX: f64 = 0.5;
    pub const RAMPUP_EPOCHS: usize = 1;
    /// Liver semi-axis range (voxels) for unlabeled and held-out volumes.
    pub const AXES_FULL: [f64; 2] = [3.2, 12.8];
    /// Semi-axis range for the labeled pool. Annotated cases skew small, so
    /// the supervised arm never sees the upper half of the size distribution;
    /// the unlabeled pool covers all of it.
    pub const AXES_LABELED: [f64; 2] = [3.2, 7.0];
    pub const CENTER: [f64; 2] = [12.8, 19.2];
}

struct ArmScores {
    bright: f64,
    dark: f64,
}

struct SeedOutcome {
    seed: u64,
    supervised: ArmScores,
    cps: ArmScores,
}

struct Study {
    outcomes: Vec<SeedOutcome>,
    secs: f64,
}

fn study_spec(polarity: Polarity, semi_axes: [f64; 2]) -> PhantomSpec {
    let mut spec = PhantomSpec::with_polarity([32; 3], polarity);
    spec.noise_sigma = study::NOISE_SIGMA;
    spec.center_range = [study::CENTER; 3];
    spec.semi_axes_range = [semi_axes; 3];
    spec
}

fn study_config(mode: TrainMode, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(ModelScaleConfig::toy(), mode, seed);
    cfg.max_epochs = study::EPOCHS;
    cfg.steps_per_epoch = study::STEPS_PER_EPOCH;
    cfg.batch_size = study::BATCH;
    cfg.lr = study::LR;
    cfg.lambda_max = study::LAMBDA_MAX;
    cfg.lambda_rampup_epochs = study::RAMPUP_EPOCHS;
    cfg
}

fn mean_dice(net: &NetworkParams, pool: &[Sample]) -> f64 {
    let sum: f64 = pool
        .iter()
        .map(|s| {
            let pred = predict_volume(net, &s.volume, [32; 3]).unwrap();
            dice(&pred, s.mask.as_ref().unwrap()).unwrap()
        })
        .sum();
    sum / pool.len() as f64
}

fn run_study() -> Study {
    let t0 = Instant::now();
    let bright = study_spec(Polarity::BrightLiver, study::AXES_FULL);
    let bright_small = study_spec(Polarity::BrightLiver, study::AXES_LABELED);
    let dark = study_spec(Polarity::DarkLiver, study::AXES_FULL);
    let outcomes = study::SEEDS
        .iter()
        .map(|&seed| {
            let gen = |spec: &PhantomSpec, role: &str, n: usize| -> Vec<Sample> {
                (0..n)
                    .map(|i| generate_phantom(spec, case_seed(seed, role, i)).unwrap())
                    .collect()
            };
            let labeled = gen(&bright_small, "lab", study::LABELED);
            let unlabeled = gen(&bright, "unlb", study::UNLABELED);
            let held_bright = gen(&bright, "test-bright", study::HELD_OUT);
            let held_dark = gen(&dark, "test-dark", study::HELD_OUT);

            let mut cps =
                Trainer::from_pools(study_config(TrainMode::Cps, seed), labeled.clone(), unlabeled)
                    .unwrap();
            for _ in 0..study::EPOCHS {
                cps.run_epoch().unwrap();
            }
            let mut sup = Trainer::from_pools(
                study_config(TrainMode::Supervised, seed),
                labeled,
                Vec::new(),
            )
            .unwrap();
            for _ in 0..study::EPOCHS {
                sup.run_epoch().unwrap();
            }

            SeedOutcome {
                seed,
                supervised: ArmScores {
                    bright: mean_dice(&sup.net1, &held_bright),
                    dark: mean_dice(&sup.net1, &held_dark),
                },
                cps: ArmScores {
                    bright: mean_dice(&cps.net1, &held_bright),
                    dark: mean_dice(&cps.net1, &held_dark),
                },
            }
        })
        .collect();
    Study { outcomes, secs: t0.elapsed().as_secs_f64() }
}

fn efficiency_study() -> &'static Study {
    static STUDY: OnceLock<Study> = OnceLock::new();
    STUDY.get_or_init(run_study)
}

#[test]
fn criterion_5_label_efficiency() {
    let study = efficiency_study();
    let mut gaps = Vec::new();
    for o in &study.outcomes {
        let gap = o.cps.bright - o.supervised.bright;
        println!(
            "  seed {}: supervised {:.4}, co-trained {:.4} (gap {:+.4})",
            o.seed, o.supervised.bright, o.cps.bright, gap
        );
        gaps.push(gap);
    }
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    assert!(
        study.secs < 1800.0,
        "criterion 5 FAIL — study took {:.0}s, over the 30 min budget",
        study.secs
    );
    assert!(
        mean_gap >= 0.02,
        "criterion 5 FAIL — mean held-out Dice gap {mean_gap:+.4} below +0.02"
    );
    println!(
        "criterion 5 PASS — co-training beats supervised by {mean_gap:+.4} mean held-out Dice \
         over {} seeds ({} labeled + {} unlabeled volumes), study {:.0}s",
        study.outcomes.len(),
        study::LABELED,
        study::UNLABELED,
        study.secs
    );
}

#[test]
fn criterion_6_cross_polarity_degradation() {
    let study = efficiency_study();
    for o in &study.outcomes {
        println!(
            "  seed {}: held-out bright {:.4} vs dark {:.4} (drop {:+.4})",
            o.seed,
            o.cps.bright,
            o.cps.dark,
            o.cps.bright - o.cps.dark
        );
        assert!(
            o.cps.dark < o.cps.bright,
            "criterion 6 FAIL — seed {}: dark-liver Dice {:.4} not strictly below bright {:.4}",
            o.seed,
            o.cps.dark,
            o.cps.bright
        );
    }
    println!(
        "criterion 6 PASS — bright-trained model scores strictly lower on dark-liver phantoms \
         on {}/{} seeds",
        study.outcomes.len(),
        study.outcomes.len()
    );
}

// --- criterion 7: single-phantom overfit ---

#[test]
fn criterion_7_single_phantom_overfit() {
    let spec = PhantomSpec::with_polarity([32; 3], Polarity::BrightLiver);
    let sample = generate_phantom(&spec, case_seed(7, "overfit", 0)).unwrap();
    let gt_mask = sample.mask.clone().unwrap();
    let normalized = zscore_normalize(&sample.volume).unwrap();

    let mut cfg = TrainConfig::new(ModelScaleConfig::toy(), TrainMode::Supervised, 7);
    cfg.batch_size = 2; // one patch per step
    cfg.steps_per_epoch = 10;
    cfg.max_epochs = 20; // 200-step cap
    cfg.lr = 3e-3;
    // Memorization test: no pose jitter, patches are the raw volume.
    cfg.augment.rotate_prob = 0.0;
    cfg.augment.scale_prob = 0.0;

    let evaluate = |net: &NetworkParams| -> (f64, f64) {
        let mut tape = Tape::new();
        let staged = stage_network(&mut tape, net, false);
        let input = tape.leaf(
            Tensor::new(vec![1, 1, 32, 32, 32], normalized.data.clone()).unwrap(),
        );
        let logits = forward(&mut tape, &staged, input).unwrap();
        let probs = tape.softmax_channels(logits).unwrap();
        let ce_id = tape.cross_entropy(probs, &gt_mask.labels).unwrap();
        let ce = tape.value(ce_id).item();
        let labels = pseudo_labels(tape.value(probs)).unwrap();
        let pred = SegMask::new(gt_mask.dims, labels, 2).unwrap();
        (ce, dice(&pred, &gt_mask).unwrap())
    };

    let mut trainer = SingleTrainer::from_pool(cfg, vec![sample]).unwrap();
    let mut steps = 0usize;
    let mut last = evaluate(&trainer.net);
    while steps < 200 {
        steps += trainer.run_epoch().unwrap().len();
        last = evaluate(&trainer.net);
        if last.0 < 0.05 && last.1 > 0.95 {
            break;
        }
    }
    let (ce, dsc) = last;
    assert!(
        ce < 0.05 && dsc > 0.95,
        "criterion 7 FAIL — after {steps} steps: CE {ce:.4} (need < 0.05), Dice {dsc:.4} (need > 0.95)"
    );
    println!(
        "criterion 7 PASS — training-volume CE {ce:.4} < 0.05 and Dice {dsc:.4} > 0.95 after \
         {steps} steps (cap 200)"
    );
}

// --- criterion 8: determinism and persistence ---

#[test]
fn criterion_8_determinism_and_persistence() {
    let tmp = tempfile::tempdir().unwrap();
    let counts = CaseCounts {
        labeled: 2,
        unlabeled_bright: 1,
        unlabeled_dark: 0,
        val: 1,
        test: 1,
    };
    let bright = PhantomSpec::with_polarity([32; 3], Polarity::BrightLiver);
    let dark = PhantomSpec::with_polarity([32; 3], Polarity::DarkLiver);
    let manifest = build_manifest(&tmp.path().join("data"), &counts, &bright, &dark, 88).unwrap();

    let mut cfg = TrainConfig::new(minimal_scale(), TrainMode::Cps, 88);
    cfg.max_epochs = 2;
    cfg.steps_per_epoch = 3;
    cfg.lambda_rampup_epochs = 0; // co-training active from the first step

    // Identical seeds, identical logs.
    let run_a = tmp.path().join("run-a");
    let run_b = tmp.path().join("run-b");
    train_loop(&cfg, &manifest, &run_a, false).unwrap();
    train_loop(&cfg, &manifest, &run_b, false).unwrap();
    let log_a = std::fs::read(run_a.join("logs/loss.csv")).unwrap();
    assert_eq!(
        log_a,
        std::fs::read(run_b.join("logs/loss.csv")).unwrap(),
        "criterion 8 FAIL — same-seed loss logs differ"
    );

    // An interrupted run resumed from its checkpoint reproduces the
    // uninterrupted trajectory, parameters included.
    let resumed = tmp.path().join("run-resumed");
    let mut first_leg = cfg.clone();
    first_leg.max_epochs = 1;
    train_loop(&first_leg, &manifest, &resumed, false).unwrap();
    train_loop(&cfg, &manifest, &resumed, true).unwrap();
    assert_eq!(
        log_a,
        std::fs::read(resumed.join("logs/loss.csv")).unwrap(),
        "criterion 8 FAIL — resumed loss log deviates from the unbroken run"
    );
    assert_eq!(
        std::fs::read(run_a.join("checkpoints/net1-latest.ckpt")).unwrap(),
        std::fs::read(resumed.join("checkpoints/net1-latest.ckpt")).unwrap(),
        "criterion 8 FAIL — resumed final checkpoint differs"
    );

    // NIfTI round-trips are bit-exact for the writer's dtypes (float32
    // volumes, uint8 masks), plain and gzipped.
    let mut rng = named_rng(408, "acceptance-nifti");
    let dims = [7, 5, 6];
    let n: usize = dims.iter().product();
    let data: Vec<f64> = (0..n).map(|_| (rng.gen::<f32>() * 8.0 - 4.0) as f64).collect();
    let spacing = [1.5, 0.75, 2.0];
    let volume = Volume::new("rt", dims, data, spacing, Modality::Raw).unwrap();
    for name in ["rt.nii", "rt.nii.gz"] {
        let path = tmp.path().join(name);
        write_nifti_volume(&volume, &path).unwrap();
        let back = read_nifti(&path).unwrap();
        assert_eq!(back.dims, dims);
        assert_eq!(back.spacing, spacing);
        let same = volume
            .data
            .iter()
            .zip(&back.data)
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same, "criterion 8 FAIL — float32 volume round-trip not bit-exact ({name})");
    }
    let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..3)).collect();
    let mask = SegMask::new(dims, labels, 3).unwrap();
    let mask_path = tmp.path().join("rt-mask.nii");
    write_nifti_mask(&mask, spacing, &mask_path).unwrap();
    let (mask_back, spacing_back) = read_nifti_mask(&mask_path, 3).unwrap();
    assert_eq!(mask_back.labels, mask.labels, "criterion 8 FAIL — uint8 mask round-trip");
    assert_eq!(spacing_back, spacing);

    println!(
        "criterion 8 PASS — same-seed logs identical, resume reproduced the trajectory and \
         final checkpoint, NIfTI float32/uint8 round-trips bit-exact"
    );
}
