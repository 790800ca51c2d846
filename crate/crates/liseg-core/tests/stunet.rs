//! Structural tests for the encoder–decoder: parameter accounting against
//! hand counts and reference totals, block wiring against manual primitive
//! composition, and checkpoint persistence.

use std::collections::BTreeMap;

use liseg_core::net::{
    build_stunet, checkpoint, count_flops, count_parameters, downsample_block, infer_logits,
    reconcile_reference_scales, residual_block, stage_network, upsample_stage, ModelScaleConfig,
    NetworkParams, IN_EPS, LRELU_SLOPE,
};
use liseg_core::rng::named_rng;
use liseg_core::tensor::kernels::softmax_channels_forward;
use liseg_core::tensor::{grad_check, Tape, Tensor, GRAD_CHECK_STEP};
use rand::Rng;

/// Smallest legal network: every stage 2 channels wide, one block deep.
fn minimal_config() -> ModelScaleConfig {
    ModelScaleConfig {
        name: "minimal".into(),
        depths: [1; 6],
        widths: [2; 6],
        num_classes: 2,
        in_channels: 1,
    }
}

fn rand_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Wrap a hand-assembled parameter map so it can be staged on a tape.
fn adhoc_net(params: BTreeMap<String, Tensor>) -> NetworkParams {
    NetworkParams {
        config: minimal_config(),
        params,
    }
}

#[test]
fn minimal_config_parameter_count_matches_hand_arithmetic() {
    // Stage widths all 2, depths all 1, 1 input channel, 2 classes.
    // enc0 block: conv1 (2*1*27 + 2) + norm 4 + conv2 (2*2*27 + 2) + norm 4
    //             + proj (2*1 + 2) + norm 4                          =  182
    // enc1..enc5 downsample each: conv1 110 + norm 4 + conv2 110 + norm 4
    //             + skip (2*2 + 2) + norm 4                          =  238
    // dec0..dec4 each: up (2*2 + 2) + conv1 (2*4*27 + 2) + norm 4
    //             + conv2 110 + norm 4 + proj (2*4 + 2) + norm 4     =  356
    // head: 2*2 + 2                                                  =    6
    // total: 182 + 5*238 + 5*356 + 6                                 = 3158
    assert_eq!(count_parameters(&minimal_config()).unwrap(), 3158);
}

#[test]
fn symbolic_count_equals_built_network_for_small_configs() {
    for config in [minimal_config(), ModelScaleConfig::toy()] {
        let mut rng = named_rng(1, "count-check");
        let net = build_stunet(&config, &mut rng).unwrap();
        assert_eq!(count_parameters(&config).unwrap(), net.total_parameters());
    }
}

#[test]
fn reference_scale_totals_within_ten_percent() {
    for rec in reconcile_reference_scales().unwrap() {
        assert!(
            rec.within(0.10),
            "{}: computed {} vs reference {} ({:+.2}%)",
            rec.name,
            rec.computed,
            rec.reference,
            100.0 * rec.residual_fraction
        );
        assert_eq!(
            rec.breakdown.total(),
            rec.computed,
            "breakdown must itemize the full count"
        );
    }
}

#[test]
fn doubling_widths_roughly_quadruples_parameters() {
    let mut narrow = minimal_config();
    narrow.widths = [32; 6];
    let mut wide = minimal_config();
    wide.widths = [64; 6];
    let ratio =
        count_parameters(&wide).unwrap() as f64 / count_parameters(&narrow).unwrap() as f64;
    assert!((3.5..4.3).contains(&ratio), "ratio {ratio}");
}

#[test]
fn flops_match_per_layer_hand_formula_on_minimal_config() {
    // Sum of 2 * cin * cout * k^3 * output voxels over every convolution of
    // the minimal config at a 32^3 patch:
    //   encoder 9_942_608 + decoder 12_582_528 + head 131_072 MACs.
    assert_eq!(
        count_flops(&minimal_config(), [32, 32, 32]).unwrap(),
        2 * 22_656_208
    );
}

#[test]
fn flops_scale_8x_when_patch_doubles() {
    let c = ModelScaleConfig::toy();
    let small = count_flops(&c, [32, 32, 32]).unwrap();
    let big = count_flops(&c, [64, 64, 64]).unwrap();
    assert_eq!(big, 8 * small);
}

#[test]
fn builds_are_deterministic_per_seed() {
    let config = minimal_config();
    let a = build_stunet(&config, &mut named_rng(42, "init-net1")).unwrap();
    let b = build_stunet(&config, &mut named_rng(42, "init-net1")).unwrap();
    let c = build_stunet(&config, &mut named_rng(42, "init-net2")).unwrap();
    assert_eq!(a.params, b.params);
    assert_ne!(a.params, c.params, "different streams must differ");
}

#[test]
fn forward_preserves_spatial_shape_and_rejects_bad_inputs() {
    let config = minimal_config();
    let net = build_stunet(&config, &mut named_rng(3, "init-net1")).unwrap();
    let mut rng = named_rng(3, "input");
    let x = Tensor::new(vec![1, 1, 32, 32, 32], rand_vec(&mut rng, 32 * 32 * 32)).unwrap();
    let logits = infer_logits(&net, &x).unwrap();
    assert_eq!(logits.shape(), &[1, 2, 32, 32, 32]);
    assert!(logits.all_finite());

    let bad = Tensor::zeros(vec![1, 1, 48, 48, 48]);
    let err = infer_logits(&net, &bad).unwrap_err().to_string();
    assert!(err.contains("divisible by 32"), "{err}");
    let bad_c = Tensor::zeros(vec![1, 2, 32, 32, 32]);
    assert!(infer_logits(&net, &bad_c).is_err());
}

#[test]
fn identical_params_give_identical_logits() {
    let config = minimal_config();
    let net = build_stunet(&config, &mut named_rng(5, "init-net1")).unwrap();
    let twin = net.clone();
    let x = Tensor::new(
        vec![1, 1, 32, 32, 32],
        rand_vec(&mut named_rng(5, "input"), 32 * 32 * 32),
    )
    .unwrap();
    let a = infer_logits(&net, &x).unwrap();
    let b = infer_logits(&twin, &x).unwrap();
    assert!(a
        .values()
        .iter()
        .zip(b.values())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn he_initialized_forward_is_finite_across_seeds() {
    let config = minimal_config();
    for seed in 0..5 {
        let net = build_stunet(&config, &mut named_rng(seed, "init-net1")).unwrap();
        let x = Tensor::new(
            vec![1, 1, 32, 32, 32],
            rand_vec(&mut named_rng(seed, "input"), 32 * 32 * 32),
        )
        .unwrap();
        assert!(infer_logits(&net, &x).unwrap().all_finite());
    }
}

#[test]
fn zeroed_head_gives_uniform_softmax() {
    let config = minimal_config();
    let mut net = build_stunet(&config, &mut named_rng(7, "init-net1")).unwrap();
    let hw = net.params.get_mut("head.weight").unwrap();
    hw.values_mut().fill(0.0);
    let x = Tensor::new(
        vec![1, 1, 32, 32, 32],
        rand_vec(&mut named_rng(7, "input"), 32 * 32 * 32),
    )
    .unwrap();
    let logits = infer_logits(&net, &x).unwrap();
    assert!(logits.values().iter().all(|&v| v == 0.0));
    let probs = softmax_channels_forward(logits.values(), [1, 2, 32, 32, 32]);
    assert!(probs.iter().all(|&p| (p - 0.5).abs() < 1e-15));
}

// --- block-level behavior ---

fn zero_res_block_params(prefix: &str, c: usize) -> BTreeMap<String, Tensor> {
    let mut p = BTreeMap::new();
    p.insert(
        format!("{prefix}.conv1.weight"),
        Tensor::zeros(vec![c, c, 3, 3, 3]),
    );
    p.insert(format!("{prefix}.conv1.bias"), Tensor::zeros(vec![c]));
    p.insert(format!("{prefix}.norm1.gamma"), Tensor::zeros(vec![c]));
    p.insert(format!("{prefix}.norm1.beta"), Tensor::zeros(vec![c]));
    p.insert(
        format!("{prefix}.conv2.weight"),
        Tensor::zeros(vec![c, c, 3, 3, 3]),
    );
    p.insert(format!("{prefix}.conv2.bias"), Tensor::zeros(vec![c]));
    p.insert(format!("{prefix}.norm2.gamma"), Tensor::zeros(vec![c]));
    p.insert(format!("{prefix}.norm2.beta"), Tensor::zeros(vec![c]));
    p
}

#[test]
fn residual_block_with_zero_branch_is_leaky_relu() {
    let mut rng = named_rng(11, "res-zero");
    let x = rand_vec(&mut rng, 2 * 64);
    let net = adhoc_net(zero_res_block_params("blk", 2));
    let mut tape = Tape::new();
    let staged = stage_network(&mut tape, &net, false);
    let xid = tape.leaf(Tensor::new(vec![1, 2, 4, 4, 4], x.clone()).unwrap());
    let y = residual_block(&mut tape, &staged, "blk", xid).unwrap();
    let want: Vec<f64> = x
        .iter()
        .map(|&v| if v >= 0.0 { v } else { LRELU_SLOPE * v })
        .collect();
    assert_eq!(tape.value(y).values(), want.as_slice());
    assert_eq!(tape.value(y).shape(), &[1, 2, 4, 4, 4]);
}

#[test]
fn residual_block_gradient_flows_through_identity_skip() {
    // With the main branch zeroed, d(sum(block(x)^2))/dx must be exactly
    // 2*lrelu(x)*lrelu'(x): the only live path is the identity skip.
    let mut rng = named_rng(12, "res-skip-grad");
    let x: Vec<f64> = (0..16)
        .map(|_| {
            let v: f64 = rng.gen_range(0.1..1.0);
            if rng.gen::<bool>() {
                v
            } else {
                -v
            }
        })
        .collect();
    let net = adhoc_net(zero_res_block_params("blk", 2));
    let mut tape = Tape::new();
    let staged = stage_network(&mut tape, &net, false);
    let xid = tape.leaf(Tensor::new(vec![1, 2, 2, 2, 2], x.clone()).unwrap().with_grad());
    let y = residual_block(&mut tape, &staged, "blk", xid).unwrap();
    let sq = tape.mul(y, y).unwrap();
    let loss = tape.sum(sq).unwrap();
    tape.backward(loss).unwrap();
    let grad = tape.grad(xid).unwrap();
    for (&g, &v) in grad.iter().zip(&x) {
        let (act, slope) = if v >= 0.0 {
            (v, 1.0)
        } else {
            (LRELU_SLOPE * v, LRELU_SLOPE)
        };
        assert_eq!(g, (act + act) * slope);
    }
}

fn random_down_block_params(rng: &mut impl Rng, cin: usize, cout: usize) -> BTreeMap<String, Tensor> {
    let mut p = BTreeMap::new();
    p.insert(
        "dn.conv1.weight".into(),
        Tensor::new(vec![cout, cin, 3, 3, 3], rand_vec(rng, cout * cin * 27)).unwrap(),
    );
    p.insert("dn.conv1.bias".into(), Tensor::new(vec![cout], rand_vec(rng, cout)).unwrap());
    p.insert("dn.norm1.gamma".into(), Tensor::new(vec![cout], rand_vec(rng, cout)).unwrap());
    p.insert("dn.norm1.beta".into(), Tensor::new(vec![cout], rand_vec(rng, cout)).unwrap());
    p.insert(
        "dn.conv2.weight".into(),
        Tensor::new(vec![cout, cout, 3, 3, 3], rand_vec(rng, cout * cout * 27)).unwrap(),
    );
    p.insert("dn.conv2.bias".into(), Tensor::new(vec![cout], rand_vec(rng, cout)).unwrap());
    p.insert("dn.norm2.gamma".into(), Tensor::new(vec![cout], rand_vec(rng, cout)).unwrap());
    p.insert("dn.norm2.beta".into(), Tensor::new(vec![cout], rand_vec(rng, cout)).unwrap());
    p.insert(
        "dn.skip.weight".into(),
        Tensor::new(vec![cout, cin, 1, 1, 1], rand_vec(rng, cout * cin)).unwrap(),
    );
    p.insert("dn.skip.bias".into(), Tensor::new(vec![cout], rand_vec(rng, cout)).unwrap());
    p.insert("dn.skip_norm.gamma".into(), Tensor::new(vec![cout], rand_vec(rng, cout)).unwrap());
    p.insert("dn.skip_norm.beta".into(), Tensor::new(vec![cout], rand_vec(rng, cout)).unwrap());
    p
}

#[test]
fn downsample_block_halves_and_matches_manual_composition() {
    let mut rng = named_rng(13, "down-oracle");
    let params = random_down_block_params(&mut rng, 2, 3);
    let x = rand_vec(&mut rng, 2 * 64);

    let net = adhoc_net(params.clone());
    let mut tape = Tape::new();
    let staged = stage_network(&mut tape, &net, false);
    let xid = tape.leaf(Tensor::new(vec![1, 2, 4, 4, 4], x.clone()).unwrap());
    let got = downsample_block(&mut tape, &staged, "dn", xid).unwrap();
    assert_eq!(tape.value(got).shape(), &[1, 3, 2, 2, 2]);

    // Manual composition from primitives on a fresh tape.
    let mut t2 = Tape::new();
    let p = |t2: &mut Tape, name: &str| t2.leaf(params[name].clone());
    let x2 = t2.leaf(Tensor::new(vec![1, 2, 4, 4, 4], x).unwrap());
    let (w1, b1) = (p(&mut t2, "dn.conv1.weight"), p(&mut t2, "dn.conv1.bias"));
    let (g1, be1) = (p(&mut t2, "dn.norm1.gamma"), p(&mut t2, "dn.norm1.beta"));
    let (w2, b2) = (p(&mut t2, "dn.conv2.weight"), p(&mut t2, "dn.conv2.bias"));
    let (g2, be2) = (p(&mut t2, "dn.norm2.gamma"), p(&mut t2, "dn.norm2.beta"));
    let (ws, bs) = (p(&mut t2, "dn.skip.weight"), p(&mut t2, "dn.skip.bias"));
    let (gs, bes) = (p(&mut t2, "dn.skip_norm.gamma"), p(&mut t2, "dn.skip_norm.beta"));
    let m = t2.conv3d(x2, w1, b1, [1, 1, 1], [1, 1, 1]).unwrap();
    let m = t2.instance_norm(m, g1, be1, IN_EPS).unwrap();
    let m = t2.leaky_relu(m, LRELU_SLOPE).unwrap();
    let m = t2.conv3d(m, w2, b2, [2, 2, 2], [1, 1, 1]).unwrap();
    let m = t2.instance_norm(m, g2, be2, IN_EPS).unwrap();
    let s = t2.conv3d(x2, ws, bs, [2, 2, 2], [0, 0, 0]).unwrap();
    let s = t2.instance_norm(s, gs, bes, IN_EPS).unwrap();
    let sum = t2.add(m, s).unwrap();
    let want = t2.leaky_relu(sum, LRELU_SLOPE).unwrap();

    assert!(tape
        .value(got)
        .values()
        .iter()
        .zip(t2.value(want).values())
        .all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn downsample_block_with_zero_main_branch_reduces_to_skip() {
    let mut rng = named_rng(14, "down-skip");
    let mut params = random_down_block_params(&mut rng, 2, 2);
    for name in [
        "dn.conv1.weight",
        "dn.conv1.bias",
        "dn.norm1.gamma",
        "dn.norm1.beta",
        "dn.conv2.weight",
        "dn.conv2.bias",
        "dn.norm2.gamma",
        "dn.norm2.beta",
    ] {
        params.get_mut(name).unwrap().values_mut().fill(0.0);
    }
    let x = rand_vec(&mut rng, 2 * 8 * 8 * 8);

    let net = adhoc_net(params.clone());
    let mut tape = Tape::new();
    let staged = stage_network(&mut tape, &net, false);
    let xid = tape.leaf(Tensor::new(vec![1, 2, 8, 8, 8], x.clone()).unwrap());
    let got = downsample_block(&mut tape, &staged, "dn", xid).unwrap();
    assert_eq!(tape.value(got).shape(), &[1, 2, 4, 4, 4]);

    let mut t2 = Tape::new();
    let x2 = t2.leaf(Tensor::new(vec![1, 2, 8, 8, 8], x).unwrap());
    let ws = t2.leaf(params["dn.skip.weight"].clone());
    let bs = t2.leaf(params["dn.skip.bias"].clone());
    let gs = t2.leaf(params["dn.skip_norm.gamma"].clone());
    let bes = t2.leaf(params["dn.skip_norm.beta"].clone());
    let s = t2.conv3d(x2, ws, bs, [2, 2, 2], [0, 0, 0]).unwrap();
    let s = t2.instance_norm(s, gs, bes, IN_EPS).unwrap();
    let want = t2.leaky_relu(s, LRELU_SLOPE).unwrap();
    assert_eq!(tape.value(got).values(), t2.value(want).values());

    // Odd spatial input is rejected.
    let odd = tape.leaf(Tensor::zeros(vec![1, 2, 3, 4, 4]));
    assert!(downsample_block(&mut tape, &staged, "dn", odd).is_err());
}

#[test]
fn upsample_stage_shape_contract_and_manual_composition() {
    // Stage 0 of the minimal config: 2 -> 2 channels across a 2x upsample.
    let config = minimal_config();
    let net = build_stunet(&config, &mut named_rng(15, "init-net1")).unwrap();
    let mut rng = named_rng(15, "up-oracle");
    let x = rand_vec(&mut rng, 2 * 8);
    let skip = rand_vec(&mut rng, 2 * 64);

    let mut tape = Tape::new();
    let staged = stage_network(&mut tape, &net, false);
    let xid = tape.leaf(Tensor::new(vec![1, 2, 2, 2, 2], x.clone()).unwrap());
    let sid = tape.leaf(Tensor::new(vec![1, 2, 4, 4, 4], skip.clone()).unwrap());
    let got = upsample_stage(&mut tape, &staged, 0, xid, sid).unwrap();
    assert_eq!(tape.value(got).shape(), &[1, 2, 4, 4, 4]);

    let mut t2 = Tape::new();
    let staged2 = stage_network(&mut t2, &net, false);
    let x2 = t2.leaf(Tensor::new(vec![1, 2, 2, 2, 2], x).unwrap());
    let s2 = t2.leaf(Tensor::new(vec![1, 2, 4, 4, 4], skip).unwrap());
    let up = t2.nearest_upsample2x(x2).unwrap();
    let uw = t2.leaf(net.params["dec0.up.weight"].clone());
    let ub = t2.leaf(net.params["dec0.up.bias"].clone());
    let up = t2.conv3d(up, uw, ub, [1, 1, 1], [0, 0, 0]).unwrap();
    let cat = t2.concat_channels(up, s2).unwrap();
    let want = residual_block(&mut t2, &staged2, "dec0.block0", cat).unwrap();
    assert_eq!(tape.value(got).values(), t2.value(want).values());

    // Mismatched skip shape is rejected.
    let bad_skip = tape.leaf(Tensor::zeros(vec![1, 2, 8, 8, 8]));
    assert!(upsample_stage(&mut tape, &staged, 0, xid, bad_skip).is_err());
}

// --- persistence ---

#[test]
fn checkpoint_round_trips_bitwise_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    let config = minimal_config();
    let net = build_stunet(&config, &mut named_rng(21, "init-net1")).unwrap();
    checkpoint::save_network(&path, &net, 21).unwrap();

    let (loaded, seed) = checkpoint::load_network(&path).unwrap();
    assert_eq!(seed, 21);
    assert_eq!(loaded.config, config);
    assert_eq!(loaded.params, net.params);

    let meta: checkpoint::CheckpointMeta = serde_json::from_str(
        &std::fs::read_to_string(checkpoint::manifest_path(&path)).unwrap(),
    )
    .unwrap();
    assert_eq!(meta.config, config);
    assert_eq!(meta.param_count, net.total_parameters());
}

#[test]
fn truncated_checkpoint_is_an_error_not_a_crash() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    let net = build_stunet(&minimal_config(), &mut named_rng(22, "init-net1")).unwrap();
    checkpoint::save_network(&path, &net, 22).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    let err = checkpoint::load_network(&path).unwrap_err().to_string();
    assert!(err.contains("truncated") || err.contains("missing"), "{err}");
}

#[test]
fn adam_sidecar_round_trips() {
    use liseg_core::tensor::AdamState;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.opt");
    let mut state = AdamState::new(1e-3);
    state.t = 17;
    state.m.insert("a.weight".into(), vec![0.25, -0.5]);
    state.v.insert("a.weight".into(), vec![0.01, 0.02]);
    checkpoint::save_adam(&path, &state).unwrap();
    let loaded = checkpoint::load_adam(&path).unwrap();
    assert_eq!(loaded.t, 17);
    assert_eq!(loaded.lr, 1e-3);
    assert_eq!(loaded.m["a.weight"], vec![0.25, -0.5]);
    assert_eq!(loaded.v["a.weight"], vec![0.01, 0.02]);
}

// --- gradients through whole blocks ---

#[test]
fn gradcheck_through_down_and_up_blocks() {
    let mut rng = named_rng(31, "gc-blocks");
    let config = minimal_config();
    let net = build_stunet(&config, &mut named_rng(31, "init-net1")).unwrap();
    let x = Tensor::new(vec![1, 1, 4, 4, 4], rand_vec(&mut rng, 64)).unwrap();
    // Differentiate w.r.t. the input through enc0 + enc1.down + dec0-style
    // upsample against the enc0 skip (a realistic two-level subnetwork).
    let report = grad_check(
        |tape, ids| {
            let staged = stage_network(tape, &net, false);
            let e0 = residual_block(tape, &staged, "enc0.block0", ids[0])?;
            let e1 = downsample_block(tape, &staged, "enc1.down", e0)?;
            let y = upsample_stage(tape, &staged, 0, e1, e0)?;
            let sq = tape.mul(y, y)?;
            tape.sum(sq)
        },
        &[x],
        GRAD_CHECK_STEP,
    )
    .unwrap();
    assert!(report.max_rel_err < 1e-4, "{report:?}");
}
