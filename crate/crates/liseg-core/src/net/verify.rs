//! Finite-difference verification of every differentiable operation, plus
//! one composed residual/down/up subnetwork checked end to end against all
//! of its parameters. Shared by the test suite and `liseg verify gradcheck`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::arch::{param_specs, Init};
use super::config::ModelScaleConfig;
use super::model::{downsample_block, residual_block, upsample_stage, StagedNet};
use crate::error::{Error, Result};
use crate::rng::{case_seed, named_rng};
use crate::tensor::{grad_check, GradCheckReport, Tape, Tensor, TensorId, GRAD_CHECK_STEP};

/// Maximum relative error accepted from any analytic/finite-difference pair.
pub const GRADIENT_TOLERANCE: f64 = 1e-4;

/// Smallest accepted distance between any leaky-relu input and its kink at
/// the composed check's evaluation point: 200× the probe step, so no ±h
/// perturbation (whose effect on a pre-activation is O(h) here) can cross
/// the kink and invalidate the central difference.
const KINK_GUARD: f64 = 2e-3;

#[derive(Debug, Clone)]
pub struct OpCheck {
    pub name: &'static str,
    pub report: GradCheckReport,
}

impl OpCheck {
    pub fn passes(&self) -> bool {
        self.report.passes(GRADIENT_TOLERANCE)
    }
}

fn rand_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Values bounded away from zero so a ±h perturbation cannot cross the
/// LeakyReLU kink, where finite differences are invalid.
fn rand_vec_off_zero(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect()
}

/// The tiniest config the block builders accept; the composed check routes
/// every one of its first-two-stage parameters through the perturbed inputs.
fn check_config() -> ModelScaleConfig {
    ModelScaleConfig {
        name: "gradcheck".into(),
        depths: [1; 6],
        widths: [2; 6],
        num_classes: 2,
        in_channels: 1,
    }
}

/// Initialize (name, tensor) pairs for every parameter under the given
/// prefixes, drawing from the same distributions the real builder uses.
fn block_params(
    config: &ModelScaleConfig,
    prefixes: &[&str],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(String, Tensor)>> {
    let mut out = Vec::new();
    for spec in param_specs(config)? {
        if !prefixes.iter().any(|p| spec.name.starts_with(p)) {
            continue;
        }
        let values = match spec.init {
            Init::HeNormal { fan_in } => {
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                (0..spec.numel()).map(|_| normal.sample(rng)).collect()
            }
            Init::Zero => vec![0.0; spec.numel()],
            Init::One => vec![1.0; spec.numel()],
        };
        out.push((spec.name, Tensor::new(spec.shape, values)?));
    }
    Ok(out)
}

/// Run the whole suite with inputs drawn from `seed`. Every check compares
/// analytic gradients against central finite differences over every element
/// of every input; see each entry for what it exercises.
pub fn gradient_suite(seed: u64) -> Result<Vec<OpCheck>> {
    let mut checks = Vec::new();
    let h = GRAD_CHECK_STEP;

    {
        let mut rng = named_rng(seed, "gc-lrelu");
        let x = Tensor::new(vec![1, 1, 4, 4, 4], rand_vec_off_zero(&mut rng, 64))?;
        checks.push(OpCheck {
            name: "leaky_relu",
            report: grad_check(
                |tape, ids| {
                    let y = tape.leaky_relu(ids[0], 0.01)?;
                    let sq = tape.mul(y, y)?;
                    tape.sum(sq)
                },
                &[x],
                h,
            )?,
        });
    }

    {
        let mut rng = named_rng(seed, "gc-conv");
        let x = Tensor::new(vec![1, 2, 4, 4, 4], rand_vec(&mut rng, 128))?;
        let w = Tensor::new(vec![2, 2, 3, 3, 3], rand_vec(&mut rng, 108))?;
        let b = Tensor::new(vec![2], rand_vec(&mut rng, 2))?;
        checks.push(OpCheck {
            name: "conv3d",
            report: grad_check(
                |tape, ids| {
                    let y = tape.conv3d(ids[0], ids[1], ids[2], [1, 1, 1], [1, 1, 1])?;
                    let sq = tape.mul(y, y)?;
                    tape.sum(sq)
                },
                &[x, w, b],
                h,
            )?,
        });
    }

    {
        let mut rng = named_rng(seed, "gc-conv-s2");
        let x = Tensor::new(vec![1, 1, 4, 4, 4], rand_vec(&mut rng, 64))?;
        let w = Tensor::new(vec![2, 1, 3, 3, 3], rand_vec(&mut rng, 54))?;
        let b = Tensor::new(vec![2], rand_vec(&mut rng, 2))?;
        checks.push(OpCheck {
            name: "conv3d_stride2",
            report: grad_check(
                |tape, ids| {
                    let y = tape.conv3d(ids[0], ids[1], ids[2], [2, 2, 2], [1, 1, 1])?;
                    let sq = tape.mul(y, y)?;
                    tape.sum(sq)
                },
                &[x, w, b],
                h,
            )?,
        });
    }

    {
        let mut rng = named_rng(seed, "gc-in");
        let x = Tensor::new(vec![1, 2, 3, 3, 3], rand_vec(&mut rng, 54))?;
        let g = Tensor::new(vec![2], vec![1.3, 0.7])?;
        let b = Tensor::new(vec![2], vec![0.1, -0.2])?;
        checks.push(OpCheck {
            name: "instance_norm",
            report: grad_check(
                |tape, ids| {
                    let y = tape.instance_norm(ids[0], ids[1], ids[2], 1e-5)?;
                    let sq = tape.mul(y, y)?;
                    tape.sum(sq)
                },
                &[x, g, b],
                h,
            )?,
        });
    }

    {
        let mut rng = named_rng(seed, "gc-up");
        let x = Tensor::new(vec![1, 2, 2, 2, 2], rand_vec(&mut rng, 16))?;
        checks.push(OpCheck {
            name: "nearest_upsample2x",
            report: grad_check(
                |tape, ids| {
                    let y = tape.nearest_upsample2x(ids[0])?;
                    let sq = tape.mul(y, y)?;
                    tape.sum(sq)
                },
                &[x],
                h,
            )?,
        });
    }

    {
        let mut rng = named_rng(seed, "gc-ce");
        let logits = Tensor::new(vec![1, 3, 2, 2, 2], rand_vec(&mut rng, 24))?;
        let targets: Vec<u8> = (0..8).map(|_| rng.gen_range(0..3)).collect();
        checks.push(OpCheck {
            name: "softmax_cross_entropy",
            report: grad_check(
                |tape, ids| {
                    let p = tape.softmax_channels(ids[0])?;
                    tape.cross_entropy(p, &targets)
                },
                &[logits],
                h,
            )?,
        });
    }

    {
        let mut rng = named_rng(seed, "gc-elem");
        let a = Tensor::new(vec![1, 2, 2, 2, 2], rand_vec(&mut rng, 16))?;
        let b = Tensor::new(vec![1, 1, 2, 2, 2], rand_vec(&mut rng, 8))?;
        let c = Tensor::new(vec![1, 3, 2, 2, 2], rand_vec(&mut rng, 24))?;
        checks.push(OpCheck {
            name: "add_mul_scale_concat_sum",
            report: grad_check(
                |tape, ids| {
                    let y = tape.concat_channels(ids[0], ids[1])?;
                    let y = tape.scale(y, -1.75)?;
                    let y = tape.add(y, ids[2])?;
                    let y = tape.mul(y, ids[2])?;
                    tape.sum(y)
                },
                &[a, b, c],
                h,
            )?,
        });
    }

    {
        // Residual block -> downsampling block -> upsample stage (which
        // concatenates the skip and applies the decoder residual block),
        // differentiated against the input and all 38 parameter tensors.
        //
        // Unlike the single-op checks, this chain has interior leaky-relu
        // pre-activations that no input conditioning can keep away from the
        // kink, so draws are resampled until the evaluation point clears
        // KINK_GUARD on a probe tape. Finite differences are only defined
        // at locally smooth points; a draw that fails the margin is not a
        // wrong gradient, it is an invalid measurement point.
        let config = check_config();
        let chain = |tape: &mut Tape,
                     config: &ModelScaleConfig,
                     names: &[String],
                     ids: &[TensorId]|
         -> Result<TensorId> {
            let map: BTreeMap<String, _> =
                names.iter().cloned().zip(ids[1..].iter().copied()).collect();
            let net = StagedNet::from_ids(config.clone(), map);
            let e0 = residual_block(tape, &net, "enc0.block0", ids[0])?;
            let e1 = downsample_block(tape, &net, "enc1.down", e0)?;
            let y = upsample_stage(tape, &net, 0, e1, e0)?;
            let sq = tape.mul(y, y)?;
            tape.sum(sq)
        };
        let mut chosen = None;
        for attempt in 0..64 {
            let mut rng = named_rng(case_seed(seed, "gc-blocks", attempt), "gc-blocks");
            let named = block_params(
                &config,
                &["enc0.block0", "enc1.down", "dec0.up", "dec0.block0"],
                &mut rng,
            )?;
            let mut inputs = vec![Tensor::new(vec![1, 1, 4, 4, 4], rand_vec(&mut rng, 64))?];
            inputs.extend(named.iter().map(|(_, t)| t.clone()));
            let names: Vec<String> = named.iter().map(|(n, _)| n.clone()).collect();
            let mut probe = Tape::new();
            let ids: Vec<TensorId> = inputs.iter().map(|t| probe.leaf(t.clone())).collect();
            chain(&mut probe, &config, &names, &ids)?;
            if probe.kink_margin() > KINK_GUARD {
                chosen = Some((names, inputs));
                break;
            }
        }
        let (names, inputs) = chosen.ok_or_else(|| {
            Error::InvalidArgument(format!(
                "no kink-safe evaluation point for the block chain in 64 draws at seed {seed}"
            ))
        })?;
        checks.push(OpCheck {
            name: "residual_down_up_chain",
            report: grad_check(
                |tape, ids| chain(tape, &config, &names, ids),
                &inputs,
                h,
            )?,
        });
    }

    Ok(checks)
}
