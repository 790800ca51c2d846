//! Network construction and the taped forward pass.
//!
//! Inference and training share one forward implementation: inference runs
//! it on a tape whose parameter leaves are non-trainable and simply never
//! calls backward, which guarantees bit-identical values in both modes.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::arch::{param_specs, Init};
use super::config::ModelScaleConfig;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, TensorId};

pub const IN_EPS: f64 = 1e-5;
pub const LRELU_SLOPE: f64 = 0.01;

/// A full parameter set plus the configuration that shapes it.
#[derive(Debug, Clone)]
pub struct NetworkParams {
    pub config: ModelScaleConfig,
    pub params: BTreeMap<String, Tensor>,
}

impl NetworkParams {
    pub fn total_parameters(&self) -> u64 {
        self.params.values().map(|t| t.numel() as u64).sum()
    }
}

/// Initialize a network: He fan-in normals for conv weights, gamma 1,
/// biases and beta 0. Values are drawn in canonical structural order, so a
/// given generator state determines the parameters bitwise.
pub fn build_stunet(config: &ModelScaleConfig, rng: &mut impl Rng) -> Result<NetworkParams> {
    let mut params = BTreeMap::new();
    for spec in param_specs(config)? {
        let values = match spec.init {
            Init::HeNormal { fan_in } => {
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                    .expect("positive std");
                (0..spec.numel()).map(|_| normal.sample(rng)).collect()
            }
            Init::Zero => vec![0.0; spec.numel()],
            Init::One => vec![1.0; spec.numel()],
        };
        params.insert(spec.name.clone(), Tensor::new(spec.shape.clone(), values)?);
    }
    Ok(NetworkParams {
        config: config.clone(),
        params,
    })
}

/// Parameter leaves staged on a tape for one or more forward passes.
pub struct StagedNet {
    pub config: ModelScaleConfig,
    ids: BTreeMap<String, TensorId>,
}

impl StagedNet {
    /// Assemble from explicit name -> tape-id bindings. Lets a caller point
    /// some parameters at leaves it controls (the gradient verification
    /// suite perturbs them) while the block builders below stay unchanged.
    pub fn from_ids(config: ModelScaleConfig, ids: BTreeMap<String, TensorId>) -> Self {
        StagedNet { config, ids }
    }

    fn id(&self, name: &str) -> Result<TensorId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name}")))
    }

    fn has(&self, name: &str) -> bool {
        self.ids.contains_key(name)
    }

    /// Iterate (name, id) pairs in name order, e.g. to collect gradients.
    pub fn param_ids(&self) -> impl Iterator<Item = (&str, TensorId)> {
        self.ids.iter().map(|(n, &id)| (n.as_str(), id))
    }
}

/// Put every parameter on the tape. Trainable staging marks the leaves for
/// gradient retention; staging once and reusing the ids across several
/// forward passes accumulates gradients over all of them.
pub fn stage_network(tape: &mut Tape, net: &NetworkParams, trainable: bool) -> StagedNet {
    let mut ids = BTreeMap::new();
    for (name, tensor) in &net.params {
        let t = if trainable {
            tensor.clone().with_grad()
        } else {
            tensor.clone()
        };
        ids.insert(name.clone(), tape.leaf(t));
    }
    StagedNet {
        config: net.config.clone(),
        ids,
    }
}

/// Residual block: x + (conv3 -> IN -> LeakyReLU -> conv3 -> IN)(x), then a
/// final LeakyReLU. The skip is the identity, or a 1x1x1 projection with IN
/// when the block changes channel count.
pub fn residual_block(
    tape: &mut Tape,
    net: &StagedNet,
    prefix: &str,
    x: TensorId,
) -> Result<TensorId> {
    let y = tape.conv3d(
        x,
        net.id(&format!("{prefix}.conv1.weight"))?,
        net.id(&format!("{prefix}.conv1.bias"))?,
        [1, 1, 1],
        [1, 1, 1],
    )?;
    let y = tape.instance_norm(
        y,
        net.id(&format!("{prefix}.norm1.gamma"))?,
        net.id(&format!("{prefix}.norm1.beta"))?,
        IN_EPS,
    )?;
    let y = tape.leaky_relu(y, LRELU_SLOPE)?;
    let y = tape.conv3d(
        y,
        net.id(&format!("{prefix}.conv2.weight"))?,
        net.id(&format!("{prefix}.conv2.bias"))?,
        [1, 1, 1],
        [1, 1, 1],
    )?;
    let y = tape.instance_norm(
        y,
        net.id(&format!("{prefix}.norm2.gamma"))?,
        net.id(&format!("{prefix}.norm2.beta"))?,
        IN_EPS,
    )?;
    let skip = if net.has(&format!("{prefix}.proj.weight")) {
        let s = tape.conv3d(
            x,
            net.id(&format!("{prefix}.proj.weight"))?,
            net.id(&format!("{prefix}.proj.bias"))?,
            [1, 1, 1],
            [0, 0, 0],
        )?;
        tape.instance_norm(
            s,
            net.id(&format!("{prefix}.proj_norm.gamma"))?,
            net.id(&format!("{prefix}.proj_norm.beta"))?,
            IN_EPS,
        )?
    } else {
        x
    };
    let y = tape.add(y, skip)?;
    tape.leaky_relu(y, LRELU_SLOPE)
}

/// Downsampling block: main branch conv3(stride 1) -> IN -> LeakyReLU ->
/// conv3(stride 2) -> IN, skip branch conv1(stride 2) -> IN, summed and
/// activated. Input spatial dims must be even.
pub fn downsample_block(
    tape: &mut Tape,
    net: &StagedNet,
    prefix: &str,
    x: TensorId,
) -> Result<TensorId> {
    let [_, _, d, h, w] = tape.value(x).dims5()?;
    if d % 2 != 0 || h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "{prefix}: downsampling needs even spatial dims, got {d}x{h}x{w}"
        )));
    }
    let y = tape.conv3d(
        x,
        net.id(&format!("{prefix}.conv1.weight"))?,
        net.id(&format!("{prefix}.conv1.bias"))?,
        [1, 1, 1],
        [1, 1, 1],
    )?;
    let y = tape.instance_norm(
        y,
        net.id(&format!("{prefix}.norm1.gamma"))?,
        net.id(&format!("{prefix}.norm1.beta"))?,
        IN_EPS,
    )?;
    let y = tape.leaky_relu(y, LRELU_SLOPE)?;
    let y = tape.conv3d(
        y,
        net.id(&format!("{prefix}.conv2.weight"))?,
        net.id(&format!("{prefix}.conv2.bias"))?,
        [2, 2, 2],
        [1, 1, 1],
    )?;
    let y = tape.instance_norm(
        y,
        net.id(&format!("{prefix}.norm2.gamma"))?,
        net.id(&format!("{prefix}.norm2.beta"))?,
        IN_EPS,
    )?;
    let s = tape.conv3d(
        x,
        net.id(&format!("{prefix}.skip.weight"))?,
        net.id(&format!("{prefix}.skip.bias"))?,
        [2, 2, 2],
        [0, 0, 0],
    )?;
    let s = tape.instance_norm(
        s,
        net.id(&format!("{prefix}.skip_norm.gamma"))?,
        net.id(&format!("{prefix}.skip_norm.beta"))?,
        IN_EPS,
    )?;
    let y = tape.add(y, s)?;
    tape.leaky_relu(y, LRELU_SLOPE)
}

/// Decoder stage: nearest 2x upsampling, 1x1x1 channel-reducing convolution,
/// concatenation with the encoder skip (upsampled features first), then the
/// stage's residual blocks.
pub fn upsample_stage(
    tape: &mut Tape,
    net: &StagedNet,
    stage: usize,
    x: TensorId,
    skip: TensorId,
) -> Result<TensorId> {
    let xs = tape.value(x).dims5()?;
    let ss = tape.value(skip).dims5()?;
    if [2 * xs[2], 2 * xs[3], 2 * xs[4]] != [ss[2], ss[3], ss[4]] {
        return Err(Error::shape(
            format!("dec{stage} skip"),
            format!("{}x{}x{}", 2 * xs[2], 2 * xs[3], 2 * xs[4]),
            format!("{}x{}x{}", ss[2], ss[3], ss[4]),
        ));
    }
    let y = tape.nearest_upsample2x(x)?;
    let y = tape.conv3d(
        y,
        net.id(&format!("dec{stage}.up.weight"))?,
        net.id(&format!("dec{stage}.up.bias"))?,
        [1, 1, 1],
        [0, 0, 0],
    )?;
    let mut y = tape.concat_channels(y, skip)?;
    for j in 0..net.config.depths[stage] {
        y = residual_block(tape, net, &format!("dec{stage}.block{j}"), y)?;
    }
    Ok(y)
}

/// Full forward pass: volume in, per-class logits at input resolution out.
pub fn forward(tape: &mut Tape, net: &StagedNet, input: TensorId) -> Result<TensorId> {
    let [_, c, d, h, w] = tape.value(input).dims5()?;
    if c != net.config.in_channels {
        return Err(Error::shape(
            "forward input channels",
            format!("{}", net.config.in_channels),
            format!("{c}"),
        ));
    }
    if d % 32 != 0 || h % 32 != 0 || w % 32 != 0 {
        return Err(Error::InvalidArgument(format!(
            "forward: spatial dims {d}x{h}x{w} must be divisible by 32; \
             pad the volume (the patch sampler pads with the volume minimum)"
        )));
    }

    let mut x = input;
    let mut skips = Vec::with_capacity(5);
    for j in 0..net.config.depths[0] {
        x = residual_block(tape, net, &format!("enc0.block{j}"), x)?;
    }
    for i in 1..6 {
        skips.push(x);
        x = downsample_block(tape, net, &format!("enc{i}.down"), x)?;
        for j in 1..net.config.depths[i] {
            x = residual_block(tape, net, &format!("enc{i}.block{j}"), x)?;
        }
    }
    for i in (0..5).rev() {
        x = upsample_stage(tape, net, i, x, skips[i])?;
    }
    tape.conv3d(
        x,
        net.id("head.weight")?,
        net.id("head.bias")?,
        [1, 1, 1],
        [0, 0, 0],
    )
}

/// Convenience inference entry point: stages the network on a private tape,
/// runs the shared forward pass, and returns the logits.
pub fn infer_logits(net: &NetworkParams, patch: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let staged = stage_network(&mut tape, net, false);
    let input = tape.leaf(patch.clone());
    let logits = forward(&mut tape, &staged, input)?;
    Ok(tape.value(logits).clone())
}
