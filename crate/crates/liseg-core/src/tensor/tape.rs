//! Single-use computation tape for reverse-mode differentiation.
//!
//! Ops append nodes in execution order, so node indices are already a
//! topological order and the backward pass is one reverse scan that visits
//! each node exactly once. Gradients accumulate additively across fan-out.
//! Intermediate gradient buffers are dropped as soon as their node has been
//! processed; leaf gradients stay retrievable until the tape is dropped.

use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a specific [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

enum Op {
    Leaf,
    Conv3d {
        input: TensorId,
        weight: TensorId,
        bias: TensorId,
        stride: [usize; 3],
        pad: [usize; 3],
    },
    InstanceNorm {
        input: TensorId,
        gamma: TensorId,
        beta: TensorId,
        means: Vec<f64>,
        inv_stds: Vec<f64>,
    },
    LeakyRelu {
        input: TensorId,
        slope: f64,
    },
    Upsample2x {
        input: TensorId,
    },
    SoftmaxChannels {
        input: TensorId,
    },
    CrossEntropy {
        probs: TensorId,
        targets: Vec<u8>,
    },
    Add {
        a: TensorId,
        b: TensorId,
    },
    Mul {
        a: TensorId,
        b: TensorId,
    },
    Scale {
        input: TensorId,
        factor: f64,
    },
    Sum {
        input: TensorId,
    },
    ConcatChannels {
        a: TensorId,
        b: TensorId,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last backward() loss w.r.t. this node, if retained.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Distance of the recorded evaluation point from the nearest activation
    /// kink: the smallest |x| over all leaky-relu input elements (infinity if
    /// the tape has none). Finite-difference gradient checks require this to
    /// exceed the probe step by a safe factor, or the secant straddles the
    /// kink and estimates a blend of the two slopes.
    pub fn kink_margin(&self) -> f64 {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::LeakyRelu { input, .. } => Some(input),
                _ => None,
            })
            .flat_map(|input| self.nodes[input.0].value.values())
            .fold(f64::INFINITY, |m, &x| m.min(x.abs()))
    }

    /// Clone a node's tensor together with its accumulated gradient.
    pub fn detach_with_grad(&self, id: TensorId) -> Tensor {
        let mut t = self.nodes[id.0].value.clone();
        t.set_grad(self.grad(id).map(<[f64]>::to_vec));
        t
    }

    pub fn leaf(&mut self, value: Tensor) -> TensorId {
        let requires_grad = value.requires_grad();
        self.push(value, Op::Leaf, requires_grad)
    }

    // Non-finite values are allowed to flow: overflow during training is a
    // runtime event the trainer detects at the loss (and Adam at the
    // gradients), not a tape invariant.
    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> TensorId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn needs_grad(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    pub fn conv3d(
        &mut self,
        input: TensorId,
        weight: TensorId,
        bias: TensorId,
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Result<TensorId> {
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        let (out, oshape) = kernels::conv3d_forward(
            x.values(),
            x.dims5()?,
            w.values(),
            w.dims5()?,
            b.values(),
            stride,
            pad,
        )?;
        let rg = self.needs_grad(&[input, weight, bias]);
        Ok(self.push(
            Tensor::new(oshape.to_vec(), out)?,
            Op::Conv3d {
                input,
                weight,
                bias,
                stride,
                pad,
            },
            rg,
        ))
    }

    pub fn instance_norm(
        &mut self,
        input: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
    ) -> Result<TensorId> {
        let x = self.value(input);
        let g = self.value(gamma);
        let b = self.value(beta);
        let (out, means, inv_stds) =
            kernels::instance_norm_forward(x.values(), x.dims5()?, g.values(), b.values(), eps)?;
        let shape = x.shape().to_vec();
        let rg = self.needs_grad(&[input, gamma, beta]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::InstanceNorm {
                input,
                gamma,
                beta,
                means,
                inv_stds,
            },
            rg,
        ))
    }

    pub fn leaky_relu(&mut self, input: TensorId, slope: f64) -> Result<TensorId> {
        if !(0.0..1.0).contains(&slope) {
            return Err(Error::InvalidArgument(format!(
                "leaky_relu: slope {slope} outside [0, 1)"
            )));
        }
        let x = self.value(input);
        let out = kernels::leaky_relu_forward(x.values(), slope);
        let shape = x.shape().to_vec();
        let rg = self.needs_grad(&[input]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LeakyRelu { input, slope },
            rg,
        ))
    }

    pub fn nearest_upsample2x(&mut self, input: TensorId) -> Result<TensorId> {
        let x = self.value(input);
        let (out, oshape) = kernels::nearest_upsample2x_forward(x.values(), x.dims5()?);
        let rg = self.needs_grad(&[input]);
        Ok(self.push(
            Tensor::new(oshape.to_vec(), out)?,
            Op::Upsample2x { input },
            rg,
        ))
    }

    pub fn softmax_channels(&mut self, input: TensorId) -> Result<TensorId> {
        let x = self.value(input);
        let dims = x.dims5()?;
        if dims[1] < 2 {
            return Err(Error::InvalidArgument(
                "softmax_channels: need at least 2 channels".into(),
            ));
        }
        let out = kernels::softmax_channels_forward(x.values(), dims);
        let shape = x.shape().to_vec();
        let rg = self.needs_grad(&[input]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::SoftmaxChannels { input },
            rg,
        ))
    }

    /// Scalar mean cross-entropy of per-voxel class probabilities against
    /// integer targets of shape (N, D, H, W). Targets carry no gradient.
    pub fn cross_entropy(&mut self, probs: TensorId, targets: &[u8]) -> Result<TensorId> {
        let p = self.value(probs);
        let loss = kernels::cross_entropy_forward(p.values(), p.dims5()?, targets)?;
        let rg = self.needs_grad(&[probs]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                probs,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                "add",
                format!("{:?}", ta.shape()),
                format!("{:?}", tb.shape()),
            ));
        }
        let out: Vec<f64> = ta.values().iter().zip(tb.values()).map(|(x, y)| x + y).collect();
        let shape = ta.shape().to_vec();
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Add { a, b }, rg))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                "mul",
                format!("{:?}", ta.shape()),
                format!("{:?}", tb.shape()),
            ));
        }
        let out: Vec<f64> = ta.values().iter().zip(tb.values()).map(|(x, y)| x * y).collect();
        let shape = ta.shape().to_vec();
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, input: TensorId, factor: f64) -> Result<TensorId> {
        let x = self.value(input);
        let out: Vec<f64> = x.values().iter().map(|v| factor * v).collect();
        let shape = x.shape().to_vec();
        let rg = self.needs_grad(&[input]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Scale { input, factor }, rg))
    }

    pub fn sum(&mut self, input: TensorId) -> Result<TensorId> {
        let x = self.value(input);
        let total = kernels::sum_fixed(x.values());
        let rg = self.needs_grad(&[input]);
        Ok(self.push(Tensor::scalar(total), Op::Sum { input }, rg))
    }

    /// Concatenate two (N, C, D, H, W) tensors along the channel axis.
    pub fn concat_channels(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ta, tb) = (self.value(a), self.value(b));
        let [na, ca, da, ha, wa] = ta.dims5()?;
        let [nb, cb, db, hb, wb] = tb.dims5()?;
        if (na, da, ha, wa) != (nb, db, hb, wb) {
            return Err(Error::shape(
                "concat_channels",
                format!("{:?}", ta.shape()),
                format!("{:?}", tb.shape()),
            ));
        }
        let vol = da * ha * wa;
        let mut out = vec![0.0; na * (ca + cb) * vol];
        for ni in 0..na {
            let dst = &mut out[ni * (ca + cb) * vol..][..(ca + cb) * vol];
            dst[..ca * vol].copy_from_slice(&ta.values()[ni * ca * vol..][..ca * vol]);
            dst[ca * vol..].copy_from_slice(&tb.values()[ni * cb * vol..][..cb * vol]);
        }
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(
            Tensor::new(vec![na, ca + cb, da, ha, wa], out)?,
            Op::ConcatChannels { a, b },
            rg,
        ))
    }

    fn accumulate(&mut self, id: TensorId, contribution: &[f64]) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut self.grads[id.0] {
            Some(buf) => {
                for (g, &c) in buf.iter_mut().zip(contribution) {
                    *g += c;
                }
            }
            slot => *slot = Some(contribution.to_vec()),
        }
    }

    fn accumulate_owned(&mut self, id: TensorId, contribution: Vec<f64>) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut self.grads[id.0] {
            Some(buf) => {
                for (g, c) in buf.iter_mut().zip(contribution) {
                    *g += c;
                }
            }
            slot => *slot = Some(contribution),
        }
    }

    /// Reverse accumulation from a scalar loss node. Leaf gradients are kept
    /// on the tape; intermediate gradients are freed as they are consumed.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::InvalidArgument(
                "backward: loss must be a scalar".into(),
            ));
        }
        self.grads = Vec::with_capacity(self.nodes.len());
        self.grads.resize(self.nodes.len(), None);
        self.grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                self.grads[i] = None;
                continue;
            }
            let gout = if matches!(self.nodes[i].op, Op::Leaf) {
                continue; // leaf grads stay resident
            } else {
                match self.grads[i].take() {
                    Some(g) => g,
                    None => continue, // node not on any path to the loss
                }
            };

            match &self.nodes[i].op {
                Op::Leaf => unreachable!(),
                Op::Conv3d {
                    input,
                    weight,
                    bias,
                    stride,
                    pad,
                } => {
                    let (input, weight, bias, stride, pad) = (*input, *weight, *bias, *stride, *pad);
                    let oshape = self.nodes[i].value.dims5()?;
                    let ishape = self.value(input).dims5()?;
                    let wshape = self.value(weight).dims5()?;
                    if self.nodes[input.0].requires_grad {
                        let gin = kernels::conv3d_backward_input(
                            &gout,
                            oshape,
                            self.value(weight).values(),
                            wshape,
                            ishape,
                            stride,
                            pad,
                        );
                        self.accumulate_owned(input, gin);
                    }
                    if self.nodes[weight.0].requires_grad {
                        let gw = kernels::conv3d_backward_weight(
                            self.value(input).values(),
                            ishape,
                            &gout,
                            oshape,
                            wshape,
                            stride,
                            pad,
                        );
                        self.accumulate_owned(weight, gw);
                    }
                    if self.nodes[bias.0].requires_grad {
                        let gb = kernels::conv3d_backward_bias(&gout, oshape);
                        self.accumulate_owned(bias, gb);
                    }
                }
                Op::InstanceNorm {
                    input,
                    gamma,
                    beta,
                    means,
                    inv_stds,
                } => {
                    let (input, gamma, beta) = (*input, *gamma, *beta);
                    let ishape = self.value(input).dims5()?;
                    let (gin, dgamma, dbeta) = kernels::instance_norm_backward(
                        self.value(input).values(),
                        ishape,
                        self.value(gamma).values(),
                        means,
                        inv_stds,
                        &gout,
                    );
                    self.accumulate_owned(input, gin);
                    self.accumulate_owned(gamma, dgamma);
                    self.accumulate_owned(beta, dbeta);
                }
                Op::LeakyRelu { input, slope } => {
                    let (input, slope) = (*input, *slope);
                    let gin =
                        kernels::leaky_relu_backward(self.value(input).values(), slope, &gout);
                    self.accumulate_owned(input, gin);
                }
                Op::Upsample2x { input } => {
                    let input = *input;
                    let ishape = self.value(input).dims5()?;
                    let gin = kernels::nearest_upsample2x_backward(&gout, ishape);
                    self.accumulate_owned(input, gin);
                }
                Op::SoftmaxChannels { input } => {
                    let input = *input;
                    let oshape = self.nodes[i].value.dims5()?;
                    let gin = kernels::softmax_channels_backward(
                        self.nodes[i].value.values(),
                        oshape,
                        &gout,
                    );
                    self.accumulate_owned(input, gin);
                }
                Op::CrossEntropy { probs, targets } => {
                    let probs = *probs;
                    let pshape = self.value(probs).dims5()?;
                    let gin = kernels::cross_entropy_backward(
                        self.value(probs).values(),
                        pshape,
                        targets,
                        gout[0],
                    );
                    self.accumulate_owned(probs, gin);
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    self.accumulate(a, &gout);
                    self.accumulate_owned(b, gout);
                }
                Op::Mul { a, b } => {
                    let (a, b) = (*a, *b);
                    let ga: Vec<f64> = gout
                        .iter()
                        .zip(self.value(b).values())
                        .map(|(&g, &bv)| g * bv)
                        .collect();
                    let gb: Vec<f64> = gout
                        .iter()
                        .zip(self.value(a).values())
                        .map(|(&g, &av)| g * av)
                        .collect();
                    self.accumulate_owned(a, ga);
                    self.accumulate_owned(b, gb);
                }
                Op::Scale { input, factor } => {
                    let (input, factor) = (*input, *factor);
                    let gin: Vec<f64> = gout.iter().map(|&g| factor * g).collect();
                    self.accumulate_owned(input, gin);
                }
                Op::Sum { input } => {
                    let input = *input;
                    let gin = vec![gout[0]; self.value(input).numel()];
                    self.accumulate_owned(input, gin);
                }
                Op::ConcatChannels { a, b } => {
                    let (a, b) = (*a, *b);
                    let [n, ca, d, h, w] = self.value(a).dims5()?;
                    let cb = self.value(b).dims5()?[1];
                    let vol = d * h * w;
                    let mut ga = vec![0.0; n * ca * vol];
                    let mut gb = vec![0.0; n * cb * vol];
                    for ni in 0..n {
                        let src = &gout[ni * (ca + cb) * vol..][..(ca + cb) * vol];
                        ga[ni * ca * vol..][..ca * vol].copy_from_slice(&src[..ca * vol]);
                        gb[ni * cb * vol..][..cb * vol].copy_from_slice(&src[ca * vol..]);
                    }
                    self.accumulate_owned(a, ga);
                    self.accumulate_owned(b, gb);
                }
            }
        }
        Ok(())
    }
}
