//! Pure numeric kernels shared by the taped (training) and untaped
//! (inference) execution paths.
//!
//! Floating-point accumulation orders are fixed: per output voxel,
//! convolution accumulates contributions in (ci, kd, kh, kw) order with the
//! bias added last, and reductions go through [`sum_fixed`] / [`dot_fixed`].
//! Identical inputs therefore produce bitwise-identical outputs.

use crate::error::{Error, Result};

/// Sum with a fixed 4-lane accumulation order.
#[inline]
pub fn sum_fixed(xs: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut chunks = xs.chunks_exact(4);
    for c in &mut chunks {
        acc[0] += c[0];
        acc[1] += c[1];
        acc[2] += c[2];
        acc[3] += c[3];
    }
    let mut total = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for &x in chunks.remainder() {
        total += x;
    }
    total
}

/// Dot product with a fixed 4-lane accumulation order and fused multiply-add.
#[inline]
pub fn dot_fixed(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] = x[0].mul_add(y[0], acc[0]);
        acc[1] = x[1].mul_add(y[1], acc[1]);
        acc[2] = x[2].mul_add(y[2], acc[2]);
        acc[3] = x[3].mul_add(y[3], acc[3]);
    }
    let mut total = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        total = x.mul_add(y, total);
    }
    total
}

/// y += a * x, elementwise.
#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = a.mul_add(xi, *yi);
    }
}

/// Valid output index range [lo, hi) for one kernel offset: all o with
/// 0 <= o*stride + k_off - pad < in_len.
#[inline]
fn out_range(out_len: usize, in_len: usize, stride: usize, k_off: usize, pad: usize) -> (usize, usize) {
    let lo = if k_off >= pad {
        0
    } else {
        (pad - k_off).div_ceil(stride)
    };
    let max_in = in_len as isize - 1 + pad as isize - k_off as isize;
    if max_in < 0 {
        return (0, 0);
    }
    let hi = (max_in as usize / stride + 1).min(out_len);
    (lo, hi.max(lo))
}

/// Output spatial dims for a convolution: floor((d + 2p - k)/s) + 1 per axis.
pub fn conv3d_out_dims(
    spatial: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
) -> Result<[usize; 3]> {
    let mut out = [0usize; 3];
    for a in 0..3 {
        let padded = spatial[a] + 2 * pad[a];
        if padded < kernel[a] {
            return Err(Error::InvalidArgument(format!(
                "conv3d: non-positive output dim on axis {a}: input {} pad {} kernel {}",
                spatial[a], pad[a], kernel[a]
            )));
        }
        out[a] = (padded - kernel[a]) / stride[a] + 1;
    }
    Ok(out)
}

fn check_conv_args(
    ishape: [usize; 5],
    wshape: [usize; 5],
    bias_len: usize,
    stride: [usize; 3],
) -> Result<()> {
    if ishape[1] != wshape[1] {
        return Err(Error::shape(
            "conv3d input channels",
            format!("{}", wshape[1]),
            format!("{}", ishape[1]),
        ));
    }
    if bias_len != wshape[0] {
        return Err(Error::shape(
            "conv3d bias",
            format!("{}", wshape[0]),
            format!("{bias_len}"),
        ));
    }
    for a in 0..3 {
        if wshape[2 + a] % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv3d: kernel dims must be odd, got {:?}",
                &wshape[2..]
            )));
        }
        if stride[a] == 0 {
            return Err(Error::InvalidArgument("conv3d: zero stride".into()));
        }
    }
    Ok(())
}

/// Cross-correlation of a (N, Cin, D, H, W) input with (Cout, Cin, kd, kh, kw)
/// weights. Returns the output buffer and its shape.
pub fn conv3d_forward(
    input: &[f64],
    ishape: [usize; 5],
    weight: &[f64],
    wshape: [usize; 5],
    bias: &[f64],
    stride: [usize; 3],
    pad: [usize; 3],
) -> Result<(Vec<f64>, [usize; 5])> {
    check_conv_args(ishape, wshape, bias.len(), stride)?;
    let [n, cin, d, h, w] = ishape;
    let [cout, _, kd, kh, kw] = wshape;
    let [od, oh, ow] = conv3d_out_dims([d, h, w], [kd, kh, kw], stride, pad)?;
    let (ivol, ovol) = (d * h * w, od * oh * ow);
    let mut out = vec![0.0; n * cout * ovol];

    for ni in 0..n {
        for co in 0..cout {
            let oslice = &mut out[(ni * cout + co) * ovol..][..ovol];
            for ci in 0..cin {
                let islice = &input[(ni * cin + ci) * ivol..][..ivol];
                for kdi in 0..kd {
                    let (dlo, dhi) = out_range(od, d, stride[0], kdi, pad[0]);
                    for khi in 0..kh {
                        let (hlo, hhi) = out_range(oh, h, stride[1], khi, pad[1]);
                        for kwi in 0..kw {
                            let (wlo, whi) = out_range(ow, w, stride[2], kwi, pad[2]);
                            if wlo >= whi {
                                continue;
                            }
                            let wv = weight[(((co * cin + ci) * kd + kdi) * kh + khi) * kw + kwi];
                            for odi in dlo..dhi {
                                let id = odi * stride[0] + kdi - pad[0];
                                for ohi in hlo..hhi {
                                    let ih = ohi * stride[1] + khi - pad[1];
                                    let irow = &islice[(id * h + ih) * w..][..w];
                                    let orow = &mut oslice[(odi * oh + ohi) * ow..][..ow];
                                    if stride[2] == 1 {
                                        let iw0 = wlo + kwi - pad[2];
                                        let irun = &irow[iw0..iw0 + (whi - wlo)];
                                        let orun = &mut orow[wlo..whi];
                                        axpy(wv, irun, orun);
                                    } else {
                                        for owi in wlo..whi {
                                            let iw = owi * stride[2] + kwi - pad[2];
                                            orow[owi] = wv.mul_add(irow[iw], orow[owi]);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            let b = bias[co];
            for v in oslice.iter_mut() {
                *v += b;
            }
        }
    }
    Ok((out, [n, cout, od, oh, ow]))
}

/// Gradient w.r.t. the convolution input.
pub fn conv3d_backward_input(
    grad_out: &[f64],
    oshape: [usize; 5],
    weight: &[f64],
    wshape: [usize; 5],
    ishape: [usize; 5],
    stride: [usize; 3],
    pad: [usize; 3],
) -> Vec<f64> {
    let [n, cin, d, h, w] = ishape;
    let [cout, _, kd, kh, kw] = wshape;
    let [_, _, od, oh, ow] = oshape;
    let (ivol, ovol) = (d * h * w, od * oh * ow);
    let mut gin = vec![0.0; n * cin * ivol];

    for ni in 0..n {
        for co in 0..cout {
            let gout = &grad_out[(ni * cout + co) * ovol..][..ovol];
            for ci in 0..cin {
                let gslice = &mut gin[(ni * cin + ci) * ivol..][..ivol];
                for kdi in 0..kd {
                    let (dlo, dhi) = out_range(od, d, stride[0], kdi, pad[0]);
                    for khi in 0..kh {
                        let (hlo, hhi) = out_range(oh, h, stride[1], khi, pad[1]);
                        for kwi in 0..kw {
                            let (wlo, whi) = out_range(ow, w, stride[2], kwi, pad[2]);
                            if wlo >= whi {
                                continue;
                            }
                            let wv = weight[(((co * cin + ci) * kd + kdi) * kh + khi) * kw + kwi];
                            for odi in dlo..dhi {
                                let id = odi * stride[0] + kdi - pad[0];
                                for ohi in hlo..hhi {
                                    let ih = ohi * stride[1] + khi - pad[1];
                                    let grow = &gout[(odi * oh + ohi) * ow..][..ow];
                                    let irow = &mut gslice[(id * h + ih) * w..][..w];
                                    if stride[2] == 1 {
                                        let iw0 = wlo + kwi - pad[2];
                                        let irun = &mut irow[iw0..iw0 + (whi - wlo)];
                                        axpy(wv, &grow[wlo..whi], irun);
                                    } else {
                                        for owi in wlo..whi {
                                            let iw = owi * stride[2] + kwi - pad[2];
                                            irow[iw] = wv.mul_add(grow[owi], irow[iw]);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    gin
}

/// Gradient w.r.t. the convolution weights.
pub fn conv3d_backward_weight(
    input: &[f64],
    ishape: [usize; 5],
    grad_out: &[f64],
    oshape: [usize; 5],
    wshape: [usize; 5],
    stride: [usize; 3],
    pad: [usize; 3],
) -> Vec<f64> {
    let [n, cin, d, h, w] = ishape;
    let [cout, _, kd, kh, kw] = wshape;
    let [_, _, od, oh, ow] = oshape;
    let (ivol, ovol) = (d * h * w, od * oh * ow);
    let mut gw = vec![0.0; cout * cin * kd * kh * kw];

    for co in 0..cout {
        for ci in 0..cin {
            for kdi in 0..kd {
                let (dlo, dhi) = out_range(od, d, stride[0], kdi, pad[0]);
                for khi in 0..kh {
                    let (hlo, hhi) = out_range(oh, h, stride[1], khi, pad[1]);
                    for kwi in 0..kw {
                        let (wlo, whi) = out_range(ow, w, stride[2], kwi, pad[2]);
                        let mut acc = 0.0;
                        if wlo < whi {
                            for ni in 0..n {
                                let islice = &input[(ni * cin + ci) * ivol..][..ivol];
                                let gout = &grad_out[(ni * cout + co) * ovol..][..ovol];
                                for odi in dlo..dhi {
                                    let id = odi * stride[0] + kdi - pad[0];
                                    for ohi in hlo..hhi {
                                        let ih = ohi * stride[1] + khi - pad[1];
                                        let irow = &islice[(id * h + ih) * w..][..w];
                                        let grow = &gout[(odi * oh + ohi) * ow..][..ow];
                                        if stride[2] == 1 {
                                            let iw0 = wlo + kwi - pad[2];
                                            acc += dot_fixed(
                                                &irow[iw0..iw0 + (whi - wlo)],
                                                &grow[wlo..whi],
                                            );
                                        } else {
                                            for owi in wlo..whi {
                                                let iw = owi * stride[2] + kwi - pad[2];
                                                acc = irow[iw].mul_add(grow[owi], acc);
                                            }
                                        }
                                    }
                                }
                            }
                        }
                        gw[(((co * cin + ci) * kd + kdi) * kh + khi) * kw + kwi] = acc;
                    }
                }
            }
        }
    }
    gw
}

/// Gradient w.r.t. the convolution bias: sum of grad_out over batch and space.
pub fn conv3d_backward_bias(grad_out: &[f64], oshape: [usize; 5]) -> Vec<f64> {
    let [n, cout, od, oh, ow] = oshape;
    let ovol = od * oh * ow;
    let mut gb = vec![0.0; cout];
    for ni in 0..n {
        for co in 0..cout {
            gb[co] += sum_fixed(&grad_out[(ni * cout + co) * ovol..][..ovol]);
        }
    }
    gb
}

/// Per-(instance, channel) normalization over the spatial volume with biased
/// variance, then affine scale/shift. Returns output plus the per-slice mean
/// and 1/sqrt(var + eps) needed by the backward pass.
///
/// A single-voxel spatial volume is legal: the normalized value is exactly 0
/// (zero carries no spatial statistics), so the output equals beta.
pub fn instance_norm_forward(
    input: &[f64],
    ishape: [usize; 5],
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let [n, c, d, h, w] = ishape;
    if gamma.len() != c || beta.len() != c {
        return Err(Error::shape(
            "instance_norm gamma/beta",
            format!("{c}"),
            format!("{}/{}", gamma.len(), beta.len()),
        ));
    }
    let m = d * h * w;
    if m == 0 {
        return Err(Error::DegenerateInput {
            op: "instance_norm".into(),
            detail: "empty spatial volume".into(),
        });
    }
    let mut out = vec![0.0; input.len()];
    let mut means = vec![0.0; n * c];
    let mut inv_stds = vec![0.0; n * c];
    for ni in 0..n {
        for ci in 0..c {
            let s = (ni * c + ci) * m;
            let x = &input[s..s + m];
            let mean = sum_fixed(x) / m as f64;
            let mut var_acc = vec![0.0; m];
            for (vi, &xi) in var_acc.iter_mut().zip(x) {
                let dlt = xi - mean;
                *vi = dlt * dlt;
            }
            let var = sum_fixed(&var_acc) / m as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            means[ni * c + ci] = mean;
            inv_stds[ni * c + ci] = inv_std;
            let (g, b) = (gamma[ci], beta[ci]);
            let y = &mut out[s..s + m];
            for (yi, &xi) in y.iter_mut().zip(x) {
                *yi = (g * ((xi - mean) * inv_std)) + b;
            }
        }
    }
    Ok((out, means, inv_stds))
}

/// Backward for instance_norm. Returns (grad_input, grad_gamma, grad_beta).
pub fn instance_norm_backward(
    input: &[f64],
    ishape: [usize; 5],
    gamma: &[f64],
    means: &[f64],
    inv_stds: &[f64],
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let [n, c, d, h, w] = ishape;
    let m = d * h * w;
    let mf = m as f64;
    let mut gin = vec![0.0; input.len()];
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    let mut xhat = vec![0.0; m];
    for ni in 0..n {
        for ci in 0..c {
            let s = (ni * c + ci) * m;
            let x = &input[s..s + m];
            let dy = &grad_out[s..s + m];
            let (mean, inv_std) = (means[ni * c + ci], inv_stds[ni * c + ci]);
            for (xh, &xi) in xhat.iter_mut().zip(x) {
                *xh = (xi - mean) * inv_std;
            }
            let s1 = sum_fixed(dy);
            let s2 = dot_fixed(dy, &xhat);
            dbeta[ci] += s1;
            dgamma[ci] += s2;
            let scale = gamma[ci] * inv_std;
            let (c1, c2) = (s1 / mf, s2 / mf);
            let g = &mut gin[s..s + m];
            for ((gi, &dyi), &xh) in g.iter_mut().zip(dy).zip(&xhat) {
                *gi = scale * (dyi - c1 - xh * c2);
            }
        }
    }
    (gin, dgamma, dbeta)
}

/// x if x >= 0 else slope * x.
pub fn leaky_relu_forward(input: &[f64], slope: f64) -> Vec<f64> {
    input
        .iter()
        .map(|&x| if x >= 0.0 { x } else { slope * x })
        .collect()
}

/// Gradient: 1 on x >= 0 (the kink at 0 uses the positive side), slope below.
pub fn leaky_relu_backward(input: &[f64], slope: f64, grad_out: &[f64]) -> Vec<f64> {
    input
        .iter()
        .zip(grad_out)
        .map(|(&x, &g)| if x >= 0.0 { g } else { slope * g })
        .collect()
}

/// Nearest-neighbor doubling of every spatial axis.
pub fn nearest_upsample2x_forward(input: &[f64], ishape: [usize; 5]) -> (Vec<f64>, [usize; 5]) {
    let [n, c, d, h, w] = ishape;
    let (od, oh, ow) = (2 * d, 2 * h, 2 * w);
    let mut out = vec![0.0; n * c * od * oh * ow];
    for nc in 0..n * c {
        let islice = &input[nc * d * h * w..][..d * h * w];
        let oslice = &mut out[nc * od * oh * ow..][..od * oh * ow];
        for odi in 0..od {
            let id = odi / 2;
            for ohi in 0..oh {
                let ih = ohi / 2;
                let irow = &islice[(id * h + ih) * w..][..w];
                let orow = &mut oslice[(odi * oh + ohi) * ow..][..ow];
                for (owi, o) in orow.iter_mut().enumerate() {
                    *o = irow[owi / 2];
                }
            }
        }
    }
    (out, [n, c, od, oh, ow])
}

/// Backward of nearest upsampling: sum each 2x2x2 replication block.
pub fn nearest_upsample2x_backward(grad_out: &[f64], ishape: [usize; 5]) -> Vec<f64> {
    let [n, c, d, h, w] = ishape;
    let (od, oh, ow) = (2 * d, 2 * h, 2 * w);
    let mut gin = vec![0.0; n * c * d * h * w];
    for nc in 0..n * c {
        let gslice = &grad_out[nc * od * oh * ow..][..od * oh * ow];
        let islice = &mut gin[nc * d * h * w..][..d * h * w];
        for odi in 0..od {
            let id = odi / 2;
            for ohi in 0..oh {
                let ih = ohi / 2;
                let grow = &gslice[(odi * oh + ohi) * ow..][..ow];
                let irow = &mut islice[(id * h + ih) * w..][..w];
                for (owi, &g) in grow.iter().enumerate() {
                    irow[owi / 2] += g;
                }
            }
        }
    }
    gin
}

/// Per-voxel softmax over the channel axis, computed with max-subtraction.
pub fn softmax_channels_forward(input: &[f64], ishape: [usize; 5]) -> Vec<f64> {
    let [n, c, d, h, w] = ishape;
    let vol = d * h * w;
    let mut out = vec![0.0; input.len()];
    for ni in 0..n {
        let base = ni * c * vol;
        for v in 0..vol {
            let mut mx = f64::NEG_INFINITY;
            for ci in 0..c {
                mx = mx.max(input[base + ci * vol + v]);
            }
            let mut denom = 0.0;
            for ci in 0..c {
                let e = (input[base + ci * vol + v] - mx).exp();
                out[base + ci * vol + v] = e;
                denom += e;
            }
            let inv = 1.0 / denom;
            for ci in 0..c {
                out[base + ci * vol + v] *= inv;
            }
        }
    }
    out
}

/// Backward of channel softmax given its own output.
pub fn softmax_channels_backward(output: &[f64], ishape: [usize; 5], grad_out: &[f64]) -> Vec<f64> {
    let [n, c, d, h, w] = ishape;
    let vol = d * h * w;
    let mut gin = vec![0.0; output.len()];
    for ni in 0..n {
        let base = ni * c * vol;
        for v in 0..vol {
            let mut dotp = 0.0;
            for ci in 0..c {
                let idx = base + ci * vol + v;
                dotp = grad_out[idx].mul_add(output[idx], dotp);
            }
            for ci in 0..c {
                let idx = base + ci * vol + v;
                gin[idx] = output[idx] * (grad_out[idx] - dotp);
            }
        }
    }
    gin
}

/// Clamp floor applied to probabilities before the log in cross-entropy.
pub const CE_CLAMP_FLOOR: f64 = 1e-12;

/// Mean over all N*D*H*W voxels of -log(max(p[target], floor)). Targets are
/// integer class indices aligned with the probability grid.
pub fn cross_entropy_forward(probs: &[f64], pshape: [usize; 5], targets: &[u8]) -> Result<f64> {
    let [n, c, d, h, w] = pshape;
    let vol = d * h * w;
    if targets.len() != n * vol {
        return Err(Error::shape(
            "cross_entropy targets",
            format!("{} voxels", n * vol),
            format!("{}", targets.len()),
        ));
    }
    let mut per_voxel = vec![0.0; n * vol];
    for ni in 0..n {
        let base = ni * c * vol;
        for v in 0..vol {
            let t = targets[ni * vol + v] as usize;
            if t >= c {
                return Err(Error::InvalidArgument(format!(
                    "cross_entropy: target class {t} out of range for {c} channels"
                )));
            }
            // clamp (not max) so NaN probabilities surface as a NaN loss
            // instead of being read as the floor.
            let p = probs[base + t * vol + v].clamp(CE_CLAMP_FLOOR, f64::INFINITY);
            per_voxel[ni * vol + v] = -p.ln();
        }
    }
    Ok(sum_fixed(&per_voxel) / (n * vol) as f64)
}

/// Backward of cross-entropy w.r.t. the probabilities; `upstream` is the
/// gradient flowing into the scalar loss. Voxels clamped at the floor get
/// zero gradient.
pub fn cross_entropy_backward(
    probs: &[f64],
    pshape: [usize; 5],
    targets: &[u8],
    upstream: f64,
) -> Vec<f64> {
    let [n, c, d, h, w] = pshape;
    let vol = d * h * w;
    let scale = upstream / (n * vol) as f64;
    let mut gin = vec![0.0; probs.len()];
    for ni in 0..n {
        let base = ni * c * vol;
        for v in 0..vol {
            let t = targets[ni * vol + v] as usize;
            let idx = base + t * vol + v;
            let p = probs[idx];
            if p > CE_CLAMP_FLOOR {
                gin[idx] = -scale / p;
            }
        }
    }
    gin
}
