//! Direct-scan reference implementations for the verification suites.
//!
//! These recompute the metrics with no algorithmic shortcuts — O(n·m)
//! distance scans and explicit confusion counts — so `liseg verify metrics`
//! can compare the production implementations against them exactly. Term
//! association mirrors the separable transform ((sd·Δd)² + ((sh·Δh)² +
//! (sw·Δw)²), coordinates formed as i·s) so agreement is bitwise whenever
//! the arithmetic is; see the metric tests for when that is guaranteed.

use super::hausdorff::{HdMode, Hausdorff};
use crate::data::SegMask;
use crate::error::{Error, Result};

fn foreground(mask: &SegMask) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for d in 0..mask.dims[0] {
        for h in 0..mask.dims[1] {
            for w in 0..mask.dims[2] {
                if mask.labels[(d * mask.dims[1] + h) * mask.dims[2] + w] != 0 {
                    out.push([d, h, w]);
                }
            }
        }
    }
    out
}

fn sq_dist(a: [usize; 3], b: [usize; 3], s: [f64; 3]) -> f64 {
    let dd = a[0] as f64 * s[0] - b[0] as f64 * s[0];
    let dh = a[1] as f64 * s[1] - b[1] as f64 * s[1];
    let dw = a[2] as f64 * s[2] - b[2] as f64 * s[2];
    dd * dd + (dh * dh + dw * dw)
}

/// Dice from explicit confusion counts: 2·TP / (2·TP + FP + FN).
pub fn dice_scan(pred: &SegMask, reference: &SegMask) -> Result<f64> {
    if pred.dims != reference.dims {
        return Err(Error::shape(
            "dice oracle",
            format!("{:?}", reference.dims),
            format!("{:?}", pred.dims),
        ));
    }
    let (mut tp, mut fp, mut fneg) = (0u64, 0u64, 0u64);
    for (&p, &r) in pred.labels.iter().zip(&reference.labels) {
        match (p != 0, r != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    if tp + fp + fneg == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / (2.0 * tp as f64 + fp as f64 + fneg as f64))
}

/// Per-voxel distance field by scanning every foreground voxel.
pub fn distance_scan(mask: &SegMask, spacing: [f64; 3]) -> Result<Vec<f64>> {
    let fg = foreground(mask);
    if fg.is_empty() {
        return Err(Error::InvalidArgument(
            "distance oracle: mask has no foreground".into(),
        ));
    }
    let mut out = Vec::with_capacity(mask.labels.len());
    for d in 0..mask.dims[0] {
        for h in 0..mask.dims[1] {
            for w in 0..mask.dims[2] {
                let best = fg
                    .iter()
                    .map(|&p| sq_dist([d, h, w], p, spacing))
                    .fold(f64::INFINITY, f64::min);
                out.push(best.sqrt());
            }
        }
    }
    Ok(out)
}

/// Symmetric Hausdorff by scanning every foreground pair, with the same
/// empty-mask statuses and percentile rule as the production implementation.
pub fn hausdorff_scan(
    pred: &SegMask,
    reference: &SegMask,
    spacing: [f64; 3],
    mode: HdMode,
) -> Result<Hausdorff> {
    if pred.dims != reference.dims {
        return Err(Error::shape(
            "hausdorff oracle",
            format!("{:?}", reference.dims),
            format!("{:?}", pred.dims),
        ));
    }
    let fr = foreground(reference);
    if fr.is_empty() {
        return Ok(Hausdorff::EmptyReference);
    }
    let fp = foreground(pred);
    if fp.is_empty() {
        return Ok(Hausdorff::EmptyPrediction);
    }
    let directed = |from: &[[usize; 3]], to: &[[usize; 3]]| -> f64 {
        let mut dists: Vec<f64> = from
            .iter()
            .map(|&p| {
                to.iter()
                    .map(|&q| sq_dist(p, q, spacing))
                    .fold(f64::INFINITY, f64::min)
                    .sqrt()
            })
            .collect();
        match mode {
            HdMode::Full => dists.iter().copied().fold(0.0, f64::max),
            HdMode::Percentile95 => {
                dists.sort_by(|a, b| a.partial_cmp(b).expect("distances are finite"));
                let n = dists.len();
                let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
                dists[rank - 1]
            }
        }
    };
    Ok(Hausdorff::Value {
        mm: directed(&fp, &fr).max(directed(&fr, &fp)),
    })
}
