//! Hausdorff distance between binary masks, exact via the distance
//! transform. Voxel centers are the point sets; distances are in mm.

use serde::{Deserialize, Serialize};

use super::edt::distance_transform;
use crate::data::SegMask;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HdMode {
    /// Plain (100th percentile) Hausdorff distance.
    Full,
    /// 95th-percentile variant (nearest-rank per direction, then max).
    Percentile95,
}

impl HdMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            HdMode::Full => "full",
            HdMode::Percentile95 => "hd95",
        }
    }
}

/// Outcome of a Hausdorff computation. Empty masks yield a status instead of
/// a number so report aggregates are not poisoned; an empty reference is
/// reported as such even when the prediction is also empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Hausdorff {
    Value { mm: f64 },
    EmptyPrediction,
    EmptyReference,
}

impl Hausdorff {
    pub fn value(&self) -> Option<f64> {
        match self {
            Hausdorff::Value { mm } => Some(*mm),
            _ => None,
        }
    }

    pub fn status_str(&self) -> &'static str {
        match self {
            Hausdorff::Value { .. } => "value",
            Hausdorff::EmptyPrediction => "empty_prediction",
            Hausdorff::EmptyReference => "empty_reference",
        }
    }
}

/// Directed reduction: distances from every foreground voxel of `from` to
/// the nearest foreground voxel of the other mask (whose EDT is given).
fn directed(from: &SegMask, edt_other: &[f64], mode: HdMode) -> f64 {
    let mut dists: Vec<f64> = from
        .labels
        .iter()
        .zip(edt_other)
        .filter_map(|(&l, &d)| (l != 0).then_some(d))
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
}

/// Symmetric Hausdorff distance max(h(pred→ref), h(ref→pred)).
pub fn hausdorff(
    pred: &SegMask,
    reference: &SegMask,
    spacing: [f64; 3],
    mode: HdMode,
) -> Result<Hausdorff> {
    if pred.dims != reference.dims {
        return Err(Error::shape(
            "hausdorff",
            format!("{:?}", reference.dims),
            format!("{:?}", pred.dims),
        ));
    }
    if reference.foreground_count() == 0 {
        return Ok(Hausdorff::EmptyReference);
    }
    if pred.foreground_count() == 0 {
        return Ok(Hausdorff::EmptyPrediction);
    }
    let edt_ref = distance_transform(reference, spacing)?;
    let edt_pred = distance_transform(pred, spacing)?;
    let forward = directed(pred, &edt_ref, mode);
    let backward = directed(reference, &edt_pred, mode);
    Ok(Hausdorff::Value {
        mm: forward.max(backward),
    })
}
