//! Intensity normalization and grid resampling.

use super::volume::{Sample, SegMask, Volume};
use crate::error::{Error, Result};
use crate::tensor::kernels::sum_fixed;

/// What an interpolator does with coordinates outside `[0, dim-1]` per axis.
#[derive(Debug, Clone, Copy)]
pub(crate) enum OutOfBounds {
    /// Clamp to the border sample (used by grid resampling).
    Clamp,
    /// Return this value for the whole sample (used by augmentation).
    Fill(f64),
}

#[inline]
fn in_bounds(p: [f64; 3], dims: [usize; 3]) -> bool {
    (0..3).all(|a| p[a] >= 0.0 && p[a] <= (dims[a] - 1) as f64)
}

#[inline]
fn clamp3(p: [f64; 3], dims: [usize; 3]) -> [f64; 3] {
    let mut q = p;
    for a in 0..3 {
        q[a] = q[a].clamp(0.0, (dims[a] - 1) as f64);
    }
    q
}

/// Trilinear sample of a (D,H,W) field at fractional voxel coordinates.
pub(crate) fn sample_trilinear(
    data: &[f64],
    dims: [usize; 3],
    p: [f64; 3],
    oob: OutOfBounds,
) -> f64 {
    let p = match oob {
        OutOfBounds::Clamp => clamp3(p, dims),
        OutOfBounds::Fill(v) => {
            if !in_bounds(p, dims) {
                return v;
            }
            p
        }
    };
    let mut i0 = [0usize; 3];
    let mut i1 = [0usize; 3];
    let mut f = [0f64; 3];
    for a in 0..3 {
        let fl = p[a].floor();
        let lo = fl as usize;
        i0[a] = lo;
        i1[a] = (lo + 1).min(dims[a] - 1); // weight is 0 when this clamps
        f[a] = p[a] - fl;
    }
    let at = |d: usize, h: usize, w: usize| data[(d * dims[1] + h) * dims[2] + w];
    let mut acc = 0.0;
    for (dd, wd) in [(i0[0], 1.0 - f[0]), (i1[0], f[0])] {
        for (hh, wh) in [(i0[1], 1.0 - f[1]), (i1[1], f[1])] {
            for (ww, wwt) in [(i0[2], 1.0 - f[2]), (i1[2], f[2])] {
                acc += wd * wh * wwt * at(dd, hh, ww);
            }
        }
    }
    acc
}

/// Nearest-neighbor label sample; out-of-bounds is background (0) under Fill.
pub(crate) fn sample_nearest_label(
    labels: &[u8],
    dims: [usize; 3],
    p: [f64; 3],
    oob: OutOfBounds,
) -> u8 {
    let p = match oob {
        OutOfBounds::Clamp => clamp3(p, dims),
        OutOfBounds::Fill(_) => {
            if !in_bounds(p, dims) {
                return 0;
            }
            p
        }
    };
    let mut i = [0usize; 3];
    for a in 0..3 {
        i[a] = (p[a].round() as usize).min(dims[a] - 1);
    }
    labels[(i[0] * dims[1] + i[1]) * dims[2] + i[2]]
}

/// Shift and scale to zero mean, unit population standard deviation.
pub fn zscore_normalize(volume: &Volume) -> Result<Volume> {
    let n = volume.numel();
    if n < 2 {
        return Err(Error::DegenerateInput {
            op: "zscore_normalize".into(),
            detail: format!("volume {} has {n} voxel(s), need at least 2", volume.case_id),
        });
    }
    let mean = sum_fixed(&volume.data) / n as f64;
    let centered: Vec<f64> = volume.data.iter().map(|&v| v - mean).collect();
    let var = sum_fixed(&centered.iter().map(|&c| c * c).collect::<Vec<_>>()) / n as f64;
    if var == 0.0 {
        return Err(Error::DegenerateInput {
            op: "zscore_normalize".into(),
            detail: format!("volume {} has zero intensity variance", volume.case_id),
        });
    }
    let inv_std = 1.0 / var.sqrt();
    let mut out = volume.clone();
    out.data = centered.iter().map(|&c| c * inv_std).collect();
    Ok(out)
}

fn output_dims(dims: [usize; 3], spacing: [f64; 3], target: [f64; 3]) -> Result<[usize; 3]> {
    if target.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "resample: target spacing {target:?} must be positive and finite"
        )));
    }
    let mut out = [0usize; 3];
    for a in 0..3 {
        out[a] = (dims[a] as f64 * spacing[a] / target[a]).round() as usize;
        if out[a] == 0 {
            return Err(Error::DegenerateInput {
                op: "resample".into(),
                detail: format!(
                    "axis {a}: {} voxels at {}mm collapse to zero at {}mm",
                    dims[a], spacing[a], target[a]
                ),
            });
        }
    }
    Ok(out)
}

/// Source coordinate of output voxel `i` under the half-voxel convention:
/// voxel centers sit at (i + 0.5) * spacing, so matching centers gives
/// src = (i + 0.5) * target/spacing - 0.5. When target == spacing the ratio
/// is exactly 1 and the map is the identity.
#[inline]
fn source_coord(i: usize, ratio: f64) -> f64 {
    (i as f64 + 0.5) * ratio - 0.5
}

/// Resample a volume onto a new spacing with trilinear interpolation.
pub fn resample_volume(volume: &Volume, target: [f64; 3]) -> Result<Volume> {
    let odims = output_dims(volume.dims, volume.spacing, target)?;
    let ratio = [
        target[0] / volume.spacing[0],
        target[1] / volume.spacing[1],
        target[2] / volume.spacing[2],
    ];
    let mut data = Vec::with_capacity(odims.iter().product());
    for d in 0..odims[0] {
        let pd = source_coord(d, ratio[0]);
        for h in 0..odims[1] {
            let ph = source_coord(h, ratio[1]);
            for w in 0..odims[2] {
                let pw = source_coord(w, ratio[2]);
                data.push(sample_trilinear(
                    &volume.data,
                    volume.dims,
                    [pd, ph, pw],
                    OutOfBounds::Clamp,
                ));
            }
        }
    }
    Volume::new(volume.case_id.clone(), odims, data, target, volume.modality)
}

/// Resample a mask onto a new spacing with nearest-neighbor lookup.
pub fn resample_mask(mask: &SegMask, spacing: [f64; 3], target: [f64; 3]) -> Result<SegMask> {
    let odims = output_dims(mask.dims, spacing, target)?;
    let ratio = [
        target[0] / spacing[0],
        target[1] / spacing[1],
        target[2] / spacing[2],
    ];
    let mut labels = Vec::with_capacity(odims.iter().product());
    for d in 0..odims[0] {
        let pd = source_coord(d, ratio[0]);
        for h in 0..odims[1] {
            let ph = source_coord(h, ratio[1]);
            for w in 0..odims[2] {
                let pw = source_coord(w, ratio[2]);
                labels.push(sample_nearest_label(
                    &mask.labels,
                    mask.dims,
                    [pd, ph, pw],
                    OutOfBounds::Clamp,
                ));
            }
        }
    }
    SegMask::new(odims, labels, mask.num_classes)
}

/// Resample volume and mask together; the mask follows the volume's spacing.
pub fn resample_sample(sample: &Sample, target: [f64; 3]) -> Result<Sample> {
    let volume = resample_volume(&sample.volume, target)?;
    let mask = sample
        .mask
        .as_ref()
        .map(|m| resample_mask(m, sample.volume.spacing, target))
        .transpose()?;
    Sample::new(volume, mask)
}
