//! Training-time augmentation. Every transform is applied identically to the
//! volume and its mask (trilinear vs nearest lookup respectively), and every
//! random op draws a fixed number of RNG values regardless of which branches
//! fire, so parallel consumers of one stream stay aligned.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::preprocess::{sample_nearest_label, sample_trilinear, OutOfBounds};
use super::volume::{Sample, SegMask, Volume};

pub const MIRROR_PROB: f64 = 0.5;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub rotate_prob: f64,
    pub max_rotate_deg: f64,
    pub scale_prob: f64,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotate_prob: 0.3,
            max_rotate_deg: 15.0,
            scale_prob: 0.3,
            scale_min: 0.9,
            scale_max: 1.1,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> crate::error::Result<()> {
        if !(0.0..=1.0).contains(&self.rotate_prob) || !(0.0..=1.0).contains(&self.scale_prob) {
            return Err(crate::error::Error::InvalidConfig(
                "augment probabilities must lie in [0, 1]".into(),
            ));
        }
        if !(0.0..90.0).contains(&self.max_rotate_deg) {
            return Err(crate::error::Error::InvalidConfig(format!(
                "max_rotate_deg {} out of [0, 90)",
                self.max_rotate_deg
            )));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max) {
            return Err(crate::error::Error::InvalidConfig(format!(
                "scale range [{}, {}] must be positive and ordered",
                self.scale_min, self.scale_max
            )));
        }
        Ok(())
    }
}

/// Flip the sample along each axis where `flips` is set. Involutive.
pub fn mirror_axes(sample: &Sample, flips: [bool; 3]) -> Sample {
    let dims = sample.volume.dims;
    let src_index = |d: usize, h: usize, w: usize| {
        let sd = if flips[0] { dims[0] - 1 - d } else { d };
        let sh = if flips[1] { dims[1] - 1 - h } else { h };
        let sw = if flips[2] { dims[2] - 1 - w } else { w };
        (sd * dims[1] + sh) * dims[2] + sw
    };
    let mut data = Vec::with_capacity(sample.volume.numel());
    let mut labels = sample.mask.as_ref().map(|m| Vec::with_capacity(m.labels.len()));
    for d in 0..dims[0] {
        for h in 0..dims[1] {
            for w in 0..dims[2] {
                let s = src_index(d, h, w);
                data.push(sample.volume.data[s]);
                if let (Some(out), Some(mask)) = (&mut labels, &sample.mask) {
                    out.push(mask.labels[s]);
                }
            }
        }
    }
    rebuild(sample, data, labels)
}

/// Independently flip each axis with probability 1/2. Draws exactly three
/// booleans per call.
pub fn mirror_augment(sample: &Sample, rng: &mut impl Rng) -> Sample {
    let flips = [
        rng.gen_bool(MIRROR_PROB),
        rng.gen_bool(MIRROR_PROB),
        rng.gen_bool(MIRROR_PROB),
    ];
    if flips == [false; 3] {
        return sample.clone();
    }
    mirror_axes(sample, flips)
}

/// Rotate by `angle_rad` about the given axis and zoom by `scale`, both about
/// the volume's physical center, in a single resampling pass. Out-of-bounds
/// reads fill with the volume minimum (background 0 for the mask).
pub fn apply_spatial(sample: &Sample, axis: usize, angle_rad: f64, scale: f64) -> Sample {
    assert!(axis < 3, "rotation axis {axis} out of range");
    assert!(scale > 0.0, "scale must be positive");
    let v = &sample.volume;
    let dims = v.dims;
    let center = [
        dims[0] as f64 * v.spacing[0] / 2.0,
        dims[1] as f64 * v.spacing[1] / 2.0,
        dims[2] as f64 * v.spacing[2] / 2.0,
    ];
    // Axes of the rotation plane (the two axes other than `axis`).
    let (u, t) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let (sin, cos) = (-angle_rad).sin_cos(); // inverse rotation
    let inv_scale = 1.0 / scale;
    let fill = v.min_value();

    let mut data = Vec::with_capacity(v.numel());
    let mut labels = sample.mask.as_ref().map(|m| Vec::with_capacity(m.labels.len()));
    for d in 0..dims[0] {
        for h in 0..dims[1] {
            for w in 0..dims[2] {
                // Physical offset of this output voxel from the center.
                let mut q = [
                    (d as f64 + 0.5) * v.spacing[0] - center[0],
                    (h as f64 + 0.5) * v.spacing[1] - center[1],
                    (w as f64 + 0.5) * v.spacing[2] - center[2],
                ];
                q = [q[0] * inv_scale, q[1] * inv_scale, q[2] * inv_scale];
                let (a, b) = (q[u], q[t]);
                q[u] = cos * a - sin * b;
                q[t] = sin * a + cos * b;
                // Back to fractional voxel indices of the source grid.
                let p = [
                    (q[0] + center[0]) / v.spacing[0] - 0.5,
                    (q[1] + center[1]) / v.spacing[1] - 0.5,
                    (q[2] + center[2]) / v.spacing[2] - 0.5,
                ];
                data.push(sample_trilinear(&v.data, dims, p, OutOfBounds::Fill(fill)));
                if let (Some(out), Some(mask)) = (&mut labels, &sample.mask) {
                    out.push(sample_nearest_label(
                        &mask.labels,
                        dims,
                        p,
                        OutOfBounds::Fill(0.0),
                    ));
                }
            }
        }
    }
    rebuild(sample, data, labels)
}

/// Random rotation (±max_rotate_deg about a random axis) and random isotropic
/// scale, each applied with its own probability, composed into one resampling
/// pass. Draws exactly five RNG values per call.
pub fn spatial_augment(sample: &Sample, rng: &mut impl Rng, cfg: &AugmentConfig) -> Sample {
    let rotate = rng.gen_bool(cfg.rotate_prob);
    let axis = rng.gen_range(0..3usize);
    let angle_deg = if cfg.max_rotate_deg > 0.0 {
        rng.gen_range(-cfg.max_rotate_deg..cfg.max_rotate_deg)
    } else {
        0.0
    };
    let zoom = rng.gen_bool(cfg.scale_prob);
    let scale = if cfg.scale_min < cfg.scale_max {
        rng.gen_range(cfg.scale_min..cfg.scale_max)
    } else {
        cfg.scale_min
    };
    if !rotate && !zoom {
        return sample.clone();
    }
    apply_spatial(
        sample,
        axis,
        if rotate { angle_deg.to_radians() } else { 0.0 },
        if zoom { scale } else { 1.0 },
    )
}

fn rebuild(sample: &Sample, data: Vec<f64>, labels: Option<Vec<u8>>) -> Sample {
    let v = &sample.volume;
    let volume = Volume::new(v.case_id.clone(), v.dims, data, v.spacing, v.modality)
        .expect("augmentation preserves shape and finiteness");
    let mask = labels.map(|l| {
        let m = sample.mask.as_ref().expect("labels imply a mask");
        SegMask::new(v.dims, l, m.num_classes).expect("augmentation preserves labels")
    });
    Sample { volume, mask }
}
