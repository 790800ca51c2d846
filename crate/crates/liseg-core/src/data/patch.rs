//! Padding and patch extraction for training and sliding-window inference.

use rand::Rng;

use super::volume::{Sample, SegMask, Volume};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PAD_MULTIPLE: usize = 32;
pub const DEFAULT_FOREGROUND_PROB: f64 = 0.5;

/// A cropped training window. `corner` locates it in the padded sample.
#[derive(Debug, Clone)]
pub struct Patch {
    pub size: [usize; 3],
    pub corner: [usize; 3],
    pub data: Vec<f64>,
    pub labels: Option<Vec<u8>>,
}

impl Patch {
    /// The patch as a [1, 1, D, H, W] network input.
    pub fn input_tensor(&self) -> Tensor {
        let [d, h, w] = self.size;
        Tensor::new(vec![1, 1, d, h, w], self.data.clone()).expect("patch data matches size")
    }
}

/// Grow each axis up to the next multiple of `m`, appending voxels at the
/// high side: the volume minimum for intensities, background for labels.
pub fn pad_to_multiple(sample: &Sample, m: usize) -> Sample {
    let dims = sample.volume.dims;
    let padded = [next_multiple(dims[0], m), next_multiple(dims[1], m), next_multiple(dims[2], m)];
    if padded == dims {
        return sample.clone();
    }
    let fill = sample.volume.min_value();
    let mut data = vec![fill; padded.iter().product()];
    let mut labels = sample.mask.as_ref().map(|m| {
        (vec![0u8; padded.iter().product()], m.num_classes)
    });
    for d in 0..dims[0] {
        for h in 0..dims[1] {
            let src = (d * dims[1] + h) * dims[2];
            let dst = (d * padded[1] + h) * padded[2];
            data[dst..dst + dims[2]].copy_from_slice(&sample.volume.data[src..src + dims[2]]);
            if let (Some((out, _)), Some(mask)) = (&mut labels, &sample.mask) {
                out[dst..dst + dims[2]].copy_from_slice(&mask.labels[src..src + dims[2]]);
            }
        }
    }
    let v = &sample.volume;
    Sample {
        volume: Volume::new(v.case_id.clone(), padded, data, v.spacing, v.modality)
            .expect("padding preserves finiteness"),
        mask: labels.map(|(l, nc)| SegMask::new(padded, l, nc).expect("padding preserves labels")),
    }
}

fn next_multiple(n: usize, m: usize) -> usize {
    n.div_ceil(m) * m
}

/// Cut a patch out of a padded sample. With probability `foreground_prob`
/// (and a nonempty mask) the patch is centered on a uniformly chosen
/// foreground voxel, clamped so the window stays inside the volume;
/// otherwise its corner is uniform over all valid positions.
///
/// The input is padded to multiples of [`PAD_MULTIPLE`] first, so any patch
/// whose sides are such multiples and no larger than the padded volume fits.
pub fn sample_patch(
    sample: &Sample,
    size: [usize; 3],
    foreground_prob: f64,
    rng: &mut impl Rng,
) -> Result<Patch> {
    let padded = pad_to_multiple(sample, PAD_MULTIPLE);
    let dims = padded.volume.dims;
    if (0..3).any(|a| size[a] == 0 || size[a] > dims[a]) {
        return Err(Error::InvalidArgument(format!(
            "patch {size:?} does not fit volume {:?} (padded {dims:?})",
            sample.volume.dims
        )));
    }

    let fg_centers: Vec<usize> = match &padded.mask {
        Some(m) if foreground_prob > 0.0 => m
            .labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l != 0).then_some(i))
            .collect(),
        _ => Vec::new(),
    };
    let take_fg = !fg_centers.is_empty() && rng.gen_bool(foreground_prob);

    let mut corner = [0usize; 3];
    if take_fg {
        let flat = fg_centers[rng.gen_range(0..fg_centers.len())];
        let center = [
            flat / (dims[1] * dims[2]),
            flat / dims[2] % dims[1],
            flat % dims[2],
        ];
        for a in 0..3 {
            corner[a] = center[a]
                .saturating_sub(size[a] / 2)
                .min(dims[a] - size[a]);
        }
    } else {
        for a in 0..3 {
            corner[a] = rng.gen_range(0..=dims[a] - size[a]);
        }
    }

    let mut data = Vec::with_capacity(size.iter().product());
    let mut labels = padded.mask.as_ref().map(|m| {
        (Vec::with_capacity(m.labels.len()), &m.labels)
    });
    for d in corner[0]..corner[0] + size[0] {
        for h in corner[1]..corner[1] + size[1] {
            let row = (d * dims[1] + h) * dims[2] + corner[2];
            data.extend_from_slice(&padded.volume.data[row..row + size[2]]);
            if let Some((out, src)) = &mut labels {
                out.extend_from_slice(&src[row..row + size[2]]);
            }
        }
    }
    Ok(Patch {
        size,
        corner,
        data,
        labels: labels.map(|(l, _)| l),
    })
}
