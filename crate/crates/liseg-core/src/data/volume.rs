//! Core dataset types: scalar volumes, label masks, and paired samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Acquisition tag. Phantoms use the contrast polarity to pick one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "GED4-like")]
    Ged4Like,
    #[serde(rename = "T1-like")]
    T1Like,
    #[serde(rename = "T2-like")]
    T2Like,
    #[serde(rename = "raw")]
    Raw,
}

/// A scalar 3D field. `data` is row-major over `dims = [D, H, W]` with W
/// fastest; `spacing` is mm per voxel in the same axis order.
#[derive(Debug, Clone)]
pub struct Volume {
    pub case_id: String,
    pub dims: [usize; 3],
    pub data: Vec<f64>,
    pub spacing: [f64; 3],
    pub modality: Modality,
}

impl Volume {
    pub fn new(
        case_id: impl Into<String>,
        dims: [usize; 3],
        data: Vec<f64>,
        spacing: [f64; 3],
        modality: Modality,
    ) -> Result<Self> {
        let case_id = case_id.into();
        if data.len() != dims.iter().product::<usize>() {
            return Err(Error::shape(
                format!("volume {case_id}"),
                format!("{} values", dims.iter().product::<usize>()),
                format!("{}", data.len()),
            ));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "volume {case_id}: spacing {spacing:?} must be positive and finite"
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("volume {case_id}"),
            });
        }
        Ok(Self {
            case_id,
            dims,
            data,
            spacing,
            modality,
        })
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn idx(&self, d: usize, h: usize, w: usize) -> usize {
        (d * self.dims[1] + h) * self.dims[2] + w
    }

    /// Minimum value; used as the pad/fill intensity.
    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Integer labels aligned voxel-for-voxel with a [`Volume`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegMask {
    pub dims: [usize; 3],
    pub labels: Vec<u8>,
    pub num_classes: usize,
}

impl SegMask {
    pub fn new(dims: [usize; 3], labels: Vec<u8>, num_classes: usize) -> Result<Self> {
        if labels.len() != dims.iter().product::<usize>() {
            return Err(Error::shape(
                "mask",
                format!("{} labels", dims.iter().product::<usize>()),
                format!("{}", labels.len()),
            ));
        }
        if num_classes < 2 || num_classes > 256 {
            return Err(Error::InvalidArgument(format!(
                "mask: num_classes {num_classes} out of range [2, 256]"
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "mask: label {bad} >= num_classes {num_classes}"
            )));
        }
        Ok(Self {
            dims,
            labels,
            num_classes,
        })
    }

    pub fn foreground_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }
}

/// A volume with its (optional) reference mask. Unlabeled cases carry `None`.
#[derive(Debug, Clone)]
pub struct Sample {
    pub volume: Volume,
    pub mask: Option<SegMask>,
}

impl Sample {
    pub fn new(volume: Volume, mask: Option<SegMask>) -> Result<Self> {
        if let Some(m) = &mask {
            if m.dims != volume.dims {
                return Err(Error::shape(
                    format!("sample {}", volume.case_id),
                    format!("mask dims {:?}", volume.dims),
                    format!("{:?}", m.dims),
                ));
            }
        }
        Ok(Self { volume, mask })
    }

    pub fn unlabeled(volume: Volume) -> Self {
        Self { volume, mask: None }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn volume_rejects_bad_spacing_and_nonfinite_data() {
        assert!(Volume::new("a", [1, 1, 2], vec![0.0, 1.0], [1.0, 0.0, 1.0], Modality::Raw)
            .is_err());
        assert!(
            Volume::new("a", [1, 1, 2], vec![0.0, f64::NAN], [1.0; 3], Modality::Raw).is_err()
        );
        assert!(Volume::new("a", [1, 1, 3], vec![0.0, 1.0], [1.0; 3], Modality::Raw).is_err());
    }

    #[test]
    fn mask_rejects_out_of_range_labels() {
        assert!(SegMask::new([1, 1, 2], vec![0, 2], 2).is_err());
        assert!(SegMask::new([1, 1, 2], vec![0, 1], 2).is_ok());
    }

    #[test]
    fn sample_requires_aligned_dims() {
        let v = Volume::new("a", [1, 1, 2], vec![0.0, 1.0], [1.0; 3], Modality::Raw).unwrap();
        let m = SegMask::new([1, 2, 1], vec![0, 1], 2).unwrap();
        assert!(Sample::new(v, Some(m)).is_err());
    }
}
