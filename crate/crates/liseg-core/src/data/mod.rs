//! Dataset handling: NIfTI I/O, preprocessing, augmentation, patch
//! extraction, phantom generation, and manifests.

pub mod augment;
pub mod manifest;
pub mod nifti;
pub mod patch;
pub mod phantom;
pub mod preprocess;
pub mod volume;

pub use augment::{apply_spatial, mirror_augment, mirror_axes, spatial_augment, AugmentConfig};
pub use manifest::{build_manifest, CaseCounts, Manifest, ManifestCase, Split};
pub use nifti::{read_nifti, read_nifti_mask, write_nifti_mask, write_nifti_volume};
pub use patch::{pad_to_multiple, sample_patch, Patch, DEFAULT_FOREGROUND_PROB, PAD_MULTIPLE};
pub use phantom::{generate_phantom, PhantomSpec, Polarity};
pub use preprocess::{resample_mask, resample_sample, resample_volume, zscore_normalize};
pub use volume::{Modality, Sample, SegMask, Volume};
