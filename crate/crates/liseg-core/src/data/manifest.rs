//! Dataset manifests: a JSON index of generated (or imported) cases with
//! their volume/mask paths, modality tags, and train/val/test assignment.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::nifti::{read_nifti, read_nifti_mask, write_nifti_mask, write_nifti_volume};
use super::phantom::{generate_phantom, PhantomSpec, Polarity};
use super::volume::{Modality, Sample};
use crate::error::{Error, Result};
use crate::rng::case_seed;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestCase {
    pub id: String,
    /// Path relative to the manifest's directory.
    pub volume: String,
    pub mask: Option<String>,
    pub modality: Modality,
    pub split: Split,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub cases: Vec<ManifestCase>,
    /// Directory the relative paths resolve against; set on load/build.
    #[serde(skip)]
    pub root: PathBuf,
}

/// How many cases of each kind to generate. Labeled cases are bright-liver
/// (the annotated phase in practice); val and test alternate bright/dark so
/// both polarities can be evaluated against ground truth.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CaseCounts {
    pub labeled: usize,
    pub unlabeled_bright: usize,
    pub unlabeled_dark: usize,
    pub val: usize,
    pub test: usize,
}

impl CaseCounts {
    pub fn total(&self) -> usize {
        self.labeled + self.unlabeled_bright + self.unlabeled_dark + self.val + self.test
    }
}

impl Manifest {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)?)
            .map_err(|e| Error::io(&path, e))
    }

    /// Load and validate: version, path uniqueness, and file existence.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: Manifest = serde_json::from_str(&text)?;
        manifest.root = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Manifest(format!(
                "unsupported manifest version {}",
                manifest.version
            )));
        }
        let mut seen = BTreeSet::new();
        for case in &manifest.cases {
            if !seen.insert(case.volume.clone()) {
                return Err(Error::Manifest(format!(
                    "volume path {} appears more than once",
                    case.volume
                )));
            }
            for rel in std::iter::once(&case.volume).chain(case.mask.iter()) {
                let p = manifest.root.join(rel);
                if !p.is_file() {
                    return Err(Error::Manifest(format!(
                        "case {}: missing file {}",
                        case.id,
                        p.display()
                    )));
                }
            }
        }
        Ok(manifest)
    }

    pub fn cases_in(&self, split: Split) -> impl Iterator<Item = &ManifestCase> {
        self.cases.iter().filter(move |c| c.split == split)
    }

    pub fn labeled_in(&self, split: Split) -> impl Iterator<Item = &ManifestCase> {
        self.cases_in(split).filter(|c| c.mask.is_some())
    }

    pub fn unlabeled_in(&self, split: Split) -> impl Iterator<Item = &ManifestCase> {
        self.cases_in(split).filter(|c| c.mask.is_none())
    }

    /// Read one case from disk, tagging the volume with the manifest's
    /// modality and checking mask alignment.
    pub fn load_sample(&self, case: &ManifestCase, num_classes: usize) -> Result<Sample> {
        let vpath = self.root.join(&case.volume);
        let mut volume = read_nifti(&vpath)?;
        volume.modality = case.modality;
        volume.case_id = case.id.clone();
        let mask = match &case.mask {
            Some(rel) => {
                let mpath = self.root.join(rel);
                let (mask, spacing) = read_nifti_mask(&mpath, num_classes)?;
                if mask.dims != volume.dims || spacing != volume.spacing {
                    return Err(Error::Manifest(format!(
                        "case {}: mask grid {:?}@{:?} does not match volume {:?}@{:?}",
                        case.id, mask.dims, spacing, volume.dims, volume.spacing
                    )));
                }
                Some(mask)
            }
            None => None,
        };
        Sample::new(volume, mask)
    }
}

/// Generate a phantom dataset under `dir` and write its manifest.
///
/// The labeled:unlabeled default elsewhere keeps a roughly 1:11 ratio,
/// echoing the scarce-annotation regime this method targets.
pub fn build_manifest(
    dir: &Path,
    counts: &CaseCounts,
    bright: &PhantomSpec,
    dark: &PhantomSpec,
    seed: u64,
) -> Result<Manifest> {
    if bright.polarity != Polarity::BrightLiver || dark.polarity != Polarity::DarkLiver {
        return Err(Error::InvalidConfig(
            "build_manifest: specs must be (bright, dark) in that order".into(),
        ));
    }
    bright.validate()?;
    dark.validate()?;
    let images = dir.join("images");
    let masks = dir.join("masks");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    std::fs::create_dir_all(&masks).map_err(|e| Error::io(&masks, e))?;

    let mut cases = Vec::with_capacity(counts.total());
    let mut emit = |role: &str,
                    index: usize,
                    spec: &PhantomSpec,
                    labeled: bool,
                    split: Split|
     -> Result<()> {
        let id = format!("{role}{index:03}");
        let mut sample = generate_phantom(spec, case_seed(seed, role, index))?;
        sample.volume.case_id = id.clone();
        let vrel = format!("images/{id}.nii.gz");
        write_nifti_volume(&sample.volume, &dir.join(&vrel))?;
        let mrel = if labeled {
            let rel = format!("masks/{id}.nii.gz");
            let mask = sample.mask.as_ref().expect("phantoms always carry a mask");
            write_nifti_mask(mask, sample.volume.spacing, &dir.join(&rel))?;
            Some(rel)
        } else {
            None
        };
        cases.push(ManifestCase {
            id,
            volume: vrel,
            mask: mrel,
            modality: spec.modality(),
            split,
        });
        Ok(())
    };

    for i in 0..counts.labeled {
        emit("lab", i, bright, true, Split::Train)?;
    }
    for i in 0..counts.unlabeled_bright {
        emit("unlb", i, bright, false, Split::Train)?;
    }
    for i in 0..counts.unlabeled_dark {
        emit("unld", i, dark, false, Split::Train)?;
    }
    for i in 0..counts.val {
        let spec = if i % 2 == 0 { bright } else { dark };
        emit("val", i, spec, true, Split::Val)?;
    }
    for i in 0..counts.test {
        let spec = if i % 2 == 0 { bright } else { dark };
        emit("test", i, spec, true, Split::Test)?;
    }

    let manifest = Manifest {
        version: MANIFEST_VERSION,
        seed,
        cases,
        root: dir.to_path_buf(),
    };
    manifest.save(dir)?;
    Ok(manifest)
}
