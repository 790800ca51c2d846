//! Synthetic liver phantoms: an axis-aligned ellipsoid "liver" with optional
//! internal lesions, blurred edges, Gaussian noise, and a configurable
//! contrast polarity (liver brighter or darker than background). The mask is
//! the exact ellipsoid — lesions stay foreground, matching the merged
//! liver-plus-tumour mask convention of the real annotations.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::volume::{Modality, Sample, SegMask, Volume};
use crate::error::{Error, Result};
use crate::rng::named_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Polarity {
    BrightLiver,
    DarkLiver,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub grid: [usize; 3],
    /// Per-axis center range in voxel coordinates.
    pub center_range: [[f64; 2]; 3],
    /// Per-axis semi-axis range in voxels.
    pub semi_axes_range: [[f64; 2]; 3],
    pub liver_intensity: f64,
    pub background_intensity: f64,
    /// Inclusive lesion count range.
    pub lesion_count_range: [usize; 2],
    pub noise_sigma: f64,
    pub blur_sigma: f64,
    pub polarity: Polarity,
}

impl PhantomSpec {
    /// Defaults for a given grid: a centered-ish liver filling roughly a
    /// quarter of the field of view, mild blur and noise.
    pub fn with_polarity(grid: [usize; 3], polarity: Polarity) -> Self {
        let range = |lo: f64, hi: f64, n: usize| [lo * n as f64, hi * n as f64];
        let (liver, background) = match polarity {
            Polarity::BrightLiver => (0.8, 0.2),
            Polarity::DarkLiver => (0.2, 0.8),
        };
        Self {
            grid,
            center_range: [
                range(0.40, 0.60, grid[0]),
                range(0.40, 0.60, grid[1]),
                range(0.40, 0.60, grid[2]),
            ],
            semi_axes_range: [
                range(0.22, 0.32, grid[0]),
                range(0.22, 0.32, grid[1]),
                range(0.22, 0.32, grid[2]),
            ],
            liver_intensity: liver,
            background_intensity: background,
            lesion_count_range: [0, 2],
            noise_sigma: 0.05,
            blur_sigma: 0.8,
            polarity,
        }
    }

    pub fn modality(&self) -> Modality {
        match self.polarity {
            Polarity::BrightLiver => Modality::Ged4Like,
            Polarity::DarkLiver => Modality::T2Like,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let polarity_ok = match self.polarity {
            Polarity::BrightLiver => self.liver_intensity > self.background_intensity,
            Polarity::DarkLiver => self.liver_intensity < self.background_intensity,
        };
        if !polarity_ok {
            return Err(Error::InvalidConfig(format!(
                "{:?} phantom needs liver intensity {} on the matching side of background {}",
                self.polarity, self.liver_intensity, self.background_intensity
            )));
        }
        if self.grid.iter().any(|&g| g < 8) {
            return Err(Error::InvalidConfig(format!(
                "phantom grid {:?} too small (min 8 per axis)",
                self.grid
            )));
        }
        for a in 0..3 {
            let [clo, chi] = self.center_range[a];
            let [alo, ahi] = self.semi_axes_range[a];
            if !(clo <= chi) || !(0.0 < alo && alo <= ahi) {
                return Err(Error::InvalidConfig(format!(
                    "phantom axis {a}: bad center range {:?} or semi-axis range {:?}",
                    self.center_range[a], self.semi_axes_range[a]
                )));
            }
        }
        if self.lesion_count_range[0] > self.lesion_count_range[1] {
            return Err(Error::InvalidConfig(
                "phantom lesion count range is inverted".into(),
            ));
        }
        if self.noise_sigma < 0.0 || self.blur_sigma < 0.0 {
            return Err(Error::InvalidConfig(
                "phantom noise/blur sigmas must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

const MAX_POSE_TRIES: usize = 100;

/// Deterministically generate one phantom. The same (spec, seed) pair always
/// yields the same volume and mask.
pub fn generate_phantom(spec: &PhantomSpec, seed: u64) -> Result<Sample> {
    spec.validate()?;
    let mut rng = named_rng(seed, "phantom");
    let [gd, gh, gw] = spec.grid;

    // Pose: rejection-sample until the ellipsoid fits inside the grid.
    let mut pose = None;
    for _ in 0..MAX_POSE_TRIES {
        let mut center = [0f64; 3];
        let mut axes = [0f64; 3];
        for a in 0..3 {
            center[a] = uniform(&mut rng, spec.center_range[a]);
            axes[a] = uniform(&mut rng, spec.semi_axes_range[a]);
        }
        let fits = (0..3).all(|a| {
            center[a] - axes[a] >= 0.5 && center[a] + axes[a] <= spec.grid[a] as f64 - 0.5
        });
        if fits {
            pose = Some((center, axes));
            break;
        }
    }
    let (center, axes) = pose.ok_or_else(|| Error::DegenerateInput {
        op: "generate_phantom".into(),
        detail: format!(
            "no ellipsoid from {:?}/{:?} fits grid {:?} in {MAX_POSE_TRIES} tries",
            spec.center_range, spec.semi_axes_range, spec.grid
        ),
    })?;

    // Exact ellipsoid mask at voxel centers.
    let mut labels = vec![0u8; gd * gh * gw];
    let mut i = 0;
    for d in 0..gd {
        for h in 0..gh {
            for w in 0..gw {
                let r = [(d as f64 - center[0]) / axes[0],
                         (h as f64 - center[1]) / axes[1],
                         (w as f64 - center[2]) / axes[2]];
                if r[0] * r[0] + r[1] * r[1] + r[2] * r[2] <= 1.0 {
                    labels[i] = 1;
                }
                i += 1;
            }
        }
    }

    let mut data: Vec<f64> = labels
        .iter()
        .map(|&l| if l == 1 { spec.liver_intensity } else { spec.background_intensity })
        .collect();

    // Lesions perturb intensity inside the liver; the mask is unchanged.
    let lesions = rng.gen_range(spec.lesion_count_range[0]..=spec.lesion_count_range[1]);
    let min_axis = axes.iter().fold(f64::INFINITY, |m, &a| m.min(a));
    for _ in 0..lesions {
        let lc = [
            center[0] + uniform(&mut rng, [-0.5 * axes[0], 0.5 * axes[0]]),
            center[1] + uniform(&mut rng, [-0.5 * axes[1], 0.5 * axes[1]]),
            center[2] + uniform(&mut rng, [-0.5 * axes[2], 0.5 * axes[2]]),
        ];
        let radius = uniform(&mut rng, [0.15 * min_axis, 0.35 * min_axis]);
        let toward_background = uniform(&mut rng, [0.35, 0.65]);
        let intensity = spec.liver_intensity
            + (spec.background_intensity - spec.liver_intensity) * toward_background;
        let r2 = radius * radius;
        let mut i = 0;
        for d in 0..gd {
            for h in 0..gh {
                for w in 0..gw {
                    if labels[i] == 1 {
                        let dd = d as f64 - lc[0];
                        let dh = h as f64 - lc[1];
                        let dw = w as f64 - lc[2];
                        if dd * dd + dh * dh + dw * dw <= r2 {
                            data[i] = intensity;
                        }
                    }
                    i += 1;
                }
            }
        }
    }

    if spec.blur_sigma > 0.0 {
        gaussian_blur(&mut data, spec.grid, spec.blur_sigma);
    }
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).expect("positive sigma");
        for v in &mut data {
            *v += normal.sample(&mut rng);
        }
    }

    let volume = Volume::new(
        format!("phantom-{seed:016x}"),
        spec.grid,
        data,
        [1.0; 3],
        spec.modality(),
    )?;
    let mask = SegMask::new(spec.grid, labels, 2)?;
    Sample::new(volume, Some(mask))
}

fn uniform(rng: &mut impl Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.gen_range(range[0]..range[1])
    }
}

/// Separable Gaussian blur, kernel truncated at 3 sigma and renormalized at
/// the borders.
fn gaussian_blur(data: &mut Vec<f64>, dims: [usize; 3], sigma: f64) {
    let radius = (3.0 * sigma).ceil() as i64;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let [nd, nh, nw] = dims;
    let idx = |d: usize, h: usize, w: usize| (d * nh + h) * nw + w;
    for axis in 0..3 {
        let n = dims[axis] as i64;
        let mut out = vec![0.0; data.len()];
        for d in 0..nd {
            for h in 0..nh {
                for w in 0..nw {
                    let pos = [d as i64, h as i64, w as i64];
                    let mut acc = 0.0;
                    let mut norm = 0.0;
                    for (j, &wt) in weights.iter().enumerate() {
                        let q = pos[axis] + j as i64 - radius;
                        if q < 0 || q >= n {
                            continue;
                        }
                        let mut p = pos;
                        p[axis] = q;
                        acc += wt * data[idx(p[0] as usize, p[1] as usize, p[2] as usize)];
                        norm += wt;
                    }
                    out[idx(d, h, w)] = acc / norm;
                }
            }
        }
        *data = out;
    }
}
