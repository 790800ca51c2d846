//! Scale configurations for the six-stage encoder–decoder.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_STAGES: usize = 6;

/// Per-stage depth/width tuples plus head/input channel counts.
///
/// `depths[i]` counts the blocks of stage `i`: in the encoder the stage's
/// entry block (the stage-0 residual block or the downsampling block of
/// stages 1..5) is the first of them, so `depths[i] - 1` plain residual
/// blocks follow; in the decoder all `depths[i]` are residual blocks placed
/// after the skip concatenation, the first of which reduces the doubled
/// channel count back to `widths[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelScaleConfig {
    pub name: String,
    pub depths: [usize; NUM_STAGES],
    pub widths: [usize; NUM_STAGES],
    pub num_classes: usize,
    pub in_channels: usize,
}

impl ModelScaleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depths.iter().any(|&d| d == 0) || self.widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidConfig(format!(
                "{}: depths and widths must be strictly positive",
                self.name
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "{}: need at least 2 classes",
                self.name
            )));
        }
        if self.in_channels == 0 {
            return Err(Error::InvalidConfig(format!(
                "{}: need at least 1 input channel",
                self.name
            )));
        }
        Ok(())
    }

    pub fn small() -> Self {
        ModelScaleConfig {
            name: "S".into(),
            depths: [1; 6],
            widths: [16, 32, 64, 128, 256, 256],
            num_classes: 2,
            in_channels: 1,
        }
    }

    pub fn base() -> Self {
        ModelScaleConfig {
            name: "B".into(),
            depths: [1; 6],
            widths: [32, 64, 128, 256, 512, 512],
            num_classes: 2,
            in_channels: 1,
        }
    }

    pub fn large() -> Self {
        ModelScaleConfig {
            name: "L".into(),
            depths: [2; 6],
            widths: [64, 128, 256, 512, 1024, 1024],
            num_classes: 2,
            in_channels: 1,
        }
    }

    /// CI-speed preset; not one of the published scales.
    pub fn toy() -> Self {
        ModelScaleConfig {
            name: "toy".into(),
            depths: [1; 6],
            widths: [8, 16, 32, 64, 128, 128],
            num_classes: 2,
            in_channels: 1,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "S" => Ok(Self::small()),
            "B" => Ok(Self::base()),
            "L" => Ok(Self::large()),
            "toy" => Ok(Self::toy()),
            other => Err(Error::InvalidConfig(format!(
                "unknown scale preset {other:?} (expected S, B, L, or toy)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_published_tuples() {
        let s = ModelScaleConfig::small();
        assert_eq!(s.depths, [1, 1, 1, 1, 1, 1]);
        assert_eq!(s.widths, [16, 32, 64, 128, 256, 256]);
        let b = ModelScaleConfig::base();
        assert_eq!(b.widths, [32, 64, 128, 256, 512, 512]);
        let l = ModelScaleConfig::large();
        assert_eq!(l.depths, [2, 2, 2, 2, 2, 2]);
        assert_eq!(l.widths, [64, 128, 256, 512, 1024, 1024]);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = ModelScaleConfig::toy();
        c.num_classes = 1;
        assert!(c.validate().is_err());
        let mut c = ModelScaleConfig::toy();
        c.widths[3] = 0;
        assert!(c.validate().is_err());
    }
}
