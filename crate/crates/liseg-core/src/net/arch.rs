//! Structural enumeration of every parameter the network carries, shared by
//! the builder, the symbolic parameter counter, and the FLOP counter so the
//! three can never drift apart.

use super::config::{ModelScaleConfig, NUM_STAGES};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Normal(0, sqrt(2 / fan_in)) for convolution weights.
    HeNormal { fan_in: usize },
    Zero,
    One,
}

#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

fn conv(specs: &mut Vec<ParamSpec>, name: &str, cout: usize, cin: usize, k: usize) {
    specs.push(ParamSpec {
        name: format!("{name}.weight"),
        shape: vec![cout, cin, k, k, k],
        init: Init::HeNormal {
            fan_in: cin * k * k * k,
        },
    });
    specs.push(ParamSpec {
        name: format!("{name}.bias"),
        shape: vec![cout],
        init: Init::Zero,
    });
}

fn norm(specs: &mut Vec<ParamSpec>, name: &str, c: usize) {
    specs.push(ParamSpec {
        name: format!("{name}.gamma"),
        shape: vec![c],
        init: Init::One,
    });
    specs.push(ParamSpec {
        name: format!("{name}.beta"),
        shape: vec![c],
        init: Init::Zero,
    });
}

/// Residual block parameters: two 3x3x3 convolutions with instance norms,
/// plus a 1x1x1 projection (with norm) on the skip when channels change.
fn res_block(specs: &mut Vec<ParamSpec>, prefix: &str, cin: usize, cout: usize) {
    conv(specs, &format!("{prefix}.conv1"), cout, cin, 3);
    norm(specs, &format!("{prefix}.norm1"), cout);
    conv(specs, &format!("{prefix}.conv2"), cout, cout, 3);
    norm(specs, &format!("{prefix}.norm2"), cout);
    if cin != cout {
        conv(specs, &format!("{prefix}.proj"), cout, cin, 1);
        norm(specs, &format!("{prefix}.proj_norm"), cout);
    }
}

/// Downsampling block parameters: stride-1 then stride-2 3x3x3 convolutions
/// on the main branch, stride-2 1x1x1 convolution on the skip, norms on all.
fn down_block(specs: &mut Vec<ParamSpec>, prefix: &str, cin: usize, cout: usize) {
    conv(specs, &format!("{prefix}.conv1"), cout, cin, 3);
    norm(specs, &format!("{prefix}.norm1"), cout);
    conv(specs, &format!("{prefix}.conv2"), cout, cout, 3);
    norm(specs, &format!("{prefix}.norm2"), cout);
    conv(specs, &format!("{prefix}.skip"), cout, cin, 1);
    norm(specs, &format!("{prefix}.skip_norm"), cout);
}

/// Every parameter of the network, in canonical structural order (encoder
/// stages 0..5, decoder stages 4..0, head). Initialization draws values in
/// exactly this order.
pub fn param_specs(config: &ModelScaleConfig) -> Result<Vec<ParamSpec>> {
    config.validate()?;
    let w = &config.widths;
    let d = &config.depths;
    let mut specs = Vec::new();

    res_block(&mut specs, "enc0.block0", config.in_channels, w[0]);
    for j in 1..d[0] {
        res_block(&mut specs, &format!("enc0.block{j}"), w[0], w[0]);
    }
    for i in 1..NUM_STAGES {
        down_block(&mut specs, &format!("enc{i}.down"), w[i - 1], w[i]);
        for j in 1..d[i] {
            res_block(&mut specs, &format!("enc{i}.block{j}"), w[i], w[i]);
        }
    }
    for i in (0..NUM_STAGES - 1).rev() {
        conv(&mut specs, &format!("dec{i}.up"), w[i], w[i + 1], 1);
        res_block(&mut specs, &format!("dec{i}.block0"), 2 * w[i], w[i]);
        for j in 1..d[i] {
            res_block(&mut specs, &format!("dec{i}.block{j}"), w[i], w[i]);
        }
    }
    conv(&mut specs, "head", config.num_classes, w[0], 1);
    Ok(specs)
}

/// Exact parameter count, computed symbolically from the structural formula.
pub fn count_parameters(config: &ModelScaleConfig) -> Result<u64> {
    Ok(param_specs(config)?
        .iter()
        .map(|s| s.numel() as u64)
        .sum())
}

/// Itemized parameter counts for reconciliation against published totals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamBreakdown {
    pub encoder: u64,
    pub decoder: u64,
    pub head: u64,
}

impl ParamBreakdown {
    pub fn total(&self) -> u64 {
        self.encoder + self.decoder + self.head
    }
}

pub fn parameter_breakdown(config: &ModelScaleConfig) -> Result<ParamBreakdown> {
    let mut b = ParamBreakdown {
        encoder: 0,
        decoder: 0,
        head: 0,
    };
    for spec in param_specs(config)? {
        let n = spec.numel() as u64;
        if spec.name.starts_with("enc") {
            b.encoder += n;
        } else if spec.name.starts_with("dec") {
            b.decoder += n;
        } else {
            b.head += n;
        }
    }
    Ok(b)
}

/// Head size used by the reference configurations the published totals
/// correspond to (a pretraining label set), as opposed to the binary
/// segmentation head used everywhere else in this crate.
pub const REFERENCE_HEAD_CLASSES: usize = 105;

/// Patch size the FLOP comparison is reported at. The reference totals do
/// not state theirs, so the FLOP column is report-only.
pub const REFERENCE_PATCH: [usize; 3] = [96, 96, 96];

/// Published (scale name, parameter total, forward FLOPs) reference points.
pub const REFERENCE_TOTALS: [(&str, f64, f64); 3] = [
    ("S", 14.60e6, 0.13e12),
    ("B", 58.26e6, 0.51e12),
    ("L", 440.30e6, 3.81e12),
];

/// One scale's computed totals side by side with its reference point.
#[derive(Debug, Clone)]
pub struct ScaleReconciliation {
    pub name: &'static str,
    pub computed: u64,
    pub reference: f64,
    /// (computed - reference) / reference.
    pub residual_fraction: f64,
    pub breakdown: ParamBreakdown,
    pub flops: u64,
    pub reference_flops: f64,
}

impl ScaleReconciliation {
    pub fn within(&self, tolerance: f64) -> bool {
        self.residual_fraction.abs() <= tolerance
    }
}

/// Parameter counts of the S/B/L presets (with the reference head size)
/// against the published totals, itemized per network section.
pub fn reconcile_reference_scales() -> Result<Vec<ScaleReconciliation>> {
    REFERENCE_TOTALS
        .iter()
        .map(|&(name, reference, reference_flops)| {
            let mut config = ModelScaleConfig::by_name(name)?;
            config.num_classes = REFERENCE_HEAD_CLASSES;
            let computed = count_parameters(&config)?;
            Ok(ScaleReconciliation {
                name,
                computed,
                reference,
                residual_fraction: (computed as f64 - reference) / reference,
                breakdown: parameter_breakdown(&config)?,
                flops: count_flops(&config, REFERENCE_PATCH)?,
                reference_flops,
            })
        })
        .collect()
}

/// Forward-pass FLOPs (2 * multiply-accumulates, convolutions only) for one
/// patch of the given size. Patch dims must be divisible by 32.
pub fn count_flops(config: &ModelScaleConfig, patch: [usize; 3]) -> Result<u64> {
    config.validate()?;
    for &p in &patch {
        if p % 32 != 0 || p == 0 {
            return Err(crate::error::Error::InvalidArgument(format!(
                "count_flops: patch {patch:?} must be divisible by 32"
            )));
        }
    }
    let w = &config.widths;
    let d = &config.depths;
    let vox = |level: usize| -> u64 {
        patch
            .iter()
            .map(|&p| (p >> level) as u64)
            .product()
    };
    // MACs of one convolution: cin * cout * k^3 * output voxels.
    let conv_macs =
        |cin: usize, cout: usize, k: u64, v: u64| -> u64 { cin as u64 * cout as u64 * k * k * k * v };
    let res_macs = |cin: usize, cout: usize, v: u64| -> u64 {
        let mut m = conv_macs(cin, cout, 3, v) + conv_macs(cout, cout, 3, v);
        if cin != cout {
            m += conv_macs(cin, cout, 1, v);
        }
        m
    };

    let mut macs: u64 = 0;
    macs += res_macs(config.in_channels, w[0], vox(0));
    macs += (d[0] as u64 - 1) * res_macs(w[0], w[0], vox(0));
    for i in 1..NUM_STAGES {
        // Stride-1 conv at the incoming resolution, stride-2 conv and skip at
        // the halved resolution.
        macs += conv_macs(w[i - 1], w[i], 3, vox(i - 1));
        macs += conv_macs(w[i], w[i], 3, vox(i));
        macs += conv_macs(w[i - 1], w[i], 1, vox(i));
        macs += (d[i] as u64 - 1) * res_macs(w[i], w[i], vox(i));
    }
    for i in (0..NUM_STAGES - 1).rev() {
        macs += conv_macs(w[i + 1], w[i], 1, vox(i));
        macs += res_macs(2 * w[i], w[i], vox(i));
        macs += (d[i] as u64 - 1) * res_macs(w[i], w[i], vox(i));
    }
    macs += conv_macs(w[0], config.num_classes, 1, vox(0));
    Ok(2 * macs)
}
