//! Case- and dataset-level evaluation with sliding-window inference.

use serde::{Deserialize, Serialize};

use super::dice::dice;
use super::hausdorff::{hausdorff, Hausdorff, HdMode};
use crate::data::{pad_to_multiple, zscore_normalize, Manifest, Modality, Sample, SegMask, Split,
                  Volume, PAD_MULTIPLE};
use crate::error::{Error, Result};
use crate::net::{infer_logits, NetworkParams};
use crate::tensor::kernels::{softmax_channels_forward, sum_fixed};
use crate::tensor::Tensor;

/// Per-voxel argmax over the channel axis of [1, C, D, H, W] logits; ties go
/// to the lowest class index.
pub fn argmax_mask(logits: &Tensor) -> Result<SegMask> {
    let [n, c, d, h, w] = logits.dims5()?;
    if n != 1 {
        return Err(Error::InvalidArgument(format!(
            "argmax_mask: expected a single-item batch, got {n}"
        )));
    }
    if c < 2 || c > 256 {
        return Err(Error::InvalidArgument(format!(
            "argmax_mask: {c} classes out of range [2, 256]"
        )));
    }
    let spatial = d * h * w;
    let values = logits.values();
    let mut labels = vec![0u8; spatial];
    for (i, label) in labels.iter_mut().enumerate() {
        let mut best = values[i];
        for k in 1..c {
            let v = values[k * spatial + i];
            if v > best {
                best = v;
                *label = k as u8;
            }
        }
    }
    SegMask::new([d, h, w], labels, c)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub case_id: String,
    pub modality: Modality,
    pub dsc: f64,
    pub hd: Hausdorff,
}

/// Score one predicted mask against the reference.
pub fn evaluate_masks(
    pred: &SegMask,
    reference: &SegMask,
    spacing: [f64; 3],
    mode: HdMode,
) -> Result<(f64, Hausdorff)> {
    Ok((dice(pred, reference)?, hausdorff(pred, reference, spacing, mode)?))
}

/// Score logits against the reference (argmax first).
pub fn evaluate_logits(
    logits: &Tensor,
    reference: &SegMask,
    spacing: [f64; 3],
    mode: HdMode,
) -> Result<(f64, Hausdorff)> {
    evaluate_masks(&argmax_mask(logits)?, reference, spacing, mode)
}

/// Window start offsets: stride `patch/2` (50% overlap), with the final
/// window clamped so the whole axis is covered.
pub fn window_origins(dim: usize, patch: usize) -> Vec<usize> {
    let stride = (patch / 2).max(1);
    let mut origins = vec![0];
    while origins.last().unwrap() + patch < dim {
        let next = (origins.last().unwrap() + stride).min(dim - patch);
        origins.push(next);
    }
    origins
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOptions {
    pub patch: [usize; 3],
    pub hd_mode: HdMode,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            patch: [32; 3],
            hd_mode: HdMode::Full,
        }
    }
}

/// Full-volume prediction: z-score, pad to multiples of 32, sliding windows
/// at 50% overlap, softmax fused by per-voxel mean, argmax, crop.
///
/// The argmax is taken over the per-class softmax sums; every class shares a
/// voxel's window count, so this equals the argmax of the means without
/// introducing new round-off ties.
pub fn predict_volume(
    net: &NetworkParams,
    volume: &Volume,
    patch: [usize; 3],
) -> Result<SegMask> {
    let classes = net.config.num_classes;
    if patch.iter().any(|&p| p == 0 || p % PAD_MULTIPLE != 0) {
        return Err(Error::InvalidArgument(format!(
            "inference patch {patch:?} must be positive multiples of {PAD_MULTIPLE}"
        )));
    }
    let normalized = zscore_normalize(volume)?;
    let padded = pad_to_multiple(&Sample::unlabeled(normalized), PAD_MULTIPLE);
    let dims = padded.volume.dims;
    if (0..3).any(|a| patch[a] > dims[a]) {
        return Err(Error::InvalidArgument(format!(
            "inference patch {patch:?} exceeds padded volume {dims:?}"
        )));
    }

    let spatial = dims[0] * dims[1] * dims[2];
    let mut fused = vec![0.0f64; classes * spatial];
    let [pd, ph, pw] = patch;
    let pvox = pd * ph * pw;
    for &od in &window_origins(dims[0], pd) {
        for &oh in &window_origins(dims[1], ph) {
            for &ow in &window_origins(dims[2], pw) {
                let mut data = Vec::with_capacity(pvox);
                for d in od..od + pd {
                    for h in oh..oh + ph {
                        let row = (d * dims[1] + h) * dims[2] + ow;
                        data.extend_from_slice(&padded.volume.data[row..row + pw]);
                    }
                }
                let input = Tensor::new(vec![1, 1, pd, ph, pw], data)?;
                let logits = infer_logits(net, &input)?;
                let probs = softmax_channels_forward(logits.values(), [1, classes, pd, ph, pw]);
                for k in 0..classes {
                    for d in 0..pd {
                        for h in 0..ph {
                            let src = ((k * pd + d) * ph + h) * pw;
                            let dst = k * spatial + ((od + d) * dims[1] + (oh + h)) * dims[2] + ow;
                            for w in 0..pw {
                                fused[dst + w] += probs[src + w];
                            }
                        }
                    }
                }
            }
        }
    }

    // Argmax of the fused probabilities, cropped to the original grid.
    let odims = volume.dims;
    let mut labels = vec![0u8; odims.iter().product()];
    let mut i = 0;
    for d in 0..odims[0] {
        for h in 0..odims[1] {
            for w in 0..odims[2] {
                let at = (d * dims[1] + h) * dims[2] + w;
                let mut best = fused[at];
                let mut arg = 0u8;
                for k in 1..classes {
                    let v = fused[k * spatial + at];
                    if v > best {
                        best = v;
                        arg = k as u8;
                    }
                }
                labels[i] = arg;
                i += 1;
            }
        }
    }
    SegMask::new(odims, labels, classes)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportMeta {
    pub checkpoint: String,
    pub manifest_seed: u64,
    pub split: String,
    pub hd_mode: HdMode,
    pub units: String,
    pub timestamp_unix: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub count: usize,
    pub mean_dsc: f64,
    /// Mean over cases with a numeric HD; absent when every case was excluded.
    pub mean_hd: Option<f64>,
    pub hd_excluded: usize,
}

/// Recompute aggregates from per-case entries. Report construction uses this
/// same function, so stored and recomputed aggregates agree bitwise.
pub fn aggregate(cases: &[CaseMetrics]) -> Aggregates {
    let dscs: Vec<f64> = cases.iter().map(|c| c.dsc).collect();
    let hds: Vec<f64> = cases.iter().filter_map(|c| c.hd.value()).collect();
    Aggregates {
        count: cases.len(),
        mean_dsc: if dscs.is_empty() { 0.0 } else { sum_fixed(&dscs) / dscs.len() as f64 },
        mean_hd: (!hds.is_empty()).then(|| sum_fixed(&hds) / hds.len() as f64),
        hd_excluded: cases.len() - hds.len(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub metadata: ReportMeta,
    pub aggregates: Aggregates,
    pub per_case: Vec<CaseMetrics>,
}

impl MetricReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Flat CSV: case_id, modality, dsc, hd, hd_status. The hd column is
    /// empty for status-only cases.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("case_id,modality,dsc,hd,hd_status\n");
        for c in &self.per_case {
            let hd = c.hd.value().map(|v| v.to_string()).unwrap_or_default();
            let modality = serde_json::to_value(c.modality)
                .expect("modality serializes")
                .as_str()
                .expect("modality is a string")
                .to_string();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                c.case_id,
                modality,
                c.dsc,
                hd,
                c.hd.status_str()
            ));
        }
        out
    }
}

/// Evaluate every labeled case of a split with sliding-window inference.
/// Cases are scored in manifest order; the result is deterministic apart
/// from the timestamp.
pub fn evaluate_dataset(
    net: &NetworkParams,
    manifest: &Manifest,
    split: Split,
    options: &EvalOptions,
    checkpoint_id: &str,
) -> Result<MetricReport> {
    let cases: Vec<_> = manifest.labeled_in(split).collect();
    if cases.is_empty() {
        return Err(Error::Dataset(format!(
            "split {split:?} has no labeled cases to evaluate"
        )));
    }
    let mut per_case = Vec::with_capacity(cases.len());
    for case in cases {
        let with_case = |e: Error| Error::Dataset(format!("case {}: {e}", case.id));
        let sample = manifest
            .load_sample(case, net.config.num_classes)
            .map_err(with_case)?;
        let reference = sample.mask.as_ref().expect("labeled case has a mask");
        let pred = predict_volume(net, &sample.volume, options.patch).map_err(with_case)?;
        let (dsc, hd) =
            evaluate_masks(&pred, reference, sample.volume.spacing, options.hd_mode)
                .map_err(with_case)?;
        per_case.push(CaseMetrics {
            case_id: case.id.clone(),
            modality: case.modality,
            dsc,
            hd,
        });
    }
    Ok(MetricReport {
        metadata: ReportMeta {
            checkpoint: checkpoint_id.to_string(),
            manifest_seed: manifest.seed,
            split: format!("{split:?}").to_lowercase(),
            hd_mode: options.hd_mode,
            units: "mm".into(),
            timestamp_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        },
        aggregates: aggregate(&per_case),
        per_case,
    })
}
