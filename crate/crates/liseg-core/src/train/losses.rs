//! Loss assembly for dual-network co-training: supervised cross-entropy,
//! cross pseudo supervision, and the ramped combination weight.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, TensorId};

/// Per-voxel argmax class indices of a probability tensor [N,C,D,H,W],
/// flattened to N·D·H·W. Ties break toward the lower class index. The result
/// is a plain label buffer, so using it as a cross-entropy target carries no
/// gradient back to the producing network.
pub fn pseudo_labels(probs: &Tensor) -> Result<Vec<u8>> {
    let [n, c, d, h, w] = probs.dims5()?;
    if !(2..=256).contains(&c) {
        return Err(Error::InvalidArgument(format!(
            "pseudo_labels: {c} classes outside 2..=256"
        )));
    }
    let spatial = d * h * w;
    let vals = probs.values();
    let mut out = Vec::with_capacity(n * spatial);
    for b in 0..n {
        let base = b * c * spatial;
        for v in 0..spatial {
            let mut best = vals[base + v];
            let mut arg = 0u8;
            for k in 1..c {
                let x = vals[base + k * spatial + v];
                if x > best {
                    best = x;
                    arg = k as u8;
                }
            }
            out.push(arg);
        }
    }
    Ok(out)
}

/// Supervised term: CE(p1, gt) + CE(p2, gt), each a mean over batch and
/// voxels. `p1`/`p2` are softmax probability tensors on the tape.
pub fn supervised_loss(
    tape: &mut Tape,
    p1: TensorId,
    p2: TensorId,
    gt: &[u8],
) -> Result<TensorId> {
    let a = tape.cross_entropy(p1, gt)?;
    let b = tape.cross_entropy(p2, gt)?;
    tape.add(a, b)
}

/// Cross pseudo supervision term: each network is scored against the other's
/// argmax pseudo labels. Targets are materialized from the current forward
/// values, so gradients flow only through the prediction side of each CE.
/// Swapping `p1` and `p2` leaves the value unchanged.
pub fn cps_loss(tape: &mut Tape, p1: TensorId, p2: TensorId) -> Result<TensorId> {
    let y2 = pseudo_labels(tape.value(p2))?;
    let y1 = pseudo_labels(tape.value(p1))?;
    let a = tape.cross_entropy(p1, &y2)?;
    let b = tape.cross_entropy(p2, &y1)?;
    tape.add(a, b)
}

/// Combination weight: linear ramp from 0 to `lambda_max` over the first
/// `rampup_epochs` epochs, then constant.
pub fn lambda_schedule(epoch: usize, lambda_max: f64, rampup_epochs: usize) -> f64 {
    if rampup_epochs == 0 || epoch >= rampup_epochs {
        lambda_max
    } else {
        lambda_max * epoch as f64 / rampup_epochs as f64
    }
}

/// One step's logged loss components. `total` is always the same float
/// expression the tape evaluates: l_sup + lambda·(l_cps_labeled +
/// l_cps_unlabeled), in that association.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_sup: f64,
    pub l_cps_labeled: f64,
    pub l_cps_unlabeled: f64,
    pub lambda: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(l_sup: f64, l_cps_labeled: f64, l_cps_unlabeled: f64, lambda: f64) -> Self {
        LossBreakdown {
            l_sup,
            l_cps_labeled,
            l_cps_unlabeled,
            lambda,
            total: l_sup + lambda * (l_cps_labeled + l_cps_unlabeled),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.l_sup.is_finite()
            && self.l_cps_labeled.is_finite()
            && self.l_cps_unlabeled.is_finite()
            && self.total.is_finite()
    }
}
