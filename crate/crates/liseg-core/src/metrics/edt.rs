//! Exact Euclidean distance transform via the separable lower-envelope
//! (parabola) algorithm, with anisotropic spacing.
//!
//! Passes run along W, then H, then D, so a voxel's squared distance is
//! accumulated as (sd·Δd)² + ((sh·Δh)² + (sw·Δw)²) — a fixed association
//! order that brute-force checks can reproduce term for term.

use crate::data::SegMask;
use crate::error::{Error, Result};

/// One 1D pass: replace `f` (squared distances, +inf where unreached) with
/// min over q of (step·(p−q))² + f[q]. Positions are x_i = i·step.
fn dt_1d(f: &mut [f64], step: f64) {
    let n = f.len();
    // v[k] = source index of the k-th envelope parabola, z[k] = left edge of
    // the interval where it is lowest. Infinite inputs contribute nothing.
    let mut v: Vec<usize> = Vec::with_capacity(n);
    let mut z: Vec<f64> = Vec::with_capacity(n);
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let xq = q as f64 * step;
        let cq = f[q] + xq * xq;
        loop {
            match v.last() {
                None => {
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let xp = p as f64 * step;
                    let cp = f[p] + xp * xp;
                    let s = (cq - cp) / (2.0 * (xq - xp));
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        z.push(s);
                        break;
                    }
                }
            }
        }
        v.push(q);
    }
    if v.is_empty() {
        return; // the whole line is unreached
    }
    let mut out = vec![0.0; n];
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let xq = q as f64 * step;
        while k + 1 < v.len() && z[k + 1] < xq {
            k += 1;
        }
        let p = v[k];
        let dx = xq - p as f64 * step;
        *o = dx * dx + f[p];
    }
    f.copy_from_slice(&out);
}

/// Exact distance (mm) from every voxel center to the nearest foreground
/// voxel center. Errors on an empty mask.
pub fn distance_transform(mask: &SegMask, spacing: [f64; 3]) -> Result<Vec<f64>> {
    if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "distance_transform: spacing {spacing:?} must be positive"
        )));
    }
    if mask.foreground_count() == 0 {
        return Err(Error::DegenerateInput {
            op: "distance_transform".into(),
            detail: "mask has no foreground".into(),
        });
    }
    let [nd, nh, nw] = mask.dims;
    let mut sq: Vec<f64> = mask
        .labels
        .iter()
        .map(|&l| if l != 0 { 0.0 } else { f64::INFINITY })
        .collect();

    // Along W: rows are contiguous.
    for row in sq.chunks_mut(nw) {
        dt_1d(row, spacing[2]);
    }
    // Along H and D: gather strided lines into a scratch buffer.
    let mut line = vec![0.0; nh.max(nd)];
    for d in 0..nd {
        for w in 0..nw {
            for h in 0..nh {
                line[h] = sq[(d * nh + h) * nw + w];
            }
            dt_1d(&mut line[..nh], spacing[1]);
            for h in 0..nh {
                sq[(d * nh + h) * nw + w] = line[h];
            }
        }
    }
    for h in 0..nh {
        for w in 0..nw {
            for d in 0..nd {
                line[d] = sq[(d * nh + h) * nw + w];
            }
            dt_1d(&mut line[..nd], spacing[0]);
            for d in 0..nd {
                sq[(d * nh + h) * nw + w] = line[d];
            }
        }
    }

    for v in &mut sq {
        *v = v.sqrt();
    }
    Ok(sq)
}
