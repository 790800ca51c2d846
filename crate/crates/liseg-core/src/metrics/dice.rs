//! Dice similarity coefficient on binary masks.

use crate::data::SegMask;
use crate::error::{Error, Result};

fn check_binary(name: &str, mask: &SegMask) -> Result<()> {
    if mask.labels.iter().any(|&l| l > 1) {
        return Err(Error::InvalidArgument(format!(
            "dice: {name} mask is not binary"
        )));
    }
    Ok(())
}

/// 2|A∩B| / (|A|+|B|); 1.0 when both masks are empty.
pub fn dice(pred: &SegMask, reference: &SegMask) -> Result<f64> {
    if pred.dims != reference.dims {
        return Err(Error::shape(
            "dice",
            format!("{:?}", reference.dims),
            format!("{:?}", pred.dims),
        ));
    }
    check_binary("pred", pred)?;
    check_binary("reference", reference)?;
    let mut inter = 0u64;
    let mut total = 0u64;
    for (&p, &r) in pred.labels.iter().zip(&reference.labels) {
        inter += (p == 1 && r == 1) as u64;
        total += (p == 1) as u64 + (r == 1) as u64;
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}
