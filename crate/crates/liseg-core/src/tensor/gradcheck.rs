//! Central finite-difference verification of analytic gradients.

use super::tape::{Tape, TensorId};
use super::Tensor;
use crate::error::{Error, Result};

pub const GRAD_CHECK_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// (input index, element index, analytic, finite-difference) at the max.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Compare analytic gradients of a scalar-valued graph against central finite
/// differences over every element of every input.
///
/// `build` must construct the same graph for any input values: it is called
/// once for the analytic pass and twice per element for the perturbed passes.
/// Relative error is |a - f| / max(1, |a|, |f|).
pub fn grad_check<F>(build: F, inputs: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[TensorId]) -> Result<TensorId>,
{
    let total: usize = inputs.iter().map(Tensor::numel).sum();
    if total > 10_000 {
        return Err(Error::InvalidArgument(format!(
            "grad_check: {total} elements exceed the finite-difference budget of 10000"
        )));
    }

    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &ids)?;
        if !tape.value(loss).is_scalar() {
            return Err(Error::InvalidArgument(
                "grad_check: graph output must be a scalar".into(),
            ));
        }
        Ok(tape.value(loss).item())
    };

    // Analytic pass.
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_grad()))
        .collect();
    let loss = build(&mut tape, &ids)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, t)| {
            tape.grad(id)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();
    drop(tape);

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: None,
    };
    for (k, grads) in analytic.iter().enumerate() {
        for j in 0..grads.len() {
            let orig = work[k].values()[j];
            work[k].values_mut()[j] = orig + h;
            let up = eval(&work)?;
            work[k].values_mut()[j] = orig - h;
            let down = eval(&work)?;
            work[k].values_mut()[j] = orig;

            let fd = (up - down) / (2.0 * h);
            let a = grads[j];
            let rel = (a - fd).abs() / f64::max(1.0, f64::max(a.abs(), fd.abs()));
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((k, j, a, fd));
            }
        }
    }
    Ok(report)
}
