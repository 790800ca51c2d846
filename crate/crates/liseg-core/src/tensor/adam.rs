//! Adam optimizer over a named parameter set.

use std::collections::BTreeMap;

use super::Tensor;
use crate::error::{Error, Result};

pub const ADAM_DEFAULT_BETA1: f64 = 0.9;
pub const ADAM_DEFAULT_BETA2: f64 = 0.999;
pub const ADAM_DEFAULT_EPS: f64 = 1e-8;

/// First/second-moment state for one parameter set. Moment buffers are
/// created lazily on the first step and always match their parameter shapes.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: ADAM_DEFAULT_BETA1,
            beta2: ADAM_DEFAULT_BETA2,
            eps: ADAM_DEFAULT_EPS,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One bias-corrected update over every (name, gradient) pair. Gradients
    /// must be finite; a NaN/Inf gradient aborts before touching any state.
    pub fn step(
        &mut self,
        params: &mut BTreeMap<String, Tensor>,
        grads: &BTreeMap<String, Vec<f64>>,
    ) -> Result<()> {
        for (name, g) in grads {
            if !g.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("adam_step: gradient of {name}"),
                });
            }
            if !params.contains_key(name) {
                return Err(Error::InvalidArgument(format!(
                    "adam_step: gradient for unknown parameter {name}"
                )));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, g) in grads {
            let p = params.get_mut(name).expect("checked above");
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            if m.len() != g.len() || p.numel() != g.len() {
                return Err(Error::shape(
                    format!("adam_step: {name}"),
                    format!("{}", p.numel()),
                    format!("{}", g.len()),
                ));
            }
            for ((pv, mv), (vv, &gv)) in p
                .values_mut()
                .iter_mut()
                .zip(m.iter_mut())
                .zip(v.iter_mut().zip(g))
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * (gv * gv);
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
