//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<P> {
    pub step: u64,
    pub first_moment: P,
    pub second_moment: P,
}

impl<P> AdamState<P> {
    pub fn new<F: Real>(params: &P) -> Self
    where
        P: ParamSet<F>,
    {
        Self { step: 0, first_moment: params.zeros_like(), second_moment: params.zeros_like() }
    }
}

/// One update. Fails without touching anything if a gradient is non-finite.
pub fn adam_step<F: Real, P: ParamSet<F>>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState<P>,
    hp: &AdamConfig,
) -> Result<()> {
    let g = grads.tensors();
    if g.iter().any(|(_, t)| !t.all_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    let p = params.tensors_mut();
    if p.len() != g.len() || p.iter().zip(&g).any(|(a, (_, b))| a.data.len() != b.data.len()) {
        return Err(Error::ShapeMismatch);
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - libm::pow(hp.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(hp.beta2, t as f64);
    let (b1, b2) = (F::from_f64(hp.beta1), F::from_f64(hp.beta2));
    let (one_b1, one_b2) = (F::from_f64(1.0 - hp.beta1), F::from_f64(1.0 - hp.beta2));
    let step_size = F::from_f64(hp.lr / bc1);
    let inv_bc2 = F::from_f64(1.0 / bc2);
    let eps = F::from_f64(hp.eps);
    let m = state.first_moment.tensors_mut();
    let v = state.second_moment.tensors_mut();
    for (((pt, (_, gt)), mt), vt) in p.into_iter().zip(g.iter()).zip(m).zip(v) {
        for i in 0..pt.data.len() {
            let gi = gt.data[i];
            let mi = b1 * mt.data[i] + one_b1 * gi;
            let vi = b2 * vt.data[i] + one_b2 * gi * gi;
            mt.data[i] = mi;
            vt.data[i] = vi;
            pt.data[i] -= step_size * mi / ((vi * inv_bc2).sqrt() + eps);
        }
    }
    Ok(())
}
