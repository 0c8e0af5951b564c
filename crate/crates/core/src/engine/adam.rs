use super::config::AdamConfig;
use crate::error::{Error, Result};
use crate::nn::NetworkParams;
use crate::tensor::Tensor;

/// One bias-corrected Adam update of a flat buffer at step `t` (1-based).
#[allow(clippy::too_many_arguments)]
pub fn adam_update(value: &mut [f32], m: &mut [f32], v: &mut [f32], grad: &[f32], cfg: &AdamConfig, lr: f64, t: u64) {
    debug_assert!(t >= 1);
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    for i in 0..value.len() {
        let g = grad[i] as f64;
        let mi = b1 * m[i] as f64 + (1.0 - b1) * g;
        let vi = b2 * v[i] as f64 + (1.0 - b2) * g * g;
        m[i] = mi as f32;
        v[i] = vi as f32;
        let step = lr * (mi / c1) / ((vi / c2).sqrt() + cfg.eps);
        value[i] = (value[i] as f64 - step) as f32;
    }
}

/// Apply one Adam step to every parameter; `grads` follows manifest order.
pub fn adam_step(params: &mut NetworkParams, grads: &[Tensor<f32>], cfg: &AdamConfig, lr: f64) -> Result<()> {
    if grads.len() != params.params.len() {
        return Err(Error::InvalidParameter(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.params.len()
        )));
    }
    for (p, g) in params.params.iter().zip(grads) {
        if g.shape() != p.value.shape() {
            return Err(Error::shape("adam_step", p.value.shape(), g.shape()));
        }
    }
    params.adam_step += 1;
    let t = params.adam_step;
    for (p, g) in params.params.iter_mut().zip(grads) {
        adam_update(p.value.data_mut(), p.m.data_mut(), p.v.data_mut(), g.data(), cfg, lr, t);
    }
    Ok(())
}
