//! AdamW with decoupled weight decay, and global-norm gradient clipping.

use std::collections::BTreeMap;

use crate::error::{AutodiffError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moment estimates for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> Moments<T> {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
        }
    }
}

/// One AdamW update of `param` in place. `step` is the 1-based update count
/// used for bias correction.
///
/// The decay term shrinks the parameter by `lr * weight_decay * param`
/// independently of the gradient.
pub fn adamw_update<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    moments: &mut Moments<T>,
    step: u64,
    lr: f64,
    config: &AdamWConfig,
) {
    let bc1 = 1.0 - config.beta1.powf(step as f64);
    let bc2 = 1.0 - config.beta2.powf(step as f64);
    let (b1, b2) = (T::lit(config.beta1), T::lit(config.beta2));
    let (one_b1, one_b2) = (T::lit(1.0 - config.beta1), T::lit(1.0 - config.beta2));
    let (bc1, bc2) = (T::lit(bc1), T::lit(bc2));
    let decay = T::lit(lr * config.weight_decay);
    let (lr, eps) = (T::lit(lr), T::lit(config.eps));
    for (((w, &g), m), v) in param
        .iter_mut()
        .zip(grad)
        .zip(moments.m.iter_mut())
        .zip(moments.v.iter_mut())
    {
        *w = *w - decay * *w;
        *m = b1 * *m + one_b1 * g;
        *v = b2 * *v + one_b2 * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *w -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    config: AdamWConfig,
    step: u64,
    state: BTreeMap<String, Moments<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            state: BTreeMap::new(),
        }
    }

    /// Rebuilds an optimizer from saved moments.
    pub fn from_state(config: AdamWConfig, step: u64, state: BTreeMap<String, Moments<T>>) -> Self {
        Self { config, step, state }
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn state(&self) -> &BTreeMap<String, Moments<T>> {
        &self.state
    }

    /// Applies one update to every named parameter that carries a gradient.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step<'a, I>(&mut self, params: I, lr: f64) -> Result<()>
    where
        I: IntoIterator<Item = (String, &'a mut Tensor<T>)>,
    {
        let params: Vec<_> = params.into_iter().collect();
        for (name, t) in &params {
            if let Some(g) = t.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(AutodiffError::NonFiniteGradient(name.clone()));
                }
            }
        }
        self.step += 1;
        for (name, t) in params {
            if !t.requires_grad() {
                continue;
            }
            let n = t.numel();
            let moments = self.state.entry(name.clone()).or_insert_with(|| Moments::zeros(n));
            if moments.m.len() != n {
                return Err(AutodiffError::InvalidArgument {
                    op: "adamw",
                    msg: format!("optimizer state for `{name}` has {} entries, parameter has {n}", moments.m.len()),
                });
            }
            let (data, grad) = t.data_and_grad_mut();
            if let Some(grad) = grad {
                adamw_update(data, grad, moments, self.step, lr, &self.config);
            }
        }
        Ok(())
    }
}

/// L2 norm over all gradient buffers, accumulated in f64.
pub fn global_norm<T: Scalar>(grads: &[&[T]]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|&v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients by `max_norm / norm` when their joint L2 norm
/// exceeds `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [&mut [T]], max_norm: f64) -> f64 {
    let norm = {
        let views: Vec<&[T]> = grads.iter().map(|g| &**g).collect();
        global_norm(&views)
    };
    if norm > max_norm {
        let scale = T::lit(max_norm / norm);
        for g in grads.iter_mut() {
            g.iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

/// [`clip_global_norm`] over the stored gradients of `tensors`.
pub fn clip_grad_norm<'a, T: Scalar>(tensors: impl IntoIterator<Item = &'a mut Tensor<T>>, max_norm: f64) -> f64 {
    let mut grads: Vec<&mut [T]> = tensors.into_iter().filter_map(|t| t.grad_mut()).collect();
    clip_global_norm(&mut grads, max_norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_decay() -> AdamWConfig {
        AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut w = [1.0f64];
        let mut mom = Moments::zeros(1);
        adamw_update(&mut w, &[1.0], &mut mom, 1, 0.1, &no_decay());
        assert!((w[0] - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-12);
        assert!((w[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut w = [0.3f64, -2.0, 7.5];
        let mut mom = Moments::zeros(3);
        adamw_update(&mut w, &[0.0; 3], &mut mom, 1, 0.1, &no_decay());
        assert_eq!(w, [0.3, -2.0, 7.5]);
    }

    #[test]
    fn decay_is_decoupled_from_gradient() {
        let cfg = AdamWConfig {
            weight_decay: 0.01,
            ..AdamWConfig::default()
        };
        let mut w = [2.0f64];
        let mut mom = Moments::zeros(1);
        adamw_update(&mut w, &[0.0], &mut mom, 1, 0.1, &cfg);
        assert!((w[0] - (2.0 - 0.1 * 0.01 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_rejects_step() {
        let mut t = Tensor::<f32>::param(vec![2], vec![1.0, 1.0]).unwrap();
        t.accumulate_grad(&[f32::NAN, 0.0]).unwrap();
        let mut opt = AdamW::new(AdamWConfig::default());
        let err = opt.step([("layer.w".to_string(), &mut t)], 0.1).unwrap_err();
        assert_eq!(err, AutodiffError::NonFiniteGradient("layer.w".into()));
        assert_eq!(t.data(), &[1.0, 1.0]);
        assert_eq!(opt.steps_taken(), 0);
    }

    #[test]
    fn clip_scales_to_max_norm() {
        let mut g = [3.0f64, 4.0];
        let norm = clip_global_norm(&mut [&mut g[..]], 2.0);
        assert_eq!(norm, 5.0);
        assert!((g[0] - 1.2).abs() < 1e-12 && (g[1] - 1.6).abs() < 1e-12);
    }

    #[test]
    fn clip_leaves_small_and_zero_grads() {
        let mut g = [0.6f64, 0.8];
        clip_global_norm(&mut [&mut g[..]], 2.0);
        assert_eq!(g, [0.6, 0.8]);
        let mut z = [0.0f32; 4];
        clip_global_norm(&mut [&mut z[..]], 2.0);
        assert_eq!(z, [0.0; 4]);
    }
}
