//! Adaptive moment estimation with bias correction, operating on named
//! parameter collections.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};

use crate::error::{CoreError, Result};
use crate::params::ModelParams;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig<T: Scalar> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> AdamConfig<T> {
    pub fn with_lr(lr: T) -> Self {
        Self {
            lr,
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            eps: T::from_f64(1e-8),
        }
    }
}

/// Per-parameter first/second moment buffers plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T: Scalar> {
    m: BTreeMap<String, Tensor<T>>,
    v: BTreeMap<String, Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> Default for AdamState<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        Self {
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            step: 0,
        }
    }
}

/// One optimizer step. `grads` must contain an entry for every parameter
/// name; moments are lazily allocated on first touch.
pub fn optimizer_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &BTreeMap<String, Tensor<T>>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig<T>,
) -> Result<()> {
    // Verify key agreement before mutating anything.
    for name in params.names() {
        if !grads.contains_key(name) {
            return Err(CoreError::MissingWeight(alloc::format!(
                "gradient for `{name}`"
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = T::one() - cfg.beta1.powi(t);
    let bc2 = T::one() - cfg.beta2.powi(t);
    let names: alloc::vec::Vec<String> =
        params.names().iter().map(|s| s.to_string()).collect();
    for name in names {
        let g = &grads[&name];
        let p = params.get_mut(&name)?;
        if g.shape() != p.shape() {
            return Err(CoreError::ShapeMismatch(alloc::format!(
                "gradient shape {:?} vs parameter `{name}` shape {:?}",
                g.shape(),
                p.shape()
            )));
        }
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.shape()));
        for i in 0..p.len() {
            let gi = g.data()[i];
            let mi = cfg.beta1 * m.data()[i] + (T::one() - cfg.beta1) * gi;
            let vi = cfg.beta2 * v.data()[i] + (T::one() - cfg.beta2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            p.data_mut()[i] = p.data()[i] - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
