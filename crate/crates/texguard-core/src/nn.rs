//! Shared building blocks for the small networks in this crate: parameter
//! staging onto a tape, deterministic initializers, and the ConvBlock
//! (convolution + batch norm + ReLU) unit every model is assembled from.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::Result;
use crate::ops;
use crate::params::ModelParams;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Leaf nodes for every parameter entry, keyed by name. Staging all entries
/// up front keeps node ids stable and lets the caller pull gradients back
/// out by name after `backward`.
pub struct ParamNodes {
    map: BTreeMap<String, NodeId>,
}

impl ParamNodes {
    pub fn stage<T: Scalar>(tape: &mut Tape<T>, params: &ModelParams<T>) -> Self {
        let mut map = BTreeMap::new();
        for (name, tensor) in params.iter() {
            map.insert(name.to_string(), tape.leaf(tensor.clone()));
        }
        Self { map }
    }

    pub fn get(&self, name: &str) -> Result<NodeId> {
        self.map
            .get(name)
            .copied()
            .ok_or_else(|| crate::CoreError::MissingWeight(name.to_string()))
    }

    pub fn names(&self) -> Vec<&str> {
        self.map.keys().map(|k| k.as_str()).collect()
    }

    /// Gradients for every staged parameter, zeros where detached.
    pub fn grads<T: Scalar>(
        &self,
        tape: &Tape<T>,
        grads: &[Option<Tensor<T>>],
    ) -> BTreeMap<String, Tensor<T>> {
        self.map
            .iter()
            .map(|(name, &id)| (name.clone(), tape.grad_of(grads, id)))
            .collect()
    }
}

/// He-normal init for a conv kernel plus zero bias.
pub fn init_conv<T: Scalar>(
    params: &mut ModelParams<T>,
    prefix: &str,
    out_c: usize,
    in_c: usize,
    k: usize,
    rng: &mut Rng,
) {
    let fan_in = in_c * k * k;
    let std = libm::sqrt(2.0 / fan_in as f64);
    let data: Vec<T> = (0..out_c * in_c * k * k)
        .map(|_| T::from_f64(rng.normal_f64() * std))
        .collect();
    params.insert(
        &format!("{prefix}.w"),
        Tensor::new(&[out_c, in_c, k, k], data).unwrap(),
    );
    params.insert(&format!("{prefix}.b"), Tensor::zeros(&[out_c]));
}

/// Batch-norm affine parameters plus running statistics (mean 0, var 1).
pub fn init_bn<T: Scalar>(params: &mut ModelParams<T>, prefix: &str, c: usize) {
    params.insert(&format!("{prefix}.gamma"), Tensor::full(&[c], T::one()));
    params.insert(&format!("{prefix}.beta"), Tensor::zeros(&[c]));
    params.insert(&format!("{prefix}.mean"), Tensor::zeros(&[c]));
    params.insert(&format!("{prefix}.var"), Tensor::full(&[c], T::one()));
}

/// Xavier-normal init for a dense layer plus zero bias.
pub fn init_linear<T: Scalar>(
    params: &mut ModelParams<T>,
    prefix: &str,
    out_d: usize,
    in_d: usize,
    rng: &mut Rng,
) {
    let std = libm::sqrt(2.0 / (in_d + out_d) as f64);
    let data: Vec<T> = (0..out_d * in_d)
        .map(|_| T::from_f64(rng.normal_f64() * std))
        .collect();
    params.insert(
        &format!("{prefix}.w"),
        Tensor::new(&[out_d, in_d], data).unwrap(),
    );
    params.insert(&format!("{prefix}.b"), Tensor::zeros(&[out_d]));
}

pub fn init_layer_norm<T: Scalar>(params: &mut ModelParams<T>, prefix: &str, d: usize) {
    params.insert(&format!("{prefix}.gamma"), Tensor::full(&[d], T::one()));
    params.insert(&format!("{prefix}.beta"), Tensor::zeros(&[d]));
}

/// Register the ConvBlock parameter set under `prefix`.
pub fn init_conv_block<T: Scalar>(
    params: &mut ModelParams<T>,
    prefix: &str,
    out_c: usize,
    in_c: usize,
    k: usize,
    rng: &mut Rng,
) {
    init_conv(params, &format!("{prefix}.conv"), out_c, in_c, k, rng);
    init_bn(params, &format!("{prefix}.bn"), out_c);
}

/// Batch statistics captured during a training-mode forward pass, to be
/// folded into the running statistics afterwards.
pub struct BnStats<T: Scalar> {
    pub prefix: String,
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

/// Spatial border policy for the ConvBlock convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Border {
    Zero,
    Replicate,
}

/// ConvBlock forward: conv (stride 1, same padding) -> batch norm -> ReLU.
/// Training mode uses batch statistics and reports them; inference mode uses
/// the stored running statistics.
pub fn conv_block_forward<T: Scalar>(
    tape: &mut Tape<T>,
    nodes: &ParamNodes,
    params: &ModelParams<T>,
    prefix: &str,
    x: NodeId,
    train: bool,
    border: Border,
) -> Result<(NodeId, Option<BnStats<T>>)> {
    let w = nodes.get(&format!("{prefix}.conv.w"))?;
    let b = nodes.get(&format!("{prefix}.conv.b"))?;
    let k = tape.value(w).shape()[2];
    let y = match border {
        Border::Zero => ops::conv2d(tape, x, w, b, 1, k / 2)?,
        Border::Replicate => {
            let padded = ops::pad_replicate(tape, x, k / 2)?;
            ops::conv2d(tape, padded, w, b, 1, 0)?
        }
    };
    let gamma = nodes.get(&format!("{prefix}.bn.gamma"))?;
    let beta = nodes.get(&format!("{prefix}.bn.beta"))?;
    let eps = T::from_f64(BN_EPS);
    let (y, stats) = if train {
        let (y, mean, var) = ops::batch_norm_train(tape, y, gamma, beta, eps)?;
        (
            y,
            Some(BnStats {
                prefix: prefix.to_string(),
                mean,
                var,
            }),
        )
    } else {
        let mean = params.get(&format!("{prefix}.bn.mean"))?;
        let var = params.get(&format!("{prefix}.bn.var"))?;
        (
            ops::batch_norm_infer(tape, y, gamma, beta, mean, var, eps)?,
            None,
        )
    };
    Ok((ops::relu(tape, y), stats))
}

/// Exponential moving-average update of the stored running statistics.
pub fn update_running_stats<T: Scalar>(
    params: &mut ModelParams<T>,
    stats: &[BnStats<T>],
) -> Result<()> {
    let momentum = T::from_f64(BN_MOMENTUM);
    for s in stats {
        for (suffix, fresh) in [("mean", &s.mean), ("var", &s.var)] {
            let slot = params.get_mut(&format!("{}.bn.{suffix}", s.prefix))?;
            for (r, &b) in slot.data_mut().iter_mut().zip(fresh.data()) {
                *r = (T::one() - momentum) * *r + momentum * b;
            }
        }
    }
    Ok(())
}
