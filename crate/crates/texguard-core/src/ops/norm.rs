//! Normalization layers: per-channel batch norm over (N,H,W) and per-row
//! layer norm.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

fn check_bn_args<T: Scalar>(
    tape: &Tape<T>,
    x: NodeId,
    gamma: NodeId,
    beta: NodeId,
    eps: T,
) -> Result<(usize, usize, usize, usize)> {
    let (n, c, h, w) = match tape.value(x).shape() {
        [n, c, h, w] => (*n, *c, *h, *w),
        s => {
            return Err(CoreError::ShapeMismatch(format!(
                "batch_norm: expected NCHW input, got {s:?}"
            )))
        }
    };
    if tape.value(gamma).shape() != [c] || tape.value(beta).shape() != [c] {
        return Err(CoreError::ShapeMismatch(format!(
            "batch_norm: gamma/beta must have length {c}"
        )));
    }
    if eps <= T::zero() {
        return Err(CoreError::InvalidParam(format!("batch_norm: eps must be > 0")));
    }
    Ok((n, c, h, w))
}

fn channel_stats<T: Scalar>(
    xv: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
) -> (Vec<T>, Vec<T>) {
    let m = T::from_usize(n * h * w);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ni in 0..n {
        for ci in 0..c {
            let plane = &xv[((ni * c + ci) * h * w)..((ni * c + ci + 1) * h * w)];
            mean[ci] = mean[ci] + plane.iter().copied().sum::<T>();
        }
    }
    for v in &mut mean {
        *v = *v / m;
    }
    for ni in 0..n {
        for ci in 0..c {
            let plane = &xv[((ni * c + ci) * h * w)..((ni * c + ci + 1) * h * w)];
            let mu = mean[ci];
            var[ci] = var[ci] + plane.iter().map(|&x| (x - mu) * (x - mu)).sum::<T>();
        }
    }
    for v in &mut var {
        *v = *v / m;
    }
    (mean, var)
}

/// Batch normalization in training mode: statistics computed over the
/// (N,H,W) axes per channel. Also returns the batch mean and (biased)
/// variance so the caller can maintain running statistics.
pub fn batch_norm_train<T: Scalar>(
    tape: &mut Tape<T>,
    x: NodeId,
    gamma: NodeId,
    beta: NodeId,
    eps: T,
) -> Result<(NodeId, Tensor<T>, Tensor<T>)> {
    let (n, c, h, w) = check_bn_args(tape, x, gamma, beta, eps)?;
    let xv = tape.value(x).data();
    let (mean, var) = channel_stats(xv, n, c, h, w);
    let gv = tape.value(gamma).data().to_vec();
    let bv = tape.value(beta).data().to_vec();
    let mut out = vec![T::zero(); xv.len()];
    for ni in 0..n {
        for ci in 0..c {
            let inv_std = T::one() / (var[ci] + eps).sqrt();
            let base = (ni * c + ci) * h * w;
            for i in 0..h * w {
                out[base + i] = gv[ci] * (xv[base + i] - mean[ci]) * inv_std + bv[ci];
            }
        }
    }
    let out = Tensor::new(&[n, c, h, w], out)?;
    let mean_t = Tensor::new(&[c], mean)?;
    let var_t = Tensor::new(&[c], var)?;
    let node = tape.push(
        "batch_norm_train",
        vec![x, gamma, beta],
        out,
        Some(Box::new(move |ctx| {
            let xv = ctx.parents[0].data();
            let gv = ctx.parents[1].data();
            let g = ctx.grad.data();
            let (mean, var) = channel_stats(xv, n, c, h, w);
            let m = T::from_usize(n * h * w);
            let mut dx = vec![T::zero(); xv.len()];
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for ci in 0..c {
                let inv_std = T::one() / (var[ci] + eps).sqrt();
                // Reductions over the channel's normalization set.
                let mut sum_g = T::zero();
                let mut sum_gx = T::zero();
                for ni in 0..n {
                    let base = (ni * c + ci) * h * w;
                    for i in 0..h * w {
                        let xhat = (xv[base + i] - mean[ci]) * inv_std;
                        sum_g = sum_g + g[base + i];
                        sum_gx = sum_gx + g[base + i] * xhat;
                    }
                }
                dgamma[ci] = sum_gx;
                dbeta[ci] = sum_g;
                let mean_g = sum_g / m;
                let mean_gx = sum_gx / m;
                for ni in 0..n {
                    let base = (ni * c + ci) * h * w;
                    for i in 0..h * w {
                        let xhat = (xv[base + i] - mean[ci]) * inv_std;
                        dx[base + i] =
                            gv[ci] * inv_std * (g[base + i] - mean_g - xhat * mean_gx);
                    }
                }
            }
            vec![
                Tensor::new(&[n, c, h, w], dx).unwrap(),
                Tensor::new(&[c], dgamma).unwrap(),
                Tensor::new(&[c], dbeta).unwrap(),
            ]
        })),
    );
    Ok((node, mean_t, var_t))
}

/// Batch normalization in inference mode: a fixed per-channel affine map
/// built from running statistics.
pub fn batch_norm_infer<T: Scalar>(
    tape: &mut Tape<T>,
    x: NodeId,
    gamma: NodeId,
    beta: NodeId,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: T,
) -> Result<NodeId> {
    let (n, c, h, w) = check_bn_args(tape, x, gamma, beta, eps)?;
    if running_mean.shape() != [c] || running_var.shape() != [c] {
        return Err(CoreError::ShapeMismatch(format!(
            "batch_norm_infer: running stats must have length {c}"
        )));
    }
    let xv = tape.value(x).data();
    let gv = tape.value(gamma).data().to_vec();
    let bv = tape.value(beta).data().to_vec();
    let mean = running_mean.data().to_vec();
    let var = running_var.data().to_vec();
    let mut out = vec![T::zero(); xv.len()];
    for ni in 0..n {
        for ci in 0..c {
            let inv_std = T::one() / (var[ci] + eps).sqrt();
            let base = (ni * c + ci) * h * w;
            for i in 0..h * w {
                out[base + i] = gv[ci] * (xv[base + i] - mean[ci]) * inv_std + bv[ci];
            }
        }
    }
    let out = Tensor::new(&[n, c, h, w], out)?;
    Ok(tape.push(
        "batch_norm_infer",
        vec![x, gamma, beta],
        out,
        Some(Box::new(move |ctx| {
            let xv = ctx.parents[0].data();
            let gv = ctx.parents[1].data();
            let g = ctx.grad.data();
            let mut dx = vec![T::zero(); xv.len()];
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for ni in 0..n {
                for ci in 0..c {
                    let inv_std = T::one() / (var[ci] + eps).sqrt();
                    let base = (ni * c + ci) * h * w;
                    for i in 0..h * w {
                        dx[base + i] = g[base + i] * gv[ci] * inv_std;
                        dgamma[ci] =
                            dgamma[ci] + g[base + i] * (xv[base + i] - mean[ci]) * inv_std;
                        dbeta[ci] = dbeta[ci] + g[base + i];
                    }
                }
            }
            vec![
                Tensor::new(ctx.parents[0].shape(), dx).unwrap(),
                Tensor::new(&[c], dgamma).unwrap(),
                Tensor::new(&[c], dbeta).unwrap(),
            ]
        })),
    ))
}

/// Layer normalization over the last axis of a [t,d] tensor with learned
/// per-feature scale and shift.
pub fn layer_norm<T: Scalar>(
    tape: &mut Tape<T>,
    x: NodeId,
    gamma: NodeId,
    beta: NodeId,
    eps: T,
) -> Result<NodeId> {
    let (t, d) = super::as_2d(tape.value(x))?;
    if tape.value(gamma).shape() != [d] || tape.value(beta).shape() != [d] {
        return Err(CoreError::ShapeMismatch(format!(
            "layer_norm: gamma/beta must have length {d}"
        )));
    }
    if eps <= T::zero() {
        return Err(CoreError::InvalidParam(format!("layer_norm: eps must be > 0")));
    }
    let xv = tape.value(x).data();
    let gv = tape.value(gamma).data().to_vec();
    let bv = tape.value(beta).data().to_vec();
    let dm = T::from_usize(d);
    let mut out = vec![T::zero(); xv.len()];
    for r in 0..t {
        let row = &xv[r * d..(r + 1) * d];
        let mu = row.iter().copied().sum::<T>() / dm;
        let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / dm;
        let inv_std = T::one() / (var + eps).sqrt();
        for i in 0..d {
            out[r * d + i] = gv[i] * (row[i] - mu) * inv_std + bv[i];
        }
    }
    let out = Tensor::new(&[t, d], out)?;
    Ok(tape.push(
        "layer_norm",
        vec![x, gamma, beta],
        out,
        Some(Box::new(move |ctx| {
            let xv = ctx.parents[0].data();
            let gv = ctx.parents[1].data();
            let g = ctx.grad.data();
            let mut dx = vec![T::zero(); xv.len()];
            let mut dgamma = vec![T::zero(); d];
            let mut dbeta = vec![T::zero(); d];
            for r in 0..t {
                let row = &xv[r * d..(r + 1) * d];
                let mu = row.iter().copied().sum::<T>() / dm;
                let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / dm;
                let inv_std = T::one() / (var + eps).sqrt();
                let mut sum_h = T::zero();
                let mut sum_hx = T::zero();
                for i in 0..d {
                    let xhat = (row[i] - mu) * inv_std;
                    let hgrad = g[r * d + i] * gv[i];
                    dgamma[i] = dgamma[i] + g[r * d + i] * xhat;
                    dbeta[i] = dbeta[i] + g[r * d + i];
                    sum_h = sum_h + hgrad;
                    sum_hx = sum_hx + hgrad * xhat;
                }
                let mean_h = sum_h / dm;
                let mean_hx = sum_hx / dm;
                for i in 0..d {
                    let xhat = (row[i] - mu) * inv_std;
                    let hgrad = g[r * d + i] * gv[i];
                    dx[r * d + i] = inv_std * (hgrad - mean_h - xhat * mean_hx);
                }
            }
            vec![
                Tensor::new(&[t, d], dx).unwrap(),
                Tensor::new(&[d], dgamma).unwrap(),
                Tensor::new(&[d], dbeta).unwrap(),
            ]
        })),
    ))
}
