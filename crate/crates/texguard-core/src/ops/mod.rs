//! Tape-registered tensor operations.
//!
//! Each function runs the forward computation, appends a node to the tape,
//! and installs the exact backward rule. Gradient correctness for every op
//! here is enforced by the finite-difference suite in [`crate::gradcheck`].

mod conv;
mod linalg;
mod norm;

pub use conv::*;
pub use linalg::*;
pub use norm::*;

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(CoreError::ShapeMismatch(alloc::format!(
            "{op}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn add<T: Scalar>(tape: &mut Tape<T>, a: NodeId, b: NodeId) -> Result<NodeId> {
    let out = tape.value(a).zip(tape.value(b), |x, y| x + y)?;
    Ok(tape.push(
        "add",
        vec![a, b],
        out,
        Some(Box::new(|ctx| vec![ctx.grad.clone(), ctx.grad.clone()])),
    ))
}

pub fn sub<T: Scalar>(tape: &mut Tape<T>, a: NodeId, b: NodeId) -> Result<NodeId> {
    let out = tape.value(a).zip(tape.value(b), |x, y| x - y)?;
    Ok(tape.push(
        "sub",
        vec![a, b],
        out,
        Some(Box::new(|ctx| {
            vec![ctx.grad.clone(), ctx.grad.map(|g| -g)]
        })),
    ))
}

pub fn mul<T: Scalar>(tape: &mut Tape<T>, a: NodeId, b: NodeId) -> Result<NodeId> {
    let out = tape.value(a).zip(tape.value(b), |x, y| x * y)?;
    Ok(tape.push(
        "mul",
        vec![a, b],
        out,
        Some(Box::new(|ctx| {
            let da = ctx.grad.zip(ctx.parents[1], |g, y| g * y).unwrap();
            let db = ctx.grad.zip(ctx.parents[0], |g, x| g * x).unwrap();
            vec![da, db]
        })),
    ))
}

pub fn scale<T: Scalar>(tape: &mut Tape<T>, x: NodeId, c: T) -> NodeId {
    let out = tape.value(x).map(|v| v * c);
    tape.push(
        "scale",
        vec![x],
        out,
        Some(Box::new(move |ctx| vec![ctx.grad.map(|g| g * c)])),
    )
}

pub fn add_scalar<T: Scalar>(tape: &mut Tape<T>, x: NodeId, c: T) -> NodeId {
    let out = tape.value(x).map(|v| v + c);
    tape.push(
        "add_scalar",
        vec![x],
        out,
        Some(Box::new(|ctx| vec![ctx.grad.clone()])),
    )
}

pub fn neg<T: Scalar>(tape: &mut Tape<T>, x: NodeId) -> NodeId {
    scale(tape, x, -T::one())
}

/// |x|, with subgradient 0 at the kink.
pub fn abs<T: Scalar>(tape: &mut Tape<T>, x: NodeId) -> NodeId {
    let out = tape.value(x).map(|v| v.abs());
    tape.push(
        "abs",
        vec![x],
        out,
        Some(Box::new(|ctx| {
            vec![ctx.grad.zip(ctx.parents[0], |g, v| {
                if v > T::zero() {
                    g
                } else if v < T::zero() {
                    -g
                } else {
                    T::zero()
                }
            }).unwrap()]
        })),
    )
}

/// Natural log; caller guarantees strictly positive inputs.
pub fn log<T: Scalar>(tape: &mut Tape<T>, x: NodeId) -> Result<NodeId> {
    if tape.value(x).data().iter().any(|&v| v <= T::zero()) {
        return Err(CoreError::InvalidParam(alloc::format!(
            "log of non-positive value"
        )));
    }
    let out = tape.value(x).map(|v| v.ln());
    Ok(tape.push(
        "log",
        vec![x],
        out,
        Some(Box::new(|ctx| {
            vec![ctx.grad.zip(ctx.parents[0], |g, v| g / v).unwrap()]
        })),
    ))
}

pub fn relu<T: Scalar>(tape: &mut Tape<T>, x: NodeId) -> NodeId {
    let out = tape.value(x).map(|v| v.max(T::zero()));
    tape.push(
        "relu",
        vec![x],
        out,
        Some(Box::new(|ctx| {
            vec![ctx.grad.zip(ctx.parents[0], |g, v| {
                if v > T::zero() { g } else { T::zero() }
            }).unwrap()]
        })),
    )
}

pub fn sigmoid<T: Scalar>(tape: &mut Tape<T>, x: NodeId) -> NodeId {
    let out = tape
        .value(x)
        .map(|v| T::one() / (T::one() + (-v).exp()));
    tape.push(
        "sigmoid",
        vec![x],
        out,
        Some(Box::new(|ctx| {
            vec![ctx.grad.zip(ctx.value, |g, y| g * y * (T::one() - y)).unwrap()]
        })),
    )
}

pub fn tanh<T: Scalar>(tape: &mut Tape<T>, x: NodeId) -> NodeId {
    let out = tape.value(x).map(|v| v.tanh());
    tape.push(
        "tanh",
        vec![x],
        out,
        Some(Box::new(|ctx| {
            vec![ctx.grad.zip(ctx.value, |g, y| g * (T::one() - y * y)).unwrap()]
        })),
    )
}

pub fn sum_all<T: Scalar>(tape: &mut Tape<T>, x: NodeId) -> NodeId {
    let out = Tensor::scalar(tape.value(x).sum());
    tape.push(
        "sum_all",
        vec![x],
        out,
        Some(Box::new(|ctx| {
            let g = ctx.grad.item();
            vec![Tensor::full(ctx.parents[0].shape(), g)]
        })),
    )
}

pub fn mean_all<T: Scalar>(tape: &mut Tape<T>, x: NodeId) -> NodeId {
    let n = T::from_usize(tape.value(x).len());
    let s = sum_all(tape, x);
    scale(tape, s, T::one() / n)
}

/// Pick a single element out of a tensor as a scalar node.
pub fn select<T: Scalar>(tape: &mut Tape<T>, x: NodeId, index: usize) -> Result<NodeId> {
    let v = tape.value(x);
    if index >= v.len() {
        return Err(CoreError::ShapeMismatch(alloc::format!(
            "select index {index} out of bounds for {} elements",
            v.len()
        )));
    }
    let out = Tensor::scalar(v.data()[index]);
    Ok(tape.push(
        "select",
        vec![x],
        out,
        Some(Box::new(move |ctx| {
            let mut g = Tensor::zeros(ctx.parents[0].shape());
            g.data_mut()[index] = ctx.grad.item();
            vec![g]
        })),
    ))
}

/// Minimum over all elements; gradient routes to the first minimizer.
pub fn reduce_min_all<T: Scalar>(tape: &mut Tape<T>, x: NodeId) -> NodeId {
    let v = tape.value(x);
    let idx = argext(v.data(), |a, b| a < b);
    let out = Tensor::scalar(v.data()[idx]);
    tape.push(
        "reduce_min_all",
        vec![x],
        out,
        Some(Box::new(move |ctx| {
            let mut g = Tensor::zeros(ctx.parents[0].shape());
            g.data_mut()[idx] = ctx.grad.item();
            vec![g]
        })),
    )
}

/// Maximum over all elements; gradient routes to the first maximizer.
pub fn reduce_max_all<T: Scalar>(tape: &mut Tape<T>, x: NodeId) -> NodeId {
    let v = tape.value(x);
    let idx = argext(v.data(), |a, b| a > b);
    let out = Tensor::scalar(v.data()[idx]);
    tape.push(
        "reduce_max_all",
        vec![x],
        out,
        Some(Box::new(move |ctx| {
            let mut g = Tensor::zeros(ctx.parents[0].shape());
            g.data_mut()[idx] = ctx.grad.item();
            vec![g]
        })),
    )
}

fn argext<T: Scalar>(data: &[T], better: impl Fn(T, T) -> bool) -> usize {
    let mut idx = 0;
    for (i, &v) in data.iter().enumerate().skip(1) {
        if better(v, data[idx]) {
            idx = i;
        }
    }
    let _ = data[idx];
    idx
}

/// Broadcast-subtract a scalar node from every element.
pub fn sub_bcast<T: Scalar>(tape: &mut Tape<T>, x: NodeId, s: NodeId) -> Result<NodeId> {
    if !tape.value(s).is_scalar() {
        return Err(CoreError::ShapeMismatch(alloc::format!(
            "sub_bcast expects a scalar second operand"
        )));
    }
    let sv = tape.value(s).item();
    let out = tape.value(x).map(|v| v - sv);
    Ok(tape.push(
        "sub_bcast",
        vec![x, s],
        out,
        Some(Box::new(|ctx| {
            let ds = -ctx.grad.sum();
            vec![ctx.grad.clone(), Tensor::scalar(ds)]
        })),
    ))
}

/// Broadcast-multiply every element by a scalar node.
pub fn mul_bcast<T: Scalar>(tape: &mut Tape<T>, x: NodeId, s: NodeId) -> Result<NodeId> {
    if !tape.value(s).is_scalar() {
        return Err(CoreError::ShapeMismatch(alloc::format!(
            "mul_bcast expects a scalar second operand"
        )));
    }
    let sv = tape.value(s).item();
    let out = tape.value(x).map(|v| v * sv);
    Ok(tape.push(
        "mul_bcast",
        vec![x, s],
        out,
        Some(Box::new(move |ctx| {
            let dx = ctx.grad.map(|g| g * sv);
            let ds = ctx
                .grad
                .data()
                .iter()
                .zip(ctx.parents[0].data())
                .map(|(&g, &x)| g * x)
                .sum();
            vec![dx, Tensor::scalar(ds)]
        })),
    ))
}

/// 1/s on a scalar node.
pub fn recip<T: Scalar>(tape: &mut Tape<T>, s: NodeId) -> Result<NodeId> {
    if !tape.value(s).is_scalar() {
        return Err(CoreError::ShapeMismatch(alloc::format!(
            "recip expects a scalar"
        )));
    }
    let sv = tape.value(s).item();
    let out = Tensor::scalar(T::one() / sv);
    Ok(tape.push(
        "recip",
        vec![s],
        out,
        Some(Box::new(move |ctx| {
            vec![Tensor::scalar(-ctx.grad.item() / (sv * sv))]
        })),
    ))
}

/// Clamp with a straight-through gradient: 1 where the input is inside
/// [lo, hi], 0 outside.
pub fn clamp_st<T: Scalar>(tape: &mut Tape<T>, x: NodeId, lo: T, hi: T) -> NodeId {
    let out = tape.value(x).map(|v| v.max(lo).min(hi));
    tape.push(
        "clamp_st",
        vec![x],
        out,
        Some(Box::new(move |ctx| {
            vec![ctx.grad.zip(ctx.parents[0], |g, v| {
                if v >= lo && v <= hi { g } else { T::zero() }
            }).unwrap()]
        })),
    )
}

/// Re-enter a value as a constant: gradients stop here.
pub fn stop_grad<T: Scalar>(tape: &mut Tape<T>, x: NodeId) -> NodeId {
    let v = tape.value(x).clone();
    tape.push("stop_grad", vec![], v, None)
}

/// Sum of same-shaped nodes.
pub fn add_n<T: Scalar>(tape: &mut Tape<T>, xs: &[NodeId]) -> Result<NodeId> {
    let Some((&first, rest)) = xs.split_first() else {
        return Err(CoreError::EmptyInput(alloc::format!("add_n")));
    };
    let mut out = tape.value(first).clone();
    for &x in rest {
        same_shape(&out, tape.value(x), "add_n")?;
        out.add_assign(tape.value(x))?;
    }
    let n = xs.len();
    Ok(tape.push(
        "add_n",
        xs.to_vec(),
        out,
        Some(Box::new(move |ctx| {
            (0..n).map(|_| ctx.grad.clone()).collect()
        })),
    ))
}

/// Row-wise softmax on a 2-D tensor.
pub fn softmax_rows<T: Scalar>(tape: &mut Tape<T>, x: NodeId) -> Result<NodeId> {
    let v = tape.value(x);
    let (rows, cols) = as_2d(v)?;
    let mut data = Vec::with_capacity(v.len());
    for r in 0..rows {
        let row = &v.data()[r * cols..(r + 1) * cols];
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&z| (z - m).exp()).collect();
        let s: T = exps.iter().copied().sum();
        data.extend(exps.into_iter().map(|e| e / s));
    }
    let out = Tensor::new(v.shape(), data)?;
    Ok(tape.push(
        "softmax_rows",
        vec![x],
        out,
        Some(Box::new(move |ctx| {
            let y = ctx.value.data();
            let g = ctx.grad.data();
            let mut dx = Tensor::zeros(ctx.value.shape());
            for r in 0..rows {
                let base = r * cols;
                let dot: T = (0..cols).map(|c| g[base + c] * y[base + c]).sum();
                for c in 0..cols {
                    dx.data_mut()[base + c] = y[base + c] * (g[base + c] - dot);
                }
            }
            vec![dx]
        })),
    ))
}

/// Row-wise log-softmax on a 2-D tensor (numerically stable).
pub fn log_softmax_rows<T: Scalar>(tape: &mut Tape<T>, x: NodeId) -> Result<NodeId> {
    let v = tape.value(x);
    let (rows, cols) = as_2d(v)?;
    let mut data = Vec::with_capacity(v.len());
    for r in 0..rows {
        let row = &v.data()[r * cols..(r + 1) * cols];
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse: T = row.iter().map(|&z| (z - m).exp()).sum::<T>().ln() + m;
        data.extend(row.iter().map(|&z| z - lse));
    }
    let out = Tensor::new(v.shape(), data)?;
    Ok(tape.push(
        "log_softmax_rows",
        vec![x],
        out,
        Some(Box::new(move |ctx| {
            let y = ctx.value.data(); // log-probabilities
            let g = ctx.grad.data();
            let mut dx = Tensor::zeros(ctx.value.shape());
            for r in 0..rows {
                let base = r * cols;
                let gsum: T = (0..cols).map(|c| g[base + c]).sum();
                for c in 0..cols {
                    dx.data_mut()[base + c] = g[base + c] - y[base + c].exp() * gsum;
                }
            }
            vec![dx]
        })),
    ))
}

pub(crate) fn as_2d<T: Scalar>(t: &Tensor<T>) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(CoreError::ShapeMismatch(alloc::format!(
            "expected 2-D tensor, got {s:?}"
        ))),
    }
}

/// Multiply every channel of x [n,c,h,w] by a single-channel map m [n,1,h,w].
pub fn mul_channel_bcast<T: Scalar>(tape: &mut Tape<T>, x: NodeId, m: NodeId) -> Result<NodeId> {
    let (n, c, h, w) = match tape.value(x).shape() {
        [n, c, h, w] => (*n, *c, *h, *w),
        s => {
            return Err(CoreError::ShapeMismatch(alloc::format!(
                "mul_channel_bcast input must be [n,c,h,w], got {s:?}"
            )))
        }
    };
    if tape.value(m).shape() != [n, 1, h, w] {
        return Err(CoreError::ShapeMismatch(alloc::format!(
            "mul_channel_bcast map must be [{n},1,{h},{w}], got {:?}",
            tape.value(m).shape()
        )));
    }
    let hw = h * w;
    let xd = tape.value(x).data();
    let md = tape.value(m).data();
    let mut out = vec![T::zero(); n * c * hw];
    for ni in 0..n {
        for ci in 0..c {
            for i in 0..hw {
                out[(ni * c + ci) * hw + i] = xd[(ni * c + ci) * hw + i] * md[ni * hw + i];
            }
        }
    }
    let out = Tensor::new(&[n, c, h, w], out).unwrap();
    Ok(tape.push(
        "mul_channel_bcast",
        vec![x, m],
        out,
        Some(Box::new(move |ctx| {
            let g = ctx.grad.data();
            let xv = ctx.parents[0].data();
            let mv = ctx.parents[1].data();
            let mut dx = vec![T::zero(); n * c * hw];
            let mut dm = vec![T::zero(); n * hw];
            for ni in 0..n {
                for ci in 0..c {
                    for i in 0..hw {
                        let idx = (ni * c + ci) * hw + i;
                        dx[idx] = g[idx] * mv[ni * hw + i];
                        dm[ni * hw + i] = dm[ni * hw + i] + g[idx] * xv[idx];
                    }
                }
            }
            vec![
                Tensor::new(&[n, c, h, w], dx).unwrap(),
                Tensor::new(&[n, 1, h, w], dm).unwrap(),
            ]
        })),
    ))
}

/// Scale every channel of x [n,c,h,w] by the matching entry of a [c] vector.
pub fn scale_channels<T: Scalar>(tape: &mut Tape<T>, x: NodeId, weights: NodeId) -> Result<NodeId> {
    let (n, c, h, w) = match tape.value(x).shape() {
        [n, c, h, w] => (*n, *c, *h, *w),
        s => {
            return Err(CoreError::ShapeMismatch(alloc::format!(
                "scale_channels input must be [n,c,h,w], got {s:?}"
            )))
        }
    };
    if tape.value(weights).shape() != [c] {
        return Err(CoreError::ShapeMismatch(alloc::format!(
            "scale_channels weights must be [{c}], got {:?}",
            tape.value(weights).shape()
        )));
    }
    let hw = h * w;
    let xd = tape.value(x).data();
    let wd = tape.value(weights).data();
    let mut out = vec![T::zero(); n * c * hw];
    for ni in 0..n {
        for ci in 0..c {
            for i in 0..hw {
                out[(ni * c + ci) * hw + i] = xd[(ni * c + ci) * hw + i] * wd[ci];
            }
        }
    }
    let out = Tensor::new(&[n, c, h, w], out).unwrap();
    Ok(tape.push(
        "scale_channels",
        vec![x, weights],
        out,
        Some(Box::new(move |ctx| {
            let g = ctx.grad.data();
            let xv = ctx.parents[0].data();
            let wv = ctx.parents[1].data();
            let mut dx = vec![T::zero(); n * c * hw];
            let mut dw = vec![T::zero(); c];
            for ni in 0..n {
                for ci in 0..c {
                    for i in 0..hw {
                        let idx = (ni * c + ci) * hw + i;
                        dx[idx] = g[idx] * wv[ci];
                        dw[ci] = dw[ci] + g[idx] * xv[idx];
                    }
                }
            }
            vec![
                Tensor::new(&[n, c, h, w], dx).unwrap(),
                Tensor::new(&[c], dw).unwrap(),
            ]
        })),
    ))
}
