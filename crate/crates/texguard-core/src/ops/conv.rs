//! Spatial ops on NCHW tensors: convolution (im2col + matmul), pooling,
//! bilinear resampling, and the patch embedding used by the token classifier.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

use super::linalg::{mm_nn, mm_nt, mm_tn};

fn as_nchw<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<(usize, usize, usize, usize)> {
    match t.shape() {
        [n, c, h, w] => Ok((*n, *c, *h, *w)),
        s => Err(CoreError::ShapeMismatch(format!(
            "{what}: expected NCHW tensor, got {s:?}"
        ))),
    }
}

fn im2col<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let mut cols = vec![T::zero(); c * kh * kw * oh * ow];
    let n_cols = oh * ow;
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let dst = &mut cols[row * n_cols..(row + 1) * n_cols];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = (ci * h + iy as usize) * w;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dst[oy * ow + ox] = x[src_row + ix as usize];
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    out: &mut [T],
) {
    let n_cols = oh * ow;
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let src = &cols[row * n_cols..(row + 1) * n_cols];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = (ci * h + iy as usize) * w;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        out[dst_row + ix as usize] = out[dst_row + ix as usize] + src[oy * ow + ox];
                    }
                }
            }
        }
    }
}

/// 2-D convolution, NCHW input against OIKK weights plus per-channel bias.
pub fn conv2d<T: Scalar>(
    tape: &mut Tape<T>,
    input: NodeId,
    weight: NodeId,
    bias: NodeId,
    stride: usize,
    pad: usize,
) -> Result<NodeId> {
    let (n, c, h, w) = as_nchw(tape.value(input), "conv2d input")?;
    let (o, ci, kh, kw) = as_nchw(tape.value(weight), "conv2d weight")?;
    if ci != c {
        return Err(CoreError::ShapeMismatch(format!(
            "conv2d: input has {c} channels but weight expects {ci}"
        )));
    }
    if tape.value(bias).shape() != [o] {
        return Err(CoreError::ShapeMismatch(format!(
            "conv2d: bias shape {:?}, expected [{o}]",
            tape.value(bias).shape()
        )));
    }
    if stride == 0 {
        return Err(CoreError::InvalidParam(format!("conv2d: stride must be >= 1")));
    }
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(CoreError::ShapeMismatch(format!(
            "conv2d: padded input {}x{} smaller than kernel {kh}x{kw}",
            h + 2 * pad,
            w + 2 * pad
        )));
    }
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let ckk = c * kh * kw;
    let plane = oh * ow;

    let xv = tape.value(input).data();
    let wv = tape.value(weight).data();
    let bv = tape.value(bias).data().to_vec();
    let mut out = vec![T::zero(); n * o * plane];
    for ni in 0..n {
        let cols = im2col(&xv[ni * c * h * w..], c, h, w, kh, kw, stride, pad, oh, ow);
        let y = mm_nn(wv, &cols, o, ckk, plane);
        let dst = &mut out[ni * o * plane..(ni + 1) * o * plane];
        for oc in 0..o {
            let b = bv[oc];
            for (d, &v) in dst[oc * plane..(oc + 1) * plane].iter_mut().zip(&y[oc * plane..(oc + 1) * plane]) {
                *d = v + b;
            }
        }
    }
    let out = Tensor::new(&[n, o, oh, ow], out)?;

    Ok(tape.push(
        "conv2d",
        vec![input, weight, bias],
        out,
        Some(Box::new(move |ctx| {
            let g = ctx.grad.data();
            let xv = ctx.parents[0].data();
            let wv = ctx.parents[1].data();
            let mut dx = vec![T::zero(); n * c * h * w];
            let mut dw = vec![T::zero(); o * ckk];
            let mut db = Tensor::zeros(&[o]);
            for ni in 0..n {
                let g_n = &g[ni * o * plane..(ni + 1) * o * plane];
                let cols = im2col(&xv[ni * c * h * w..], c, h, w, kh, kw, stride, pad, oh, ow);
                // dW += g_n * cols^T
                let dw_n = mm_nt(g_n, &cols, o, plane, ckk);
                for (a, &v) in dw.iter_mut().zip(&dw_n) {
                    *a = *a + v;
                }
                // dcols = W^T * g_n, scattered back to the input
                let dcols = mm_tn(wv, g_n, o, ckk, plane);
                col2im(
                    &dcols,
                    c,
                    h,
                    w,
                    kh,
                    kw,
                    stride,
                    pad,
                    oh,
                    ow,
                    &mut dx[ni * c * h * w..(ni + 1) * c * h * w],
                );
                for oc in 0..o {
                    let s: T = g_n[oc * plane..(oc + 1) * plane].iter().copied().sum();
                    db.data_mut()[oc] = db.data_mut()[oc] + s;
                }
            }
            vec![
                Tensor::new(&[n, c, h, w], dx).unwrap(),
                Tensor::new(&[o, c, kh, kw], dw).unwrap(),
                db,
            ]
        })),
    ))
}

/// 2x2 max pooling with stride 2; spatial dims must be even. Gradient routes
/// to the first maximum in each window.
pub fn max_pool2<T: Scalar>(tape: &mut Tape<T>, x: NodeId) -> Result<NodeId> {
    pool2(tape, x, true)
}

/// 2x2 average pooling with stride 2; spatial dims must be even.
pub fn avg_pool2<T: Scalar>(tape: &mut Tape<T>, x: NodeId) -> Result<NodeId> {
    pool2(tape, x, false)
}

fn pool2<T: Scalar>(tape: &mut Tape<T>, x: NodeId, is_max: bool) -> Result<NodeId> {
    let (n, c, h, w) = as_nchw(tape.value(x), "pool2 input")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(CoreError::ShapeMismatch(format!(
            "pool2: spatial dims {h}x{w} must be even"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let xv = tape.value(x).data();
    let mut out = vec![T::zero(); n * c * oh * ow];
    for pc in 0..n * c {
        let src = &xv[pc * h * w..(pc + 1) * h * w];
        let dst = &mut out[pc * oh * ow..(pc + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let quad = [
                    src[(2 * oy) * w + 2 * ox],
                    src[(2 * oy) * w + 2 * ox + 1],
                    src[(2 * oy + 1) * w + 2 * ox],
                    src[(2 * oy + 1) * w + 2 * ox + 1],
                ];
                dst[oy * ow + ox] = if is_max {
                    quad.iter().copied().fold(T::neg_infinity(), T::max)
                } else {
                    let quarter = T::from_f64(0.25);
                    (quad[0] + quad[1] + quad[2] + quad[3]) * quarter
                };
            }
        }
    }
    let out = Tensor::new(&[n, c, oh, ow], out)?;
    Ok(tape.push(
        if is_max { "max_pool2" } else { "avg_pool2" },
        vec![x],
        out,
        Some(Box::new(move |ctx| {
            let g = ctx.grad.data();
            let xv = ctx.parents[0].data();
            let mut dx = vec![T::zero(); n * c * h * w];
            for pc in 0..n * c {
                let src = &xv[pc * h * w..(pc + 1) * h * w];
                let dg = &g[pc * oh * ow..(pc + 1) * oh * ow];
                let dd = &mut dx[pc * h * w..(pc + 1) * h * w];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let gv = dg[oy * ow + ox];
                        let idx = [
                            (2 * oy) * w + 2 * ox,
                            (2 * oy) * w + 2 * ox + 1,
                            (2 * oy + 1) * w + 2 * ox,
                            (2 * oy + 1) * w + 2 * ox + 1,
                        ];
                        if is_max {
                            let mut best = idx[0];
                            for &i in &idx[1..] {
                                if src[i] > src[best] {
                                    best = i;
                                }
                            }
                            dd[best] = dd[best] + gv;
                        } else {
                            let quarter = T::from_f64(0.25);
                            for &i in &idx {
                                dd[i] = dd[i] + gv * quarter;
                            }
                        }
                    }
                }
            }
            vec![Tensor::new(&[n, c, h, w], dx).unwrap()]
        })),
    ))
}

/// Global average pool: [n,c,h,w] -> [n,c].
pub fn global_avg_pool<T: Scalar>(tape: &mut Tape<T>, x: NodeId) -> Result<NodeId> {
    let (n, c, h, w) = as_nchw(tape.value(x), "global_avg_pool input")?;
    let inv = T::one() / T::from_usize(h * w);
    let xv = tape.value(x).data();
    let mut out = vec![T::zero(); n * c];
    for pc in 0..n * c {
        out[pc] = xv[pc * h * w..(pc + 1) * h * w].iter().copied().sum::<T>() * inv;
    }
    let out = Tensor::new(&[n, c], out)?;
    Ok(tape.push(
        "global_avg_pool",
        vec![x],
        out,
        Some(Box::new(move |ctx| {
            let mut dx = vec![T::zero(); n * c * h * w];
            for pc in 0..n * c {
                let gv = ctx.grad.data()[pc] * inv;
                for v in &mut dx[pc * h * w..(pc + 1) * h * w] {
                    *v = gv;
                }
            }
            vec![Tensor::new(&[n, c, h, w], dx).unwrap()]
        })),
    ))
}

// Interpolation taps for one output coordinate under half-pixel centers
// (align-corners off).
fn bilinear_taps(out_i: usize, out_len: usize, in_len: usize) -> (usize, usize, f64) {
    let scale = in_len as f64 / out_len as f64;
    let src = (out_i as f64 + 0.5) * scale - 0.5;
    let src = src.max(0.0);
    let i0 = (src as usize).min(in_len - 1);
    let i1 = (i0 + 1).min(in_len - 1);
    let frac = (src - i0 as f64).min(1.0);
    (i0, i1, frac)
}

/// Bilinear resize of an NCHW tensor to an arbitrary spatial size,
/// half-pixel centers (align-corners off). Works for up- and downscaling.
pub fn bilinear_resize<T: Scalar>(
    tape: &mut Tape<T>,
    x: NodeId,
    out_h: usize,
    out_w: usize,
) -> Result<NodeId> {
    let (n, c, h, w) = as_nchw(tape.value(x), "bilinear_resize input")?;
    if out_h == 0 || out_w == 0 {
        return Err(CoreError::InvalidParam(format!(
            "bilinear_resize: zero output size"
        )));
    }
    let xv = tape.value(x).data();
    let mut out = vec![T::zero(); n * c * out_h * out_w];
    for pc in 0..n * c {
        let src = &xv[pc * h * w..(pc + 1) * h * w];
        let dst = &mut out[pc * out_h * out_w..(pc + 1) * out_h * out_w];
        for oy in 0..out_h {
            let (y0, y1, fy) = bilinear_taps(oy, out_h, h);
            for ox in 0..out_w {
                let (x0, x1, fx) = bilinear_taps(ox, out_w, w);
                let v00 = src[y0 * w + x0].as_f64();
                let v01 = src[y0 * w + x1].as_f64();
                let v10 = src[y1 * w + x0].as_f64();
                let v11 = src[y1 * w + x1].as_f64();
                let top = v00 + (v01 - v00) * fx;
                let bot = v10 + (v11 - v10) * fx;
                dst[oy * out_w + ox] = T::from_f64(top + (bot - top) * fy);
            }
        }
    }
    let out = Tensor::new(&[n, c, out_h, out_w], out)?;
    Ok(tape.push(
        "bilinear_resize",
        vec![x],
        out,
        Some(Box::new(move |ctx| {
            let g = ctx.grad.data();
            let mut dx = vec![T::zero(); n * c * h * w];
            for pc in 0..n * c {
                let dg = &g[pc * out_h * out_w..(pc + 1) * out_h * out_w];
                let dd = &mut dx[pc * h * w..(pc + 1) * h * w];
                for oy in 0..out_h {
                    let (y0, y1, fy) = bilinear_taps(oy, out_h, h);
                    for ox in 0..out_w {
                        let (x0, x1, fx) = bilinear_taps(ox, out_w, w);
                        let gv = dg[oy * out_w + ox].as_f64();
                        let w00 = (1.0 - fy) * (1.0 - fx);
                        let w01 = (1.0 - fy) * fx;
                        let w10 = fy * (1.0 - fx);
                        let w11 = fy * fx;
                        dd[y0 * w + x0] = dd[y0 * w + x0] + T::from_f64(gv * w00);
                        dd[y0 * w + x1] = dd[y0 * w + x1] + T::from_f64(gv * w01);
                        dd[y1 * w + x0] = dd[y1 * w + x0] + T::from_f64(gv * w10);
                        dd[y1 * w + x1] = dd[y1 * w + x1] + T::from_f64(gv * w11);
                    }
                }
            }
            vec![Tensor::new(&[n, c, h, w], dx).unwrap()]
        })),
    ))
}

/// Cut an NCHW tensor into non-overlapping p x p patches and flatten each to
/// a token row: [n,c,h,w] -> [n*t, c*p*p] with t = (h/p)*(w/p), tokens in
/// row-major grid order.
pub fn patchify<T: Scalar>(tape: &mut Tape<T>, x: NodeId, p: usize) -> Result<NodeId> {
    let (n, c, h, w) = as_nchw(tape.value(x), "patchify input")?;
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(CoreError::ShapeMismatch(format!(
            "patchify: spatial dims {h}x{w} not divisible by patch size {p}"
        )));
    }
    let (gh, gw) = (h / p, w / p);
    let t = gh * gw;
    let d = c * p * p;
    let xv = tape.value(x).data();
    let mut out = vec![T::zero(); n * t * d];
    for ni in 0..n {
        for gy in 0..gh {
            for gx in 0..gw {
                let tok = ni * t + gy * gw + gx;
                for ci in 0..c {
                    for py in 0..p {
                        for px in 0..p {
                            let f = (ci * p + py) * p + px;
                            let src = ((ni * c + ci) * h + gy * p + py) * w + gx * p + px;
                            out[tok * d + f] = xv[src];
                        }
                    }
                }
            }
        }
    }
    let out = Tensor::new(&[n * t, d], out)?;
    Ok(tape.push(
        "patchify",
        vec![x],
        out,
        Some(Box::new(move |ctx| {
            let g = ctx.grad.data();
            let mut dx = vec![T::zero(); n * c * h * w];
            for ni in 0..n {
                for gy in 0..gh {
                    for gx in 0..gw {
                        let tok = ni * t + gy * gw + gx;
                        for ci in 0..c {
                            for py in 0..p {
                                for px in 0..p {
                                    let f = (ci * p + py) * p + px;
                                    let dst = ((ni * c + ci) * h + gy * p + py) * w + gx * p + px;
                                    dx[dst] = g[tok * d + f];
                                }
                            }
                        }
                    }
                }
            }
            vec![Tensor::new(&[n, c, h, w], dx).unwrap()]
        })),
    ))
}

/// Reinterpret a [t,d] token matrix (single sample, row-major grid) as a
/// [1,d,gh,gw] feature map so spatial ops can consume it.
pub fn rows_to_chw<T: Scalar>(
    tape: &mut Tape<T>,
    x: NodeId,
    gh: usize,
    gw: usize,
) -> Result<NodeId> {
    let (t, d) = super::as_2d(tape.value(x))?;
    if t != gh * gw {
        return Err(CoreError::ShapeMismatch(format!(
            "rows_to_chw: {t} tokens cannot form a {gh}x{gw} grid"
        )));
    }
    let xv = tape.value(x).data();
    let mut out = vec![T::zero(); d * t];
    for tok in 0..t {
        for f in 0..d {
            out[f * t + tok] = xv[tok * d + f];
        }
    }
    let out = Tensor::new(&[1, d, gh, gw], out)?;
    Ok(tape.push(
        "rows_to_chw",
        vec![x],
        out,
        Some(Box::new(move |ctx| {
            let g = ctx.grad.data();
            let mut dx = vec![T::zero(); t * d];
            for tok in 0..t {
                for f in 0..d {
                    dx[tok * d + f] = g[f * t + tok];
                }
            }
            vec![Tensor::new(&[t, d], dx).unwrap()]
        })),
    ))
}

/// Edge-replication padding of the spatial dims of an NCHW tensor.
pub fn pad_replicate<T: Scalar>(tape: &mut Tape<T>, x: NodeId, pad: usize) -> Result<NodeId> {
    let (n, c, h, w) = as_nchw(tape.value(x), "pad_replicate input")?;
    let (oh, ow) = (h + 2 * pad, w + 2 * pad);
    let xv = tape.value(x).data();
    let mut out = vec![T::zero(); n * c * oh * ow];
    for pc in 0..n * c {
        let src = &xv[pc * h * w..(pc + 1) * h * w];
        let dst = &mut out[pc * oh * ow..(pc + 1) * oh * ow];
        for oy in 0..oh {
            let sy = oy.saturating_sub(pad).min(h - 1);
            for ox in 0..ow {
                let sx = ox.saturating_sub(pad).min(w - 1);
                dst[oy * ow + ox] = src[sy * w + sx];
            }
        }
    }
    let out = Tensor::new(&[n, c, oh, ow], out)?;
    Ok(tape.push(
        "pad_replicate",
        vec![x],
        out,
        Some(Box::new(move |ctx| {
            let g = ctx.grad.data();
            let mut dx = vec![T::zero(); n * c * h * w];
            for pc in 0..n * c {
                let dg = &g[pc * oh * ow..(pc + 1) * oh * ow];
                let dd = &mut dx[pc * h * w..(pc + 1) * h * w];
                for oy in 0..oh {
                    let sy = oy.saturating_sub(pad).min(h - 1);
                    for ox in 0..ow {
                        let sx = ox.saturating_sub(pad).min(w - 1);
                        dd[sy * w + sx] = dd[sy * w + sx] + dg[oy * ow + ox];
                    }
                }
            }
            vec![Tensor::new(&[n, c, h, w], dx).unwrap()]
        })),
    ))
}
