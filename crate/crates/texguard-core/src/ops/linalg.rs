//! Dense matrix ops. The three raw kernels (NN, NT, TN) cover every product
//! the forward and backward passes need without materializing transposes.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

use super::as_2d;

/// C[m,n] = A[m,k] * B[k,n]
pub(crate) fn mm_nn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
    c
}

/// C[m,n] = A[m,k] * B[n,k]^T
pub(crate) fn mm_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&av, &bv) in arow.iter().zip(brow) {
                acc = acc + av * bv;
            }
            c[i * n + j] = acc;
        }
    }
    c
}

/// C[k,n] = A[m,k]^T * B[m,n]
pub(crate) fn mm_tn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); k * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
    c
}

/// Matrix product of two 2-D nodes.
pub fn matmul<T: Scalar>(tape: &mut Tape<T>, a: NodeId, b: NodeId) -> Result<NodeId> {
    let (m, k) = as_2d(tape.value(a))?;
    let (k2, n) = as_2d(tape.value(b))?;
    if k != k2 {
        return Err(CoreError::ShapeMismatch(format!(
            "matmul inner dims: {k} vs {k2}"
        )));
    }
    let out = Tensor::new(
        &[m, n],
        mm_nn(tape.value(a).data(), tape.value(b).data(), m, k, n),
    )?;
    Ok(tape.push(
        "matmul",
        vec![a, b],
        out,
        Some(Box::new(move |ctx| {
            let g = ctx.grad.data();
            let av = ctx.parents[0].data();
            let bv = ctx.parents[1].data();
            let da = Tensor::new(&[m, k], mm_nt(g, bv, m, n, k)).unwrap();
            let db = Tensor::new(&[k, n], mm_tn(av, g, m, k, n)).unwrap();
            vec![da, db]
        })),
    ))
}

/// 2-D transpose.
pub fn transpose2d<T: Scalar>(tape: &mut Tape<T>, x: NodeId) -> Result<NodeId> {
    let (r, c) = as_2d(tape.value(x))?;
    let out = Tensor::new(&[c, r], transpose_raw(tape.value(x).data(), r, c))?;
    Ok(tape.push(
        "transpose2d",
        vec![x],
        out,
        Some(Box::new(move |ctx| {
            vec![Tensor::new(&[r, c], transpose_raw(ctx.grad.data(), c, r)).unwrap()]
        })),
    ))
}

fn transpose_raw<T: Scalar>(x: &[T], r: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}

/// y[n,out] = x[n,in] * w[out,in]^T + b[out]
pub fn linear<T: Scalar>(tape: &mut Tape<T>, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
    let (n, d_in) = as_2d(tape.value(x))?;
    let (d_out, d_in2) = as_2d(tape.value(w))?;
    if d_in != d_in2 {
        return Err(CoreError::ShapeMismatch(format!(
            "linear input dim {d_in} vs weight dim {d_in2}"
        )));
    }
    if tape.value(b).shape() != [d_out] {
        return Err(CoreError::ShapeMismatch(format!(
            "linear bias shape {:?}, expected [{d_out}]",
            tape.value(b).shape()
        )));
    }
    let mut data = mm_nt(tape.value(x).data(), tape.value(w).data(), n, d_in, d_out);
    let bias = tape.value(b).data().to_vec();
    for row in data.chunks_mut(d_out) {
        for (v, &bv) in row.iter_mut().zip(&bias) {
            *v = *v + bv;
        }
    }
    let out = Tensor::new(&[n, d_out], data)?;
    Ok(tape.push(
        "linear",
        vec![x, w, b],
        out,
        Some(Box::new(move |ctx| {
            let g = ctx.grad.data();
            let xv = ctx.parents[0].data();
            let wv = ctx.parents[1].data();
            // dx = g * w ; dw = g^T * x ; db = column sums of g
            let dx = Tensor::new(&[n, d_in], mm_nn(g, wv, n, d_out, d_in)).unwrap();
            let dw = Tensor::new(&[d_out, d_in], mm_tn(g, xv, n, d_out, d_in)).unwrap();
            let mut db = Tensor::zeros(&[d_out]);
            for row in g.chunks(d_out) {
                for (acc, &gv) in db.data_mut().iter_mut().zip(row) {
                    *acc = *acc + gv;
                }
            }
            vec![dx, dw, db]
        })),
    ))
}

/// Mean over rows of a 2-D tensor: [t,d] -> [1,d].
pub fn mean_rows<T: Scalar>(tape: &mut Tape<T>, x: NodeId) -> Result<NodeId> {
    let (t, d) = as_2d(tape.value(x))?;
    let inv = T::one() / T::from_usize(t);
    let mut data = vec![T::zero(); d];
    for row in tape.value(x).data().chunks(d) {
        for (acc, &v) in data.iter_mut().zip(row) {
            *acc = *acc + v * inv;
        }
    }
    let out = Tensor::new(&[1, d], data)?;
    Ok(tape.push(
        "mean_rows",
        vec![x],
        out,
        Some(Box::new(move |ctx| {
            let mut dx = Tensor::zeros(&[t, d]);
            for row in dx.data_mut().chunks_mut(d) {
                for (v, &g) in row.iter_mut().zip(ctx.grad.data()) {
                    *v = g * inv;
                }
            }
            vec![dx]
        })),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::new(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let b = tape.leaf(Tensor::new(&[3, 2], vec![7., 8., 9., 10., 11., 12.]).unwrap());
        let c = matmul(&mut tape, a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[58., 64., 139., 154.]);
    }

    #[test]
    fn matmul_inner_dim_mismatch() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[2, 3]));
        assert!(matmul(&mut tape, a, b).is_err());
    }

    #[test]
    fn linear_identity() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(&[1, 2], vec![3., 4.]).unwrap());
        let w = tape.leaf(Tensor::new(&[2, 2], vec![1., 0., 0., 1.]).unwrap());
        let b = tape.leaf(Tensor::new(&[2], vec![0.5, -0.5]).unwrap());
        let y = linear(&mut tape, x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[3.5, 3.5]);
    }
}
