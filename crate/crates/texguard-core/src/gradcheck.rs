//! High-precision gradient verification: every tape op against central
//! finite differences, plus whole-model checks (a small network, the editor,
//! and the full defense objective).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::attention::{build_classifier, ClassifierSpec};
use crate::error::Result;
use crate::image::Image;
use crate::nn::ParamNodes;
use crate::ops;
use crate::params::ModelParams;
use crate::perturb::{
    build_enhancement, defense_sample_loss, DefenseConfig, DefenseDeps, DefenseNodes, LossWeights,
};
use crate::rng::Rng;
use crate::surrogate::build_surrogate;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use crate::texture::{build_texture_stack, FilterParams, GRAY_COEFFS_DEFAULT};

/// Central-difference step (f64).
pub const FD_STEP: f64 = 1e-5;
/// Per-op tolerance.
pub const OP_TOL: f64 = 1e-5;
/// Whole-pipeline tolerance.
pub const END_TO_END_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub coords_checked: usize,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err <= self.tolerance
    }
}

fn rel_err(a: f64, fd: f64) -> f64 {
    (a - fd).abs() / 1.0f64.max(a.abs()).max(fd.abs())
}

/// Compare the analytic gradient of `eval` (value, gradient) against central
/// finite differences at every coordinate of `x0`.
pub fn check_fn<F>(name: &str, x0: &[f64], tol: f64, eval: F) -> CheckReport
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = eval(x0);
    debug_assert_eq!(analytic.len(), x0.len());
    let mut x = x0.to_vec();
    let mut max_rel: f64 = 0.0;
    for i in 0..x0.len() {
        x[i] = x0[i] + FD_STEP;
        let fp = eval(&x).0;
        x[i] = x0[i] - FD_STEP;
        let fm = eval(&x).0;
        x[i] = x0[i];
        let fd = (fp - fm) / (2.0 * FD_STEP);
        max_rel = max_rel.max(rel_err(analytic[i], fd));
    }
    CheckReport {
        name: name.into(),
        max_rel_err: max_rel,
        tolerance: tol,
        coords_checked: x0.len(),
    }
}

/// Split a flat coordinate vector into leaves with the given shapes.
fn stage_inputs(tape: &mut Tape<f64>, shapes: &[Vec<usize>], x: &[f64]) -> Vec<NodeId> {
    let mut leaves = Vec::with_capacity(shapes.len());
    let mut off = 0;
    for s in shapes {
        let n: usize = s.iter().product();
        leaves.push(tape.leaf(Tensor::new(s, x[off..off + n].to_vec()).unwrap()));
        off += n;
    }
    debug_assert_eq!(off, x.len());
    leaves
}

/// FD-check one op. The builder turns input leaves into the op's output; the
/// scalar loss is a fixed random weighting of the output elements.
fn check_op<F>(name: &str, shapes: &[Vec<usize>], x0: &[f64], weight_seed: u64, build: F) -> CheckReport
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>,
{
    let eval = |x: &[f64]| -> (f64, Vec<f64>) {
        let mut tape = Tape::new();
        let leaves = stage_inputs(&mut tape, shapes, x);
        let out = build(&mut tape, &leaves).expect("op construction in gradcheck");
        let mut wrng = Rng::new(weight_seed);
        let wshape = tape.value(out).shape().to_vec();
        let wdata: Vec<f64> = (0..tape.value(out).len())
            .map(|_| wrng.uniform_f64() * 2.0 - 1.0)
            .collect();
        let w = tape.leaf(Tensor::new(&wshape, wdata).unwrap());
        let prod = ops::mul(&mut tape, out, w).unwrap();
        let loss = ops::sum_all(&mut tape, prod);
        let value = tape.value(loss).item();
        let grads = tape.backward(loss).expect("backward in gradcheck");
        let mut g = Vec::with_capacity(x.len());
        for &l in &leaves {
            g.extend_from_slice(tape.grad_of(&grads, l).data());
        }
        (value, g)
    };
    check_fn(name, x0, OP_TOL, eval)
}

fn fill(rng: &mut Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| lo + (hi - lo) * rng.uniform_f64()).collect()
}

/// Values bounded away from zero (for abs/relu kinks): |v| in [0.2, 1.0].
fn fill_signed_away_from_zero(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let mag = 0.2 + 0.8 * rng.uniform_f64();
            if rng.uniform_f64() < 0.5 {
                -mag
            } else {
                mag
            }
        })
        .collect()
}

/// FD-check every registered differentiable op. Returns one report per op
/// configuration.
pub fn run_op_suite(seed: u64) -> Vec<CheckReport> {
    let mut rng = Rng::new(seed);
    let mut reports = Vec::new();
    let s23 = vec![vec![2usize, 3]];
    let s23x2 = vec![vec![2usize, 3], vec![2, 3]];

    let r = fill(&mut rng, 12, -1.0, 1.0);
    reports.push(check_op("add", &s23x2, &r, 1, |t, l| ops::add(t, l[0], l[1])));
    let r = fill(&mut rng, 12, -1.0, 1.0);
    reports.push(check_op("sub", &s23x2, &r, 2, |t, l| ops::sub(t, l[0], l[1])));
    let r = fill(&mut rng, 12, -1.0, 1.0);
    reports.push(check_op("mul", &s23x2, &r, 3, |t, l| ops::mul(t, l[0], l[1])));
    let r = fill(&mut rng, 6, -1.0, 1.0);
    reports.push(check_op("scale", &s23, &r, 4, |t, l| Ok(ops::scale(t, l[0], 1.7))));
    let r = fill(&mut rng, 6, -1.0, 1.0);
    reports.push(check_op("add_scalar", &s23, &r, 5, |t, l| {
        Ok(ops::add_scalar(t, l[0], 0.3))
    }));
    let r = fill(&mut rng, 6, -1.0, 1.0);
    reports.push(check_op("neg", &s23, &r, 6, |t, l| Ok(ops::neg(t, l[0]))));
    let r = fill_signed_away_from_zero(&mut rng, 6);
    reports.push(check_op("abs", &s23, &r, 7, |t, l| Ok(ops::abs(t, l[0]))));
    let r = fill(&mut rng, 6, 0.5, 1.5);
    reports.push(check_op("log", &s23, &r, 8, |t, l| ops::log(t, l[0])));
    let r = fill_signed_away_from_zero(&mut rng, 6);
    reports.push(check_op("relu", &s23, &r, 9, |t, l| Ok(ops::relu(t, l[0]))));
    let r = fill(&mut rng, 6, -2.0, 2.0);
    reports.push(check_op("sigmoid", &s23, &r, 10, |t, l| Ok(ops::sigmoid(t, l[0]))));
    let r = fill(&mut rng, 6, -2.0, 2.0);
    reports.push(check_op("tanh", &s23, &r, 11, |t, l| Ok(ops::tanh(t, l[0]))));
    let r = fill(&mut rng, 6, -1.0, 1.0);
    reports.push(check_op("sum_all", &s23, &r, 12, |t, l| Ok(ops::sum_all(t, l[0]))));
    let r = fill(&mut rng, 6, -1.0, 1.0);
    reports.push(check_op("mean_all", &s23, &r, 13, |t, l| Ok(ops::mean_all(t, l[0]))));
    let r = fill(&mut rng, 4, -1.0, 1.0);
    reports.push(check_op("select", &[vec![1, 4]], &r, 14, |t, l| {
        ops::select(t, l[0], 2)
    }));
    let r = fill(&mut rng, 6, -1.0, 1.0);
    reports.push(check_op("reduce_min_all", &s23, &r, 15, |t, l| {
        Ok(ops::reduce_min_all(t, l[0]))
    }));
    let r = fill(&mut rng, 6, -1.0, 1.0);
    reports.push(check_op("reduce_max_all", &s23, &r, 16, |t, l| {
        Ok(ops::reduce_max_all(t, l[0]))
    }));
    let shapes = vec![vec![2usize, 3], vec![1usize]];
    let r = fill(&mut rng, 7, -1.0, 1.0);
    reports.push(check_op("sub_bcast", &shapes, &r, 17, |t, l| {
        ops::sub_bcast(t, l[0], l[1])
    }));
    let r = fill(&mut rng, 7, -1.0, 1.0);
    reports.push(check_op("mul_bcast", &shapes, &r, 18, |t, l| {
        ops::mul_bcast(t, l[0], l[1])
    }));
    let r = fill(&mut rng, 1, 0.5, 1.5);
    reports.push(check_op("recip", &[vec![1]], &r, 19, |t, l| ops::recip(t, l[0])));
    // clamp: half the points inside (0,1) away from the bounds, half clearly
    // outside (flat region: both analytic and FD gradients vanish)
    let mut r = fill(&mut rng, 3, 0.1, 0.9);
    r.extend_from_slice(&[-0.5, 1.5, 2.0]);
    reports.push(check_op("clamp_st", &s23, &r, 20, |t, l| {
        Ok(ops::clamp_st(t, l[0], 0.0, 1.0))
    }));
    let shapes3 = vec![vec![2usize, 2], vec![2, 2], vec![2, 2]];
    let r = fill(&mut rng, 12, -1.0, 1.0);
    reports.push(check_op("add_n", &shapes3, &r, 21, |t, l| ops::add_n(t, l)));
    let r = fill(&mut rng, 6, -1.0, 1.0);
    reports.push(check_op("softmax_rows", &s23, &r, 22, |t, l| {
        ops::softmax_rows(t, l[0])
    }));
    let r = fill(&mut rng, 6, -1.0, 1.0);
    reports.push(check_op("log_softmax_rows", &s23, &r, 23, |t, l| {
        ops::log_softmax_rows(t, l[0])
    }));
    let shapes = vec![vec![2usize, 3], vec![3usize, 2]];
    let r = fill(&mut rng, 12, -1.0, 1.0);
    reports.push(check_op("matmul", &shapes, &r, 24, |t, l| {
        ops::matmul(t, l[0], l[1])
    }));
    let r = fill(&mut rng, 6, -1.0, 1.0);
    reports.push(check_op("transpose2d", &s23, &r, 25, |t, l| {
        ops::transpose2d(t, l[0])
    }));
    let shapes = vec![vec![2usize, 3], vec![4usize, 3], vec![4usize]];
    let r = fill(&mut rng, 22, -1.0, 1.0);
    reports.push(check_op("linear", &shapes, &r, 26, |t, l| {
        ops::linear(t, l[0], l[1], l[2])
    }));
    let r = fill(&mut rng, 12, -1.0, 1.0);
    reports.push(check_op("mean_rows", &[vec![3, 4]], &r, 27, |t, l| {
        ops::mean_rows(t, l[0])
    }));
    let shapes = vec![vec![1usize, 2, 4, 4], vec![3usize, 2, 3, 3], vec![3usize]];
    let r = fill(&mut rng, 32 + 54 + 3, -1.0, 1.0);
    reports.push(check_op("conv2d_pad1", &shapes, &r, 28, |t, l| {
        ops::conv2d(t, l[0], l[1], l[2], 1, 1)
    }));
    let r = fill(&mut rng, 32 + 54 + 3, -1.0, 1.0);
    reports.push(check_op("conv2d_pad0", &shapes, &r, 29, |t, l| {
        ops::conv2d(t, l[0], l[1], l[2], 1, 0)
    }));
    // pooling: strictly increasing offsets keep the max argument unique
    let base = fill(&mut rng, 32, -1.0, 1.0);
    let r: Vec<f64> = base
        .iter()
        .enumerate()
        .map(|(i, &v)| v + i as f64 * 1e-3)
        .collect();
    let s1244 = vec![vec![1usize, 2, 4, 4]];
    reports.push(check_op("max_pool2", &s1244, &r, 30, |t, l| {
        ops::max_pool2(t, l[0])
    }));
    let r = fill(&mut rng, 32, -1.0, 1.0);
    reports.push(check_op("avg_pool2", &s1244, &r, 31, |t, l| {
        ops::avg_pool2(t, l[0])
    }));
    let r = fill(&mut rng, 32, -1.0, 1.0);
    reports.push(check_op("global_avg_pool", &s1244, &r, 32, |t, l| {
        ops::global_avg_pool(t, l[0])
    }));
    let r = fill(&mut rng, 9, -1.0, 1.0);
    reports.push(check_op("bilinear_up", &[vec![1, 1, 3, 3]], &r, 33, |t, l| {
        ops::bilinear_resize(t, l[0], 5, 5)
    }));
    let r = fill(&mut rng, 16, -1.0, 1.0);
    reports.push(check_op("bilinear_down", &[vec![1, 1, 4, 4]], &r, 34, |t, l| {
        ops::bilinear_resize(t, l[0], 2, 2)
    }));
    let r = fill(&mut rng, 48, -1.0, 1.0);
    reports.push(check_op("patchify", &[vec![1, 3, 4, 4]], &r, 35, |t, l| {
        ops::patchify(t, l[0], 2)
    }));
    let r = fill(&mut rng, 12, -1.0, 1.0);
    reports.push(check_op("rows_to_chw", &[vec![4, 3]], &r, 36, |t, l| {
        ops::rows_to_chw(t, l[0], 2, 2)
    }));
    let r = fill(&mut rng, 18, -1.0, 1.0);
    reports.push(check_op("pad_replicate", &[vec![1, 2, 3, 3]], &r, 37, |t, l| {
        ops::pad_replicate(t, l[0], 1)
    }));
    let shapes = vec![vec![2usize, 2, 3, 3], vec![2usize], vec![2usize]];
    let mut r = fill(&mut rng, 36, -1.0, 1.0);
    r.extend(fill(&mut rng, 2, 0.8, 1.2)); // gamma
    r.extend(fill(&mut rng, 2, -0.2, 0.2)); // beta
    reports.push(check_op("batch_norm_train", &shapes, &r, 38, |t, l| {
        Ok(ops::batch_norm_train(t, l[0], l[1], l[2], 1e-5)?.0)
    }));
    let mut r = fill(&mut rng, 36, -1.0, 1.0);
    r.extend(fill(&mut rng, 2, 0.8, 1.2));
    r.extend(fill(&mut rng, 2, -0.2, 0.2));
    reports.push(check_op("batch_norm_infer", &shapes, &r, 39, |t, l| {
        let mean = Tensor::new(&[2], vec![0.1, -0.2]).unwrap();
        let var = Tensor::new(&[2], vec![0.9, 1.1]).unwrap();
        ops::batch_norm_infer(t, l[0], l[1], l[2], &mean, &var, 1e-5)
    }));
    let shapes = vec![vec![3usize, 4], vec![4usize], vec![4usize]];
    let mut r = fill(&mut rng, 12, -1.0, 1.0);
    r.extend(fill(&mut rng, 4, 0.8, 1.2));
    r.extend(fill(&mut rng, 4, -0.2, 0.2));
    reports.push(check_op("layer_norm", &shapes, &r, 40, |t, l| {
        ops::layer_norm(t, l[0], l[1], l[2], 1e-5)
    }));
    let shapes = vec![vec![1usize, 3, 2, 2], vec![1usize, 1, 2, 2]];
    let r = fill(&mut rng, 16, -1.0, 1.0);
    reports.push(check_op("mul_channel_bcast", &shapes, &r, 41, |t, l| {
        ops::mul_channel_bcast(t, l[0], l[1])
    }));
    let shapes = vec![vec![1usize, 3, 2, 2], vec![3usize]];
    let r = fill(&mut rng, 15, -1.0, 1.0);
    reports.push(check_op("scale_channels", &shapes, &r, 42, |t, l| {
        ops::scale_channels(t, l[0], l[1])
    }));
    reports.push(stop_grad_check(seed.wrapping_add(99)));
    reports
}

/// stop_grad is checked directly: the output equals the input and the
/// analytic gradient at the input is exactly zero.
fn stop_grad_check(seed: u64) -> CheckReport {
    let mut rng = Rng::new(seed);
    let x0 = fill(&mut rng, 6, -1.0, 1.0);
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::new(&[2, 3], x0.clone()).unwrap());
    let y = ops::stop_grad(&mut tape, x);
    let sq = ops::mul(&mut tape, y, y).unwrap();
    let loss = ops::sum_all(&mut tape, sq);
    let grads = tape.backward(loss).unwrap();
    let gx = tape.grad_of(&grads, x);
    let forward_ok = tape.value(y).data() == x0.as_slice();
    let max_leak = gx
        .data()
        .iter()
        .fold(0.0f64, |m, &g| m.max(g.abs()));
    CheckReport {
        name: "stop_grad".into(),
        max_rel_err: if forward_ok { max_leak } else { f64::INFINITY },
        tolerance: 0.0,
        coords_checked: x0.len(),
    }
}

/// A random 3-layer network (conv + ReLU, dense + tanh, dense) with a scalar
/// output: every parameter and input gradient against finite differences.
pub fn three_layer_net_check(seed: u64) -> CheckReport {
    let mut rng = Rng::new(seed);
    let shapes = vec![
        vec![1usize, 1, 4, 4], // input
        vec![2usize, 1, 3, 3], // conv w
        vec![2usize],          // conv b
        vec![3usize, 2],       // dense1 w
        vec![3usize],          // dense1 b
        vec![1usize, 3],       // dense2 w
        vec![1usize],          // dense2 b
    ];
    let n: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    let x0 = fill(&mut rng, n, -0.9, 0.9);
    check_op("three_layer_net", &shapes, &x0, 77, |t, l| {
        let y = ops::conv2d(t, l[0], l[1], l[2], 1, 1)?;
        let y = ops::relu(t, y);
        let y = ops::global_avg_pool(t, y)?;
        let y = ops::linear(t, y, l[3], l[4])?;
        let y = ops::tanh(t, y);
        ops::linear(t, y, l[5], l[6])
    })
}

/// Gradient of the squared editor output norm w.r.t. the input image.
pub fn surrogate_input_check(seed: u64) -> CheckReport {
    let params: ModelParams<f64> = build_surrogate(seed);
    let mut rng = Rng::new(seed.wrapping_add(1));
    let x0 = fill(&mut rng, 3 * 8 * 8, 0.05, 0.95);
    let eval = |x: &[f64]| -> (f64, Vec<f64>) {
        let mut tape = Tape::new();
        let nodes = ParamNodes::stage(&mut tape, &params);
        let xin = tape.leaf(Tensor::new(&[1, 3, 8, 8], x.to_vec()).unwrap());
        let y = crate::surrogate::surrogate_forward(&mut tape, &nodes, &params, xin).unwrap();
        let sq = ops::mul(&mut tape, y, y).unwrap();
        let loss = ops::sum_all(&mut tape, sq);
        let value = tape.value(loss).item();
        let grads = tape.backward(loss).unwrap();
        (value, tape.grad_of(&grads, xin).data().to_vec())
    };
    check_fn("surrogate_input", &x0, OP_TOL, eval)
}

/// End-to-end check: gradient of the total defense loss with respect to
/// sampled enhancement weights, through texture fusion, projection, the
/// editor, and the on-tape Grad-CAM.
pub fn end_to_end_defense_check(seed: u64) -> Result<CheckReport> {
    let size = 16;
    let local_spec = ClassifierSpec::local(size, 2);
    let global_spec = ClassifierSpec::global(size, 2);
    let sur: ModelParams<f64> = build_surrogate(seed.wrapping_add(1));
    let local = build_classifier::<f64>(&local_spec, seed.wrapping_add(2))?;
    let global = build_classifier::<f64>(&global_spec, seed.wrapping_add(3))?;
    let tex = build_texture_stack::<f64>(seed.wrapping_add(4));
    let filter = FilterParams {
        window: 5,
        ..FilterParams::default()
    };
    let deps = DefenseDeps {
        surrogate: &sur,
        local_clf: &local,
        local_spec: &local_spec,
        global_clf: &global,
        global_spec: &global_spec,
        texture: &tex,
        filter: &filter,
        gray_coeffs: GRAY_COEFFS_DEFAULT,
    };
    let mut rng = Rng::new(seed.wrapping_add(5));
    let pixels = fill(&mut rng, size * size * 3, 0.02, 0.98);
    let img = Image::new(size, size, 3, pixels)?;
    let cache = crate::perturb::precompute_cache(&deps, &img)?;
    let cfg = DefenseConfig::default();
    let w = LossWeights::default();
    let enh: ModelParams<f64> = build_enhancement(seed.wrapping_add(6));

    let eval = |p: &ModelParams<f64>| -> Result<(f64, alloc::collections::BTreeMap<String, Tensor<f64>>)> {
        let mut tape = Tape::new();
        let nodes = DefenseNodes::stage(&mut tape, p, &deps);
        let (total, _, _) =
            defense_sample_loss(&mut tape, &nodes, p, &deps, &img, &cache, &cfg, &w, true)?;
        let value = tape.value(total).item();
        let grads = tape.backward(total)?;
        Ok((value, nodes.enh.grads(&tape, &grads)))
    };
    let (_, analytic) = eval(&enh)?;

    let mut max_rel: f64 = 0.0;
    let mut checked = 0usize;
    for name in enh.names() {
        let len = enh.get(&name)?.len();
        let mut picks = vec![0usize];
        if len > 2 {
            picks.push(len / 2);
        }
        if len > 1 {
            picks.push(len - 1);
        }
        for idx in picks {
            let base = enh.get(&name)?.data()[idx];
            let mut bumped = enh.clone();
            bumped.get_mut(&name)?.data_mut()[idx] = base + FD_STEP;
            let fp = eval(&bumped)?.0;
            bumped.get_mut(&name)?.data_mut()[idx] = base - FD_STEP;
            let fm = eval(&bumped)?.0;
            let fd = (fp - fm) / (2.0 * FD_STEP);
            max_rel = max_rel.max(rel_err(analytic[name].data()[idx], fd));
            checked += 1;
        }
    }
    Ok(CheckReport {
        name: format!("end_to_end_defense"),
        max_rel_err: max_rel,
        tolerance: END_TO_END_TOL,
        coords_checked: checked,
    })
}

/// The full high-precision suite: every op, the 3-layer network, the editor
/// input gradient, and the end-to-end defense loss.
pub fn run_all(seed: u64) -> Result<Vec<CheckReport>> {
    let mut reports = run_op_suite(seed);
    reports.push(three_layer_net_check(seed.wrapping_add(10)));
    reports.push(surrogate_input_check(seed.wrapping_add(20)));
    reports.push(end_to_end_defense_check(seed.wrapping_add(30))?);
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn op_suite_passes() {
        for r in run_op_suite(1234) {
            assert!(
                r.passed(),
                "{}: rel err {} > tol {} over {} coords",
                r.name,
                r.max_rel_err,
                r.tolerance,
                r.coords_checked
            );
        }
    }

    #[test]
    fn three_layer_net_passes() {
        let r = three_layer_net_check(7);
        assert!(r.passed(), "{}: rel err {}", r.name, r.max_rel_err);
    }

    #[test]
    fn surrogate_input_gradient_passes() {
        let r = surrogate_input_check(11);
        assert!(r.passed(), "{}: rel err {}", r.name, r.max_rel_err);
    }

    #[test]
    fn end_to_end_defense_gradient_passes() {
        let r = end_to_end_defense_check(21).unwrap();
        assert!(
            r.passed(),
            "{}: rel err {} over {} coords",
            r.name,
            r.max_rel_err,
            r.coords_checked
        );
    }
}
