//! Perturbation enhancement and the defense training objective: fuse texture
//! features with the attention map, emit an L-infinity-bounded perturbation,
//! and train the enhancement weights so the editor's output is disrupted
//! while the protected image stays close to the original.

use alloc::format;
use alloc::vec::Vec;

use crate::attention::{grad_cam, grad_cam_on_tape, ClassifierSpec};
use crate::error::{CoreError, Result};
use crate::image::Image;
use crate::nn::{self, ParamNodes};
use crate::optim::{optimizer_step, AdamConfig, AdamState};
use crate::ops;
use crate::params::ModelParams;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::surrogate::surrogate_forward;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use crate::texture::{bilateral_filter, texture_features, to_grayscale, FilterParams, TEXTURE_CHANNELS};

pub const EPSILON_DEFAULT: f64 = 8.0 / 255.0;
pub const EPSILON_MAX: f64 = 16.0 / 255.0;
/// Hidden width of the enhancement head.
const ENHANCE_WIDTH: usize = 16;
const LBP_POINTS: usize = 8;
const LBP_RADIUS: f64 = 1.0;

/// Coefficients of the three-term training objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Heatmap-difference threshold for the attention mask.
    pub threshold: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.04,
            lambda3: 0.1,
            threshold: 0.3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || self.lambda3 < 0.0 {
            return Err(CoreError::InvalidParam(format!(
                "loss weights must be nonnegative"
            )));
        }
        if !(0.0..1.0).contains(&self.threshold) || self.threshold <= 0.0 {
            return Err(CoreError::InvalidParam(format!(
                "threshold must lie in (0,1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Training hyperparameters of the defense.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefenseConfig {
    /// L-infinity perturbation budget in [0,1] pixel units.
    pub epsilon: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self {
            epsilon: EPSILON_DEFAULT,
            epochs: 30,
            lr: 1e-3,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl DefenseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= EPSILON_MAX) {
            return Err(CoreError::InvalidParam(format!(
                "epsilon must lie in (0, {EPSILON_MAX}], got {}",
                self.epsilon
            )));
        }
        if self.batch_size == 0 {
            return Err(CoreError::InvalidParam(format!("batch size must be >= 1")));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(CoreError::InvalidParam(format!(
                "learning rate must be positive"
            )));
        }
        Ok(())
    }
}

/// Everything the defense trains against, all frozen: editor, the two
/// classifiers with their specs, texture stack weights, and filter settings.
pub struct DefenseDeps<'a, T: Scalar> {
    pub surrogate: &'a ModelParams<T>,
    pub local_clf: &'a ModelParams<T>,
    pub local_spec: &'a ClassifierSpec,
    pub global_clf: &'a ModelParams<T>,
    pub global_spec: &'a ClassifierSpec,
    pub texture: &'a ModelParams<T>,
    pub filter: &'a FilterParams<T>,
    pub gray_coeffs: [f64; 3],
}

/// Deterministic initialization of the enhancement head: one pre-fusion
/// ConvBlock, learned per-channel fusion weights, two refinement ConvBlocks,
/// and a 1x1 conv to 3 channels (tanh output).
pub fn build_enhancement<T: Scalar>(seed: u64) -> ModelParams<T> {
    let mut rng = Rng::new(seed);
    let mut params = ModelParams::new();
    nn::init_conv_block(&mut params, "pre", ENHANCE_WIDTH, TEXTURE_CHANNELS, 3, &mut rng);
    params.insert("fuse.w", Tensor::full(&[ENHANCE_WIDTH], T::one()));
    nn::init_conv_block(&mut params, "ref1", ENHANCE_WIDTH, ENHANCE_WIDTH, 3, &mut rng);
    nn::init_conv_block(&mut params, "ref2", ENHANCE_WIDTH, ENHANCE_WIDTH, 3, &mut rng);
    nn::init_conv(&mut params, "head", 3, ENHANCE_WIDTH, 1, &mut rng);
    params
}

/// Fusion and enhancement on the tape: texture features through a ConvBlock
/// and average pooling, channel-by-channel multiplicative gating by the
/// attention map under learned per-channel weights, two refinement
/// ConvBlocks, then a 1x1 conv + tanh field upsampled to image resolution.
#[allow(clippy::too_many_arguments)]
pub fn fuse_and_enhance<T: Scalar>(
    tape: &mut Tape<T>,
    nodes: &ParamNodes,
    params: &ModelParams<T>,
    tex: NodeId,
    m_ori: NodeId,
    out_h: usize,
    out_w: usize,
    train: bool,
) -> Result<(NodeId, Vec<nn::BnStats<T>>)> {
    let mut stats = Vec::new();
    let push = |s: Option<nn::BnStats<T>>, stats: &mut Vec<_>| {
        if let Some(s) = s {
            stats.push(s);
        }
    };
    let (y, s) = nn::conv_block_forward(tape, nodes, params, "pre", tex, train, nn::Border::Replicate)?;
    push(s, &mut stats);
    let y = ops::avg_pool2(tape, y)?;
    let (gh, gw) = match tape.value(y).shape() {
        [_, _, h, w] => (*h, *w),
        _ => unreachable!(),
    };
    let m = ops::bilinear_resize(tape, m_ori, gh, gw)?;
    let weighted = ops::scale_channels(tape, y, nodes.get("fuse.w")?)?;
    let fused = ops::mul_channel_bcast(tape, weighted, m)?;
    let (y, s) = nn::conv_block_forward(tape, nodes, params, "ref1", fused, train, nn::Border::Replicate)?;
    push(s, &mut stats);
    let (y, s) = nn::conv_block_forward(tape, nodes, params, "ref2", y, train, nn::Border::Replicate)?;
    push(s, &mut stats);
    let y = ops::conv2d(tape, y, nodes.get("head.w")?, nodes.get("head.b")?, 1, 0)?;
    let y = ops::tanh(tape, y);
    let delta = ops::bilinear_resize(tape, y, out_h, out_w)?;
    Ok((delta, stats))
}

/// I_adv = clamp(img + epsilon * delta, 0, 1), straight-through clamp.
pub fn project_and_apply_node<T: Scalar>(
    tape: &mut Tape<T>,
    img: NodeId,
    delta: NodeId,
    epsilon: T,
) -> Result<NodeId> {
    let scaled = ops::scale(tape, delta, epsilon);
    let moved = ops::add(tape, img, scaled)?;
    Ok(ops::clamp_st(tape, moved, T::zero(), T::one()))
}

/// Image-level projection for inference paths.
pub fn project_and_apply<T: Scalar>(
    img: &Image<T>,
    delta: &Tensor<T>,
    epsilon: T,
) -> Result<Image<T>> {
    let mut tape = Tape::new();
    let i = tape.leaf(img.to_nchw());
    let d = tape.leaf(delta.clone());
    let out = project_and_apply_node(&mut tape, i, d, epsilon)?;
    Image::from_nchw(tape.value(out))
}

/// Mean absolute per-element difference (>= 0).
pub fn loss_mae<T: Scalar>(i_adv: &Image<T>, i_ori: &Image<T>) -> Result<T> {
    i_adv.check_same_dims(i_ori, "loss_mae")?;
    let n = T::from_usize(i_adv.pixels().len());
    Ok(i_adv
        .pixels()
        .iter()
        .zip(i_ori.pixels())
        .map(|(&a, &b)| (a - b).abs())
        .sum::<T>()
        / n)
}

/// NEGATIVE mean squared difference between generated outputs (<= 0); more
/// distortion makes the value more negative, so minimizing the total loss
/// maximizes distortion.
pub fn loss_mse<T: Scalar>(g_ori: &Image<T>, g_adv: &Image<T>) -> Result<T> {
    g_ori.check_same_dims(g_adv, "loss_mse")?;
    let n = T::from_usize(g_ori.pixels().len());
    let s = g_ori
        .pixels()
        .iter()
        .zip(g_adv.pixels())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<T>();
    Ok(-(s / n))
}

/// Attention-discrepancy loss: -log of the mean |H'_ori - H'_adv| over the
/// pixels where it exceeds the threshold. An empty mask yields 0 and sets
/// the degenerate flag.
pub fn loss_cam<T: Scalar>(
    h_ori: &crate::attention::AttentionMap<T>,
    h_adv: &crate::attention::AttentionMap<T>,
    threshold: T,
) -> Result<(T, bool)> {
    if h_ori.width != h_adv.width || h_ori.height != h_adv.height {
        return Err(CoreError::ShapeMismatch(format!(
            "loss_cam heatmap dims {}x{} vs {}x{}",
            h_ori.width, h_ori.height, h_adv.width, h_adv.height
        )));
    }
    let mut sum = T::zero();
    let mut count = 0usize;
    for (&a, &b) in h_ori.values.iter().zip(&h_adv.values) {
        let d = (a - b).abs();
        if d > threshold {
            sum = sum + d;
            count += 1;
        }
    }
    if count == 0 {
        return Ok((T::zero(), true));
    }
    let mean = sum / T::from_usize(count);
    Ok((-mean.ln(), false))
}

/// lambda1 * L_MAE + lambda2 * L_MSE + lambda3 * L_cam.
pub fn loss_total<T: Scalar>(mae: T, mse: T, cam: T, w: &LossWeights) -> T {
    T::from_f64(w.lambda1) * mae + T::from_f64(w.lambda2) * mse + T::from_f64(w.lambda3) * cam
}

fn loss_mae_node<T: Scalar>(tape: &mut Tape<T>, a: NodeId, b: NodeId) -> Result<NodeId> {
    let d = ops::sub(tape, a, b)?;
    let d = ops::abs(tape, d);
    Ok(ops::mean_all(tape, d))
}

fn loss_mse_node<T: Scalar>(tape: &mut Tape<T>, a: NodeId, b: NodeId) -> Result<NodeId> {
    let d = ops::sub(tape, a, b)?;
    let sq = ops::mul(tape, d, d)?;
    let m = ops::mean_all(tape, sq);
    Ok(ops::neg(tape, m))
}

/// Tape version of the attention loss. The binary mask is recomputed from
/// the current heatmap values and held constant in the graph.
fn loss_cam_node<T: Scalar>(
    tape: &mut Tape<T>,
    h_ori: NodeId,
    h_adv: NodeId,
    threshold: T,
) -> Result<(NodeId, bool)> {
    let diff = ops::sub(tape, h_ori, h_adv)?;
    let adiff = ops::abs(tape, diff);
    let shape = tape.value(adiff).shape().to_vec();
    let bits: Vec<T> = tape
        .value(adiff)
        .data()
        .iter()
        .map(|&d| if d > threshold { T::one() } else { T::zero() })
        .collect();
    let count = bits.iter().filter(|&&b| b == T::one()).count();
    if count == 0 {
        let zero = tape.leaf(Tensor::scalar(T::zero()));
        return Ok((zero, true));
    }
    let mask = tape.leaf(Tensor::new(&shape, bits)?);
    let masked = ops::mul(tape, adiff, mask)?;
    let s = ops::sum_all(tape, masked);
    let mean = ops::scale(tape, s, T::one() / T::from_usize(count));
    let lg = ops::log(tape, mean)?;
    Ok((ops::neg(tape, lg), false))
}

/// Per-image constants of the defense objective: everything that does not
/// depend on the enhancement parameters, computed once per image.
pub struct ImageCache<T: Scalar> {
    /// Texture features [1, 8, H/2, W/2].
    pub tex: Tensor<T>,
    /// Local-classifier Grad-CAM of the clean image, [1,1,H,W].
    pub m_ori: Tensor<T>,
    /// Edited clean image G(I_ori), [1,3,H,W].
    pub g_ori: Tensor<T>,
    /// Global-classifier Grad-CAM of G(I_ori), [1,1,H,W].
    pub h_ori: Tensor<T>,
    /// Class explained by both global heatmaps.
    pub class: usize,
}

/// Run the texture branch, the attention branch, and the editor on the
/// clean image.
pub fn precompute_cache<T: Scalar>(
    deps: &DefenseDeps<'_, T>,
    img: &Image<T>,
) -> Result<ImageCache<T>> {
    let gray = to_grayscale(img, deps.gray_coeffs)?;
    let filtered = bilateral_filter(&gray, deps.filter)?;
    let tex = texture_features(&filtered, deps.texture, LBP_POINTS, LBP_RADIUS)?;
    let m_ori = grad_cam(
        deps.local_clf,
        deps.local_spec,
        img,
        None,
        deps.local_spec.default_tap(),
    )?;
    let g_ori_img = crate::surrogate::apply(deps.surrogate, img)?;
    let logits = crate::attention::classify(deps.global_clf, deps.global_spec, &g_ori_img)?;
    let class = logits
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0);
    let h_ori = grad_cam(
        deps.global_clf,
        deps.global_spec,
        &g_ori_img,
        Some(class),
        deps.global_spec.default_tap(),
    )?;
    Ok(ImageCache {
        tex,
        m_ori: m_ori.to_tensor(),
        g_ori: g_ori_img.to_nchw(),
        h_ori: h_ori.to_tensor(),
        class,
    })
}

/// Loss-component values for one sample or one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub mae: f64,
    pub mse: f64,
    pub cam: f64,
    pub total: f64,
    pub empty_mask: bool,
}

/// One training-log row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mae: f64,
    pub mse: f64,
    pub cam: f64,
    pub total: f64,
}

/// Staged parameter nodes for the three models touched by the defense graph.
pub struct DefenseNodes {
    pub enh: ParamNodes,
    pub sur: ParamNodes,
    pub glob: ParamNodes,
}

impl DefenseNodes {
    pub fn stage<T: Scalar>(
        tape: &mut Tape<T>,
        enh: &ModelParams<T>,
        deps: &DefenseDeps<'_, T>,
    ) -> Self {
        Self {
            enh: ParamNodes::stage(tape, enh),
            sur: ParamNodes::stage(tape, deps.surrogate),
            glob: ParamNodes::stage(tape, deps.global_clf),
        }
    }
}

/// The full per-sample defense objective on the tape. Returns the scalar
/// total-loss node, the component values, and any batch-norm statistics from
/// the enhancement blocks.
#[allow(clippy::too_many_arguments)]
pub fn defense_sample_loss<T: Scalar>(
    tape: &mut Tape<T>,
    nodes: &DefenseNodes,
    enh: &ModelParams<T>,
    deps: &DefenseDeps<'_, T>,
    img: &Image<T>,
    cache: &ImageCache<T>,
    cfg: &DefenseConfig,
    w: &LossWeights,
    train: bool,
) -> Result<(NodeId, LossTerms, Vec<nn::BnStats<T>>)> {
    let img_leaf = tape.leaf(img.to_nchw());
    let tex = tape.leaf(cache.tex.clone());
    let m_ori = tape.leaf(cache.m_ori.clone());
    let (delta, stats) = fuse_and_enhance(
        tape,
        &nodes.enh,
        enh,
        tex,
        m_ori,
        img.height(),
        img.width(),
        train,
    )?;
    let i_adv = project_and_apply_node(tape, img_leaf, delta, T::from_f64(cfg.epsilon))?;
    let mae = loss_mae_node(tape, i_adv, img_leaf)?;
    let g_adv = surrogate_forward(tape, &nodes.sur, deps.surrogate, i_adv)?;
    let g_ori = tape.leaf(cache.g_ori.clone());
    let mse = loss_mse_node(tape, g_ori, g_adv)?;
    let (h_adv, _) = grad_cam_on_tape(
        tape,
        &nodes.glob,
        deps.global_clf,
        deps.global_spec,
        g_adv,
        Some(cache.class),
        deps.global_spec.default_tap(),
    )?;
    let h_ori = tape.leaf(cache.h_ori.clone());
    let (cam, empty_mask) = loss_cam_node(tape, h_ori, h_adv, T::from_f64(w.threshold))?;
    let t1 = ops::scale(tape, mae, T::from_f64(w.lambda1));
    let t2 = ops::scale(tape, mse, T::from_f64(w.lambda2));
    let t3 = ops::scale(tape, cam, T::from_f64(w.lambda3));
    let total = ops::add_n(tape, &[t1, t2, t3])?;
    let terms = LossTerms {
        mae: tape.value(mae).item().as_f64(),
        mse: tape.value(mse).item().as_f64(),
        cam: tape.value(cam).item().as_f64(),
        total: tape.value(total).item().as_f64(),
        empty_mask,
    };
    Ok((total, terms, stats))
}

/// Train the enhancement head against the frozen dependencies. Gradients
/// reach only the enhancement parameters. Returns the per-epoch training log.
pub fn train_defense<T: Scalar>(
    corpus: &[Image<T>],
    enh: &mut ModelParams<T>,
    deps: &DefenseDeps<'_, T>,
    cfg: &DefenseConfig,
    w: &LossWeights,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    w.validate()?;
    if corpus.is_empty() {
        return Err(CoreError::EmptyInput(format!("defense training corpus")));
    }
    let caches: Vec<ImageCache<T>> = corpus
        .iter()
        .map(|img| precompute_cache(deps, img))
        .collect::<Result<_>>()?;
    let mut rng = Rng::new(cfg.seed);
    let mut state = AdamState::new();
    let adam = AdamConfig::with_lr(T::from_f64(cfg.lr));
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = rng.permutation(corpus.len());
        let mut sums = LossTerms::default();
        for chunk in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let nodes = DefenseNodes::stage(&mut tape, enh, deps);
            let mut totals = Vec::with_capacity(chunk.len());
            let mut all_stats = Vec::new();
            for &i in chunk {
                let (total, terms, stats) = defense_sample_loss(
                    &mut tape, &nodes, enh, deps, &corpus[i], &caches[i], cfg, w, true,
                )?;
                totals.push(total);
                all_stats.extend(stats);
                sums.mae += terms.mae;
                sums.mse += terms.mse;
                sums.cam += terms.cam;
                sums.total += terms.total;
            }
            let batch_sum = ops::add_n(&mut tape, &totals)?;
            let batch_loss = ops::scale(&mut tape, batch_sum, T::one() / T::from_usize(chunk.len()));
            tape.value(batch_loss).assert_finite("defense loss")?;
            let grads = tape.backward(batch_loss)?;
            let grad_map = nodes.enh.grads(&tape, &grads);
            optimizer_step(enh, &grad_map, &mut state, &adam)?;
            nn::update_running_stats(enh, &all_stats)?;
        }
        let n = corpus.len() as f64;
        log.push(EpochLog {
            epoch,
            mae: sums.mae / n,
            mse: sums.mse / n,
            cam: sums.cam / n,
            total: sums.total / n,
        });
    }
    Ok(log)
}

/// Inference: protect one image with the trained enhancement head.
pub fn protect<T: Scalar>(
    img: &Image<T>,
    enh: &ModelParams<T>,
    deps: &DefenseDeps<'_, T>,
    cfg: &DefenseConfig,
) -> Result<Image<T>> {
    cfg.validate()?;
    let gray = to_grayscale(img, deps.gray_coeffs)?;
    let filtered = bilateral_filter(&gray, deps.filter)?;
    let tex = texture_features(&filtered, deps.texture, LBP_POINTS, LBP_RADIUS)?;
    let m_ori = grad_cam(
        deps.local_clf,
        deps.local_spec,
        img,
        None,
        deps.local_spec.default_tap(),
    )?;
    let mut tape = Tape::new();
    let nodes = ParamNodes::stage(&mut tape, enh);
    let tex_leaf = tape.leaf(tex);
    let m_leaf = tape.leaf(m_ori.to_tensor());
    let (delta, _) = fuse_and_enhance(
        &mut tape,
        &nodes,
        enh,
        tex_leaf,
        m_leaf,
        img.height(),
        img.width(),
        false,
    )?;
    let img_leaf = tape.leaf(img.to_nchw());
    let i_adv = project_and_apply_node(&mut tape, img_leaf, delta, T::from_f64(cfg.epsilon))?;
    Image::from_nchw(tape.value(i_adv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{build_classifier, AttentionMap};
    use crate::surrogate::build_surrogate;
    use crate::texture::build_texture_stack;

    fn random_image(seed: u64, size: usize) -> Image<f64> {
        let mut rng = Rng::new(seed);
        let pixels: Vec<f64> = (0..size * size * 3).map(|_| rng.uniform_f64()).collect();
        Image::new(size, size, 3, pixels).unwrap()
    }

    struct Owned {
        sur: ModelParams<f64>,
        local: ModelParams<f64>,
        local_spec: ClassifierSpec,
        global: ModelParams<f64>,
        global_spec: ClassifierSpec,
        tex: ModelParams<f64>,
        filter: FilterParams<f64>,
    }

    fn owned_deps(size: usize) -> Owned {
        let local_spec = ClassifierSpec::local(size, 2);
        let global_spec = ClassifierSpec::global(size, 2);
        Owned {
            sur: build_surrogate(1),
            local: build_classifier(&local_spec, 2).unwrap(),
            local_spec,
            global: build_classifier(&global_spec, 3).unwrap(),
            global_spec,
            tex: build_texture_stack(4),
            filter: FilterParams {
                window: 5,
                ..FilterParams::default()
            },
        }
    }

    fn deps(o: &Owned) -> DefenseDeps<'_, f64> {
        DefenseDeps {
            surrogate: &o.sur,
            local_clf: &o.local,
            local_spec: &o.local_spec,
            global_clf: &o.global,
            global_spec: &o.global_spec,
            texture: &o.tex,
            filter: &o.filter,
            gray_coeffs: crate::texture::GRAY_COEFFS_DEFAULT,
        }
    }

    #[test]
    fn config_validation() {
        assert!(DefenseConfig::default().validate().is_ok());
        for eps in [0.0, -0.1, 17.0 / 255.0] {
            let cfg = DefenseConfig {
                epsilon: eps,
                ..Default::default()
            };
            assert!(cfg.validate().is_err(), "epsilon {eps}");
        }
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights {
            lambda2: -0.1,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(LossWeights {
            threshold: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn fuse_output_shape_and_tanh_range() {
        let enh: ModelParams<f64> = build_enhancement(1);
        let mut tape = Tape::new();
        let nodes = ParamNodes::stage(&mut tape, &enh);
        let mut rng = Rng::new(7);
        let tex_data: Vec<f64> = (0..TEXTURE_CHANNELS * 64).map(|_| rng.uniform_f64()).collect();
        let tex = tape.leaf(Tensor::new(&[1, TEXTURE_CHANNELS, 8, 8], tex_data).unwrap());
        let m_data: Vec<f64> = (0..256).map(|_| rng.uniform_f64()).collect();
        let m = tape.leaf(Tensor::new(&[1, 1, 16, 16], m_data).unwrap());
        let (delta, _) = fuse_and_enhance(&mut tape, &nodes, &enh, tex, m, 16, 16, false).unwrap();
        let v = tape.value(delta);
        assert_eq!(v.shape(), &[1, 3, 16, 16]);
        assert!(v.data().iter().all(|&x| x > -1.0 && x < 1.0));
    }

    #[test]
    fn zero_attention_gates_fusion_to_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[1, 4, 3, 3], 0.7));
        let w = tape.leaf(Tensor::full(&[4], 2.0));
        let m = tape.leaf(Tensor::zeros(&[1, 1, 3, 3]));
        let weighted = ops::scale_channels(&mut tape, x, w).unwrap();
        let fused = ops::mul_channel_bcast(&mut tape, weighted, m).unwrap();
        assert!(tape.value(fused).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn projection_identity_budget_and_range() {
        let img = random_image(1, 8);
        let zero = Tensor::zeros(&[1, 3, 8, 8]);
        let out = project_and_apply(&img, &zero, 8.0 / 255.0).unwrap();
        assert_eq!(out, img);
        let mut rng = Rng::new(2);
        for trial in 0..20u64 {
            let img = random_image(trial, 8);
            let d: Vec<f64> = (0..192).map(|_| rng.uniform_f64() * 2.0 - 1.0).collect();
            let delta = Tensor::new(&[1, 3, 8, 8], d).unwrap();
            let eps = 8.0 / 255.0;
            let out = project_and_apply(&img, &delta, eps).unwrap();
            for (o, i) in out.pixels().iter().zip(img.pixels()) {
                assert!((o - i).abs() <= eps + 1e-12);
                assert!((0.0..=1.0).contains(o));
            }
        }
    }

    #[test]
    fn loss_values_match_contracts() {
        let a = random_image(3, 8);
        assert_eq!(loss_mae(&a, &a).unwrap(), 0.0);
        assert_eq!(loss_mse(&a, &a).unwrap(), 0.0);
        let b = a.map_pixels(|_| 0.4);
        let c = a.map_pixels(|_| 0.5);
        assert!((loss_mae(&b, &c).unwrap() - 0.1).abs() < 1e-12);
        assert!((loss_mse(&b, &c).unwrap() + 0.01).abs() < 1e-12);
        // independent elementwise oracle for MAE
        let d = random_image(4, 8);
        let got = loss_mae(&a, &d).unwrap();
        let want: f64 = a
            .pixels()
            .iter()
            .zip(d.pixels())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / a.pixels().len() as f64;
        assert!((got - want).abs() < 1e-12);
        // mse is never positive
        assert!(loss_mse(&a, &d).unwrap() <= 0.0);
    }

    #[test]
    fn loss_cam_contracts() {
        let n = 16;
        let zeros = AttentionMap::new(n, 1, vec![0.0; n]).unwrap();
        // identical -> 0 with flag
        let (v, flag) = loss_cam(&zeros, &zeros, 0.3).unwrap();
        assert_eq!((v, flag), (0.0, true));
        // half the pixels differ by exactly 0.5 -> -log(0.5)
        let mut vals = vec![0.0; n];
        for v in vals.iter_mut().take(n / 2) {
            *v = 0.5;
        }
        let h = AttentionMap::new(n, 1, vals).unwrap();
        let (v, flag) = loss_cam(&zeros, &h, 0.3).unwrap();
        assert!(!flag);
        assert!((v - (-(0.5f64.ln()))).abs() < 1e-12);
        // masked mean 1.0 -> loss 0
        let ones = AttentionMap::new(n, 1, vec![1.0; n]).unwrap();
        let (v, _) = loss_cam(&zeros, &ones, 0.3).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn loss_total_linearity() {
        let w = LossWeights::default();
        let v: f64 = loss_total(0.1, -0.2, 0.5, &w);
        assert!((v - 0.142).abs() < 1e-12);
        assert_eq!(loss_total(0.0, 0.0, 0.0, &w), 0.0);
        // unit vectors recover the lambdas
        assert!((loss_total(1.0, 0.0, 0.0, &w) - w.lambda1).abs() < 1e-15);
        assert!((loss_total(0.0, 1.0, 0.0, &w) - w.lambda2).abs() < 1e-15);
        assert!((loss_total(0.0, 0.0, 1.0, &w) - w.lambda3).abs() < 1e-15);
        // lambda2 = lambda3 = 0 reduces to MAE
        let w0 = LossWeights {
            lambda2: 0.0,
            lambda3: 0.0,
            ..Default::default()
        };
        assert_eq!(loss_total(0.37, -5.0, 9.0, &w0), 0.37);
    }

    #[test]
    fn zero_epochs_leaves_enhancement_unchanged() {
        let o = owned_deps(16);
        let d = deps(&o);
        let mut enh: ModelParams<f64> = build_enhancement(5);
        let before = enh.clone();
        let cfg = DefenseConfig {
            epochs: 0,
            ..Default::default()
        };
        let corpus = vec![random_image(1, 16)];
        let log = train_defense(&corpus, &mut enh, &d, &cfg, &LossWeights::default()).unwrap();
        assert!(log.is_empty());
        assert_eq!(enh, before);
    }

    #[test]
    fn train_step_runs_and_updates_only_enhancement() {
        let o = owned_deps(16);
        let d = deps(&o);
        let mut enh: ModelParams<f64> = build_enhancement(5);
        let before_sur = o.sur.clone();
        let before_enh = enh.clone();
        let cfg = DefenseConfig {
            epochs: 1,
            batch_size: 2,
            ..Default::default()
        };
        let corpus = vec![random_image(1, 16), random_image(2, 16)];
        let log = train_defense(&corpus, &mut enh, &d, &cfg, &LossWeights::default()).unwrap();
        assert_eq!(log.len(), 1);
        assert!(log[0].total.is_finite());
        assert_ne!(enh, before_enh);
        assert_eq!(o.sur, before_sur);
    }

    #[test]
    fn protect_budget_and_determinism() {
        let o = owned_deps(16);
        let d = deps(&o);
        let enh: ModelParams<f64> = build_enhancement(5);
        let cfg = DefenseConfig::default();
        let img = random_image(9, 16);
        let out = protect(&img, &enh, &d, &cfg).unwrap();
        for (o_px, i_px) in out.pixels().iter().zip(img.pixels()) {
            assert!((o_px - i_px).abs() <= cfg.epsilon + 1e-12);
        }
        assert_eq!(protect(&img, &enh, &d, &cfg).unwrap(), out);
    }
}
