//! Attention branch: a local convolutional classifier and a global
//! patch-attention classifier, each explained through Grad-CAM, plus the
//! binary mask that marks where two heatmaps disagree.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::image::Image;
use crate::nn::{self, Border, ParamNodes};
use crate::optim::{optimizer_step, AdamConfig, AdamState};
use crate::ops;
use crate::params::ModelParams;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Single-channel saliency raster in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap<T: Scalar> {
    pub width: usize,
    pub height: usize,
    pub values: Vec<T>,
}

impl<T: Scalar> AttentionMap<T> {
    pub fn new(width: usize, height: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != width * height {
            return Err(CoreError::ShapeMismatch(format!(
                "attention map buffer {} vs {width}x{height}",
                values.len()
            )));
        }
        if values
            .iter()
            .any(|&v| !v.is_finite() || v < T::zero() || v > T::one())
        {
            return Err(CoreError::NonFinite(format!(
                "attention values must be finite and in [0,1]"
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    /// From a [1,1,h,w] tensor.
    pub fn from_tensor(t: &Tensor<T>) -> Result<Self> {
        match t.shape() {
            [1, 1, h, w] => Self::new(*w, *h, t.data().to_vec()),
            s => Err(CoreError::ShapeMismatch(format!(
                "attention map tensor must be [1,1,h,w], got {s:?}"
            ))),
        }
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(&[1, 1, self.height, self.width], self.values.clone()).unwrap()
    }
}

/// Binary mask over pixels where two heatmaps differ by more than T.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<u8>,
}

impl DiffMask {
    pub fn count_set(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }
}

/// bit = 1 exactly where |h_ori - h_adv| > threshold (strict).
pub fn heatmap_diff_mask<T: Scalar>(
    h_ori: &AttentionMap<T>,
    h_adv: &AttentionMap<T>,
    threshold: T,
) -> Result<DiffMask> {
    if h_ori.width != h_adv.width || h_ori.height != h_adv.height {
        return Err(CoreError::ShapeMismatch(format!(
            "heatmap dims {}x{} vs {}x{}",
            h_ori.width, h_ori.height, h_adv.width, h_adv.height
        )));
    }
    let bits = h_ori
        .values
        .iter()
        .zip(&h_adv.values)
        .map(|(&a, &b)| if (a - b).abs() > threshold { 1 } else { 0 })
        .collect();
    Ok(DiffMask {
        width: h_ori.width,
        height: h_ori.height,
        bits,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierFamily {
    /// Stacked ConvBlocks with pooling and a global-average-pooled head.
    LocalConv,
    /// Patch tokens through one self-attention block and a mean-token head.
    GlobalAttention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassifierSpec {
    pub family: ClassifierFamily,
    pub input_size: usize,
    pub num_classes: usize,
    /// Base channel width: the local conv stack, or the global family's
    /// convolutional patch-embedding stem.
    pub base_channels: usize,
    /// Token embedding width for the global family.
    pub embed_dim: usize,
    pub patch_size: usize,
}

impl ClassifierSpec {
    pub fn local(input_size: usize, num_classes: usize) -> Self {
        Self {
            family: ClassifierFamily::LocalConv,
            input_size,
            num_classes,
            base_channels: 8,
            embed_dim: 0,
            patch_size: 0,
        }
    }

    pub fn global(input_size: usize, num_classes: usize) -> Self {
        Self {
            family: ClassifierFamily::GlobalAttention,
            input_size,
            num_classes,
            base_channels: 12,
            embed_dim: 48,
            patch_size: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.num_classes < 2 {
            return Err(CoreError::InvalidParam(format!(
                "classifier needs a positive input size and >= 2 classes"
            )));
        }
        match self.family {
            ClassifierFamily::LocalConv => {
                if self.base_channels == 0 {
                    return Err(CoreError::InvalidParam(format!(
                        "local classifier needs base_channels >= 1"
                    )));
                }
                if self.input_size % 8 != 0 {
                    return Err(CoreError::InvalidParam(format!(
                        "local classifier input size {} must be divisible by 8 (three pooling stages)",
                        self.input_size
                    )));
                }
            }
            ClassifierFamily::GlobalAttention => {
                if self.patch_size == 0 || self.input_size % self.patch_size != 0 {
                    return Err(CoreError::InvalidParam(format!(
                        "input size {} not divisible by patch size {}",
                        self.input_size, self.patch_size
                    )));
                }
                if self.embed_dim == 0 || self.base_channels == 0 {
                    return Err(CoreError::InvalidParam(format!(
                        "global classifier needs embed_dim and base_channels >= 1"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Channel widths of the three local conv blocks.
    pub fn local_widths(&self) -> [usize; 3] {
        [
            self.base_channels,
            self.base_channels * 2,
            self.base_channels * 2,
        ]
    }

    pub fn token_grid(&self) -> usize {
        self.input_size / self.patch_size
    }

    /// Tap layer names this model exposes to Grad-CAM.
    pub fn tap_layers(&self) -> &'static [&'static str] {
        match self.family {
            ClassifierFamily::LocalConv => &["conv1", "conv2", "conv3"],
            ClassifierFamily::GlobalAttention => &["tokens"],
        }
    }

    pub fn default_tap(&self) -> &'static str {
        match self.family {
            ClassifierFamily::LocalConv => "conv3",
            ClassifierFamily::GlobalAttention => "tokens",
        }
    }
}

/// Deterministic initialization of a classifier's parameters.
pub fn build_classifier<T: Scalar>(spec: &ClassifierSpec, seed: u64) -> Result<ModelParams<T>> {
    spec.validate()?;
    let mut rng = Rng::new(seed);
    let mut params = ModelParams::new();
    match spec.family {
        ClassifierFamily::LocalConv => {
            let [c1, c2, c3] = spec.local_widths();
            nn::init_conv_block(&mut params, "block1", c1, 3, 3, &mut rng);
            nn::init_conv_block(&mut params, "block2", c2, c1, 3, &mut rng);
            nn::init_conv_block(&mut params, "block3", c3, c2, 3, &mut rng);
            nn::init_linear(&mut params, "head", spec.num_classes, c3, &mut rng);
        }
        ClassifierFamily::GlobalAttention => {
            let d = spec.embed_dim;
            nn::init_conv_block(&mut params, "stem", spec.base_channels, 3, 3, &mut rng);
            let patch_dim = spec.base_channels * spec.patch_size * spec.patch_size;
            nn::init_linear(&mut params, "embed", d, patch_dim, &mut rng);
            nn::init_linear(&mut params, "attn.wq", d, d, &mut rng);
            nn::init_linear(&mut params, "attn.wk", d, d, &mut rng);
            nn::init_linear(&mut params, "attn.wv", d, d, &mut rng);
            nn::init_linear(&mut params, "attn.wo", d, d, &mut rng);
            nn::init_layer_norm(&mut params, "ln", d);
            nn::init_linear(&mut params, "head", spec.num_classes, d, &mut rng);
        }
    }
    Ok(params)
}

/// Forward-pass artifacts: logits plus every Grad-CAM tap.
pub struct ForwardArtifacts<T: Scalar> {
    pub logits: NodeId,
    pub taps: BTreeMap<String, NodeId>,
    pub bn_stats: Vec<nn::BnStats<T>>,
    /// Penultimate feature vector (pre-head), for feature-distance probes.
    pub penultimate: NodeId,
}

/// Classifier forward pass on an existing tape. The local family accepts a
/// batched [n,3,h,w] input; the global family requires n = 1.
pub fn classifier_forward<T: Scalar>(
    tape: &mut Tape<T>,
    nodes: &ParamNodes,
    params: &ModelParams<T>,
    spec: &ClassifierSpec,
    x: NodeId,
    train: bool,
) -> Result<ForwardArtifacts<T>> {
    let mut taps = BTreeMap::new();
    match spec.family {
        ClassifierFamily::LocalConv => {
            let mut stats = Vec::new();
            let mut y = x;
            for (i, block) in ["block1", "block2", "block3"].iter().enumerate() {
                let (a, s) = nn::conv_block_forward(tape, nodes, params, block, y, train, Border::Zero)?;
                if let Some(s) = s {
                    stats.push(s);
                }
                taps.insert(format!("conv{}", i + 1), a);
                y = ops::max_pool2(tape, a)?;
            }
            let feat = ops::global_avg_pool(tape, y)?;
            let logits = ops::linear(
                tape,
                feat,
                nodes.get("head.w")?,
                nodes.get("head.b")?,
            )?;
            Ok(ForwardArtifacts {
                logits,
                taps,
                bn_stats: stats,
                penultimate: feat,
            })
        }
        ClassifierFamily::GlobalAttention => {
            if tape.value(x).shape()[0] != 1 {
                return Err(CoreError::ShapeMismatch(format!(
                    "global classifier forward expects batch size 1"
                )));
            }
            let d = spec.embed_dim;
            let grid = spec.token_grid();
            // convolutional patch embedding: an oriented-feature stem ahead
            // of patchify, so tokens carry local texture energy rather than
            // raw phase-sensitive pixels
            let (feat, stem_stats) =
                nn::conv_block_forward(tape, nodes, params, "stem", x, train, Border::Zero)?;
            let tokens = ops::patchify(tape, feat, spec.patch_size)?;
            let emb = ops::linear(tape, tokens, nodes.get("embed.w")?, nodes.get("embed.b")?)?;
            let emb = ops::relu(tape, emb);
            // Single-head self-attention with a residual connection.
            let q = ops::linear(tape, emb, nodes.get("attn.wq.w")?, nodes.get("attn.wq.b")?)?;
            let k = ops::linear(tape, emb, nodes.get("attn.wk.w")?, nodes.get("attn.wk.b")?)?;
            let v = ops::linear(tape, emb, nodes.get("attn.wv.w")?, nodes.get("attn.wv.b")?)?;
            let kt = ops::transpose2d(tape, k)?;
            let scores = ops::matmul(tape, q, kt)?;
            let scaled = ops::scale(tape, scores, T::from_f64(1.0 / libm::sqrt(d as f64)));
            let weights = ops::softmax_rows(tape, scaled)?;
            let ctx = ops::matmul(tape, weights, v)?;
            let proj = ops::linear(tape, ctx, nodes.get("attn.wo.w")?, nodes.get("attn.wo.b")?)?;
            let res = ops::add(tape, emb, proj)?;
            let normed = ops::layer_norm(
                tape,
                res,
                nodes.get("ln.gamma")?,
                nodes.get("ln.beta")?,
                T::from_f64(nn::BN_EPS),
            )?;
            // Tap is the pre-head token grid; the head after it is purely
            // linear (mean over tokens + dense), which keeps Grad-CAM
            // channel weights exact constants.
            let tap = ops::rows_to_chw(tape, normed, grid, grid)?;
            taps.insert("tokens".to_string(), tap);
            let pooled = ops::mean_rows(tape, normed)?;
            let logits = ops::linear(tape, pooled, nodes.get("head.w")?, nodes.get("head.b")?)?;
            Ok(ForwardArtifacts {
                logits,
                taps,
                bn_stats: stem_stats.into_iter().collect(),
                penultimate: pooled,
            })
        }
    }
}

/// Grad-CAM map construction from a tapped feature layer and a scalar logit,
/// registered on the tape so the map stays differentiable w.r.t. upstream
/// inputs. Channel weights (global average of d logit / d tap) are treated
/// as constants.
pub fn cam_from_tap<T: Scalar>(
    tape: &mut Tape<T>,
    tap: NodeId,
    logit: NodeId,
    out_h: usize,
    out_w: usize,
) -> Result<NodeId> {
    let grads = tape.backward(logit)?;
    let tap_grad = tape.grad_of(&grads, tap);
    let (c, h, w) = match tape.value(tap).shape() {
        [1, c, h, w] => (*c, *h, *w),
        s => {
            return Err(CoreError::ShapeMismatch(format!(
                "cam tap must be [1,c,h,w], got {s:?}"
            )))
        }
    };
    // Per-channel weights: spatial mean of the logit gradient.
    let inv = T::one() / T::from_usize(h * w);
    let mut wdata = vec![T::zero(); c];
    for ci in 0..c {
        wdata[ci] = tap_grad.data()[ci * h * w..(ci + 1) * h * w]
            .iter()
            .copied()
            .sum::<T>()
            * inv;
    }
    // Weighted channel sum as a 1x1 convolution with constant weights.
    let wk = tape.leaf(Tensor::new(&[1, c, 1, 1], wdata)?);
    let zero_bias = tape.leaf(Tensor::zeros(&[1]));
    let weighted = ops::conv2d(tape, tap, wk, zero_bias, 1, 0)?;
    let rectified = ops::relu(tape, weighted);

    // Min-max normalization; a (near-)constant map is defined as all-zeros.
    let v = tape.value(rectified);
    let range = (v.max_value() - v.min_value()).as_f64();
    let normalized = if range < 1e-12 {
        ops::scale(tape, rectified, T::zero())
    } else {
        let mn = ops::reduce_min_all(tape, rectified);
        let mx = ops::reduce_max_all(tape, rectified);
        let span = ops::sub(tape, mx, mn)?;
        let inv_span = ops::recip(tape, span)?;
        let shifted = ops::sub_bcast(tape, rectified, mn)?;
        ops::mul_bcast(tape, shifted, inv_span)?
    };
    ops::bilinear_resize(tape, normalized, out_h, out_w)
}

/// Grad-CAM on an existing tape: classifier forward (inference mode), target
/// logit selection, and the differentiable CAM map, upsampled to the input's
/// spatial size. Returns the map node and the class that was explained.
pub fn grad_cam_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    nodes: &ParamNodes,
    params: &ModelParams<T>,
    spec: &ClassifierSpec,
    img_node: NodeId,
    target_class: Option<usize>,
    tap_layer: &str,
) -> Result<(NodeId, usize)> {
    let (h, w) = match tape.value(img_node).shape() {
        [1, _, h, w] => (*h, *w),
        s => {
            return Err(CoreError::ShapeMismatch(format!(
                "grad_cam expects a [1,c,h,w] image tensor, got {s:?}"
            )))
        }
    };
    let fwd = classifier_forward(tape, nodes, params, spec, img_node, false)?;
    let tap = *fwd.taps.get(tap_layer).ok_or_else(|| {
        CoreError::UnknownLayer(format!(
            "`{tap_layer}` (available: {:?})",
            spec.tap_layers()
        ))
    })?;
    let logits = tape.value(fwd.logits);
    let class = match target_class {
        Some(c) => {
            if c >= spec.num_classes {
                return Err(CoreError::InvalidParam(format!(
                    "target class {c} out of range (num_classes = {})",
                    spec.num_classes
                )));
            }
            c
        }
        None => argmax(logits.data()),
    };
    let logit = ops::select(tape, fwd.logits, class)?;
    let cam = cam_from_tap(tape, tap, logit, h, w)?;
    Ok((cam, class))
}

/// Standalone Grad-CAM: fresh tape, inference only.
pub fn grad_cam<T: Scalar>(
    params: &ModelParams<T>,
    spec: &ClassifierSpec,
    img: &Image<T>,
    target_class: Option<usize>,
    tap_layer: &str,
) -> Result<AttentionMap<T>> {
    let mut tape = Tape::new();
    let nodes = ParamNodes::stage(&mut tape, params);
    let x = tape.leaf(img.to_nchw());
    let (cam, _) = grad_cam_on_tape(&mut tape, &nodes, params, spec, x, target_class, tap_layer)?;
    AttentionMap::from_tensor(tape.value(cam))
}

fn argmax<T: Scalar>(data: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in data.iter().enumerate().skip(1) {
        if v > data[best] {
            best = i;
        }
    }
    best
}

/// Deterministic classifier inference: logits for one image.
pub fn classify<T: Scalar>(
    params: &ModelParams<T>,
    spec: &ClassifierSpec,
    img: &Image<T>,
) -> Result<Vec<T>> {
    let mut tape = Tape::new();
    let nodes = ParamNodes::stage(&mut tape, params);
    let x = tape.leaf(img.to_nchw());
    let fwd = classifier_forward(&mut tape, &nodes, params, spec, x, false)?;
    Ok(tape.value(fwd.logits).data().to_vec())
}

/// Penultimate-layer feature vector of a classifier for one image.
pub fn penultimate_features<T: Scalar>(
    params: &ModelParams<T>,
    spec: &ClassifierSpec,
    img: &Image<T>,
) -> Result<Vec<T>> {
    let mut tape = Tape::new();
    let nodes = ParamNodes::stage(&mut tape, params);
    let x = tape.leaf(img.to_nchw());
    let fwd = classifier_forward(&mut tape, &nodes, params, spec, x, false)?;
    Ok(tape.value(fwd.penultimate).data().to_vec())
}

/// Epochs over which the classifier learning rate ramps linearly to `lr`.
pub const WARMUP_EPOCHS: usize = 5;

/// Cross-entropy training. Returns the per-epoch training accuracy history.
#[allow(clippy::too_many_arguments)]
pub fn train_classifier<T: Scalar>(
    params: &mut ModelParams<T>,
    spec: &ClassifierSpec,
    images: &[Image<T>],
    labels: &[usize],
    epochs: usize,
    lr: f64,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if images.is_empty() {
        return Err(CoreError::EmptyInput(format!("training corpus")));
    }
    if images.len() != labels.len() {
        return Err(CoreError::ShapeMismatch(format!(
            "{} images vs {} labels",
            images.len(),
            labels.len()
        )));
    }
    let mut rng = Rng::new(seed);
    let mut state = AdamState::new();
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        // Linear warmup keeps the attention family out of degenerate basins
        // that a full-rate first epoch can lock in.
        let warm = ((epoch + 1) as f64 / WARMUP_EPOCHS as f64).min(1.0);
        let cfg = AdamConfig::with_lr(T::from_f64(lr * warm));
        let order = rng.permutation(images.len());
        let mut correct = 0usize;
        for chunk in order.chunks(batch_size.max(1)) {
            let mut tape = Tape::new();
            let nodes = ParamNodes::stage(&mut tape, params);
            let mut sample_losses = Vec::with_capacity(chunk.len());
            let mut bn_stats = Vec::new();
            match spec.family {
                ClassifierFamily::LocalConv => {
                    let x = tape.leaf(batch_tensor(images, chunk));
                    let fwd = classifier_forward(&mut tape, &nodes, params, spec, x, true)?;
                    bn_stats = fwd.bn_stats;
                    let logp = ops::log_softmax_rows(&mut tape, fwd.logits)?;
                    for (row, &i) in chunk.iter().enumerate() {
                        let picked =
                            ops::select(&mut tape, logp, row * spec.num_classes + labels[i])?;
                        sample_losses.push(ops::neg(&mut tape, picked));
                        if argmax(
                            &tape.value(fwd.logits).data()
                                [row * spec.num_classes..(row + 1) * spec.num_classes],
                        ) == labels[i]
                        {
                            correct += 1;
                        }
                    }
                }
                ClassifierFamily::GlobalAttention => {
                    for &i in chunk {
                        let x = tape.leaf(images[i].to_nchw());
                        let fwd = classifier_forward(&mut tape, &nodes, params, spec, x, true)?;
                        let logp = ops::log_softmax_rows(&mut tape, fwd.logits)?;
                        let picked = ops::select(&mut tape, logp, labels[i])?;
                        sample_losses.push(ops::neg(&mut tape, picked));
                        if argmax(tape.value(fwd.logits).data()) == labels[i] {
                            correct += 1;
                        }
                    }
                }
            }
            let total = ops::add_n(&mut tape, &sample_losses)?;
            let loss = ops::scale(&mut tape, total, T::one() / T::from_usize(chunk.len()));
            tape.value(loss).assert_finite("classifier loss")?;
            let grads = tape.backward(loss)?;
            let grad_map = nodes.grads(&tape, &grads);
            optimizer_step(params, &grad_map, &mut state, &cfg)?;
            nn::update_running_stats(params, &bn_stats)?;
        }
        history.push(correct as f64 / images.len() as f64);
    }
    Ok(history)
}

/// Stack single images into one [n,3,h,w] tensor.
pub fn batch_tensor<T: Scalar>(images: &[Image<T>], indices: &[usize]) -> Tensor<T> {
    let first = &images[indices[0]];
    let (c, h, w) = (first.channels(), first.height(), first.width());
    let mut data = Vec::with_capacity(indices.len() * c * h * w);
    for &i in indices {
        data.extend_from_slice(images[i].to_nchw().data());
    }
    Tensor::new(&[indices.len(), c, h, w], data).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_image(seed: u64, size: usize) -> Image<f64> {
        let mut rng = Rng::new(seed);
        let pixels: Vec<f64> = (0..size * size * 3).map(|_| rng.uniform_f64()).collect();
        Image::new(size, size, 3, pixels).unwrap()
    }

    #[test]
    fn same_seed_gives_identical_params() {
        let spec = ClassifierSpec::local(16, 2);
        let a: ModelParams<f64> = build_classifier(&spec, 9).unwrap();
        let b: ModelParams<f64> = build_classifier(&spec, 9).unwrap();
        assert_eq!(a, b);
        let spec = ClassifierSpec::global(16, 2);
        let a: ModelParams<f64> = build_classifier(&spec, 9).unwrap();
        let b: ModelParams<f64> = build_classifier(&spec, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn local_forward_shape() {
        let spec = ClassifierSpec::local(64, 2);
        let params: ModelParams<f64> = build_classifier(&spec, 1).unwrap();
        let logits = classify(&params, &spec, &random_image(2, 64)).unwrap();
        assert_eq!(logits.len(), 2);
    }

    #[test]
    fn local_param_count_matches_closed_form() {
        let spec = ClassifierSpec::local(64, 2);
        let params: ModelParams<f64> = build_classifier(&spec, 1).unwrap();
        let [c1, c2, c3] = spec.local_widths();
        // conv w+b, bn gamma/beta/mean/var per block; head w+b
        let expected = (c1 * 3 * 9 + c1 + 4 * c1)
            + (c2 * c1 * 9 + c2 + 4 * c2)
            + (c3 * c2 * 9 + c3 + 4 * c3)
            + (2 * c3 + 2);
        assert_eq!(params.num_elements(), expected);
    }

    #[test]
    fn global_param_count_matches_closed_form() {
        let spec = ClassifierSpec::global(64, 2);
        let params: ModelParams<f64> = build_classifier(&spec, 1).unwrap();
        let d = spec.embed_dim;
        let c = spec.base_channels;
        let patch_dim = c * 8 * 8;
        let expected = (c * 3 * 9 + c + 4 * c) // stem conv + bias + bn
            + (d * patch_dim + d)              // embed
            + 4 * (d * d + d)                  // q,k,v,o
            + 2 * d                            // layer norm
            + (2 * d + 2); // head
        assert_eq!(params.num_elements(), expected);
    }

    #[test]
    fn forward_is_deterministic() {
        let spec = ClassifierSpec::global(32, 2);
        let params: ModelParams<f64> = build_classifier(&spec, 5).unwrap();
        let img = random_image(7, 32);
        assert_eq!(
            classify(&params, &spec, &img).unwrap(),
            classify(&params, &spec, &img).unwrap()
        );
    }

    #[test]
    fn grad_cam_bounds_and_dims() {
        for spec in [ClassifierSpec::local(32, 2), ClassifierSpec::global(32, 2)] {
            let params: ModelParams<f64> = build_classifier(&spec, 3).unwrap();
            let img = random_image(11, 32);
            let cam = grad_cam(&params, &spec, &img, None, spec.default_tap()).unwrap();
            assert_eq!((cam.width, cam.height), (32, 32));
            assert!(cam.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn grad_cam_unknown_layer_rejected() {
        let spec = ClassifierSpec::local(32, 2);
        let params: ModelParams<f64> = build_classifier(&spec, 3).unwrap();
        let err = grad_cam(&params, &spec, &random_image(1, 32), None, "conv9").unwrap_err();
        assert!(matches!(err, CoreError::UnknownLayer(_)));
    }

    #[test]
    fn cam_matches_single_channel_analytic_oracle() {
        // Tap = one feature channel, logit = positive weight * GAP(tap):
        // CAM must equal minmax(ReLU(feature)).
        let mut rng = Rng::new(21);
        let feat: Vec<f64> = (0..16).map(|_| rng.normal(0.0, 1.0)).collect();
        let mut tape = Tape::<f64>::new();
        let tap = tape.leaf(Tensor::new(&[1, 1, 4, 4], feat.clone()).unwrap());
        let pooled = ops::global_avg_pool(&mut tape, tap).unwrap();
        let scaled = ops::scale(&mut tape, pooled, 2.5);
        let logit = ops::sum_all(&mut tape, scaled);
        let cam = cam_from_tap(&mut tape, tap, logit, 4, 4).unwrap();
        // independent oracle
        let r: Vec<f64> = feat.iter().map(|&v| v.max(0.0)).collect();
        let (lo, hi) = (
            r.iter().cloned().fold(f64::INFINITY, f64::min),
            r.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        );
        let expected: Vec<f64> = r.iter().map(|&v| (v - lo) / (hi - lo)).collect();
        for (a, e) in tape.value(cam).data().iter().zip(&expected) {
            assert!((a - e).abs() < 1e-6, "{a} vs {e}");
        }
    }

    #[test]
    fn cam_normalization_invariant_to_compensated_scaling() {
        // Scaling tap activations by s and the following weights by 1/s
        // leaves the normalized CAM unchanged.
        let run = |s: f64| {
            let mut rng = Rng::new(33);
            let feat: Vec<f64> = (0..2 * 16).map(|_| rng.normal(0.0, 1.0) * s).collect();
            let head: Vec<f64> = vec![1.3 / s, -0.4 / s];
            let mut tape = Tape::<f64>::new();
            let tap = tape.leaf(Tensor::new(&[1, 2, 4, 4], feat).unwrap());
            let pooled = ops::global_avg_pool(&mut tape, tap).unwrap();
            let w = tape.leaf(Tensor::new(&[1, 2], head).unwrap());
            let b = tape.leaf(Tensor::zeros(&[1]));
            let logit2 = ops::linear(&mut tape, pooled, w, b).unwrap();
            let logit = ops::sum_all(&mut tape, logit2);
            let cam = cam_from_tap(&mut tape, tap, logit, 4, 4).unwrap();
            tape.value(cam).data().to_vec()
        };
        let a = run(1.0);
        let b = run(7.0);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn diff_mask_strict_threshold_and_symmetry() {
        let a = AttentionMap::new(2, 1, vec![0.5, 0.5]).unwrap();
        let b = AttentionMap::new(2, 1, vec![0.75, 0.8125]).unwrap();
        // |diff| = 0.25 exactly -> 0 ; |diff| = 0.3125 -> 1 (dyadic, so exact)
        let m = heatmap_diff_mask(&a, &b, 0.25).unwrap();
        assert_eq!(m.bits, vec![0, 1]);
        let m2 = heatmap_diff_mask(&b, &a, 0.25).unwrap();
        assert_eq!(m.bits, m2.bits);
        // identical heatmaps -> empty mask
        let m3 = heatmap_diff_mask(&a, &a, 0.25).unwrap();
        assert_eq!(m3.count_set(), 0);
    }

    #[test]
    fn zero_epochs_leaves_params_unchanged() {
        let spec = ClassifierSpec::local(16, 2);
        let mut params: ModelParams<f64> = build_classifier(&spec, 2).unwrap();
        let before = params.clone();
        let imgs = vec![random_image(1, 16), random_image(2, 16)];
        train_classifier(&mut params, &spec, &imgs, &[0, 1], 0, 1e-3, 2, 0).unwrap();
        assert_eq!(params, before);
    }
}
