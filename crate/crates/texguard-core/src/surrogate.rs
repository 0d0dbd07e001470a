//! Differentiable toy editor G: a small conv encoder-decoder trained to
//! reproduce a procedural edit (hair recolor or region invert), standing in
//! for a generative editing model during defense training.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::attention::batch_tensor;
use crate::error::{CoreError, Result};
use crate::image::Image;
use crate::nn::{self, ParamNodes};
use crate::optim::{optimizer_step, AdamConfig, AdamState};
use crate::ops;
use crate::params::ModelParams;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};

/// Blend strength of the recolor edit inside the region.
pub const EDIT_ALPHA: f64 = 0.8;

/// Hidden channel width of the editor.
const WIDTH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditKind {
    HairRecolor,
    RegionInvert,
}

impl EditKind {
    pub fn name(&self) -> &'static str {
        match self {
            EditKind::HairRecolor => "hair-recolor",
            EditKind::RegionInvert => "region-invert",
        }
    }
}

/// Description of one procedural edit: what to do and where.
#[derive(Debug, Clone, PartialEq)]
pub struct EditSpec {
    pub kind: EditKind,
    /// Blend target for the recolor edit, RGB in [0,1].
    pub target_hue: [f64; 3],
    /// Procedural mask identifier understood by the corpus generator.
    pub region: String,
}

impl EditSpec {
    pub fn hair_recolor(target_hue: [f64; 3]) -> Result<Self> {
        let spec = Self {
            kind: EditKind::HairRecolor,
            target_hue,
            region: "hair-band".to_string(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn region_invert() -> Self {
        Self {
            kind: EditKind::RegionInvert,
            target_hue: [0.0; 3],
            region: "hair-band".to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .target_hue
            .iter()
            .any(|&v| !(0.0..=1.0).contains(&v) || !v.is_finite())
        {
            return Err(CoreError::InvalidParam(format!(
                "target_hue components must be in [0,1], got {:?}",
                self.target_hue
            )));
        }
        Ok(())
    }
}

/// Ground-truth edit: the input with the edit applied inside the region.
/// `mask` is one byte per pixel, 1 inside the region.
pub fn analytic_edit<T: Scalar>(img: &Image<T>, mask: &[u8], spec: &EditSpec) -> Result<Image<T>> {
    spec.validate()?;
    if img.channels() != 3 {
        return Err(CoreError::ShapeMismatch(format!(
            "edit requires a 3-channel image, got {} channels",
            img.channels()
        )));
    }
    if mask.len() != img.width() * img.height() {
        return Err(CoreError::ShapeMismatch(format!(
            "mask has {} entries for a {}x{} image",
            mask.len(),
            img.width(),
            img.height()
        )));
    }
    let alpha = T::from_f64(EDIT_ALPHA);
    let mut out = img.clone();
    for y in 0..img.height() {
        for x in 0..img.width() {
            if mask[y * img.width() + x] == 0 {
                continue;
            }
            for c in 0..3 {
                let p = img.get(x, y, c);
                let edited = match spec.kind {
                    EditKind::HairRecolor => {
                        alpha * T::from_f64(spec.target_hue[c]) + (T::one() - alpha) * p
                    }
                    EditKind::RegionInvert => T::one() - p,
                };
                out.set(x, y, c, edited);
            }
        }
    }
    Ok(out)
}

/// Deterministic initialization of the 4-layer editor. The three hidden
/// layers are ConvBlocks (conv + batch norm + ReLU); the output layer is a
/// plain conv into a sigmoid.
pub fn build_surrogate<T: Scalar>(seed: u64) -> ModelParams<T> {
    let mut rng = Rng::new(seed);
    let mut params = ModelParams::new();
    nn::init_conv_block(&mut params, "enc1", WIDTH, 3, 3, &mut rng);
    nn::init_conv_block(&mut params, "enc2", WIDTH, WIDTH, 3, &mut rng);
    nn::init_conv_block(&mut params, "dec1", WIDTH, WIDTH, 3, &mut rng);
    nn::init_conv(&mut params, "dec2", 3, WIDTH, 3, &mut rng);
    params
}

fn forward_impl<T: Scalar>(
    tape: &mut Tape<T>,
    nodes: &ParamNodes,
    params: &ModelParams<T>,
    x: NodeId,
    train: bool,
) -> Result<(NodeId, Vec<nn::BnStats<T>>)> {
    let (h, w) = match tape.value(x).shape() {
        [_, 3, h, w] => (*h, *w),
        s => {
            return Err(CoreError::ShapeMismatch(format!(
                "editor expects [n,3,h,w], got {s:?}"
            )))
        }
    };
    let mut stats = Vec::new();
    let block = |tape: &mut Tape<T>, x, prefix: &str, stats: &mut Vec<_>| -> Result<NodeId> {
        let (y, s) = nn::conv_block_forward(tape, nodes, params, prefix, x, train, nn::Border::Zero)?;
        if let Some(s) = s {
            stats.push(s);
        }
        Ok(y)
    };
    let y = block(tape, x, "enc1", &mut stats)?;
    let y = ops::avg_pool2(tape, y)?;
    let y = block(tape, y, "enc2", &mut stats)?;
    let y = block(tape, y, "dec1", &mut stats)?;
    let y = ops::bilinear_resize(tape, y, h, w)?;
    let y = ops::conv2d(tape, y, nodes.get("dec2.w")?, nodes.get("dec2.b")?, 1, 1)?;
    Ok((ops::sigmoid(tape, y), stats))
}

/// Editor forward pass on an existing tape in inference mode (batch-norm
/// running statistics). Input [n,3,h,w] with even h, w; output has the same
/// shape, values in (0,1) via sigmoid.
pub fn surrogate_forward<T: Scalar>(
    tape: &mut Tape<T>,
    nodes: &ParamNodes,
    params: &ModelParams<T>,
    x: NodeId,
) -> Result<NodeId> {
    Ok(forward_impl(tape, nodes, params, x, false)?.0)
}

/// Training-mode forward pass; also returns the fresh batch statistics so the
/// caller can update the running estimates after the optimizer step.
pub fn surrogate_forward_train<T: Scalar>(
    tape: &mut Tape<T>,
    nodes: &ParamNodes,
    params: &ModelParams<T>,
    x: NodeId,
) -> Result<(NodeId, Vec<nn::BnStats<T>>)> {
    forward_impl(tape, nodes, params, x, true)
}

/// Inference: edited image for one input.
pub fn apply<T: Scalar>(params: &ModelParams<T>, img: &Image<T>) -> Result<Image<T>> {
    let mut tape = Tape::new();
    let nodes = ParamNodes::stage(&mut tape, params);
    let x = tape.leaf(img.to_nchw());
    let y = surrogate_forward(&mut tape, &nodes, params, x)?;
    Image::from_nchw(tape.value(y))
}

/// Supervised image-to-image training against the analytic edit. Returns the
/// per-epoch mean squared error history.
#[allow(clippy::too_many_arguments)]
pub fn train_surrogate<T: Scalar>(
    params: &mut ModelParams<T>,
    images: &[Image<T>],
    masks: &[Vec<u8>],
    edit: &EditSpec,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if images.is_empty() {
        return Err(CoreError::EmptyInput(format!("surrogate training corpus")));
    }
    if images.len() != masks.len() {
        return Err(CoreError::ShapeMismatch(format!(
            "{} images vs {} region masks",
            images.len(),
            masks.len()
        )));
    }
    let targets: Vec<Image<T>> = images
        .iter()
        .zip(masks)
        .map(|(img, m)| analytic_edit(img, m, edit))
        .collect::<Result<_>>()?;
    let mut rng = Rng::new(seed);
    let mut state = AdamState::new();
    let cfg = AdamConfig::with_lr(T::from_f64(lr));
    let mut history = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let order = rng.permutation(images.len());
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch_size.max(1)) {
            let mut tape = Tape::new();
            let nodes = ParamNodes::stage(&mut tape, params);
            let x = tape.leaf(batch_tensor(images, chunk));
            let t = tape.leaf(batch_tensor(&targets, chunk));
            let (y, stats) = surrogate_forward_train(&mut tape, &nodes, params, x)?;
            let diff = ops::sub(&mut tape, y, t)?;
            let sq = ops::mul(&mut tape, diff, diff)?;
            let loss = ops::mean_all(&mut tape, sq);
            tape.value(loss).assert_finite("surrogate loss")?;
            epoch_loss += tape.value(loss).item().as_f64() * chunk.len() as f64;
            let grads = tape.backward(loss)?;
            let grad_map = nodes.grads(&tape, &grads);
            optimizer_step(params, &grad_map, &mut state, &cfg)?;
            nn::update_running_stats(params, &stats)?;
        }
        history.push(epoch_loss / images.len() as f64);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn random_image(seed: u64, size: usize) -> Image<f64> {
        let mut rng = Rng::new(seed);
        let pixels: Vec<f64> = (0..size * size * 3).map(|_| rng.uniform_f64()).collect();
        Image::new(size, size, 3, pixels).unwrap()
    }

    fn band_mask(size: usize, rows: core::ops::Range<usize>) -> Vec<u8> {
        let mut m = vec![0u8; size * size];
        for y in rows {
            for x in 0..size {
                m[y * size + x] = 1;
            }
        }
        m
    }

    #[test]
    fn same_seed_identical_params() {
        let a: ModelParams<f32> = build_surrogate(4);
        let b: ModelParams<f32> = build_surrogate(4);
        assert_eq!(a, b);
    }

    #[test]
    fn forward_shape_and_sigmoid_range() {
        let params: ModelParams<f64> = build_surrogate(1);
        let img = random_image(2, 16);
        let out = apply(&params, &img).unwrap();
        assert_eq!((out.width(), out.height(), out.channels()), (16, 16, 3));
        for &p in out.pixels() {
            assert!((0.0..=1.0).contains(&p));
        }
        // determinism
        assert_eq!(apply(&params, &img).unwrap(), out);
    }

    #[test]
    fn analytic_edit_formulas() {
        let img = random_image(3, 8);
        let mask = band_mask(8, 2..4);
        let recolor = EditSpec::hair_recolor([0.9, 0.1, 0.2]).unwrap();
        let edited = analytic_edit(&img, &mask, &recolor).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                for c in 0..3 {
                    let p = img.get(x, y, c);
                    let e = edited.get(x, y, c);
                    if (2..4).contains(&y) {
                        let want = 0.8 * recolor.target_hue[c] + 0.2 * p;
                        assert!((e - want).abs() < 1e-12);
                    } else {
                        assert_eq!(e, p);
                    }
                }
            }
        }
        // invert is an involution inside the region
        let invert = EditSpec::region_invert();
        let once = analytic_edit(&img, &mask, &invert).unwrap();
        let twice = analytic_edit(&once, &mask, &invert).unwrap();
        for (a, b) in twice.pixels().iter().zip(img.pixels()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bad_target_hue_rejected() {
        assert!(EditSpec::hair_recolor([1.2, 0.0, 0.0]).is_err());
    }

    #[test]
    fn zero_epochs_unchanged() {
        let mut params: ModelParams<f64> = build_surrogate(5);
        let before = params.clone();
        let imgs = vec![random_image(1, 8)];
        let masks = vec![band_mask(8, 1..3)];
        let edit = EditSpec::region_invert();
        train_surrogate(&mut params, &imgs, &masks, &edit, 0, 1e-3, 1, 0).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn empty_corpus_rejected() {
        let mut params: ModelParams<f64> = build_surrogate(5);
        let edit = EditSpec::region_invert();
        let err = train_surrogate(&mut params, &[], &[], &edit, 1, 1e-3, 1, 0).unwrap_err();
        assert!(matches!(err, CoreError::EmptyInput(_)));
    }

    #[test]
    fn training_reduces_reconstruction_error() {
        let mut params: ModelParams<f64> = build_surrogate(7);
        let imgs: Vec<_> = (0..6).map(|i| random_image(i, 8)).collect();
        let masks: Vec<_> = (0..6).map(|_| band_mask(8, 2..4)).collect();
        let edit = EditSpec::hair_recolor([0.1, 0.8, 0.3]).unwrap();
        let hist = train_surrogate(&mut params, &imgs, &masks, &edit, 12, 3e-3, 6, 0).unwrap();
        assert!(hist[hist.len() - 1] < hist[0] * 0.8, "history {hist:?}");
    }

    #[test]
    fn editor_is_not_a_constant_map() {
        // local-Lipschitz proxy: small input change gives a finite, nonzero
        // output change
        let params: ModelParams<f64> = build_surrogate(9);
        let img = random_image(4, 16);
        let mut bumped = img.clone();
        let v = (bumped.get(3, 3, 0) + 8.0 / 255.0).min(1.0);
        bumped.set(3, 3, 0, v);
        let a = apply(&params, &img).unwrap();
        let b = apply(&params, &bumped).unwrap();
        let d: f64 = a
            .pixels()
            .iter()
            .zip(b.pixels())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        assert!(d.is_finite() && d > 0.0);
    }
}
