//! Classical texture-extraction branch: grayscale conversion, edge-preserving
//! bilateral filtering, local binary pattern quantization, and the small conv
//! stack that turns a filtered image into texture feature maps.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::image::Image;
use crate::nn;
use crate::ops;
use crate::params::ModelParams;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Grayscale weights exactly as printed in the source material. They sum to
/// 1.002, so conversion clamps to [0,1].
pub const GRAY_COEFFS_DEFAULT: [f64; 3] = [0.299, 0.587, 0.116];
/// The conventional BT.601-style triple, available as a config escape hatch.
pub const GRAY_COEFFS_STANDARD: [f64; 3] = [0.299, 0.587, 0.114];

/// Bilateral filter parameters. `sigma_r` is expressed in 8-bit gray units
/// (0..255 scale) and converted internally to [0,1] intensity units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterParams<T: Scalar> {
    /// Odd neighborhood side length.
    pub window: usize,
    /// Spatial std-dev in pixels.
    pub sigma_d: T,
    /// Range std-dev in gray units (0..255 scale).
    pub sigma_r: T,
}

impl<T: Scalar> Default for FilterParams<T> {
    fn default() -> Self {
        Self {
            window: 31,
            sigma_d: T::from_f64(75.0),
            sigma_r: T::from_f64(15.0),
        }
    }
}

impl<T: Scalar> FilterParams<T> {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(CoreError::InvalidParam(format!(
                "filter window must be odd and >= 3, got {}",
                self.window
            )));
        }
        if self.sigma_d <= T::zero() || self.sigma_r <= T::zero() {
            return Err(CoreError::InvalidParam(format!(
                "filter sigmas must be positive"
            )));
        }
        Ok(())
    }
}

/// Per-pixel LBP codes in [0, 2^P - 1].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LbpMap {
    pub width: usize,
    pub height: usize,
    pub codes: Vec<u32>,
}

/// Weighted-sum grayscale conversion, clamped to [0,1].
pub fn to_grayscale<T: Scalar>(img: &Image<T>, coefficients: [f64; 3]) -> Result<Image<T>> {
    if img.channels() != 3 {
        return Err(CoreError::InvalidParam(format!(
            "to_grayscale requires a 3-channel image, got {} channel(s)",
            img.channels()
        )));
    }
    let (w, h) = (img.width(), img.height());
    let c = coefficients.map(T::from_f64);
    let mut pixels = vec![T::zero(); w * h];
    for y in 0..h {
        for x in 0..w {
            let v = c[0] * img.get(x, y, 0) + c[1] * img.get(x, y, 1) + c[2] * img.get(x, y, 2);
            pixels[y * w + x] = v.max(T::zero()).min(T::one());
        }
    }
    Image::new(w, h, 1, pixels)
}

/// Edge-preserving bilateral filter over an odd square window. Border pixels
/// are handled by truncating the window and renormalizing over in-bounds
/// neighbors only.
pub fn bilateral_filter<T: Scalar>(img: &Image<T>, p: &FilterParams<T>) -> Result<Image<T>> {
    if img.channels() != 1 {
        return Err(CoreError::InvalidParam(format!(
            "bilateral_filter requires a single-channel image"
        )));
    }
    p.validate()?;
    let (w, h) = (img.width(), img.height());
    let r = (p.window / 2) as isize;
    let two = T::from_f64(2.0);
    let inv_2sd2 = T::one() / (two * p.sigma_d * p.sigma_d);
    // Range kernel std-dev converted from gray units to [0,1] intensity.
    let sr = p.sigma_r / T::from_f64(255.0);
    let inv_2sr2 = T::one() / (two * sr * sr);

    // Separable-looking spatial kernel table, indexed by (dy+r, dx+r).
    let side = p.window;
    let mut spatial = vec![T::zero(); side * side];
    for dy in -r..=r {
        for dx in -r..=r {
            let d2 = T::from_f64((dy * dy + dx * dx) as f64);
            spatial[((dy + r) as usize) * side + (dx + r) as usize] = (-d2 * inv_2sd2).exp();
        }
    }

    let src = img.pixels();
    let mut out = vec![T::zero(); w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let center = src[y as usize * w + x as usize];
            let mut acc = T::zero();
            let mut norm = T::zero();
            for dy in -r..=r {
                let ny = y + dy;
                if ny < 0 || ny >= h as isize {
                    continue;
                }
                for dx in -r..=r {
                    let nx = x + dx;
                    if nx < 0 || nx >= w as isize {
                        continue;
                    }
                    let v = src[ny as usize * w + nx as usize];
                    let di = (center - v).abs();
                    let weight = spatial[((dy + r) as usize) * side + (dx + r) as usize]
                        * (-di * di * inv_2sr2).exp();
                    acc = acc + weight * v;
                    norm = norm + weight;
                }
            }
            out[y as usize * w + x as usize] = acc / norm;
        }
    }
    Image::new(w, h, 1, out)
}

// Integer neighbor offsets for the classic 3x3 case (P=8, R=1), ordered
// counter-clockwise from the right neighbor with y pointing down.
const LBP8_OFFSETS: [(isize, isize); 8] = [
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// Local binary pattern codes over a circular neighborhood. Sampling is
/// counter-clockwise from the (+R, 0) offset; non-integer sample positions
/// are read with bilinear interpolation; borders replicate edge pixels.
/// For P=8, R=1 the samples are exactly the 8 integer neighbors.
pub fn lbp_map<T: Scalar>(img: &Image<T>, p: usize, r: f64) -> Result<LbpMap> {
    if img.channels() != 1 {
        return Err(CoreError::InvalidParam(format!(
            "lbp_map requires a single-channel image"
        )));
    }
    if p < 4 || p > 24 {
        return Err(CoreError::InvalidParam(format!(
            "lbp_map: sampling points P must be in [4, 24], got {p}"
        )));
    }
    if r < 1.0 {
        return Err(CoreError::InvalidParam(format!(
            "lbp_map: radius R must be >= 1, got {r}"
        )));
    }
    let (w, h) = (img.width(), img.height());

    // Sample a pixel with edge replication.
    let at = |x: isize, y: isize| -> f64 {
        let xc = x.clamp(0, w as isize - 1) as usize;
        let yc = y.clamp(0, h as isize - 1) as usize;
        img.pixels()[yc * w + xc].as_f64()
    };
    // Bilinear read at a fractional offset, edge-replicated.
    let sample = |x: f64, y: f64| -> f64 {
        let x0 = libm::floor(x);
        let y0 = libm::floor(y);
        let fx = x - x0;
        let fy = y - y0;
        let (x0, y0) = (x0 as isize, y0 as isize);
        let v00 = at(x0, y0);
        let v01 = at(x0 + 1, y0);
        let v10 = at(x0, y0 + 1);
        let v11 = at(x0 + 1, y0 + 1);
        let top = v00 + (v01 - v00) * fx;
        let bot = v10 + (v11 - v10) * fx;
        top + (bot - top) * fy
    };

    let use_integer_neighbors = p == 8 && r == 1.0;
    let mut offsets = Vec::with_capacity(p);
    for k in 0..p {
        if use_integer_neighbors {
            let (dx, dy) = LBP8_OFFSETS[k];
            offsets.push((dx as f64, dy as f64));
        } else {
            let theta = 2.0 * core::f64::consts::PI * k as f64 / p as f64;
            offsets.push((r * libm::cos(theta), -r * libm::sin(theta)));
        }
    }

    let mut codes = vec![0u32; w * h];
    for y in 0..h {
        for x in 0..w {
            let center = img.pixels()[y * w + x].as_f64();
            let mut code = 0u32;
            for (k, &(dx, dy)) in offsets.iter().enumerate() {
                let gp = if use_integer_neighbors {
                    at(x as isize + dx as isize, y as isize + dy as isize)
                } else {
                    sample(x as f64 + dx, y as f64 + dy)
                };
                // s(x) = 1 when x >= 0
                if gp - center >= 0.0 {
                    code |= 1 << k;
                }
            }
            codes[y * w + x] = code;
        }
    }
    Ok(LbpMap {
        width: w,
        height: h,
        codes,
    })
}

/// Where LBP quantization happens relative to the conv stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TextureMode {
    /// Conv stack and pooling first, then per-channel LBP (the stated order).
    #[default]
    ConvThenLbp,
    /// LBP directly on the filtered image, skipping the conv stack.
    LbpDirect,
}

/// Number of feature channels produced by the texture conv stack.
pub const TEXTURE_CHANNELS: usize = 8;

/// Deterministic weights for the two-ConvBlock texture stack. The stack is
/// fixed at build time; gradients never flow into it (LBP quantization is
/// non-differentiable downstream anyway).
pub fn build_texture_stack<T: Scalar>(seed: u64) -> ModelParams<T> {
    let mut rng = Rng::new(seed);
    let mut params = ModelParams::new();
    nn::init_conv_block(&mut params, "block1", TEXTURE_CHANNELS, 1, 3, &mut rng);
    nn::init_conv_block(&mut params, "block2", TEXTURE_CHANNELS, TEXTURE_CHANNELS, 3, &mut rng);
    params
}

/// Texture features from a filtered grayscale image:
/// ConvBlock -> ConvBlock -> 2x2 max pool -> per-channel LBP, with each
/// channel min-max normalized before quantization and codes divided by
/// 2^P - 1 after. Output is [1, C, H/2, W/2] with values in [0,1].
pub fn texture_features<T: Scalar>(
    filtered: &Image<T>,
    weights: &ModelParams<T>,
    lbp_points: usize,
    lbp_radius: f64,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let nodes = nn::ParamNodes::stage(&mut tape, weights);
    let x = tape.leaf(filtered.to_nchw());
    let (y, _) = nn::conv_block_forward(&mut tape, &nodes, weights, "block1", x, false, nn::Border::Replicate)?;
    let (y, _) = nn::conv_block_forward(&mut tape, &nodes, weights, "block2", y, false, nn::Border::Replicate)?;
    let pooled = ops::max_pool2(&mut tape, y)?;
    let feat = tape.value(pooled);
    let (c, oh, ow) = (feat.shape()[1], feat.shape()[2], feat.shape()[3]);

    let denom = T::from_usize((1usize << lbp_points) - 1);
    let mut out = vec![T::zero(); c * oh * ow];
    for ci in 0..c {
        let plane = &feat.data()[ci * oh * ow..(ci + 1) * oh * ow];
        let lo = plane.iter().copied().fold(T::infinity(), T::min);
        let hi = plane.iter().copied().fold(T::neg_infinity(), T::max);
        let range = hi - lo;
        let normalized: Vec<T> = if range > T::zero() {
            plane.iter().map(|&v| (v - lo) / range).collect()
        } else {
            vec![T::zero(); plane.len()]
        };
        let chan = Image::new(ow, oh, 1, normalized)?;
        let lbp = lbp_map(&chan, lbp_points, lbp_radius)?;
        for (dst, &code) in out[ci * oh * ow..(ci + 1) * oh * ow]
            .iter_mut()
            .zip(&lbp.codes)
        {
            *dst = T::from_usize(code as usize) / denom;
        }
    }
    Tensor::new(&[1, c, oh, ow], out)
}

/// Texture features with LBP applied directly to the filtered image
/// (the alternative order left behind a config flag).
pub fn texture_features_direct<T: Scalar>(
    filtered: &Image<T>,
    lbp_points: usize,
    lbp_radius: f64,
) -> Result<Tensor<T>> {
    let lbp = lbp_map(filtered, lbp_points, lbp_radius)?;
    let denom = T::from_usize((1usize << lbp_points) - 1);
    let data: Vec<T> = lbp
        .codes
        .iter()
        .map(|&c| T::from_usize(c as usize) / denom)
        .collect();
    Tensor::new(&[1, 1, lbp.height, lbp.width], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rgb(w: usize, h: usize, px: [f64; 3]) -> Image<f64> {
        let mut pixels = Vec::new();
        for _ in 0..w * h {
            pixels.extend(px.iter().copied());
        }
        Image::new(w, h, 3, pixels).unwrap()
    }

    #[test]
    fn grayscale_pure_red() {
        let img = rgb(2, 2, [1.0, 0.0, 0.0]);
        let gray = to_grayscale(&img, GRAY_COEFFS_DEFAULT).unwrap();
        assert!((gray.get(0, 0, 0) - 0.299).abs() < 1e-12);
    }

    #[test]
    fn grayscale_black_and_white() {
        let black = rgb(1, 1, [0.0, 0.0, 0.0]);
        assert_eq!(to_grayscale(&black, GRAY_COEFFS_DEFAULT).unwrap().get(0, 0, 0), 0.0);
        // coefficients as printed sum to 1.002 -> clamped to 1.0
        let white = rgb(1, 1, [1.0, 1.0, 1.0]);
        assert_eq!(to_grayscale(&white, GRAY_COEFFS_DEFAULT).unwrap().get(0, 0, 0), 1.0);
    }

    #[test]
    fn grayscale_rejects_single_channel() {
        let gray = Image::<f64>::zeros(2, 2, 1);
        assert!(to_grayscale(&gray, GRAY_COEFFS_DEFAULT).is_err());
    }

    #[test]
    fn grayscale_linear_before_clamp() {
        // gray(a*img) = a*gray(img) for a in [0,1]
        let mut rng = Rng::new(5);
        for _ in 0..20 {
            let px = [rng.uniform_f64(), rng.uniform_f64(), rng.uniform_f64()];
            let a = rng.uniform_f64();
            let img = rgb(1, 1, px);
            let scaled = rgb(1, 1, [px[0] * a, px[1] * a, px[2] * a]);
            let g1 = to_grayscale(&scaled, GRAY_COEFFS_STANDARD).unwrap().get(0, 0, 0);
            let g2 = a * to_grayscale(&img, GRAY_COEFFS_STANDARD).unwrap().get(0, 0, 0);
            assert!((g1 - g2).abs() < 1e-12);
        }
    }

    #[test]
    fn bilateral_constant_image_is_identity() {
        let img = Image::<f64>::new(8, 8, 1, vec![0.5; 64]).unwrap();
        let p = FilterParams {
            window: 5,
            sigma_d: 2.0,
            sigma_r: 25.0,
        };
        let out = bilateral_filter(&img, &p).unwrap();
        for (&a, &b) in out.pixels().iter().zip(img.pixels()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bilateral_preserves_range() {
        let mut rng = Rng::new(77);
        let pixels: Vec<f64> = (0..16 * 16).map(|_| rng.uniform_f64()).collect();
        let img = Image::new(16, 16, 1, pixels).unwrap();
        let p = FilterParams {
            window: 7,
            sigma_d: 3.0,
            sigma_r: 40.0,
        };
        let out = bilateral_filter(&img, &p).unwrap();
        let (lo, hi) = (
            img.pixels().iter().cloned().fold(f64::INFINITY, f64::min),
            img.pixels().iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        );
        for &v in out.pixels() {
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn bilateral_rejects_bad_params() {
        let img = Image::<f64>::zeros(4, 4, 1);
        let bad_window = FilterParams {
            window: 4,
            sigma_d: 1.0,
            sigma_r: 1.0,
        };
        assert!(bilateral_filter(&img, &bad_window).is_err());
    }

    #[test]
    fn lbp_constant_image_is_all_255() {
        let img = Image::<f64>::new(6, 6, 1, vec![0.3; 36]).unwrap();
        let lbp = lbp_map(&img, 8, 1.0).unwrap();
        assert!(lbp.codes.iter().all(|&c| c == 255));
    }

    #[test]
    fn lbp_peak_center_is_zero() {
        // center 1.0 with all 8 neighbors 0.0 -> code 0
        let mut img = Image::<f64>::zeros(5, 5, 1);
        img.set(2, 2, 0, 1.0);
        let lbp = lbp_map(&img, 8, 1.0).unwrap();
        assert_eq!(lbp.codes[2 * 5 + 2], 0);
    }

    #[test]
    fn lbp_monotone_transform_invariance() {
        let mut rng = Rng::new(13);
        let pixels: Vec<f64> = (0..100).map(|_| rng.uniform_f64()).collect();
        let img = Image::new(10, 10, 1, pixels.clone()).unwrap();
        // strictly increasing map of intensities
        let transformed = Image::new(
            10,
            10,
            1,
            pixels.iter().map(|&v| (0.2 + 0.7 * v * v + 0.1 * v).min(1.0)).collect(),
        )
        .unwrap();
        let a = lbp_map(&img, 8, 1.0).unwrap();
        let b = lbp_map(&transformed, 8, 1.0).unwrap();
        assert_eq!(a.codes, b.codes);
    }

    #[test]
    fn texture_features_shapes_and_range() {
        let stack = build_texture_stack::<f64>(3);
        let img = {
            let mut rng = Rng::new(4);
            let pixels: Vec<f64> = (0..16 * 16).map(|_| rng.uniform_f64()).collect();
            Image::new(16, 16, 1, pixels).unwrap()
        };
        let feat = texture_features(&img, &stack, 8, 1.0).unwrap();
        assert_eq!(feat.shape(), &[1, TEXTURE_CHANNELS, 8, 8]);
        assert!(feat.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn texture_features_constant_image_is_all_ones() {
        // constant input -> constant feature channels -> LBP code 255 -> 1.0
        let stack = build_texture_stack::<f64>(3);
        let img = Image::<f64>::new(8, 8, 1, vec![0.6; 64]).unwrap();
        let feat = texture_features(&img, &stack, 8, 1.0).unwrap();
        assert!(feat.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }
}
