//! Evaluation metrics: visual quality of the protected image (PSNR, SSIM)
//! and defense efficacy on the editor's output (mean squared distortion and
//! the defense success rate derived from it).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::attention::{penultimate_features, ClassifierSpec};
use crate::error::{CoreError, Result};
use crate::image::Image;
use crate::params::ModelParams;
use crate::scalar::Scalar;

/// PSNR sentinel for identical images (zero MSE).
pub const PSNR_CAP_DB: f64 = 99.0;
/// Distortion threshold above which an edit counts as disrupted.
pub const DSR_THRESHOLD: f64 = 0.05;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Per-image evaluation row.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub image_id: String,
    pub psnr_db: f64,
    pub ssim: f64,
    /// Mean squared difference between edited originals and edited
    /// protected images.
    pub distortion_d: f64,
    pub success: bool,
}

/// One aggregate row per edit configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub edit_kind: String,
    pub mean_distortion: f64,
    pub dsr_percent: f64,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DefenseReport {
    pub rows: Vec<ReportRow>,
}

fn mse<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    a.check_same_dims(b, "metric")?;
    let n = a.pixels().len() as f64;
    let sum: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| {
            let d = (x - y).as_f64();
            d * d
        })
        .sum();
    Ok(sum / n)
}

/// Peak signal-to-noise ratio in dB for unit dynamic range, capped at 99.
pub fn psnr<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    let m = mse(a, b)?;
    if m <= 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((-10.0 * libm::log10(m)).min(PSNR_CAP_DB))
}

/// Mean squared per-element difference (the quantity compared to the DSR
/// threshold).
pub fn distortion_l2<T: Scalar>(g_ori: &Image<T>, g_adv: &Image<T>) -> Result<f64> {
    mse(g_ori, g_adv)
}

/// Defense success rate in percent: share of records with distortion at or
/// above the threshold (boundary counts as success).
pub fn dsr(records: &[EvalRecord], threshold: f64) -> Result<f64> {
    if records.is_empty() {
        return Err(CoreError::EmptyInput(format!("dsr over zero records")));
    }
    let hits = records
        .iter()
        .filter(|r| r.distortion_d >= threshold)
        .count();
    Ok(100.0 * hits as f64 / records.len() as f64)
}

fn gaussian_kernel() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut k: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - half;
            libm::exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
        })
        .collect();
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    k
}

/// Separable Gaussian filter, valid mode: output (h-win+1) x (w-win+1).
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let win = k.len();
    let ow = w - win + 1;
    // horizontal pass
    let mut tmp = vec![0.0f64; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * src[y * w + x + i];
            }
            tmp[y * ow + x] = acc;
        }
    }
    // vertical pass
    let oh = h - win + 1;
    let mut out = vec![0.0f64; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * tmp[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Windowed SSIM, Gaussian 11x11 sigma 1.5, dynamic range 1, averaged over
/// window positions and channels.
pub fn ssim<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    a.check_same_dims(b, "metric")?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(CoreError::ShapeMismatch(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let c1 = (SSIM_K1 * SSIM_K1) as f64;
    let c2 = (SSIM_K2 * SSIM_K2) as f64;
    let k = gaussian_kernel();
    let mut total = 0.0;
    for ch in 0..a.channels() {
        let pa: Vec<f64> = (0..w * h)
            .map(|i| a.get(i % w, i / w, ch).as_f64())
            .collect();
        let pb: Vec<f64> = (0..w * h)
            .map(|i| b.get(i % w, i / w, ch).as_f64())
            .collect();
        let mu_a = filter_valid(&pa, w, h, &k);
        let mu_b = filter_valid(&pb, w, h, &k);
        let aa: Vec<f64> = pa.iter().map(|&v| v * v).collect();
        let bb: Vec<f64> = pb.iter().map(|&v| v * v).collect();
        let ab: Vec<f64> = pa.iter().zip(&pb).map(|(&x, &y)| x * y).collect();
        let m_aa = filter_valid(&aa, w, h, &k);
        let m_bb = filter_valid(&bb, w, h, &k);
        let m_ab = filter_valid(&ab, w, h, &k);
        let mut acc = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = m_aa[i] - ma * ma;
            let vb = m_bb[i] - mb * mb;
            let cov = m_ab[i] - ma * mb;
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += acc / mu_a.len() as f64;
    }
    Ok(total / a.channels() as f64)
}

/// Mean squared distance between penultimate classifier features; an
/// informational perceptual proxy, never compared to external numbers.
pub fn feature_distance_proxy<T: Scalar>(
    a: &Image<T>,
    b: &Image<T>,
    params: &ModelParams<T>,
    spec: &ClassifierSpec,
) -> Result<f64> {
    a.check_same_dims(b, "metric")?;
    let fa = penultimate_features(params, spec, a)?;
    let fb = penultimate_features(params, spec, b)?;
    let n = fa.len() as f64;
    Ok(fa
        .iter()
        .zip(&fb)
        .map(|(&x, &y)| {
            let d = (x - y).as_f64();
            d * d
        })
        .sum::<f64>()
        / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::build_classifier;
    use crate::rng::Rng;

    fn random_image(seed: u64, size: usize) -> Image<f64> {
        let mut rng = Rng::new(seed);
        let pixels: Vec<f64> = (0..size * size * 3).map(|_| rng.uniform_f64()).collect();
        Image::new(size, size, 3, pixels).unwrap()
    }

    fn record(d: f64) -> EvalRecord {
        EvalRecord {
            image_id: String::new(),
            psnr_db: 0.0,
            ssim: 0.0,
            distortion_d: d,
            success: false,
        }
    }

    #[test]
    fn psnr_cap_and_arithmetic() {
        let a = random_image(1, 16);
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);
        // uniform offset 0.1 -> MSE 0.01 -> 20 dB
        let b = a.clone().map_pixels(|p| (p * 0.0) + 0.5);
        let c = b.clone().map_pixels(|_| 0.6);
        assert!((psnr(&b, &c).unwrap() - 20.0).abs() < 1e-9);
        // uniform offset 0.01 -> MSE 1e-4 -> 40 dB
        let d = b.clone().map_pixels(|_| 0.51);
        assert!((psnr(&b, &d).unwrap() - 40.0).abs() < 1e-6);
        // symmetry
        assert_eq!(psnr(&b, &c).unwrap(), psnr(&c, &b).unwrap());
    }

    #[test]
    fn psnr_monotone_in_perturbation() {
        let a = random_image(2, 16);
        let mut last = f64::INFINITY;
        for &step in &[0.005, 0.01, 0.02, 0.05, 0.1] {
            let b = a.clone().map_pixels(|p| (p + step).min(1.0));
            let v = psnr(&a, &b).unwrap();
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn distortion_matches_elementwise_oracle() {
        let a = random_image(3, 12);
        let b = random_image(4, 12);
        assert_eq!(distortion_l2(&a, &a).unwrap(), 0.0);
        let got = distortion_l2(&a, &b).unwrap();
        let mut acc = 0.0;
        for (x, y) in a.pixels().iter().zip(b.pixels()) {
            acc += (x - y) * (x - y);
        }
        let want = acc / a.pixels().len() as f64;
        assert!((got - want).abs() < 1e-9);
        // uniform difference 0.3 -> 0.09
        let c = a.clone().map_pixels(|_| 0.2);
        let d = a.clone().map_pixels(|_| 0.5);
        assert!((distortion_l2(&c, &d).unwrap() - 0.09).abs() < 1e-12);
    }

    #[test]
    fn dsr_boundary_and_oracle() {
        let recs: Vec<_> = [0.06, 0.04, 0.05].iter().map(|&d| record(d)).collect();
        let v = dsr(&recs, 0.05).unwrap();
        assert!((v - 200.0 / 3.0).abs() < 1e-9);
        let below: Vec<_> = [0.01, 0.02].iter().map(|&d| record(d)).collect();
        assert_eq!(dsr(&below, 0.05).unwrap(), 0.0);
        assert!(dsr(&[], 0.05).is_err());
        // brute-force counting oracle on a large random batch
        let mut rng = Rng::new(8);
        let ds: Vec<f64> = (0..1000).map(|_| rng.uniform_f64() * 0.1).collect();
        let recs: Vec<_> = ds.iter().map(|&d| record(d)).collect();
        let got = dsr(&recs, 0.05).unwrap();
        let want = 100.0 * ds.iter().filter(|&&d| d >= 0.05).count() as f64 / 1000.0;
        assert_eq!(got, want);
    }

    /// Independent SSIM oracle: direct per-window weighted statistics,
    /// no separable filtering.
    fn ssim_oracle(a: &Image<f64>, b: &Image<f64>) -> f64 {
        let (w, h) = (a.width(), a.height());
        let k = gaussian_kernel();
        let c1 = SSIM_K1 * SSIM_K1;
        let c2 = SSIM_K2 * SSIM_K2;
        let mut total = 0.0;
        for ch in 0..a.channels() {
            let mut acc = 0.0;
            let mut count = 0usize;
            for wy in 0..=(h - SSIM_WINDOW) {
                for wx in 0..=(w - SSIM_WINDOW) {
                    let (mut ma, mut mb) = (0.0, 0.0);
                    let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
                    for dy in 0..SSIM_WINDOW {
                        for dx in 0..SSIM_WINDOW {
                            let wt = k[dy] * k[dx];
                            let pa = a.get(wx + dx, wy + dy, ch);
                            let pb = b.get(wx + dx, wy + dy, ch);
                            ma += wt * pa;
                            mb += wt * pb;
                            saa += wt * pa * pa;
                            sbb += wt * pb * pb;
                            sab += wt * pa * pb;
                        }
                    }
                    let va = saa - ma * ma;
                    let vb = sbb - mb * mb;
                    let cov = sab - ma * mb;
                    acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                        / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1;
                }
            }
            total += acc / count as f64;
        }
        total / a.channels() as f64
    }

    #[test]
    fn ssim_identity_symmetry_and_oracle() {
        let a = random_image(5, 20);
        let b = random_image(6, 20);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let sab = ssim(&a, &b).unwrap();
        let sba = ssim(&b, &a).unwrap();
        assert!((sab - sba).abs() < 1e-12);
        assert!((sab - ssim_oracle(&a, &b)).abs() < 1e-6);
    }

    #[test]
    fn ssim_negative_for_inverted_structure() {
        // strong checkerboard vs its 0.5-centered flip
        let size = 16;
        let mut pixels = Vec::with_capacity(size * size * 3);
        for y in 0..size {
            for x in 0..size {
                let v = if (x + y) % 2 == 0 { 0.9 } else { 0.1 };
                pixels.extend_from_slice(&[v, v, v]);
            }
        }
        let a = Image::new(size, size, 3, pixels).unwrap();
        let b = a.clone().map_pixels(|p| 1.0 - p);
        assert!(ssim(&a, &b).unwrap() < 0.0);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = random_image(7, 8);
        assert!(matches!(
            ssim(&a, &a).unwrap_err(),
            CoreError::ShapeMismatch(_)
        ));
    }

    #[test]
    fn feature_proxy_identity_symmetry_nonnegative() {
        let spec = ClassifierSpec::local(16, 2);
        let params: ModelParams<f64> = build_classifier(&spec, 1).unwrap();
        let a = random_image(8, 16);
        let b = random_image(9, 16);
        assert_eq!(feature_distance_proxy(&a, &a, &params, &spec).unwrap(), 0.0);
        let dab = feature_distance_proxy(&a, &b, &params, &spec).unwrap();
        let dba = feature_distance_proxy(&b, &a, &params, &spec).unwrap();
        assert_eq!(dab, dba);
        assert!(dab >= 0.0);
    }
}
