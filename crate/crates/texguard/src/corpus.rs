//! Deterministic procedural toy-face corpus: skin ellipse, eyes, a textured
//! hair band (the edit region), and a background gradient. Stand-in for a
//! real face dataset at desk scale.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use texguard_core::rng::Rng;
use texguard_core::Image;

use crate::imageio::{load_image, save_image};

/// Hair texture classes (the classifier labels).
pub const LABELS: [&str; 2] = ["horizontal", "vertical"];

/// Procedural description of one toy face; same spec, same pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyFaceSpec {
    pub seed: u64,
    pub size: usize,
    /// 0 = horizontal hair texture, 1 = vertical.
    pub texture_class: usize,
}

impl ToyFaceSpec {
    pub fn new(seed: u64, size: usize, texture_class: usize) -> Self {
        Self {
            seed,
            size,
            texture_class,
        }
    }

    /// Render the face and its hair-band mask (1 inside the band).
    pub fn render(&self) -> (Image<f32>, Vec<u8>) {
        let n = self.size;
        let mut rng = Rng::new(self.seed);
        // background gradient
        let top = [
            0.72 + 0.2 * rng.uniform_f64(),
            0.72 + 0.2 * rng.uniform_f64(),
            0.75 + 0.2 * rng.uniform_f64(),
        ];
        let bottom = [
            0.08 + 0.14 * rng.uniform_f64(),
            0.08 + 0.14 * rng.uniform_f64(),
            0.1 + 0.14 * rng.uniform_f64(),
        ];
        // skin ellipse
        let cx = n as f64 * (0.47 + 0.06 * rng.uniform_f64());
        let cy = n as f64 * (0.55 + 0.06 * rng.uniform_f64());
        let rx = n as f64 * (0.26 + 0.05 * rng.uniform_f64());
        let ry = n as f64 * (0.3 + 0.05 * rng.uniform_f64());
        let skin = [
            0.75 + 0.15 * rng.uniform_f64(),
            0.55 + 0.15 * rng.uniform_f64(),
            0.42 + 0.12 * rng.uniform_f64(),
        ];
        // eyes
        let eye_dx = n as f64 * (0.1 + 0.03 * rng.uniform_f64());
        let eye_y = cy - ry * 0.25;
        let eye_r = n as f64 * 0.035;
        // hair band: a contiguous even-aligned row interval covering 15-30%
        // of all pixels, at a random vertical position
        let band_lo = (n * 15).div_ceil(100).next_multiple_of(2);
        let band_hi = (n * 30 / 100) & !1;
        let band_h = band_lo + 2 * (rng.next_u64() as usize % ((band_hi - band_lo) / 2 + 1));
        let band_y0 = 2 * ((rng.next_u64() as usize) % ((n - band_h) / 2 + 1));
        let band_y1 = band_y0 + band_h;
        // The band is a low-contrast sinusoidal modulation over the existing
        // content rather than an opaque hair color: locating it requires
        // amplifying subtle evidence, which keeps the editing task nontrivial.
        // Classes differ by wave orientation and frequency.
        let phase = rng.uniform_f64() * std::f64::consts::TAU;
        let freq = if self.texture_class == 0 {
            0.38 + 0.06 * rng.uniform_f64()
        } else {
            0.55 + 0.08 * rng.uniform_f64()
        };
        let band_amp = 0.035;

        let mut pixels = vec![0.0f32; n * n * 3];
        let mut mask = vec![0u8; n * n];
        for y in 0..n {
            // sigmoid shading: bright above, dark below, few mid-tone rows
            let t = y as f64 / (n - 1) as f64;
            let s = 1.0 / (1.0 + (-(t - 0.5) * 8.0).exp());
            for x in 0..n {
                let mut px = [
                    top[0] * (1.0 - s) + bottom[0] * s,
                    top[1] * (1.0 - s) + bottom[1] * s,
                    top[2] * (1.0 - s) + bottom[2] * s,
                ];
                let dx = (x as f64 - cx) / rx;
                let dy = (y as f64 - cy) / ry;
                if dx * dx + dy * dy <= 1.0 {
                    px = skin;
                    for ex in [cx - eye_dx, cx + eye_dx] {
                        let ddx = x as f64 - ex;
                        let ddy = y as f64 - eye_y;
                        if ddx * ddx + ddy * ddy <= eye_r * eye_r {
                            px = [0.1, 0.08, 0.08];
                        }
                    }
                }
                if (band_y0..band_y1).contains(&y) {
                    mask[y * n + x] = 1;
                    let arg = if self.texture_class == 0 {
                        (x as f64 + y as f64 * 0.15) * freq
                    } else {
                        (y as f64 + x as f64 * 0.15) * freq
                    };
                    let wave = (arg + phase).sin();
                    for p in px.iter_mut() {
                        *p = (*p + band_amp * wave).clamp(0.0, 1.0);
                    }
                }
                for c in 0..3 {
                    pixels[(y * n + x) * 3 + c] = px[c].clamp(0.0, 1.0) as f32;
                }
            }
        }
        let img = Image::new(n, n, 3, pixels).expect("procedural pixels are valid");
        (img, mask)
    }
}

/// One corpus row.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub id: String,
    pub label: usize,
    pub seed: u64,
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
}

/// A rendered corpus held in memory.
pub struct Corpus {
    pub entries: Vec<CorpusEntry>,
    pub images: Vec<Image<f32>>,
    pub masks: Vec<Vec<u8>>,
}

fn mix_seed(seed: u64, index: u64) -> u64 {
    // one splitmix step keeps per-image streams decorrelated
    Rng::new(seed ^ index.wrapping_mul(0x9E3779B97F4A7C15)).next_u64()
}

/// Generate n faces under out_dir: image + mask PNGs and a manifest CSV.
/// Labels alternate, so classes are balanced within one image.
pub fn gen_corpus(n: usize, seed: u64, size: usize, out_dir: &Path) -> Result<Vec<CorpusEntry>> {
    if n == 0 {
        bail!("corpus size must be >= 1");
    }
    fs::create_dir_all(out_dir)
        .with_context(|| format!("create corpus dir {}", out_dir.display()))?;
    let mut entries = Vec::with_capacity(n);
    let mut manifest = String::from("id,label,seed\n");
    for i in 0..n {
        let id = format!("face_{i:04}");
        let label = i % 2;
        let face_seed = mix_seed(seed, i as u64);
        let spec = ToyFaceSpec::new(face_seed, size, label);
        let (img, mask) = spec.render();
        let image_path = out_dir.join(format!("{id}.png"));
        let mask_path = out_dir.join(format!("{id}_mask.png"));
        save_image(&img, &image_path)?;
        let mask_img = Image::new(
            size,
            size,
            1,
            mask.iter().map(|&b| b as f32).collect(),
        )?;
        save_image(&mask_img, &mask_path)?;
        manifest.push_str(&format!("{id},{label},{face_seed}\n"));
        entries.push(CorpusEntry {
            id,
            label,
            seed: face_seed,
            image_path,
            mask_path,
        });
    }
    fs::write(out_dir.join("manifest.csv"), manifest)?;
    Ok(entries)
}

/// Load a generated corpus back from disk via its manifest.
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let manifest = fs::read_to_string(dir.join("manifest.csv"))
        .with_context(|| format!("read manifest in {}", dir.display()))?;
    let mut entries = Vec::new();
    let mut images = Vec::new();
    let mut masks = Vec::new();
    for line in manifest.lines().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let (id, label, seed) = (
            parts.next().context("manifest id")?.to_string(),
            parts.next().context("manifest label")?.parse::<usize>()?,
            parts.next().context("manifest seed")?.parse::<u64>()?,
        );
        let image_path = dir.join(format!("{id}.png"));
        let mask_path = dir.join(format!("{id}_mask.png"));
        let img = load_image(&image_path)?;
        let mask_img = load_image(&mask_path)?;
        let mask: Vec<u8> = mask_img
            .pixels()
            .iter()
            .map(|&p| if p > 0.5 { 1u8 } else { 0 })
            .collect();
        entries.push(CorpusEntry {
            id,
            label,
            seed,
            image_path,
            mask_path,
        });
        images.push(img);
        masks.push(mask);
    }
    if entries.is_empty() {
        bail!("corpus in {} is empty", dir.display());
    }
    Ok(Corpus {
        entries,
        images,
        masks,
    })
}
