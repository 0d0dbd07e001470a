//! Image file IO: 8-bit RGB/grayscale PNG and binary PPM/PGM, decoded as
//! b/255 and encoded as round(p*255).

use std::path::Path;

use anyhow::{bail, Context, Result};
use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};
use texguard_core::Image;

/// Decode an 8-bit RGB or grayscale image; every byte b becomes b/255.
pub fn load_image(path: &Path) -> Result<Image<f32>> {
    let dynimg = image::ImageReader::open(path)
        .with_context(|| format!("open {}", path.display()))?
        .decode()
        .with_context(|| format!("decode {}", path.display()))?;
    let (w, h, channels, bytes): (usize, usize, usize, Vec<u8>) = match dynimg {
        DynamicImage::ImageLuma8(img) => {
            let (w, h) = (img.width() as usize, img.height() as usize);
            (w, h, 1, img.into_raw())
        }
        DynamicImage::ImageRgb8(img) => {
            let (w, h) = (img.width() as usize, img.height() as usize);
            (w, h, 3, img.into_raw())
        }
        other => bail!(
            "{}: unsupported pixel format {:?} (only 8-bit RGB or grayscale)",
            path.display(),
            other.color()
        ),
    };
    let pixels: Vec<f32> = bytes.iter().map(|&b| b as f32 / 255.0).collect();
    Ok(Image::new(w, h, channels, pixels)?)
}

fn to_byte(p: f32) -> u8 {
    (p.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encode as PNG or binary PPM/PGM depending on the file extension.
pub fn save_image(img: &Image<f32>, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = img.pixels().iter().map(|&p| to_byte(p)).collect();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let format = match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("png") => ImageFormat::Png,
        Some("ppm") | Some("pgm") | Some("pnm") => ImageFormat::Pnm,
        other => bail!("unsupported image extension {:?} for save", other),
    };
    match img.channels() {
        1 => GrayImage::from_raw(w, h, bytes)
            .expect("buffer size matches dims")
            .save_with_format(path, format)?,
        3 => RgbImage::from_raw(w, h, bytes)
            .expect("buffer size matches dims")
            .save_with_format(path, format)?,
        c => bail!("cannot save an image with {c} channels"),
    }
    Ok(())
}
