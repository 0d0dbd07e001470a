//! The pixel currency of the pipeline: [0,1] floating-point rasters,
//! row-major and channel-interleaved.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Image<T: Scalar> {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<T>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(CoreError::InvalidParam(format!(
                "image must have 1 or 3 channels, got {channels}"
            )));
        }
        if pixels.len() != width * height * channels {
            return Err(CoreError::ShapeMismatch(format!(
                "pixel buffer length {} vs {width}x{height}x{channels}",
                pixels.len()
            )));
        }
        if pixels
            .iter()
            .any(|&p| !p.is_finite() || p < T::zero() || p > T::one())
        {
            return Err(CoreError::NonFinite(format!(
                "image pixels must be finite and in [0,1]"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            pixels: vec![T::zero(); width * height * channels],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [T] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> T {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: T) {
        self.pixels[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.channels == other.channels
    }

    pub fn check_same_dims(&self, other: &Self, op: &str) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(CoreError::ShapeMismatch(format!(
                "{op}: {}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    /// Pixelwise transform; the result is clamped back into [0,1].
    pub fn map_pixels(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            width: self.width,
            height: self.height,
            channels: self.channels,
            pixels: self
                .pixels
                .iter()
                .map(|&p| f(p).max(T::zero()).min(T::one()))
                .collect(),
        }
    }

    /// To a 1xCxHxW tensor (planar).
    pub fn to_nchw(&self) -> Tensor<T> {
        let (w, h, c) = (self.width, self.height, self.channels);
        let mut data = vec![T::zero(); c * h * w];
        for y in 0..h {
            for x in 0..w {
                for ci in 0..c {
                    data[(ci * h + y) * w + x] = self.pixels[(y * w + x) * c + ci];
                }
            }
        }
        Tensor::new(&[1, c, h, w], data).unwrap()
    }

    /// From a 1xCxHxW tensor; values clamped to [0,1].
    pub fn from_nchw(t: &Tensor<T>) -> Result<Self> {
        let (c, h, w) = match t.shape() {
            [1, c, h, w] => (*c, *h, *w),
            s => {
                return Err(CoreError::ShapeMismatch(format!(
                    "from_nchw: expected [1,c,h,w], got {s:?}"
                )))
            }
        };
        if c != 1 && c != 3 {
            return Err(CoreError::InvalidParam(format!(
                "from_nchw: {c} channels unsupported"
            )));
        }
        let mut pixels = vec![T::zero(); w * h * c];
        for y in 0..h {
            for x in 0..w {
                for ci in 0..c {
                    let v = t.data()[(ci * h + y) * w + x];
                    pixels[(y * w + x) * c + ci] = v.max(T::zero()).min(T::one());
                }
            }
        }
        Image::new(w, h, c, pixels)
    }

    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            pixels: self.pixels.iter().map(|p| U::from_f64(p.as_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_pixels() {
        assert!(Image::<f32>::new(1, 1, 1, vec![1.5]).is_err());
        assert!(Image::<f32>::new(1, 1, 1, vec![-0.1]).is_err());
        assert!(Image::<f32>::new(1, 1, 2, vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn nchw_round_trip() {
        let img = Image::<f32>::new(
            2,
            2,
            3,
            vec![
                0.1, 0.2, 0.3, 0.4, 0.5, 0.6, //
                0.7, 0.8, 0.9, 1.0, 0.0, 0.5,
            ],
        )
        .unwrap();
        let back = Image::from_nchw(&img.to_nchw()).unwrap();
        assert_eq!(img, back);
    }
}
