use alloc::vec::Vec;

use crate::scalar::Real;
use crate::tensor::{Result as TensorResult, Tensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ImageError {
    #[error("image data has {got} values, expected {channels}x{height}x{width}")]
    Length {
        channels: usize,
        height: usize,
        width: usize,
        got: usize,
    },
    #[error("image extents must be positive")]
    Empty,
    #[error("images differ in size: {a:?} vs {b:?}")]
    SizeMismatch {
        a: (usize, usize, usize),
        b: (usize, usize, usize),
    },
    #[error("size {size} does not fit into {height}x{width}")]
    TooSmall { size: usize, height: usize, width: usize },
    #[error("{height}x{width} is not divisible by {factor}")]
    Indivisible { height: usize, width: usize, factor: usize },
}

/// Planar `C x H x W` image with `f32` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(ImageError::Empty);
        }
        if data.len() != channels * height * width {
            return Err(ImageError::Length {
                channels,
                height,
                width,
                got: data.len(),
            });
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, v: f32) -> Result<Self, ImageError> {
        Self::new(channels, height, width, alloc::vec![v; channels * height * width])
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self, ImageError> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        Image {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn same_size(&self, other: &Image) -> Result<(), ImageError> {
        if self.dims() != other.dims() {
            return Err(ImageError::SizeMismatch {
                a: self.dims(),
                b: other.dims(),
            });
        }
        Ok(())
    }

    /// Stacks equally sized images into a constant `[N, C, H, W]` tensor.
    pub fn batch<T: Real>(images: &[&Image]) -> TensorResult<Tensor<T>> {
        let first = images[0];
        let mut data = Vec::with_capacity(images.len() * first.data.len());
        for im in images {
            debug_assert_eq!(im.dims(), first.dims());
            data.extend(im.data.iter().map(|&v| T::of(v as f64)));
        }
        Tensor::from_vec(data, &[images.len(), first.channels, first.height, first.width])
    }

    pub fn to_tensor<T: Real>(&self) -> TensorResult<Tensor<T>> {
        Self::batch(&[self])
    }

    /// Image `index` of a `[N, C, H, W]` tensor.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, index: usize) -> Result<Image, ImageError> {
        let (_, c, h, w) = t.shape().nchw().ok_or(ImageError::Empty)?;
        let n = c * h * w;
        let data = t.data()[index * n..(index + 1) * n]
            .iter()
            .map(|v| v.as_f64() as f32)
            .collect();
        Image::new(c, h, w, data)
    }

    /// Square crop of side `size`, offset `floor((dim - size) / 2)` on each axis.
    pub fn center_crop(&self, size: usize) -> Result<Image, ImageError> {
        if size == 0 || size > self.height || size > self.width {
            return Err(ImageError::TooSmall {
                size,
                height: self.height,
                width: self.width,
            });
        }
        let (oy, ox) = ((self.height - size) / 2, (self.width - size) / 2);
        Image::from_fn(self.channels, size, size, |c, y, x| self.get(c, y + oy, x + ox))
    }

    /// Box-filter downscale by an integer factor.
    pub fn downscale(&self, factor: usize) -> Result<Image, ImageError> {
        if factor == 0 || !self.height.is_multiple_of(factor) || !self.width.is_multiple_of(factor) {
            return Err(ImageError::Indivisible {
                height: self.height,
                width: self.width,
                factor,
            });
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let norm = 1.0 / (factor * factor) as f64;
        Image::from_fn(self.channels, self.height / factor, self.width / factor, |c, y, x| {
            let mut acc = 0.0f64;
            for dy in 0..factor {
                for dx in 0..factor {
                    acc += self.get(c, y * factor + dy, x * factor + dx) as f64;
                }
            }
            (acc * norm) as f32
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_offsets() {
        let im = Image::from_fn(1, 5, 5, |_, y, x| (y * 5 + x) as f32).unwrap();
        let c = im.center_crop(4).unwrap();
        assert_eq!(c.get(0, 0, 0), 0.0);
        let c = im.center_crop(3).unwrap();
        assert_eq!(c.get(0, 0, 0), 6.0);
        assert_eq!(im.center_crop(5).unwrap(), im);
        assert!(matches!(im.center_crop(6), Err(ImageError::TooSmall { .. })));
    }

    #[test]
    fn crop_1024_to_512_starts_at_256() {
        let im = Image::from_fn(1, 1024, 1024, |_, y, x| (y * 1024 + x) as f32).unwrap();
        let c = im.center_crop(512).unwrap();
        assert_eq!(c.dims(), (1, 512, 512));
        assert_eq!(c.get(0, 0, 0), (256 * 1024 + 256) as f32);
    }

    #[test]
    fn downscale_averages_blocks() {
        let im = Image::from_fn(1, 2, 4, |_, y, x| (y * 4 + x) as f32).unwrap();
        let d = im.downscale(2).unwrap();
        assert_eq!(d.data(), &[2.5, 4.5]);
        assert!(im.downscale(3).is_err());
    }

    #[test]
    fn tensor_roundtrip() {
        let im = Image::from_fn(3, 2, 2, |c, y, x| (c * 4 + y * 2 + x) as f32 / 16.0).unwrap();
        let t = im.to_tensor::<f64>().unwrap();
        assert_eq!(t.dims(), &[1, 3, 2, 2]);
        assert_eq!(Image::from_tensor(&t, 0).unwrap(), im);
    }
}
