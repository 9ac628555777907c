//! Dense `height × width × channels` tensors used for images and latents.

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::real::{cast, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Row-major, channel-interleaved: `data[(y * width + x) * channels + c]`.
    pub data: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, T::zero())
    }

    pub fn filled(width: usize, height: usize, channels: usize, v: T) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![v; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "tensor of {} values does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_rgb(width: usize, height: usize, pixels: &[Vec3<T>]) -> Self {
        let mut data = Vec::with_capacity(pixels.len() * 3);
        for p in pixels {
            data.extend_from_slice(&[p.x, p.y, p.z]);
        }
        Self {
            width,
            height,
            channels: 3,
            data,
        }
    }

    /// Pixels of a three-channel image.
    pub fn to_rgb(&self) -> Vec<Vec3<T>> {
        assert_eq!(self.channels, 3, "to_rgb on a {}-channel tensor", self.channels);
        self.data
            .chunks_exact(3)
            .map(|c| Vec3::new(c[0], c[1], c[2]))
            .collect()
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.dims() == other.dims()
    }

    #[inline(always)]
    pub fn at(&self, x: usize, y: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline(always)]
    pub fn at_mut(&mut self, x: usize, y: usize, c: usize) -> &mut T {
        &mut self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|v| cast(*v)).collect(),
        }
    }
}
