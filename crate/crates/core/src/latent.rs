//! Dense latent tensors in height × width × channel layout.

use crate::error::{Error, Result};

/// A per-view latent tensor, stored row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentImage {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl LatentImage {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::contract(format!(
                "latent buffer has {} values, expected {height}x{width}x{channels}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("latent contains non-finite values"));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Build a latent by evaluating `f(y, x, c)` at every element.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Channel vector of one latent cell.
    pub fn cell(&self, y: usize, x: usize) -> &[f64] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn cell_mut(&mut self, y: usize, x: usize) -> &mut [f64] {
        let start = (y * self.width + x) * self.channels;
        &mut self.data[start..start + self.channels]
    }

    pub fn ensure_same_shape(&self, other: &LatentImage, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::contract(format!(
                "{what}: shape {:?} does not match {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> LatentImage {
        LatentImage {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    /// Elementwise combination of two equally shaped latents.
    pub fn zip_map(
        &self,
        other: &LatentImage,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<LatentImage> {
        self.ensure_same_shape(other, what)?;
        Ok(LatentImage {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            ..*self
        })
    }

    pub fn zip3_map(
        &self,
        b: &LatentImage,
        c: &LatentImage,
        what: &str,
        f: impl Fn(f64, f64, f64) -> f64,
    ) -> Result<LatentImage> {
        self.ensure_same_shape(b, what)?;
        self.ensure_same_shape(c, what)?;
        Ok(LatentImage {
            data: self
                .data
                .iter()
                .zip(&b.data)
                .zip(&c.data)
                .map(|((&x, &y), &z)| f(x, y, z))
                .collect(),
            ..*self
        })
    }

    pub fn max_abs_diff(&self, other: &LatentImage) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
