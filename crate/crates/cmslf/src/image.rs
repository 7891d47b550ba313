//! Row-major float image buffer used for single-band light-field views and
//! for ground-truth / estimate maps (1 channel, or 3 for normals and RGB-like
//! coefficient maps).

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "image buffer has {} values, expected {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
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

    #[inline]
    pub fn get(&self, u: usize, v: usize, c: usize) -> f32 {
        debug_assert!(u < self.width && v < self.height && c < self.channels);
        self.data[(v * self.width + u) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, c: usize, value: f32) {
        debug_assert!(u < self.width && v < self.height && c < self.channels);
        self.data[(v * self.width + u) * self.channels + c] = value;
    }

    /// All channels at one pixel.
    pub fn pixel(&self, u: usize, v: usize) -> &[f32] {
        let base = (v * self.width + u) * self.channels;
        &self.data[base..base + self.channels]
    }

    pub fn set_pixel(&mut self, u: usize, v: usize, values: &[f32]) {
        debug_assert_eq!(values.len(), self.channels);
        let base = (v * self.width + u) * self.channels;
        self.data[base..base + self.channels].copy_from_slice(values);
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Mutable view of one row (all channels), for disjoint parallel writes.
    pub fn rows_mut(&mut self) -> std::slice::ChunksMut<'_, f32> {
        self.data.chunks_mut(self.width * self.channels)
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    /// Bilinear interpolation of a single-channel image at a fractional pixel
    /// position. Valid domain is `[0, width-1] x [0, height-1]` (pixel centers
    /// sit on integer coordinates).
    #[inline]
    pub fn bilinear(&self, uf: f64, vf: f64) -> Result<f64> {
        debug_assert_eq!(self.channels, 1, "bilinear sampling is single-channel");
        if !(uf >= 0.0 && vf >= 0.0)
            || uf > (self.width - 1) as f64
            || vf > (self.height - 1) as f64
            || !uf.is_finite()
            || !vf.is_finite()
        {
            return Err(Error::IndexOutOfRange(format!(
                "bilinear sample at ({uf}, {vf}) outside [0, {}] x [0, {}]",
                self.width - 1,
                self.height - 1
            )));
        }
        let u0 = (uf.floor() as usize).min(self.width - 1);
        let v0 = (vf.floor() as usize).min(self.height - 1);
        let u1 = (u0 + 1).min(self.width - 1);
        let v1 = (v0 + 1).min(self.height - 1);
        let fu = uf - u0 as f64;
        let fv = vf - v0 as f64;
        let p00 = self.get(u0, v0, 0) as f64;
        let p10 = self.get(u1, v0, 0) as f64;
        let p01 = self.get(u0, v1, 0) as f64;
        let p11 = self.get(u1, v1, 0) as f64;
        Ok(p00 * (1.0 - fu) * (1.0 - fv)
            + p10 * fu * (1.0 - fv)
            + p01 * (1.0 - fu) * fv
            + p11 * fu * fv)
    }
}
