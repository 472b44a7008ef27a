//! Multi-channel float images stored row-major, channels interleaved.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image<S> {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Image<S> {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, S::zero())
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: S) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "image buffer has {} values, expected {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> S,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Image {
            width,
            height,
            channels,
            data,
        }
    }

    #[inline]
    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> S {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: S) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[S] {
        let i = self.index(x, y, 0);
        &self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn cast<T: Scalar>(&self) -> Image<T> {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self
                .data
                .iter()
                .map(|v| T::lit(v.to_f64_lossy()))
                .collect(),
        }
    }

    /// Area-averaging resample to an arbitrary size. Each output pixel averages
    /// the source region it covers, weighting partially covered pixels by
    /// their overlap, so resizing to the same size is exact.
    pub fn resize_area(&self, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("resize target must be non-empty"));
        }
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let wx = area_weights(self.width, width);
        let wy = area_weights(self.height, height);
        let c = self.channels;
        // horizontal pass
        let mut tmp = vec![S::zero(); width * self.height * c];
        for y in 0..self.height {
            for (ox, taps) in wx.iter().enumerate() {
                for &(sx, w) in taps {
                    let w = S::lit(w);
                    for ch in 0..c {
                        tmp[(y * width + ox) * c + ch] += w * self.data[(y * self.width + sx) * c + ch];
                    }
                }
            }
        }
        let mut out = Image::new(width, height, c);
        for (oy, taps) in wy.iter().enumerate() {
            for &(sy, w) in taps {
                let w = S::lit(w);
                for ox in 0..width {
                    for ch in 0..c {
                        out.data[(oy * width + ox) * c + ch] += w * tmp[(sy * width + ox) * c + ch];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Extracts a single channel as a one-channel image.
    pub fn channel(&self, c: usize) -> Image<S> {
        Image::from_fn(self.width, self.height, 1, |x, y, _| self.get(x, y, c))
    }
}

/// Per output index, the contributing source indices and normalized overlaps.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            let mut taps: Vec<(usize, f64)> = (first..last)
                .filter_map(|s| {
                    let overlap = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                    (overlap > 0.0).then_some((s, overlap))
                })
                .collect();
            let total: f64 = taps.iter().map(|t| t.1).sum();
            for t in &mut taps {
                t.1 /= total;
            }
            taps
        })
        .collect()
}
