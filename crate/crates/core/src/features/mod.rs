//! Convolutional feature extraction for the style losses and metrics.
//!
//! The extractor is a small VGG-style stack: blocks of 3x3 convolutions with
//! ReLU, separated by 2x2 max pooling. Features are tapped at the
//! post-activation output of selected blocks (by default the second and
//! third), so a tap on block `b` (0-based) has stride `2^b`.

mod conv;
mod weights;

use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use conv::{max_pool2, max_pool2_backward, Conv3};
pub use weights::{WeightArchive, WeightEntry, WEIGHTS_MAGIC, WEIGHTS_VERSION};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

/// Output channels of each convolution, per block.
pub const DEFAULT_ARCHITECTURE: &[&[usize]] = &[&[16, 16], &[32, 32], &[64, 64, 64]];
pub const DEFAULT_TAPS: &[usize] = &[1, 2];
pub const FALLBACK_SEED: u64 = 42;

/// One tapped layer: an `height x width x channels` grid, channels interleaved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayer<S> {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Input pixels per feature cell along each axis.
    pub stride: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> FeatureLayer<S> {
    pub fn new(name: impl Into<String>, height: usize, width: usize, channels: usize, stride: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::invalid("feature buffer does not match its shape"));
        }
        Ok(FeatureLayer {
            name: name.into(),
            height,
            width,
            channels,
            stride,
            data,
        })
    }

    #[inline]
    pub fn num_positions(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn vector(&self, pos: usize) -> &[S] {
        &self.data[pos * self.channels..(pos + 1) * self.channels]
    }

    pub fn zeros_like(&self) -> Vec<S> {
        vec![S::zero(); self.data.len()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap<S> {
    pub layers: Vec<FeatureLayer<S>>,
    pub source_width: usize,
    pub source_height: usize,
}

/// Intermediate activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ExtractCache<S> {
    /// Post-ReLU output of every convolution, per block.
    outputs: Vec<Vec<Vec<S>>>,
    /// Max-pool arg-max indices entering each block after the first.
    pool_args: Vec<Vec<u32>>,
    dims: Vec<(usize, usize)>,
    input_dims: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor<S> {
    blocks: Vec<Vec<Conv3<S>>>,
    taps: Vec<usize>,
    input_mean: [S; 3],
    id: String,
}

impl<S: Scalar> FeatureExtractor<S> {
    /// Default architecture with seeded, per-layer orthogonalized filters and zero biases.
    pub fn fallback(seed: u64) -> Self {
        Self::fallback_with(DEFAULT_ARCHITECTURE, DEFAULT_TAPS, seed).expect("default architecture is valid")
    }

    pub fn fallback_with(architecture: &[&[usize]], taps: &[usize], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut archive = WeightArchive::default();
        let mut in_ch = 3;
        for (b, convs) in architecture.iter().enumerate() {
            for (k, &out_ch) in convs.iter().enumerate() {
                let fan_in = in_ch * 9;
                let gauss = DMatrix::<f64>::from_fn(out_ch, fan_in, |_, _| StandardNormal.sample(&mut rng));
                let ortho = if out_ch <= fan_in {
                    gauss.transpose().qr().q().transpose()
                } else {
                    gauss.qr().q()
                };
                let gain = 2f64.sqrt();
                // row-major [out, in * 9] is exactly [out, in, 3, 3]
                let data: Vec<f32> = (0..out_ch)
                    .flat_map(|o| (0..fan_in).map(move |j| (o, j)))
                    .map(|(o, j)| (gain * ortho[(o, j)]) as f32)
                    .collect();
                let prefix = format!("block{}.conv{}", b + 1, k + 1);
                archive.push(format!("{prefix}.weight"), vec![out_ch, in_ch, 3, 3], data);
                archive.push(format!("{prefix}.bias"), vec![out_ch], vec![0.0; out_ch]);
                in_ch = out_ch;
            }
        }
        let mut ex = Self::from_archive(&archive, taps)?;
        ex.id = format!("fallback-seed{seed}");
        Ok(ex)
    }

    /// Builds an extractor from a weight archive, validating the layer chain.
    pub fn from_archive(archive: &WeightArchive, taps: &[usize]) -> Result<Self> {
        let mut blocks: Vec<Vec<Conv3<S>>> = Vec::new();
        let mut input_mean = [S::zero(); 3];
        let mut in_ch = 3;
        let mut entries = archive.entries.iter().peekable();
        while let Some(e) = entries.next() {
            if e.name == "input.mean" {
                if e.shape != [3] {
                    return Err(Error::format(format!("input.mean must have shape [3], got {:?}", e.shape)));
                }
                input_mean = [0, 1, 2].map(|c| S::lit(e.data[c] as f64));
                continue;
            }
            let (b, k) = parse_conv_name(&e.name, "weight")
                .ok_or_else(|| Error::format(format!("unexpected layer {:?} in weight file", e.name)))?;
            if e.shape.len() != 4 || e.shape[2] != 3 || e.shape[3] != 3 {
                return Err(Error::format(format!(
                    "layer {:?} must have shape [out, in, 3, 3], got {:?}",
                    e.name, e.shape
                )));
            }
            let (out_ch, layer_in) = (e.shape[0], e.shape[1]);
            if layer_in != in_ch {
                return Err(Error::format(format!(
                    "layer {:?} expects {layer_in} input channels but receives {in_ch}",
                    e.name
                )));
            }
            if b == blocks.len() + 1 {
                blocks.push(Vec::new());
            }
            if b != blocks.len() || k != blocks[b - 1].len() + 1 {
                return Err(Error::format(format!("layer {:?} is out of order", e.name)));
            }
            let bias_name = format!("block{b}.conv{k}.bias");
            let bias = match entries.peek() {
                Some(n) if n.name == bias_name => {
                    let n = entries.next().unwrap();
                    if n.shape != [out_ch] {
                        return Err(Error::format(format!(
                            "layer {bias_name:?} must have shape [{out_ch}], got {:?}",
                            n.shape
                        )));
                    }
                    n.data.iter().map(|&v| S::lit(v as f64)).collect()
                }
                _ => vec![S::zero(); out_ch],
            };
            if e.data.len() != out_ch * layer_in * 9 {
                return Err(Error::format(format!("layer {:?} payload does not match its shape", e.name)));
            }
            let w: Vec<S> = e.data.iter().map(|&v| S::lit(v as f64)).collect();
            blocks[b - 1].push(Conv3::from_oihw(format!("block{b}.conv{k}"), layer_in, out_ch, &w, bias));
            in_ch = out_ch;
        }
        if blocks.is_empty() {
            return Err(Error::format("weight file contains no convolution layers"));
        }
        let mut ex = FeatureExtractor {
            blocks,
            taps: Vec::new(),
            input_mean,
            id: "gtfw".into(),
        };
        ex.set_taps(taps)?;
        Ok(ex)
    }

    pub fn to_archive(&self) -> WeightArchive {
        let mut a = WeightArchive::default();
        if self.input_mean.iter().any(|m| *m != S::zero()) {
            a.push("input.mean", vec![3], self.input_mean.iter().map(|v| v.to_f32_lossy()).collect());
        }
        for convs in &self.blocks {
            for c in convs {
                a.push(
                    format!("{}.weight", c.name),
                    vec![c.out_ch, c.in_ch, 3, 3],
                    c.to_oihw().iter().map(|v| v.to_f32_lossy()).collect(),
                );
                a.push(format!("{}.bias", c.name), vec![c.out_ch], c.bias.iter().map(|v| v.to_f32_lossy()).collect());
            }
        }
        a
    }

    pub fn load_weights(path: &Path, taps: &[usize]) -> Result<Self> {
        let mut ex = Self::from_archive(&WeightArchive::load(path)?, taps)?;
        ex.id = format!(
            "gtfw:{}",
            path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
        );
        Ok(ex)
    }

    pub fn save_weights(&self, path: &Path) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn set_taps(&mut self, taps: &[usize]) -> Result<()> {
        if taps.is_empty() {
            return Err(Error::config("at least one feature tap is required"));
        }
        if taps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("feature taps must be strictly increasing"));
        }
        if let Some(&t) = taps.iter().find(|&&t| t >= self.blocks.len()) {
            return Err(Error::config(format!(
                "tap {t} exceeds the {} available blocks",
                self.blocks.len()
            )));
        }
        self.taps = taps.to_vec();
        Ok(())
    }

    /// Same weights with different taps.
    pub fn with_taps(&self, taps: &[usize]) -> Result<Self> {
        let mut ex = self.clone();
        ex.set_taps(taps)?;
        Ok(ex)
    }

    pub fn set_input_mean(&mut self, mean: [f64; 3]) {
        self.input_mean = mean.map(S::lit);
    }

    pub fn taps(&self) -> &[usize] {
        &self.taps
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Input pixels per feature cell for each tap.
    pub fn downsampling(&self) -> Vec<usize> {
        self.taps.iter().map(|&b| 1 << b).collect()
    }

    /// Smallest supported input side length.
    pub fn min_input_size(&self) -> usize {
        1 << self.taps.last().copied().unwrap_or(0)
    }

    /// Feature positions at each border of every tap whose receptive field
    /// reaches into the zero padding.
    pub fn padding_margin(&self) -> Vec<usize> {
        self.taps
            .iter()
            .map(|&tap| {
                let px: usize = (0..=tap).map(|b| self.blocks[b].len() << b).sum();
                px.div_ceil(1 << tap)
            })
            .collect()
    }

    pub fn tap_channels(&self) -> Vec<usize> {
        self.taps.iter().map(|&b| self.blocks[b].last().unwrap().out_ch).collect()
    }

    pub fn extract(&self, image: &Image<S>) -> Result<FeatureMap<S>> {
        self.extract_with_cache(image).map(|(m, _)| m)
    }

    pub fn extract_with_cache(&self, image: &Image<S>) -> Result<(FeatureMap<S>, ExtractCache<S>)> {
        if image.channels != 3 {
            return Err(Error::invalid(format!(
                "extractor input must have 3 channels, got {}",
                image.channels
            )));
        }
        let min = self.min_input_size();
        if image.width < min || image.height < min {
            return Err(Error::invalid(format!(
                "extractor input {}x{} is below the minimum {min}x{min}",
                image.width, image.height
            )));
        }
        let mut x: Vec<S> = image
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| v - self.input_mean[i % 3])
            .collect();
        let (mut h, mut w) = (image.height, image.width);
        let mut channels = 3;
        let last = *self.taps.last().unwrap();
        let mut cache = ExtractCache {
            outputs: Vec::new(),
            pool_args: Vec::new(),
            dims: Vec::new(),
            input_dims: (h, w),
        };
        let mut layers = Vec::new();
        for (b, convs) in self.blocks.iter().enumerate().take(last + 1) {
            if b > 0 {
                let (p, arg, oh, ow) = max_pool2(&x, h, w, channels);
                x = p;
                h = oh;
                w = ow;
                cache.pool_args.push(arg);
            }
            let mut outs = Vec::with_capacity(convs.len());
            for c in convs {
                x = c.forward_relu(&x, h, w);
                channels = c.out_ch;
                outs.push(x.clone());
            }
            cache.outputs.push(outs);
            cache.dims.push((h, w));
            if self.taps.contains(&b) {
                layers.push(FeatureLayer {
                    name: format!("block{}", b + 1),
                    height: h,
                    width: w,
                    channels,
                    stride: 1 << b,
                    data: x.clone(),
                });
            }
        }
        Ok((
            FeatureMap {
                layers,
                source_width: image.width,
                source_height: image.height,
            },
            cache,
        ))
    }

    /// Gradient with respect to the input image, given one gradient buffer
    /// per tapped layer (shaped like the layer's data).
    pub fn backward(&self, cache: &ExtractCache<S>, tap_grads: &[Vec<S>]) -> Result<Image<S>> {
        if tap_grads.len() != self.taps.len() {
            return Err(Error::invalid("need one gradient per feature tap"));
        }
        let last = *self.taps.last().unwrap();
        let mut g: Option<Vec<S>> = None;
        for b in (0..=last).rev() {
            let (h, w) = cache.dims[b];
            if let Some(t) = self.taps.iter().position(|&tb| tb == b) {
                let tg = &tap_grads[t];
                if tg.len() != cache.outputs[b].last().unwrap().len() {
                    return Err(Error::invalid(format!("gradient for tap {t} has the wrong size")));
                }
                g = Some(match g {
                    Some(mut acc) => {
                        acc.iter_mut().zip(tg).for_each(|(a, v)| *a += *v);
                        acc
                    }
                    None => tg.clone(),
                });
            }
            let mut grad = g.take().expect("last block is always tapped");
            for (k, c) in self.blocks[b].iter().enumerate().rev() {
                let out = &cache.outputs[b][k];
                grad.iter_mut().zip(out).for_each(|(gv, &o)| {
                    if o <= S::zero() {
                        *gv = S::zero();
                    }
                });
                grad = c.backward_input(&grad, h, w);
            }
            if b > 0 {
                let (ph, pw) = if b == 1 { cache.input_dims } else { cache.dims[b - 1] };
                let prev_ch = self.blocks[b][0].in_ch;
                grad = max_pool2_backward(&grad, &cache.pool_args[b - 1], ph * pw * prev_ch);
            }
            g = Some(grad);
        }
        let (h, w) = cache.input_dims;
        Image::from_vec(w, h, 3, g.unwrap())
    }
}

fn parse_conv_name(name: &str, suffix: &str) -> Option<(usize, usize)> {
    let rest = name.strip_prefix("block")?;
    let (b, rest) = rest.split_once(".conv")?;
    let (k, s) = rest.split_once('.')?;
    if s != suffix {
        return None;
    }
    let (b, k) = (b.parse().ok()?, k.parse().ok()?);
    (b >= 1 && k >= 1).then_some((b, k))
}

/// L2-normalizes each `dim`-length vector of `data`. Zero vectors stay zero
/// and are flagged.
pub fn normalize_features<S: Scalar>(data: &[S], dim: usize) -> (Vec<S>, Vec<bool>) {
    let mut out = Vec::with_capacity(data.len());
    let mut zero = Vec::with_capacity(data.len() / dim.max(1));
    for v in data.chunks(dim) {
        let n = v.iter().map(|x| *x * *x).sum::<S>().sqrt();
        if n > S::zero() {
            out.extend(v.iter().map(|x| *x / n));
            zero.push(false);
        } else {
            out.extend(std::iter::repeat_n(S::zero(), v.len()));
            zero.push(true);
        }
    }
    (out, zero)
}

#[cfg(test)]
mod tests;
