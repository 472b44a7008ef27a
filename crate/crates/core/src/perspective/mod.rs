//! Depth-binned, multi-scale style assignment: surfaces nearer to the
//! reference camera are stylized with an upsampled (larger-pattern) style.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, FeatureLayer, FeatureMap};
use crate::field::RadianceField;
use crate::image::Image;
use crate::losses::StyleLossConfig;
use crate::render::{render_depth_style_input, render_view, Camera, RenderOptions};
use crate::scalar::Scalar;

/// Smallest side of a pyramid level.
pub const MIN_LEVEL_SIZE: usize = 8;
/// Pixels below this opacity are ignored when gathering surface points.
pub const SURFACE_OPACITY: f64 = 0.5;

/// A style guide: RGB image plus an aligned single-channel depth map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StylePair<S> {
    pub rgb: Image<S>,
    pub depth: Image<S>,
}

impl<S: Scalar> StylePair<S> {
    pub fn new(rgb: Image<S>, depth: Image<S>) -> Result<Self> {
        let p = StylePair { rgb, depth };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rgb.channels != 3 || self.depth.channels != 1 {
            return Err(Error::invalid("style pair needs a 3-channel RGB image and a 1-channel depth map"));
        }
        if self.rgb.width != self.depth.width || self.rgb.height != self.depth.height {
            return Err(Error::invalid(format!(
                "style RGB is {}x{} but its depth is {}x{}",
                self.rgb.width, self.rgb.height, self.depth.width, self.depth.height
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.rgb.width
    }

    pub fn height(&self) -> usize {
        self.rgb.height
    }

    pub fn cast<T: Scalar>(&self) -> StylePair<T> {
        StylePair {
            rgb: self.rgb.cast(),
            depth: self.depth.cast(),
        }
    }

    pub fn resize(&self, width: usize, height: usize) -> Result<Self> {
        Ok(StylePair {
            rgb: self.rgb.resize_area(width, height)?,
            depth: self.depth.resize_area(width, height)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinLayout {
    /// Mean forward depth of each bin, strictly increasing.
    pub centers: Vec<f64>,
    /// `centers[0] / centers[i]`.
    pub scales: Vec<f64>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl BinLayout {
    pub fn from_centers(centers: Vec<f64>) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::invalid("a bin layout needs at least one bin"));
        }
        if centers.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("bin centers must be finite"));
        }
        if centers.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid(format!("bin centers must be strictly increasing: {centers:?}")));
        }
        let scales = centers.iter().map(|c| centers[0] / c).collect();
        Ok(BinLayout {
            centers,
            scales,
            warnings: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Nearest center, ties to the smaller index.
    pub fn assign(&self, z: f64) -> usize {
        let mut best = 0;
        for (i, c) in self.centers.iter().enumerate().skip(1) {
            if (z - c).abs() < (z - self.centers[best]).abs() {
                best = i;
            }
        }
        best
    }

    fn warn(&mut self, msg: String) {
        log::warn!("{msg}");
        self.warnings.push(msg);
    }
}

/// Groups depth values into at most `n` bins: equal-count quantile bins
/// refined by one-dimensional k-means until assignments settle.
pub fn bin_depths(values: &[f64], n: usize) -> Result<BinLayout> {
    if n == 0 {
        return Err(Error::invalid("number of depth bins must be at least 1"));
    }
    let mut z: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if z.is_empty() {
        return Err(Error::invalid("no finite depth values to bin"));
    }
    z.sort_by(f64::total_cmp);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let (lo, hi) = (z[0], z[z.len() - 1]);
    if hi - lo <= 1e-9 * hi.abs().max(1.0) {
        let mut layout = BinLayout::from_centers(vec![mean(&z)])?;
        if n > 1 {
            layout.warn(format!("all surface depths are equal; using a single bin instead of {n}"));
        }
        return Ok(layout);
    }
    let n_eff = n.min(z.len());
    // cut[i] is the first sorted index of bin i
    let mut cuts: Vec<usize> = (0..=n_eff).map(|i| i * z.len() / n_eff).collect();
    let mut centers: Vec<f64> = cuts.windows(2).map(|w| mean(&z[w[0]..w[1]])).collect();
    for _ in 0..200 {
        let mut next = vec![0usize; n_eff + 1];
        next[n_eff] = z.len();
        for b in 1..n_eff {
            // nearest-center boundary, ties stay in the lower bin
            let mid = 0.5 * (centers[b - 1] + centers[b]);
            next[b] = z.partition_point(|&v| v <= mid);
        }
        if next.windows(2).any(|w| w[0] >= w[1]) || next == cuts {
            break;
        }
        cuts = next;
        centers = cuts.windows(2).map(|w| mean(&z[w[0]..w[1]])).collect();
    }
    let mut dedup: Vec<f64> = Vec::with_capacity(centers.len());
    for c in centers {
        if dedup.last().is_none_or(|&l| c > l) {
            dedup.push(c);
        }
    }
    let merged = dedup.len() < n;
    let mut layout = BinLayout::from_centers(dedup)?;
    if merged {
        layout.warn(format!("depth distribution supports only {} of {n} bins", layout.len()));
    }
    Ok(layout)
}

/// Forward depth, relative to `reference`, of the surface point seen at each
/// pixel of `camera` at ray distance `depth`.
pub fn forward_depth_image<S: Scalar>(camera: &Camera, depth: &Image<S>, reference: &Camera) -> Result<Image<S>> {
    if depth.channels != 1 || depth.width != camera.width() || depth.height != camera.height() {
        return Err(Error::invalid("depth image must be single-channel and match the camera"));
    }
    let rays = camera.generate_rays::<f64>(None);
    let data = rays
        .iter()
        .zip(&depth.data)
        .map(|(r, &t)| {
            let t = t.to_f64_lossy();
            let p = std::array::from_fn(|i| r.origin[i] + t * r.dir[i]);
            S::lit(reference.forward_depth(p))
        })
        .collect();
    Image::from_vec(depth.width, depth.height, 1, data)
}

/// Bins the scene's visible surface depth as seen from all `cameras`.
/// Depth is measured along the forward axis of `cameras[0]`.
pub fn build_bin_layout<S: Scalar>(
    field: &RadianceField<S>,
    cameras: &[Camera],
    n: usize,
    opts: &RenderOptions,
) -> Result<BinLayout> {
    if n == 0 {
        return Err(Error::invalid("number of depth bins must be at least 1"));
    }
    let reference = cameras.first().ok_or_else(|| Error::invalid("at least one camera is required"))?;
    let mut surface = Vec::new();
    let mut all = Vec::new();
    for cam in cameras {
        let view = render_view(field, cam, opts, false)?;
        let z = forward_depth_image(cam, &view.depth, reference)?;
        for (zv, op) in z.data.iter().zip(&view.opacity.data) {
            all.push(zv.to_f64_lossy());
            if op.to_f64_lossy() >= SURFACE_OPACITY {
                surface.push(zv.to_f64_lossy());
            }
        }
    }
    if surface.is_empty() {
        log::warn!("no opaque surface found; binning every pixel depth");
        surface = all;
    }
    bin_depths(&surface, n)
}

/// Bin index per pixel of a forward-depth image.
pub fn assign_pixels<S: Scalar>(z: &Image<S>, layout: &BinLayout) -> Vec<usize> {
    z.data.iter().map(|v| layout.assign(v.to_f64_lossy())).collect()
}

/// Majority bin of the pixels covered by each feature position, ties to the
/// smaller bin. Pixels beyond the last full feature cell are ignored.
pub fn position_bins<S: Scalar>(pixel_bins: &[usize], width: usize, layer: &FeatureLayer<S>, n_bins: usize) -> Vec<usize> {
    let s = layer.stride;
    let mut counts = vec![0usize; n_bins];
    let mut out = Vec::with_capacity(layer.num_positions());
    for y in 0..layer.height {
        for x in 0..layer.width {
            counts.fill(0);
            for py in y * s..(y + 1) * s {
                for px in x * s..(x + 1) * s {
                    counts[pixel_bins[py * width + px]] += 1;
                }
            }
            out.push(majority(&counts));
        }
    }
    out
}

fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StylePyramid<S> {
    pub original: StylePair<S>,
    /// One area-downsampled pair per bin.
    pub levels: Vec<StylePair<S>>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

pub fn build_style_pyramid<S: Scalar>(style: &StylePair<S>, layout: &BinLayout) -> Result<StylePyramid<S>> {
    style.validate()?;
    let mut levels = Vec::with_capacity(layout.len());
    let mut warnings = Vec::new();
    for (i, &s) in layout.scales.iter().enumerate() {
        if !(s > 0.0) {
            return Err(Error::Numerical(format!("bin {i} has non-positive scale {s}")));
        }
        let w = (style.width() as f64 * s).round() as usize;
        let h = (style.height() as f64 * s).round() as usize;
        let (cw, ch) = (w.max(MIN_LEVEL_SIZE), h.max(MIN_LEVEL_SIZE));
        if (cw, ch) != (w, h) {
            let msg = format!("style level {i} ({w}x{h}) clamped to {cw}x{ch}");
            log::warn!("{msg}");
            warnings.push(msg);
        }
        levels.push(style.resize(cw, ch)?);
    }
    Ok(StylePyramid {
        original: style.clone(),
        levels,
        warnings,
    })
}

/// Extracted features of a style pair, depth passed through the
/// normalization used for rendered depth.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleFeatures<S> {
    pub rgb: FeatureMap<S>,
    pub depth: FeatureMap<S>,
}

impl<S: Scalar> StyleFeatures<S> {
    pub fn extract(extractor: &FeatureExtractor<S>, pair: &StylePair<S>) -> Result<Self> {
        Ok(StyleFeatures {
            rgb: extractor.extract(&pair.rgb)?,
            depth: extractor.extract(&render_depth_style_input(&pair.depth)?)?,
        })
    }
}

/// Style loss summed over feature layers, with gradients per tapped layer.
#[derive(Clone, Debug)]
pub struct StyleLossOutput<S> {
    pub loss: S,
    /// Contribution of each bin (one entry without augmentation).
    pub per_bin: Vec<S>,
    /// Content patches assigned to each bin, summed over layers.
    pub counts: Vec<usize>,
    pub grad_rgb: Vec<Vec<S>>,
    pub grad_depth: Vec<Vec<S>>,
}

/// Unaugmented loss against a single style pair.
pub fn style_loss<S: Scalar>(
    content_rgb: &FeatureMap<S>,
    content_depth: Option<&FeatureMap<S>>,
    style: &StyleFeatures<S>,
    cfg: &StyleLossConfig,
) -> Result<StyleLossOutput<S>> {
    let bins = vec![0usize; content_rgb.source_width * content_rgb.source_height];
    layered_style_loss(content_rgb, content_depth, &bins, std::slice::from_ref(style), cfg)
}

/// Loss where content positions in bin `b` are matched against level `b`.
/// Per layer, each bin's mean loss is weighted by its share of content patches.
pub fn layered_style_loss<S: Scalar>(
    content_rgb: &FeatureMap<S>,
    content_depth: Option<&FeatureMap<S>>,
    pixel_bins: &[usize],
    levels: &[StyleFeatures<S>],
    cfg: &StyleLossConfig,
) -> Result<StyleLossOutput<S>> {
    cfg.validate()?;
    let (w, h) = (content_rgb.source_width, content_rgb.source_height);
    if pixel_bins.len() != w * h {
        return Err(Error::invalid("pixel bin map does not match the rendered image"));
    }
    let n_bins = levels.len();
    if n_bins == 0 {
        return Err(Error::invalid("at least one style level is required"));
    }
    if let Some(&b) = pixel_bins.iter().find(|&&b| b >= n_bins) {
        return Err(Error::invalid(format!("pixel bin {b} has no style level")));
    }
    let mut out = StyleLossOutput {
        loss: S::zero(),
        per_bin: vec![S::zero(); n_bins],
        counts: vec![0; n_bins],
        grad_rgb: content_rgb.layers.iter().map(|l| l.zeros_like()).collect(),
        grad_depth: content_rgb.layers.iter().map(|l| l.zeros_like()).collect(),
    };
    for (li, layer) in content_rgb.layers.iter().enumerate() {
        let depth_layer = content_depth.map(|d| &d.layers[li]);
        let pos_bins = position_bins(pixel_bins, w, layer, n_bins);
        for (b, level) in levels.iter().enumerate() {
            let style_rgb = &level.rgb.layers[li];
            let style_depth = &level.depth.layers[li];
            let patches = cfg.content_patches(layer, style_rgb)?;
            let mut counts = vec![0usize; n_bins];
            let select: Vec<usize> = patches
                .patches
                .iter()
                .enumerate()
                .filter(|(_, p)| {
                    counts.fill(0);
                    p.iter().for_each(|&q| counts[pos_bins[q]] += 1);
                    majority(&counts) == b
                })
                .map(|(i, _)| i)
                .collect();
            if select.is_empty() {
                continue;
            }
            let res = cfg.evaluate(layer, depth_layer, style_rgb, Some(style_depth), Some(&select))?;
            let weight = S::from_usize_lossy(select.len()) / S::from_usize_lossy(patches.len());
            let part = weight * res.result.loss;
            out.loss += part;
            out.per_bin[b] += part;
            out.counts[b] += select.len();
            for (g, v) in out.grad_rgb[li].iter_mut().zip(&res.grad_rgb) {
                *g += weight * *v;
            }
            if let Some(gd) = res.grad_depth {
                for (g, v) in out.grad_depth[li].iter_mut().zip(&gd) {
                    *g += weight * *v;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
