//! Single-image Fréchet distances between feature statistics of RGB,
//! grayscale and depth images.
//!
//! Features come from this crate's extractor rather than an Inception
//! network, so absolute values are not comparable to published SIFID scores.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, FeatureLayer, FALLBACK_SEED};
use crate::field::RadianceField;
use crate::image::Image;
use crate::perspective::StylePair;
use crate::render::{render_depth_style_input, render_view, Camera, RenderOptions};
use crate::scalar::Scalar;

/// ITU-R BT.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Luminance replicated into three channels.
pub fn grayscale<S: Scalar>(img: &Image<S>) -> Result<Image<S>> {
    if img.channels != 3 {
        return Err(Error::invalid("grayscale conversion needs a 3-channel image"));
    }
    let w = LUMA_WEIGHTS.map(S::lit);
    let mut out = Image::new(img.width, img.height, 3);
    for (dst, src) in out.data.chunks_exact_mut(3).zip(img.data.chunks_exact(3)) {
        dst.fill(w[0] * src[0] + w[1] * src[1] + w[2] * src[2]);
    }
    Ok(out)
}

/// Mean and covariance of feature vectors, one sample per spatial position.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub samples: usize,
    /// Shrinkage weight toward a scaled identity; zero when positions
    /// outnumber channels.
    pub shrinkage: f64,
}

impl FeatureStats {
    /// Statistics of the positions at least `margin` cells from the border
    /// (all positions when the margin would leave none).
    pub fn from_layer<S: Scalar>(layer: &FeatureLayer<S>, margin: usize) -> Result<Self> {
        let d = layer.channels;
        let (x0, y0, x1, y1) = if layer.width > 2 * margin && layer.height > 2 * margin {
            (margin, margin, layer.width - margin, layer.height - margin)
        } else {
            (0, 0, layer.width, layer.height)
        };
        let n = (x1 - x0) * (y1 - y0);
        if n == 0 || d == 0 {
            return Err(Error::invalid("feature layer is empty"));
        }
        let mut mean = DVector::zeros(d);
        let mut samples = DMatrix::zeros(d, n);
        let mut k = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                let v = layer.vector(y * layer.width + x);
                for c in 0..d {
                    let f = v[c].to_f64_lossy();
                    samples[(c, k)] = f;
                    mean[c] += f;
                }
                k += 1;
            }
        }
        mean /= n as f64;
        for mut col in samples.column_iter_mut() {
            col -= &mean;
        }
        let mut covariance = &samples * samples.transpose() / n as f64;
        let mut shrinkage = 0.0;
        if n < d {
            shrinkage = (d - n) as f64 / d as f64;
            let target = covariance.trace() / d as f64;
            covariance *= 1.0 - shrinkage;
            for i in 0..d {
                covariance[(i, i)] += shrinkage * target;
            }
            log::debug!("{n} feature positions for {d} channels; covariance shrinkage {shrinkage:.3}");
        }
        Ok(FeatureStats {
            mean,
            covariance,
            samples: n,
            shrinkage,
        })
    }
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(m.clone());
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let ha = sym_sqrt(a);
    let m = &ha * b * &ha;
    let m = 0.5 * (&m + m.transpose());
    SymmetricEigen::new(m).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum()
}

/// `|mu_a - mu_b|^2 + tr(C_a + C_b - 2 (C_a C_b)^(1/2))`, symmetrized and
/// clamped at zero.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return Err(Error::invalid("feature statistics differ in dimension"));
    }
    let mean_term = (&a.mean - &b.mean).norm_squared();
    let cross = 0.5 * (trace_sqrt_product(&a.covariance, &b.covariance) + trace_sqrt_product(&b.covariance, &a.covariance));
    let d = mean_term + a.covariance.trace() + b.covariance.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

/// SIFID over a single extractor layer.
#[derive(Clone, Debug)]
pub struct Sifid<S> {
    extractor: FeatureExtractor<S>,
    margin: usize,
}

impl<S: Scalar> Sifid<S> {
    /// Uses the extractor's first configured tap.
    pub fn new(extractor: FeatureExtractor<S>) -> Result<Self> {
        let first = *extractor
            .taps()
            .first()
            .ok_or_else(|| Error::config("SIFID extractor has no tapped layer"))?;
        let extractor = extractor.with_taps(&[first])?;
        let margin = extractor.padding_margin()[0];
        Ok(Sifid { extractor, margin })
    }

    /// The fallback extractor tapped after its first block.
    pub fn fallback() -> Self {
        Self::new(FeatureExtractor::fallback(FALLBACK_SEED).with_taps(&[0]).expect("block 0 exists"))
            .expect("one tap")
    }

    pub fn extractor(&self) -> &FeatureExtractor<S> {
        &self.extractor
    }

    pub fn layer_name(&self) -> String {
        format!("block{}", self.extractor.taps()[0] + 1)
    }

    pub fn stats(&self, img: &Image<S>) -> Result<FeatureStats> {
        let map = self.extractor.extract(img)?;
        FeatureStats::from_layer(&map.layers[0], self.margin)
    }

    pub fn distance(&self, a: &Image<S>, b: &Image<S>) -> Result<f64> {
        frechet_distance(&self.stats(a)?, &self.stats(b)?)
    }
}

/// SIFID of two 3-channel images with the given extractor's first tap.
pub fn sifid<S: Scalar>(a: &Image<S>, b: &Image<S>, extractor: &FeatureExtractor<S>) -> Result<f64> {
    Sifid::new(extractor.clone())?.distance(a, b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewScores {
    pub view: usize,
    pub rgb: f64,
    pub gray: f64,
    pub depth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub extractor: String,
    pub layer: String,
    pub views: Vec<ViewScores>,
    pub mean: ViewMeans,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMeans {
    pub rgb: f64,
    pub gray: f64,
    pub depth: f64,
}

impl MetricReport {
    pub fn from_views(extractor: String, layer: String, views: Vec<ViewScores>) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::invalid("a metric report needs at least one view"));
        }
        let n = views.len() as f64;
        let mean = ViewMeans {
            rgb: views.iter().map(|v| v.rgb).sum::<f64>() / n,
            gray: views.iter().map(|v| v.gray).sum::<f64>() / n,
            depth: views.iter().map(|v| v.depth).sum::<f64>() / n,
        };
        Ok(MetricReport {
            extractor,
            layer,
            views,
            mean,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text table with RGB, Gray and Depth columns.
    pub fn to_table(&self) -> String {
        let mut s = format!("SIFID ({} {})\n", self.extractor, self.layer);
        s.push_str(&format!("{:<8}{:>12}{:>12}{:>12}\n", "view", "RGB", "Gray", "Depth"));
        for v in &self.views {
            s.push_str(&format!("{:<8}{:>12.6}{:>12.6}{:>12.6}\n", v.view, v.rgb, v.gray, v.depth));
        }
        let m = &self.mean;
        s.push_str(&format!("{:<8}{:>12.6}{:>12.6}{:>12.6}\n", "mean", m.rgb, m.gray, m.depth));
        s
    }
}

/// Scores of one rendered view against the style pair.
pub fn score_view<S: Scalar>(
    metric: &Sifid<S>,
    style: &StylePair<S>,
    rgb: &Image<S>,
    depth: &Image<S>,
    view: usize,
) -> Result<ViewScores> {
    Ok(ViewScores {
        view,
        rgb: metric.distance(&style.rgb, rgb)?,
        gray: metric.distance(&grayscale(&style.rgb)?, &grayscale(rgb)?)?,
        depth: metric.distance(&render_depth_style_input(&style.depth)?, &render_depth_style_input(depth)?)?,
    })
}

/// Renders every camera with deformation and scores it against the style.
pub fn evaluate_scene<S: Scalar>(
    field: &RadianceField<S>,
    cameras: &[Camera],
    style: &StylePair<S>,
    metric: &Sifid<S>,
    opts: &RenderOptions,
) -> Result<MetricReport> {
    if cameras.is_empty() {
        return Err(Error::invalid("evaluation needs at least one camera"));
    }
    style.validate()?;
    let mut views = Vec::with_capacity(cameras.len());
    for (i, cam) in cameras.iter().enumerate() {
        let r = render_view(field, cam, opts, true)?;
        views.push(score_view(metric, style, &r.rgb, &r.depth, i)?);
    }
    MetricReport::from_views(metric.extractor().id().to_string(), metric.layer_name(), views)
}

#[cfg(test)]
mod tests;
