//! Nearest-neighbor style losses over feature maps.
//!
//! All losses share one matching engine: content and style maps are split
//! into patches (a 1x1 patch per position gives plain nearest-neighbor
//! matching), every content patch is matched to the style patch with the
//! smallest summed cosine distance, and the loss is the mean matched
//! distance. Matched indices are constants when differentiating.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureLayer;
use crate::scalar::Scalar;

/// Cosine distance `1 - u.v / (|u| |v|)`, equal to 1 when either vector is zero.
pub fn cosine_distance<S: Scalar>(u: &[S], v: &[S]) -> Result<S> {
    if u.len() != v.len() {
        return Err(Error::invalid(format!(
            "cosine distance needs equal lengths, got {} and {}",
            u.len(),
            v.len()
        )));
    }
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if nu == S::zero() || nv == S::zero() {
        return Ok(S::one());
    }
    Ok(clamp_distance(S::one() - dot(u, v) / (nu * nv)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchResult<S> {
    /// Selected style index (position or patch) per content position or patch.
    pub indices: Vec<usize>,
    /// Matched distance per content position or patch.
    pub distances: Vec<S>,
    /// Mean of `distances`.
    pub loss: S,
}

impl<S: Scalar + Serialize> MatchResult<S> {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Regular grid of dilated `k x k` patches over a feature map.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSet {
    pub k: usize,
    pub dilation: usize,
    pub stride: usize,
    pub height: usize,
    pub width: usize,
    /// Flat positions `y * width + x` of every patch, row by row within a patch.
    pub patches: Vec<Vec<usize>>,
}

impl PatchSet {
    pub fn extent(&self) -> usize {
        (self.k - 1) * self.dilation + 1
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// One single-position patch per map cell.
    pub fn positions(height: usize, width: usize) -> Self {
        PatchSet {
            k: 1,
            dilation: 1,
            stride: 1,
            height,
            width,
            patches: (0..height * width).map(|p| vec![p]).collect(),
        }
    }
}

/// Patches with offsets `(y + a*r, x + b*r)`, `a, b < k`, anchored every
/// `stride` cells. `None` uses the patch extent, giving a disjoint partition.
pub fn extract_patches<S>(layer: &FeatureLayer<S>, k: usize, dilation: usize, stride: Option<usize>) -> Result<PatchSet> {
    patch_grid(layer.height, layer.width, k, dilation, stride)
}

pub fn patch_grid(height: usize, width: usize, k: usize, dilation: usize, stride: Option<usize>) -> Result<PatchSet> {
    if k == 0 || dilation == 0 {
        return Err(Error::invalid("patch size and dilation must be at least 1"));
    }
    let extent = (k - 1) * dilation + 1;
    if extent > height.min(width) {
        return Err(Error::invalid(format!(
            "patch extent {extent} exceeds the {height}x{width} feature map"
        )));
    }
    let stride = stride.unwrap_or(extent);
    if stride == 0 {
        return Err(Error::invalid("patch stride must be at least 1"));
    }
    let mut patches = Vec::new();
    for y in (0..=height - extent).step_by(stride) {
        for x in (0..=width - extent).step_by(stride) {
            let mut p = Vec::with_capacity(k * k);
            for a in 0..k {
                for b in 0..k {
                    p.push((y + a * dilation) * width + x + b * dilation);
                }
            }
            patches.push(p);
        }
    }
    Ok(PatchSet {
        k,
        dilation,
        stride,
        height,
        width,
        patches,
    })
}

/// One side of a match: RGB features and optionally aligned depth features.
#[derive(Clone, Copy, Debug)]
pub struct MatchSide<'a, S> {
    pub rgb: &'a FeatureLayer<S>,
    pub depth: Option<&'a FeatureLayer<S>>,
}

impl<'a, S: Scalar> MatchSide<'a, S> {
    pub fn rgb(rgb: &'a FeatureLayer<S>) -> Self {
        MatchSide { rgb, depth: None }
    }

    pub fn joint(rgb: &'a FeatureLayer<S>, depth: &'a FeatureLayer<S>) -> Self {
        MatchSide { rgb, depth: Some(depth) }
    }

    fn validate(&self) -> Result<()> {
        if self.rgb.num_positions() == 0 {
            return Err(Error::invalid("feature map is empty"));
        }
        if let Some(d) = self.depth {
            if d.height != self.rgb.height || d.width != self.rgb.width {
                return Err(Error::invalid(format!(
                    "depth features {}x{} are not aligned with RGB features {}x{}",
                    d.width, d.height, self.rgb.width, self.rgb.height
                )));
            }
        }
        Ok(())
    }
}

/// Loss value, matches and the gradient with respect to the content features.
#[derive(Clone, Debug)]
pub struct LossOutput<S> {
    pub result: MatchResult<S>,
    pub grad_rgb: Vec<S>,
    pub grad_depth: Option<Vec<S>>,
}

/// Unit vectors plus original norms, zero vectors kept at zero.
struct Unit<S> {
    dim: usize,
    data: Vec<S>,
    norms: Vec<S>,
}

impl<S: Scalar> Unit<S> {
    fn new(layer: &FeatureLayer<S>) -> Self {
        let dim = layer.channels;
        let mut data = Vec::with_capacity(layer.data.len());
        let mut norms = Vec::with_capacity(layer.num_positions());
        for v in layer.data.chunks(dim.max(1)) {
            let n = dot(v, v).sqrt();
            norms.push(n);
            if n > S::zero() {
                data.extend(v.iter().map(|x| *x / n));
            } else {
                data.extend(std::iter::repeat_n(S::zero(), v.len()));
            }
        }
        Unit { dim, data, norms }
    }

    #[inline]
    fn vec(&self, p: usize) -> &[S] {
        &self.data[p * self.dim..(p + 1) * self.dim]
    }

    #[inline]
    fn nonzero(&self, p: usize) -> bool {
        self.norms[p] > S::zero()
    }

    #[inline]
    fn distance(&self, p: usize, other: &Unit<S>, q: usize) -> S {
        if !self.nonzero(p) || !other.nonzero(q) {
            S::one()
        } else {
            clamp_distance(S::one() - dot(self.vec(p), other.vec(q)))
        }
    }

    /// Adds `scale * dD(u_p, v_q)/du_p` to `grad`.
    fn accumulate_grad(&self, p: usize, other: &Unit<S>, q: usize, scale: S, grad: &mut [S]) {
        if !self.nonzero(p) || !other.nonzero(q) {
            return;
        }
        let u = self.vec(p);
        let v = other.vec(q);
        let c = dot(u, v);
        // identical directions, or inside the clamp: the distance is flat
        if u == v || c >= S::one() {
            return;
        }
        let f = scale / self.norms[p];
        for ((g, &ui), &vi) in grad[p * self.dim..(p + 1) * self.dim].iter_mut().zip(u).zip(v) {
            *g -= f * (vi - c * ui);
        }
    }
}

/// Cosine distance of per-modality normalized, concatenated vectors.
#[inline]
fn joint_distance<S: Scalar>(c: (&Unit<S>, &Unit<S>), p: usize, s: (&Unit<S>, &Unit<S>), q: usize) -> S {
    let count = |u: &Unit<S>, i| if u.nonzero(i) { 1.0f64 } else { 0.0 };
    let nc = count(c.0, p) + count(c.1, p);
    let ns = count(s.0, q) + count(s.1, q);
    if nc == 0.0 || ns == 0.0 {
        return S::one();
    }
    let d = dot(c.0.vec(p), s.0.vec(q)) + dot(c.1.vec(p), s.1.vec(q));
    clamp_distance(S::one() - d / S::lit((nc * ns).sqrt()))
}

/// Shared engine behind every loss in this module.
///
/// `select` restricts the loss to a subset of content patches; the loss is
/// the mean over the selected ones. Matching uses the joint distance when
/// depth is present, the loss adds `depth_weight` times the depth distance.
pub fn match_loss<S: Scalar>(
    content: MatchSide<'_, S>,
    content_patches: &PatchSet,
    style: MatchSide<'_, S>,
    style_patches: &PatchSet,
    depth_weight: S,
    select: Option<&[usize]>,
) -> Result<LossOutput<S>> {
    content.validate()?;
    style.validate()?;
    if content.rgb.channels != style.rgb.channels {
        return Err(Error::invalid(format!(
            "content has {} channels but style has {}",
            content.rgb.channels, style.rgb.channels
        )));
    }
    match (content.depth, style.depth) {
        (Some(a), Some(b)) if a.channels != b.channels => {
            return Err(Error::invalid("depth feature channel counts differ"));
        }
        (Some(_), None) | (None, Some(_)) => {
            return Err(Error::invalid("depth features must be given for both sides or neither"));
        }
        _ => {}
    }
    if content_patches.k != style_patches.k || content_patches.dilation != style_patches.dilation {
        return Err(Error::invalid(format!(
            "patch sets differ: k {} vs {}, dilation {} vs {}",
            content_patches.k, style_patches.k, content_patches.dilation, style_patches.dilation
        )));
    }
    check_patch_dims(content_patches, content.rgb)?;
    check_patch_dims(style_patches, style.rgb)?;
    if style_patches.is_empty() {
        return Err(Error::invalid("style map has no patches"));
    }
    let all: Vec<usize>;
    let chosen: &[usize] = match select {
        Some(s) => {
            if let Some(&i) = s.iter().find(|&&i| i >= content_patches.len()) {
                return Err(Error::invalid(format!("selected content patch {i} is out of range")));
            }
            s
        }
        None => {
            all = (0..content_patches.len()).collect();
            &all
        }
    };
    if chosen.is_empty() {
        return Err(Error::invalid("no content positions to match"));
    }

    let c_rgb = Unit::new(content.rgb);
    let s_rgb = Unit::new(style.rgb);
    let c_d = content.depth.map(Unit::new);
    let s_d = style.depth.map(Unit::new);

    let matches: Vec<(usize, S)> = chosen
        .par_iter()
        .map(|&ci| {
            let cp = &content_patches.patches[ci];
            let mut best = (0usize, S::infinity());
            for (si, sp) in style_patches.patches.iter().enumerate() {
                let mut score = S::zero();
                for (&p, &q) in cp.iter().zip(sp) {
                    score += match (&c_d, &s_d) {
                        (Some(cd), Some(sd)) => joint_distance((&c_rgb, cd), p, (&s_rgb, sd), q),
                        _ => c_rgb.distance(p, &s_rgb, q),
                    };
                }
                if score < best.1 {
                    best = (si, score);
                }
            }
            let sp = &style_patches.patches[best.0];
            let mut value = S::zero();
            for (&p, &q) in cp.iter().zip(sp) {
                value += c_rgb.distance(p, &s_rgb, q);
                if let (Some(cd), Some(sd)) = (&c_d, &s_d) {
                    value += depth_weight * cd.distance(p, sd, q);
                }
            }
            (best.0, value)
        })
        .collect();

    let n = S::from_usize_lossy(chosen.len());
    let scale = S::one() / n;
    let mut grad_rgb = vec![S::zero(); content.rgb.data.len()];
    let mut grad_depth = content.depth.map(|d| vec![S::zero(); d.data.len()]);
    for (&ci, &(si, _)) in chosen.iter().zip(&matches) {
        for (&p, &q) in content_patches.patches[ci].iter().zip(&style_patches.patches[si]) {
            c_rgb.accumulate_grad(p, &s_rgb, q, scale, &mut grad_rgb);
            if let (Some(cd), Some(sd), Some(g)) = (&c_d, &s_d, grad_depth.as_mut()) {
                cd.accumulate_grad(p, sd, q, scale * depth_weight, g);
            }
        }
    }
    let distances: Vec<S> = matches.iter().map(|m| m.1).collect();
    let loss = distances.iter().copied().sum::<S>() / n;
    Ok(LossOutput {
        result: MatchResult {
            indices: matches.into_iter().map(|m| m.0).collect(),
            distances,
            loss,
        },
        grad_rgb,
        grad_depth,
    })
}

fn check_patch_dims<S>(ps: &PatchSet, layer: &FeatureLayer<S>) -> Result<()> {
    if ps.height != layer.height || ps.width != layer.width {
        return Err(Error::invalid(format!(
            "patch set built for {}x{} but the map is {}x{}",
            ps.width, ps.height, layer.width, layer.height
        )));
    }
    Ok(())
}

/// Mean over content positions of the distance to the nearest style position.
pub fn nn_match_loss<S: Scalar>(content: &FeatureLayer<S>, style: &FeatureLayer<S>) -> Result<MatchResult<S>> {
    nn_match_loss_with_grad(content, style).map(|o| o.result)
}

pub fn nn_match_loss_with_grad<S: Scalar>(content: &FeatureLayer<S>, style: &FeatureLayer<S>) -> Result<LossOutput<S>> {
    match_loss(
        MatchSide::rgb(content),
        &PatchSet::positions(content.height, content.width),
        MatchSide::rgb(style),
        &PatchSet::positions(style.height, style.width),
        S::one(),
        None,
    )
}

/// Style position nearest to each content position under the joint
/// RGB+depth distance. Ties go to the smallest index.
pub fn joint_nearest_index<S: Scalar>(
    rgb_content: &FeatureLayer<S>,
    depth_content: &FeatureLayer<S>,
    rgb_style: &FeatureLayer<S>,
    depth_style: &FeatureLayer<S>,
) -> Result<Vec<usize>> {
    geometry_aware_loss_with_grad(rgb_content, depth_content, rgb_style, depth_style, S::one()).map(|o| o.result.indices)
}

/// Mean of the RGB plus depth distances at the jointly matched position.
pub fn geometry_aware_loss<S: Scalar>(
    rgb_content: &FeatureLayer<S>,
    depth_content: &FeatureLayer<S>,
    rgb_style: &FeatureLayer<S>,
    depth_style: &FeatureLayer<S>,
) -> Result<S> {
    geometry_aware_loss_with_grad(rgb_content, depth_content, rgb_style, depth_style, S::one()).map(|o| o.result.loss)
}

pub fn geometry_aware_loss_with_grad<S: Scalar>(
    rgb_content: &FeatureLayer<S>,
    depth_content: &FeatureLayer<S>,
    rgb_style: &FeatureLayer<S>,
    depth_style: &FeatureLayer<S>,
    depth_weight: S,
) -> Result<LossOutput<S>> {
    match_loss(
        MatchSide::joint(rgb_content, depth_content),
        &PatchSet::positions(rgb_content.height, rgb_content.width),
        MatchSide::joint(rgb_style, depth_style),
        &PatchSet::positions(rgb_style.height, rgb_style.width),
        depth_weight,
        None,
    )
}

/// Mean over content patches of the smallest summed per-position distance
/// to a style patch.
pub fn patch_loss<S: Scalar>(
    content: &FeatureLayer<S>,
    content_patches: &PatchSet,
    style: &FeatureLayer<S>,
    style_patches: &PatchSet,
) -> Result<MatchResult<S>> {
    match_loss(
        MatchSide::rgb(content),
        content_patches,
        MatchSide::rgb(style),
        style_patches,
        S::one(),
        None,
    )
    .map(|o| o.result)
}

/// The style term used during stylization: patch matching (k = 1 gives
/// per-position matching), jointly over RGB and depth when geometry-aware.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StyleLossConfig {
    pub geometry_aware: bool,
    /// Weight of the depth distance in the geometry-aware loss.
    pub depth_weight: f64,
    pub patch_size: usize,
    pub dilation: usize,
    /// Anchor spacing of content patches; the patch extent when unset.
    pub content_stride: Option<usize>,
    /// Anchor spacing of style patches; the patch extent when unset.
    pub style_stride: Option<usize>,
}

impl Default for StyleLossConfig {
    fn default() -> Self {
        StyleLossConfig {
            geometry_aware: true,
            depth_weight: 1.0,
            patch_size: 2,
            dilation: 1,
            content_stride: None,
            style_stride: Some(1),
        }
    }
}

impl StyleLossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.dilation == 0 {
            return Err(Error::config("patch_size and dilation must be at least 1"));
        }
        if self.content_stride == Some(0) || self.style_stride == Some(0) {
            return Err(Error::config("patch strides must be at least 1"));
        }
        if !(self.depth_weight >= 0.0) {
            return Err(Error::config("depth_weight must be non-negative"));
        }
        Ok(())
    }

    /// Largest patch size not above the configured one whose extent fits
    /// both maps.
    pub fn effective_patch_size(&self, dims: &[(usize, usize)]) -> usize {
        let limit = dims.iter().map(|&(h, w)| h.min(w)).min().unwrap_or(1).max(1);
        let mut k = self.patch_size.max(1);
        while k > 1 && (k - 1) * self.dilation + 1 > limit {
            k -= 1;
        }
        k
    }

    pub fn content_patches<S>(&self, content: &FeatureLayer<S>, style: &FeatureLayer<S>) -> Result<PatchSet> {
        let k = self.effective_patch_size(&[(content.height, content.width), (style.height, style.width)]);
        extract_patches(content, k, self.dilation, self.content_stride)
    }

    pub fn style_patches<S>(&self, content: &FeatureLayer<S>, style: &FeatureLayer<S>) -> Result<PatchSet> {
        let k = self.effective_patch_size(&[(content.height, content.width), (style.height, style.width)]);
        extract_patches(style, k, self.dilation, self.style_stride)
    }

    /// Loss for one feature layer. Depth maps are only used when
    /// geometry-aware; `select` picks content patches of `content_patches`.
    pub fn evaluate<S: Scalar>(
        &self,
        content_rgb: &FeatureLayer<S>,
        content_depth: Option<&FeatureLayer<S>>,
        style_rgb: &FeatureLayer<S>,
        style_depth: Option<&FeatureLayer<S>>,
        select: Option<&[usize]>,
    ) -> Result<LossOutput<S>> {
        let pc = self.content_patches(content_rgb, style_rgb)?;
        let ps = self.style_patches(content_rgb, style_rgb)?;
        let (c, s) = if self.geometry_aware {
            let cd = content_depth.ok_or_else(|| Error::invalid("geometry-aware loss needs content depth features"))?;
            let sd = style_depth.ok_or_else(|| Error::invalid("geometry-aware loss needs style depth features"))?;
            (MatchSide::joint(content_rgb, cd), MatchSide::joint(style_rgb, sd))
        } else {
            (MatchSide::rgb(content_rgb), MatchSide::rgb(style_rgb))
        };
        match_loss(c, &pc, s, &ps, S::lit(self.depth_weight), select)
    }
}

#[inline]
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (x, y)| acc + *x * *y)
}

#[inline]
fn clamp_distance<S: Scalar>(d: S) -> S {
    d.max(S::zero()).min(S::lit(2.0))
}
