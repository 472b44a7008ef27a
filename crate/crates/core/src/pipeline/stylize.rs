use rand::Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, Stage};
use super::color::{color_transfer_transform, ColorStats};
use super::config::TrainConfig;
use super::optim::Adam;
use super::pretrain::iteration_rng;
use super::regularizers::smoothness;
use super::Metrics;
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::field::{GridKind, RadianceField};
use crate::image::Image;
use crate::perspective::{
    assign_pixels, build_bin_layout, build_style_pyramid, forward_depth_image, layered_style_loss, style_loss,
    BinLayout, StyleFeatures, StylePair,
};
use crate::render::{
    backward_view, depth_style_input_backward, render_depth_style_input, render_view_stream, Camera, RenderOptions,
};
use crate::scalar::Scalar;

const STYLIZE_STREAM: u64 = 0x5354_594c;
/// Transforms this close to the identity are skipped to keep the grid exact.
const IDENTITY_TOL: f64 = 1e-9;

/// Losses of one stylization iteration, already multiplied by their weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub iteration: usize,
    pub camera: usize,
    pub loss: f64,
    pub style: f64,
    pub content: f64,
    pub smoothness: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StylizeReport {
    pub iterations: usize,
    pub final_loss: Option<f64>,
    pub layout: Option<BinLayout>,
    pub warnings: Vec<String>,
}

/// Stylization state: optimizes color and (optionally) deformation with the
/// density grid frozen.
pub struct Stylizer<S: Scalar> {
    config: TrainConfig,
    cameras: Vec<Camera>,
    style: StylePair<S>,
    extractor: FeatureExtractor<S>,
    levels: Vec<StyleFeatures<S>>,
    layout: Option<BinLayout>,
    field: RadianceField<S>,
    reference: RadianceField<S>,
    density_snapshot: Vec<S>,
    adam: Adam<S>,
    iteration: usize,
    final_loss: Option<f64>,
    warnings: Vec<String>,
}

fn same_bits<S: Scalar>(a: &[S], b: &[S]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.integer_decode() == y.integer_decode())
}

fn render_all<S: Scalar>(field: &RadianceField<S>, cameras: &[Camera], opts: &RenderOptions) -> Result<Vec<Image<S>>> {
    cameras
        .iter()
        .map(|c| render_view_stream(field, c, opts, 0, true).map(|v| v.rgb))
        .collect()
}

impl<S: Scalar> Stylizer<S> {
    /// Applies the initial color transfer (if enabled), freezes the current
    /// render as the content reference and prepares style features.
    pub fn new(mut field: RadianceField<S>, cameras: &[Camera], style: &StylePair<S>, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut warnings = Vec::new();
        let s = &config.stylize;
        if s.color_transfer {
            let source = ColorStats::from_images(&render_all(&field, cameras, &s.render)?)?;
            let t = color_transfer_transform(&source, &ColorStats::from_images([&style.rgb])?);
            warnings.extend(t.warnings.iter().cloned());
            if !t.is_identity(IDENTITY_TOL) {
                t.apply_field(&mut field)?;
            }
        }
        let layout = if s.perspective_bins > 1 {
            let l = build_bin_layout(&field, cameras, s.perspective_bins, &s.render)?;
            warnings.extend(l.warnings.iter().cloned());
            Some(l)
        } else {
            None
        };
        let mut reference = field.clone();
        reference.init_deformation_zero();
        Self::assemble(field, reference, cameras, style, config, layout, None, 0, warnings)
    }

    /// Resumes from a checkpoint written by [`Stylizer::checkpoint`].
    pub fn from_checkpoint(ckpt: Checkpoint<S>, cameras: &[Camera], style: &StylePair<S>) -> Result<Self> {
        if ckpt.stage != Stage::Stylizing {
            return Err(Error::invalid(format!(
                "checkpoint is at stage {:?}; only an interrupted stylization can be resumed",
                ckpt.stage
            )));
        }
        let reference_color = ckpt
            .reference_color
            .ok_or_else(|| Error::format("stylization checkpoint lacks the reference color grid"))?;
        let mut reference = ckpt.field.clone();
        reference.color = reference_color;
        reference.init_deformation_zero();
        Self::assemble(
            ckpt.field,
            reference,
            cameras,
            style,
            &ckpt.config,
            ckpt.layout,
            ckpt.optimizer,
            ckpt.iteration,
            Vec::new(),
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        field: RadianceField<S>,
        reference: RadianceField<S>,
        cameras: &[Camera],
        style: &StylePair<S>,
        config: &TrainConfig,
        layout: Option<BinLayout>,
        adam: Option<Adam<S>>,
        iteration: usize,
        mut warnings: Vec<String>,
    ) -> Result<Self> {
        config.validate()?;
        style.validate()?;
        if cameras.is_empty() {
            return Err(Error::invalid("stylization needs at least one camera"));
        }
        let s = &config.stylize;
        let extractor = s.extractor.build::<S>()?;
        let min = extractor.min_input_size();
        let check = |w: usize, h: usize, what: &str| {
            if w < min || h < min {
                Err(Error::config(format!(
                    "{what} ({w}x{h}) is smaller than the extractor minimum of {min}x{min}"
                )))
            } else {
                Ok(())
            }
        };
        check(style.width(), style.height(), "style image")?;
        for c in cameras {
            check(c.width(), c.height(), "render size")?;
        }
        let pairs = match &layout {
            Some(l) => {
                let p = build_style_pyramid(style, l)?;
                warnings.extend(p.warnings.iter().cloned());
                p.levels
            }
            None => vec![style.clone()],
        };
        let levels = pairs
            .iter()
            .map(|p| StyleFeatures::extract(&extractor, p))
            .collect::<Result<Vec<_>>>()?;
        let channels = extractor.tap_channels();
        for lv in &levels {
            for (l, &c) in lv.rgb.layers.iter().zip(&channels) {
                if l.channels != c || l.num_positions() == 0 {
                    return Err(Error::config(format!(
                        "style feature layer {} has {} channels over {} positions; the extractor produces {c} channels",
                        l.name,
                        l.channels,
                        l.num_positions()
                    )));
                }
            }
        }
        let mut rates = vec![(GridKind::Color, s.lr_color)];
        if s.deformation {
            rates.push((GridKind::Deformation, s.lr_deformation));
        }
        let adam = match adam {
            Some(a) => {
                if a.kinds() != rates.iter().map(|r| r.0).collect::<Vec<_>>() {
                    return Err(Error::format("optimizer state does not match the configured trainable grids"));
                }
                a
            }
            None => Adam::new(&field, &rates),
        };
        Ok(Stylizer {
            config: config.clone(),
            cameras: cameras.to_vec(),
            style: style.clone(),
            extractor,
            levels,
            layout,
            density_snapshot: field.density.params().to_vec(),
            field,
            reference,
            adam,
            iteration,
            final_loss: None,
            warnings,
        })
    }

    pub fn field(&self) -> &RadianceField<S> {
        &self.field
    }

    pub fn reference(&self) -> &RadianceField<S> {
        &self.reference
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn layout(&self) -> Option<&BinLayout> {
        self.layout.as_ref()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn extractor(&self) -> &FeatureExtractor<S> {
        &self.extractor
    }

    #[cfg(test)]
    pub(crate) fn field_mut(&mut self) -> &mut RadianceField<S> {
        &mut self.field
    }

    fn trainable(&self) -> Vec<GridKind> {
        self.adam.kinds()
    }

    /// One optimization step on a randomly chosen camera.
    pub fn step(&mut self) -> Result<StepReport> {
        let it = self.iteration;
        let s = &self.config.stylize;
        let mut rng = iteration_rng(self.config.seed, STYLIZE_STREAM, it);
        let cam_index = rng.random_range(0..self.cameras.len());
        let cam = &self.cameras[cam_index];
        let stream = it as u64;
        let opts = &s.render;
        let view = render_view_stream(&self.field, cam, opts, stream, true)?;
        let (w, h) = (cam.width(), cam.height());
        let mut grad_rgb = Image::new(w, h, 3);
        let mut grad_depth: Option<Image<S>> = None;

        let mut style_value = S::zero();
        if s.style_weight > 0.0 {
            let sw = S::lit(s.style_weight);
            let (c_rgb, cache_rgb) = self.extractor.extract_with_cache(&view.rgb)?;
            let depth_feats = if s.loss.geometry_aware {
                Some(self.extractor.extract_with_cache(&render_depth_style_input(&view.depth)?)?)
            } else {
                None
            };
            let c_depth = depth_feats.as_ref().map(|(m, _)| m);
            let out = match &self.layout {
                Some(layout) => {
                    let z = forward_depth_image(cam, &view.depth, &self.cameras[0])?;
                    let bins = assign_pixels(&z, layout);
                    layered_style_loss(&c_rgb, c_depth, &bins, &self.levels, &s.loss)?
                }
                None => style_loss(&c_rgb, c_depth, &self.levels[0], &s.loss)?,
            };
            style_value = sw * out.loss;
            let scale = |g: Vec<Vec<S>>| -> Vec<Vec<S>> {
                g.into_iter().map(|l| l.into_iter().map(|v| v * sw).collect()).collect()
            };
            let g = self.extractor.backward(&cache_rgb, &scale(out.grad_rgb))?;
            grad_rgb.data.iter_mut().zip(&g.data).for_each(|(a, b)| *a += *b);
            if let Some((_, cache_d)) = &depth_feats {
                let g3 = self.extractor.backward(cache_d, &scale(out.grad_depth))?;
                grad_depth = Some(depth_style_input_backward(&view.depth, &g3)?);
            }
        }

        let mut content_value = S::zero();
        if s.content_weight > 0.0 {
            let target = render_view_stream(&self.reference, cam, opts, stream, false)?;
            let cw = S::lit(s.content_weight);
            let inv_n = S::one() / S::from_usize_lossy(view.rgb.data.len());
            for ((g, a), b) in grad_rgb.data.iter_mut().zip(&view.rgb.data).zip(&target.rgb.data) {
                let d = *a - *b;
                content_value += d * d;
                *g += cw * S::lit(2.0) * d * inv_n;
            }
            content_value = cw * content_value * inv_n;
        }

        let trainable = self.trainable();
        let mut grads = backward_view(&self.field, cam, opts, stream, true, &grad_rgb, grad_depth.as_ref(), &trainable)?;

        let mut smooth_value = S::zero();
        if s.deformation && s.smoothness_weight > 0.0 {
            let sw = S::lit(s.smoothness_weight);
            let (v, mut node) = smoothness(&self.field.deformation);
            smooth_value = sw * v;
            node.iter_mut().for_each(|g| *g *= sw);
            if let Some(g) = grads.deformation.as_mut() {
                self.field.deformation.accumulate_node_grad(&node, g);
            }
        }

        let loss = (style_value + content_value + smooth_value).to_f64_lossy();
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "stylization diverged at iteration {it}: style {}, content {}, smoothness {}",
                style_value.to_f64_lossy(),
                content_value.to_f64_lossy(),
                smooth_value.to_f64_lossy()
            )));
        }
        self.adam.step(&mut self.field, &grads)?;
        self.iteration += 1;
        self.final_loss = Some(loss);
        Ok(StepReport {
            iteration: it,
            camera: cam_index,
            loss,
            style: style_value.to_f64_lossy(),
            content: content_value.to_f64_lossy(),
            smoothness: smooth_value.to_f64_lossy(),
        })
    }

    /// Runs steps until the configured iteration count is reached.
    pub fn run(&mut self, log: &mut dyn FnMut(&Metrics)) -> Result<()> {
        let total = self.config.stylize.iterations;
        let every = self.config.stylize.log_every;
        while self.iteration < total {
            let r = self.step()?;
            if every > 0 && (r.iteration % every == 0 || r.iteration + 1 == total) {
                log(&Metrics {
                    stage: "stylize".into(),
                    iteration: r.iteration,
                    loss: r.loss,
                    style: Some(r.style),
                    content: Some(r.content),
                    smoothness: Some(r.smoothness),
                    ..Default::default()
                });
            }
        }
        Ok(())
    }

    /// Snapshot for resuming later.
    pub fn checkpoint(&self) -> Checkpoint<S> {
        Checkpoint {
            stage: Stage::Stylizing,
            iteration: self.iteration,
            config: self.config.clone(),
            field: self.field.clone(),
            optimizer: Some(self.adam.clone()),
            layout: self.layout.clone(),
            reference_color: Some(self.reference.color.clone()),
            psnr: None,
        }
    }

    /// Applies the final color transfer and verifies the density grid.
    pub fn finish(mut self) -> Result<(RadianceField<S>, StylizeReport)> {
        let s = &self.config.stylize;
        if s.color_transfer {
            let source = ColorStats::from_images(&render_all(&self.field, &self.cameras, &s.render)?)?;
            let t = color_transfer_transform(&source, &ColorStats::from_images([&self.style.rgb])?);
            self.warnings.extend(t.warnings.iter().cloned());
            if !t.is_identity(IDENTITY_TOL) {
                t.apply_field(&mut self.field)?;
            }
        }
        if !same_bits(self.field.density.params(), &self.density_snapshot) {
            return Err(Error::Numerical("density grid changed during stylization".into()));
        }
        Ok((
            self.field,
            StylizeReport {
                iterations: self.iteration,
                final_loss: self.final_loss,
                layout: self.layout,
                warnings: self.warnings,
            },
        ))
    }
}

/// Full stylization: initial color transfer, the configured number of steps
/// and the final color transfer.
pub fn stylize<S: Scalar>(
    field: RadianceField<S>,
    cameras: &[Camera],
    style: &StylePair<S>,
    config: &TrainConfig,
    log: &mut dyn FnMut(&Metrics),
) -> Result<(RadianceField<S>, StylizeReport)> {
    let mut st = Stylizer::new(field, cameras, style, config)?;
    st.run(log)?;
    st.finish()
}

